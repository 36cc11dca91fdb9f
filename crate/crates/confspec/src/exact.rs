//! Roundoff-free coefficient backend.
//!
//! Scalars are finite sums of monomials
//! `r · (4π²)^a · (√2)^ε · |det A|^p` with `r` a Gaussian rational,
//! `a ∈ Z`, `ε ∈ {0,1}` and `p` rational. This ring is closed under every
//! operation of the variation pipeline on lattices whose dual Gram matrix is
//! rational: dual dot products are rational, eigenvalues stay symbolic in
//! `4π²`, eigenfunction normalizations contribute `√2 · |det A|^{-1/2}`, and
//! the scale-invariant power `Vol^{(2-n)/n}` lands in the rational exponent.
//! Equality of two pipeline results is therefore decidable exactly.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::{BigRational, Ratio};
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, FOUR_PI_SQ};
use crate::trig::{Coeff, Field, TrigPoly};

/// Exponent triple of one monomial.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Monomial {
    /// Power of `4π²`.
    pub pi2: i32,
    /// Odd power of `√2` present?
    pub sqrt2: bool,
    /// Power of `|det A|` (rational to accommodate `Vol^{(2-n)/n}`).
    pub vol: Ratio<i64>,
}

type Gauss = (BigRational, BigRational);

fn gauss_zero() -> Gauss {
    (BigRational::zero(), BigRational::zero())
}

fn gauss_is_zero(g: &Gauss) -> bool {
    g.0.is_zero() && g.1.is_zero()
}

/// An element of the exact coefficient ring.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactScalar {
    terms: BTreeMap<Monomial, Gauss>,
}

impl ExactScalar {
    fn from_map(mut terms: BTreeMap<Monomial, Gauss>) -> Self {
        terms.retain(|_, g| !gauss_is_zero(g));
        ExactScalar { terms }
    }

    pub fn monomial(
        pi2: i32,
        sqrt2: bool,
        vol: Ratio<i64>,
        re: BigRational,
        im: BigRational,
    ) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(Monomial { pi2, sqrt2, vol }, (re, im));
        Self::from_map(terms)
    }

    pub fn from_rational(r: BigRational) -> Self {
        Self::monomial(0, false, Ratio::new_raw(0, 1), r, BigRational::zero())
    }

    pub fn from_i64(num: i64, den: i64) -> Self {
        Self::from_rational(big_ratio(num, den))
    }

    pub fn terms(&self) -> &BTreeMap<Monomial, Gauss> {
        &self.terms
    }

    /// Numeric value once `|det A|` is substituted.
    pub fn eval(&self, det_abs: f64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (m, (re, im)) in &self.terms {
            let mut factor = FOUR_PI_SQ.powi(m.pi2);
            if m.sqrt2 {
                factor *= std::f64::consts::SQRT_2;
            }
            factor *= det_abs.powf(*m.vol.numer() as f64 / *m.vol.denom() as f64);
            acc += Complex64::new(
                re.to_f64().unwrap_or(f64::NAN) * factor,
                im.to_f64().unwrap_or(f64::NAN) * factor,
            );
        }
        acc
    }
}

pub fn big_ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

impl Coeff for ExactScalar {
    fn zero() -> Self {
        ExactScalar {
            terms: BTreeMap::new(),
        }
    }

    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn add(&self, rhs: &Self) -> Self {
        let mut terms = self.terms.clone();
        for (m, g) in &rhs.terms {
            let entry = terms.entry(m.clone()).or_insert_with(gauss_zero);
            entry.0 += &g.0;
            entry.1 += &g.1;
        }
        Self::from_map(terms)
    }

    fn sub(&self, rhs: &Self) -> Self {
        self.add(&rhs.neg())
    }

    fn mul(&self, rhs: &Self) -> Self {
        let mut terms: BTreeMap<Monomial, Gauss> = BTreeMap::new();
        for (ma, (ra, ia)) in &self.terms {
            for (mb, (rb, ib)) in &rhs.terms {
                let mut re = ra * rb - ia * ib;
                let mut im = ra * ib + ia * rb;
                // √2 · √2 = 2 folds into the rational part.
                let sqrt2 = ma.sqrt2 ^ mb.sqrt2;
                if ma.sqrt2 && mb.sqrt2 {
                    let two = big_ratio(2, 1);
                    re *= &two;
                    im *= &two;
                }
                let key = Monomial {
                    pi2: ma.pi2 + mb.pi2,
                    sqrt2,
                    vol: ma.vol + mb.vol,
                };
                let entry = terms.entry(key).or_insert_with(gauss_zero);
                entry.0 += re;
                entry.1 += im;
            }
        }
        Self::from_map(terms)
    }

    fn neg(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(m, (re, im))| (m.clone(), (-re.clone(), -im.clone())))
            .collect();
        Self::from_map(terms)
    }

    fn conj(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(m, (re, im))| (m.clone(), (re.clone(), -im.clone())))
            .collect();
        Self::from_map(terms)
    }

    fn mul_i(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(m, (re, im))| (m.clone(), (-im.clone(), re.clone())))
            .collect();
        Self::from_map(terms)
    }

    /// Inverses exist for monomials only; sums have no inverse in this ring.
    fn try_inv(&self) -> Option<Self> {
        if self.terms.len() != 1 {
            return None;
        }
        let (m, (re, im)) = self.terms.iter().next().unwrap();
        let normsq = re * re + im * im;
        if normsq.is_zero() {
            return None;
        }
        let mut inv_re = re / &normsq;
        let mut inv_im = -(im / &normsq);
        if m.sqrt2 {
            // 1/√2 = √2 / 2.
            let half = big_ratio(1, 2);
            inv_re *= &half;
            inv_im *= &half;
        }
        Some(Self::monomial(-m.pi2, m.sqrt2, -m.vol, inv_re, inv_im))
    }
}

/// Exact lattice geometry: a rational dual Gram matrix plus the numeric
/// volume used only for rendering approximations.
#[derive(Debug, Clone)]
pub struct ExactField {
    dim: usize,
    gram: Vec<BigRational>,
    det_abs: f64,
}

impl PartialEq for ExactField {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.gram == other.gram
    }
}

impl ExactField {
    pub fn new(dim: usize, gram_rows: Vec<Vec<BigRational>>, det_abs: f64) -> Result<Self> {
        if gram_rows.len() != dim || gram_rows.iter().any(|r| r.len() != dim) {
            return Err(Error::ExactUnavailable(
                "dual Gram matrix has wrong shape".into(),
            ));
        }
        let gram: Vec<BigRational> = gram_rows.into_iter().flatten().collect();
        for i in 0..dim {
            for j in 0..dim {
                if gram[i * dim + j] != gram[j * dim + i] {
                    return Err(Error::ExactUnavailable(
                        "dual Gram matrix must be symmetric".into(),
                    ));
                }
            }
        }
        Ok(ExactField {
            dim,
            gram,
            det_abs,
        })
    }

    /// Snaps the floating dual Gram matrix of a lattice to rationals. Fails
    /// when an entry has no small-denominator rational within tolerance.
    pub fn from_lattice(lattice: &Lattice) -> Result<Self> {
        let n = lattice.dim();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(n);
            for j in 0..n {
                let x = lattice.gram_dual()[(i, j)];
                let r = rationalize(x, 1_000_000, 1e-9).ok_or_else(|| {
                    Error::ExactUnavailable(format!(
                        "dual Gram entry ({i},{j}) = {x} is not recognizably rational"
                    ))
                })?;
                row.push(big_ratio(*r.numer(), *r.denom()));
            }
            rows.push(row);
        }
        Self::new(n, rows, lattice.volume())
    }

    pub fn q_rational(&self, c: &[i64]) -> BigRational {
        self.dot_rational(c, c)
    }

    fn dot_rational(&self, a: &[i64], b: &[i64]) -> BigRational {
        let mut acc = BigRational::zero();
        for i in 0..self.dim {
            for j in 0..self.dim {
                if a[i] != 0 && b[j] != 0 {
                    acc += &self.gram[i * self.dim + j] * big_ratio(a[i] * b[j], 1);
                }
            }
        }
        acc
    }
}

impl Field for ExactField {
    type K = ExactScalar;

    fn dim(&self) -> usize {
        self.dim
    }
    fn volume_f64(&self) -> f64 {
        self.det_abs
    }
    fn volume(&self) -> ExactScalar {
        self.vol_pow(1, 1)
    }
    fn vol_pow(&self, num: i64, den: i64) -> ExactScalar {
        ExactScalar::monomial(
            0,
            false,
            Ratio::new(num, den),
            big_ratio(1, 1),
            BigRational::zero(),
        )
    }
    fn pair4pi2(&self, a: &[i64], b: &[i64]) -> ExactScalar {
        let dot = self.dot_rational(a, b);
        if dot.is_zero() {
            return ExactScalar::zero();
        }
        ExactScalar::monomial(1, false, Ratio::new_raw(0, 1), dot, BigRational::zero())
    }
    fn q_f64(&self, c: &[i64]) -> f64 {
        self.q_rational(c).to_f64().unwrap_or(f64::NAN)
    }
    fn same_shell(&self, a: &[i64], b: &[i64]) -> bool {
        self.q_rational(a) == self.q_rational(b)
    }
    fn rat(&self, num: i64, den: i64) -> ExactScalar {
        ExactScalar::from_i64(num, den)
    }
    fn sqrt2(&self) -> ExactScalar {
        ExactScalar::monomial(
            0,
            true,
            Ratio::new_raw(0, 1),
            big_ratio(1, 1),
            BigRational::zero(),
        )
    }
    fn sqrt_two_over_vol(&self) -> ExactScalar {
        ExactScalar::monomial(
            0,
            true,
            Ratio::new(-1, 2),
            big_ratio(1, 1),
            BigRational::zero(),
        )
    }
    fn approx(&self, k: &ExactScalar) -> Complex64 {
        k.eval(self.det_abs)
    }
    fn symmetric_eigenvalues(&self, entries: &[Vec<ExactScalar>]) -> Result<Vec<ExactScalar>> {
        let m = entries.len();
        for i in 0..m {
            for j in 0..m {
                if i != j && !entries[i][j].is_zero() {
                    return Err(Error::ExactUnavailable(
                        "exact eigenvalues require an exactly diagonal matrix".into(),
                    ));
                }
            }
        }
        let mut diag: Vec<ExactScalar> = (0..m).map(|i| entries[i][i].clone()).collect();
        diag.sort_by(|a, b| {
            self.approx(a)
                .re
                .partial_cmp(&self.approx(b).re)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        Ok(diag)
    }
}

/// Exact-mode trigonometric polynomials.
pub type ExactPoly = TrigPoly<ExactField>;

/// Best rational approximation by continued fractions, verified against a
/// relative tolerance.
pub fn rationalize(x: f64, max_den: i64, rel_tol: f64) -> Option<Ratio<i64>> {
    if !x.is_finite() {
        return None;
    }
    let target = x;
    let mut a = x;
    let (mut h0, mut h1) = (1i64, a.round() as i64);
    let (mut k0, mut k1) = (0i64, 1i64);
    let mut frac = a - a.round();
    for _ in 0..64 {
        let approx = h1 as f64 / k1 as f64;
        if (approx - target).abs() <= rel_tol * target.abs().max(1.0) {
            return Some(Ratio::new(h1, k1));
        }
        if frac.abs() < 1e-15 {
            break;
        }
        a = 1.0 / frac;
        let ai = a.floor();
        frac = a - ai;
        let ai = ai as i64;
        let h2 = ai.checked_mul(h1)?.checked_add(h0)?;
        let k2 = ai.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            break;
        }
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
    }
    let approx = h1 as f64 / k1 as f64;
    if (approx - target).abs() <= rel_tol * target.abs().max(1.0) {
        Some(Ratio::new(h1, k1))
    } else {
        None
    }
}

/// Largest numeric gap between two exact polynomials (0 when identical).
pub fn exact_poly_gap(a: &ExactPoly, b: &ExactPoly) -> f64 {
    let diff = match a.sub(b) {
        Ok(d) => d,
        Err(_) => return f64::INFINITY,
    };
    if diff.is_zero_poly() {
        0.0
    } else {
        diff.max_coeff_norm()
    }
}

/// Builds the exact geometry companion of a floating lattice.
pub fn exact_context(lattice: &Arc<Lattice>) -> Result<Arc<ExactField>> {
    Ok(Arc::new(ExactField::from_lattice(lattice)?))
}
