//! Real trigonometric polynomials with finite Fourier support on a torus.
//!
//! A function is stored as a finite map from integer dual coordinates
//! `c ∈ Z^n` to a complex coefficient; the plane wave `e_c(x) = exp(2πi w·x)`
//! with `w = (Aᵀ)⁻¹ c` is the underlying basis. Real-valuedness is the
//! Hermitian constraint `coeff(-c) = conj(coeff(c))`.
//!
//! All operations are exact on the torus: products, gradient pairings and
//! Laplacians of trigonometric polynomials are trigonometric polynomials
//! again, so nothing is ever truncated. The algebra is generic over the
//! coefficient ring, which is `Complex64` for floating work and the symbolic
//! scalars of [`crate::exact`] for roundoff-free work.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, SpectrumLevel, FOUR_PI_SQ};
use crate::tolerances as tol;

/// Integer coordinates of a frequency in the dual lattice.
pub type Freq = Vec<i64>;

/// Coefficient ring of a trigonometric polynomial.
pub trait Coeff: Clone + PartialEq + std::fmt::Debug {
    fn zero() -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn neg(&self) -> Self;
    fn conj(&self) -> Self;
    /// Multiplication by the imaginary unit.
    fn mul_i(&self) -> Self;
    /// Multiplicative inverse where the ring supports it.
    fn try_inv(&self) -> Option<Self>;
}

impl Coeff for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn is_zero(&self) -> bool {
        self.norm() < tol::COEFF_PRUNE
    }
    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn sub(&self, rhs: &Self) -> Self {
        self - rhs
    }
    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn neg(&self) -> Self {
        -self
    }
    fn conj(&self) -> Self {
        Complex64::new(self.re, -self.im)
    }
    fn mul_i(&self) -> Self {
        Complex64::new(-self.im, self.re)
    }
    fn try_inv(&self) -> Option<Self> {
        if self.norm() == 0.0 {
            None
        } else {
            Some(Complex64::new(1.0, 0.0) / self)
        }
    }
}

/// Geometry a coefficient ring needs from the lattice: how dual-vector dot
/// products, the volume and shell membership enter coefficients.
pub trait Field: PartialEq + std::fmt::Debug {
    type K: Coeff;

    fn dim(&self) -> usize;
    fn volume_f64(&self) -> f64;
    /// `|det A|` as a scalar of the ring.
    fn volume(&self) -> Self::K;
    /// `|det A|^{num/den}`.
    fn vol_pow(&self, num: i64, den: i64) -> Self::K;
    /// `4π² (w_a · w_b)` as a scalar.
    fn pair4pi2(&self, a: &[i64], b: &[i64]) -> Self::K;
    /// Squared dual norm as a float (for ordering shells).
    fn q_f64(&self, c: &[i64]) -> f64;
    /// Whether two frequencies lie on the same eigenvalue shell.
    fn same_shell(&self, a: &[i64], b: &[i64]) -> bool;
    /// Embeds the rational `num/den`.
    fn rat(&self, num: i64, den: i64) -> Self::K;
    fn sqrt2(&self) -> Self::K;
    /// `√(2 / |det A|)`, the eigenfunction normalization factor.
    fn sqrt_two_over_vol(&self) -> Self::K;
    /// Numeric rendering of a scalar.
    fn approx(&self, k: &Self::K) -> Complex64;
    /// Eigenvalues of a real symmetric matrix given by ring entries, sorted
    /// ascending. Rings without algebraic closure only support the cases
    /// they can answer exactly.
    fn symmetric_eigenvalues(&self, entries: &[Vec<Self::K>]) -> Result<Vec<Self::K>>;

    fn real_approx(&self, k: &Self::K) -> f64 {
        self.approx(k).re
    }
}

impl Field for Lattice {
    type K = Complex64;

    fn dim(&self) -> usize {
        Lattice::dim(self)
    }
    fn volume_f64(&self) -> f64 {
        self.volume()
    }
    fn volume(&self) -> Complex64 {
        Complex64::new(Lattice::volume(self), 0.0)
    }
    fn vol_pow(&self, num: i64, den: i64) -> Complex64 {
        Complex64::new(Lattice::volume(self).powf(num as f64 / den as f64), 0.0)
    }
    fn pair4pi2(&self, a: &[i64], b: &[i64]) -> Complex64 {
        Complex64::new(FOUR_PI_SQ * self.pair_dual(a, b), 0.0)
    }
    fn q_f64(&self, c: &[i64]) -> f64 {
        self.q_of(c)
    }
    fn same_shell(&self, a: &[i64], b: &[i64]) -> bool {
        let qa = self.q_of(a);
        let qb = self.q_of(b);
        (qa - qb).abs() <= tol::SHELL_GROUPING_REL * qa.max(qb)
    }
    fn rat(&self, num: i64, den: i64) -> Complex64 {
        Complex64::new(num as f64 / den as f64, 0.0)
    }
    fn sqrt2(&self) -> Complex64 {
        Complex64::new(std::f64::consts::SQRT_2, 0.0)
    }
    fn sqrt_two_over_vol(&self) -> Complex64 {
        Complex64::new((2.0 / Lattice::volume(self)).sqrt(), 0.0)
    }
    fn approx(&self, k: &Complex64) -> Complex64 {
        *k
    }
    fn symmetric_eigenvalues(&self, entries: &[Vec<Complex64>]) -> Result<Vec<Complex64>> {
        let m = entries.len();
        let scale = entries
            .iter()
            .flatten()
            .map(|z| z.norm())
            .fold(1.0_f64, f64::max);
        for row in entries {
            for z in row {
                if z.im.abs() > 1e-9 * scale {
                    return Err(Error::NumericalInconsistency(format!(
                        "matrix entry has imaginary part {:.3e}",
                        z.im
                    )));
                }
            }
        }
        let mat = nalgebra::DMatrix::from_fn(m, m, |i, j| {
            0.5 * (entries[i][j].re + entries[j][i].re)
        });
        let mut eigs: Vec<f64> = nalgebra::SymmetricEigen::new(mat)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(eigs.into_iter().map(|x| Complex64::new(x, 0.0)).collect())
    }
}

/// A real trigonometric polynomial over the coefficient ring of `F`.
#[derive(Debug)]
pub struct TrigPoly<F: Field> {
    field: Arc<F>,
    terms: BTreeMap<Freq, F::K>,
}

impl<F: Field> Clone for TrigPoly<F> {
    fn clone(&self) -> Self {
        TrigPoly {
            field: self.field.clone(),
            terms: self.terms.clone(),
        }
    }
}

/// Floating-point trigonometric polynomials bound to a lattice.
pub type TrigPolynomial = TrigPoly<Lattice>;

impl<F: Field> PartialEq for TrigPoly<F> {
    fn eq(&self, other: &Self) -> bool {
        self.field == other.field && self.terms == other.terms
    }
}

impl<F: Field> TrigPoly<F> {
    pub fn zero(field: Arc<F>) -> Self {
        TrigPoly {
            field,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(field: Arc<F>, value: F::K) -> Self {
        let mut terms = BTreeMap::new();
        if !value.is_zero() {
            terms.insert(vec![0; field.dim()], value);
        }
        TrigPoly { field, terms }
    }

    pub fn one(field: Arc<F>) -> Self {
        let v = field.rat(1, 1);
        Self::constant(field, v)
    }

    /// `sin(2π w_c · x)` for the frequency with coordinates `coords`.
    pub fn wave_sin(field: Arc<F>, coords: &[i64]) -> Self {
        let half_i = field.rat(1, 2).mul_i();
        let mut terms = BTreeMap::new();
        terms.insert(coords.to_vec(), half_i.neg());
        terms.insert(coords.iter().map(|c| -c).collect(), half_i);
        TrigPoly { field, terms }
    }

    /// `cos(2π w_c · x)`.
    pub fn wave_cos(field: Arc<F>, coords: &[i64]) -> Self {
        let half = field.rat(1, 2);
        let mut terms = BTreeMap::new();
        terms.insert(coords.to_vec(), half.clone());
        terms.insert(coords.iter().map(|c| -c).collect(), half);
        TrigPoly { field, terms }
    }

    /// Builds from raw coefficients, enforcing Hermitian symmetry.
    pub fn from_terms(field: Arc<F>, raw: Vec<(Freq, F::K)>) -> Result<Self> {
        let n = field.dim();
        let mut terms: BTreeMap<Freq, F::K> = BTreeMap::new();
        for (c, k) in raw {
            if c.len() != n {
                return Err(Error::Usage(format!(
                    "frequency coordinate length {} does not match dimension {n}",
                    c.len()
                )));
            }
            let entry = terms.entry(c).or_insert_with(F::K::zero);
            *entry = entry.add(&k);
        }
        terms.retain(|_, k| !k.is_zero());
        let poly = TrigPoly { field, terms };
        let violation = poly.hermitian_violation();
        if violation > tol::HERMITIAN_SYMMETRY {
            return Err(Error::NotHermitian { violation });
        }
        Ok(poly)
    }

    fn hermitian_violation(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (c, k) in &self.terms {
            let neg: Freq = c.iter().map(|x| -x).collect();
            let mirrored = self.coeff(&neg).conj();
            let dev = self.field.approx(&k.sub(&mirrored)).norm();
            worst = worst.max(dev);
        }
        worst
    }

    pub fn field(&self) -> &Arc<F> {
        &self.field
    }

    pub fn terms(&self) -> &BTreeMap<Freq, F::K> {
        &self.terms
    }

    pub fn coeff(&self, c: &[i64]) -> F::K {
        self.terms.get(c).cloned().unwrap_or_else(F::K::zero)
    }

    pub fn is_zero_poly(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn support(&self) -> impl Iterator<Item = &Freq> {
        self.terms.keys()
    }

    fn check_field(&self, other: &Self) -> Result<()> {
        if self.field == other.field {
            Ok(())
        } else {
            Err(Error::LatticeMismatch)
        }
    }

    fn from_accumulated(field: Arc<F>, mut terms: BTreeMap<Freq, F::K>) -> Self {
        terms.retain(|_, k| !k.is_zero());
        TrigPoly { field, terms }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_field(other)?;
        let mut terms = self.terms.clone();
        for (c, k) in &other.terms {
            let entry = terms.entry(c.clone()).or_insert_with(F::K::zero);
            *entry = entry.add(k);
        }
        Ok(Self::from_accumulated(self.field.clone(), terms))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(&self.field.rat(-1, 1)))
    }

    pub fn scale(&self, k: &F::K) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(c, v)| (c.clone(), v.mul(k)))
            .collect();
        Self::from_accumulated(self.field.clone(), terms)
    }

    pub fn scale_rat(&self, num: i64, den: i64) -> Self {
        self.scale(&self.field.rat(num, den))
    }

    /// Pointwise product; exact coefficient convolution.
    pub fn multiply(&self, other: &Self) -> Result<Self> {
        self.check_field(other)?;
        let mut terms: BTreeMap<Freq, F::K> = BTreeMap::new();
        for (a, fa) in &self.terms {
            for (b, hb) in &other.terms {
                let c: Freq = a.iter().zip(b).map(|(x, y)| x + y).collect();
                let add = fa.mul(hb);
                let entry = terms.entry(c).or_insert_with(F::K::zero);
                *entry = entry.add(&add);
            }
        }
        Ok(Self::from_accumulated(self.field.clone(), terms))
    }

    /// The metric pairing of gradients, `g(∇f, ∇h)`, as a function:
    /// `Σ f(a) h(b) · (−4π² w_a·w_b) · e_{a+b}`.
    pub fn gradient_pairing(&self, other: &Self) -> Result<Self> {
        self.check_field(other)?;
        let mut terms: BTreeMap<Freq, F::K> = BTreeMap::new();
        for (a, fa) in &self.terms {
            for (b, hb) in &other.terms {
                let factor = self.field.pair4pi2(a, b).neg();
                if factor.is_zero() {
                    continue;
                }
                let c: Freq = a.iter().zip(b).map(|(x, y)| x + y).collect();
                let add = fa.mul(hb).mul(&factor);
                let entry = terms.entry(c).or_insert_with(F::K::zero);
                *entry = entry.add(&add);
            }
        }
        Ok(Self::from_accumulated(self.field.clone(), terms))
    }

    /// Positive Laplacian `Δ = −div grad`: multiplies each mode by `4π²|w|²`.
    pub fn laplacian(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(c, k)| (c.clone(), k.mul(&self.field.pair4pi2(c, c))))
            .collect();
        Self::from_accumulated(self.field.clone(), terms)
    }

    /// `∫ f dμ = coeff(0) · |det A|`; only the constant mode survives.
    pub fn integrate(&self) -> F::K {
        let zero = vec![0i64; self.field.dim()];
        self.coeff(&zero).mul(&self.field.volume())
    }

    /// L² inner product `∫ f h dμ` (functions are real; no conjugation).
    pub fn l2_inner(&self, other: &Self) -> Result<F::K> {
        self.check_field(other)?;
        let mut acc = F::K::zero();
        for (a, fa) in &self.terms {
            let neg: Freq = a.iter().map(|x| -x).collect();
            let hb = other.coeff(&neg);
            if !hb.is_zero() {
                acc = acc.add(&fa.mul(&hb));
            }
        }
        Ok(acc.mul(&self.field.volume()))
    }

    /// Restriction to the eigenvalue shell of the representative `rep`
    /// (the zero vector selects the constant mode).
    pub fn project_shell(&self, rep: &[i64]) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|(c, _)| self.field.same_shell(c, rep))
            .map(|(c, k)| (c.clone(), k.clone()))
            .collect();
        Self::from_accumulated(self.field.clone(), terms)
    }

    /// L²-orthogonal projection onto a spectrum level.
    pub fn project(&self, level: &SpectrumLevel) -> Self {
        self.project_shell(level.rep_coords())
    }

    /// Distinct eigenvalue shells intersecting the support, sorted by `q`;
    /// each is returned as (representative coordinates, q).
    pub fn shells(&self) -> Vec<(Freq, f64)> {
        shells_of(std::iter::once(self))
    }

    /// Numeric evaluation at torus point `x = A s` with fractional
    /// coordinates `s ∈ [0,1)^n`; plane waves reduce to `exp(2πi c·s)`.
    pub fn eval_fractional(&self, s: &[f64]) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (c, k) in &self.terms {
            let phase: f64 = 2.0
                * std::f64::consts::PI
                * c.iter().zip(s).map(|(&ci, &si)| ci as f64 * si).sum::<f64>();
            acc += self.field.approx(k) * Complex64::new(phase.cos(), phase.sin());
        }
        acc.re
    }

    /// Max-norm estimate by sampling `samples^n` grid points.
    pub fn sup_norm(&self, samples_per_axis: usize) -> f64 {
        let n = self.field.dim();
        let mut worst = 0.0_f64;
        let mut idx = vec![0usize; n];
        let mut s = vec![0.0f64; n];
        'outer: loop {
            for i in 0..n {
                s[i] = idx[i] as f64 / samples_per_axis as f64;
            }
            worst = worst.max(self.eval_fractional(&s).abs());
            for i in (0..n).rev() {
                idx[i] += 1;
                if idx[i] < samples_per_axis {
                    continue 'outer;
                }
                idx[i] = 0;
            }
            break;
        }
        worst
    }

    /// Numeric rendering of all coefficients.
    pub fn approx_terms(&self) -> Vec<(Freq, Complex64)> {
        self.terms
            .iter()
            .map(|(c, k)| (c.clone(), self.field.approx(k)))
            .collect()
    }

    /// Largest numeric coefficient magnitude.
    pub fn max_coeff_norm(&self) -> f64 {
        self.terms
            .values()
            .map(|k| self.field.approx(k).norm())
            .fold(0.0, f64::max)
    }
}

/// Distinct shells covering the union of supports of several polynomials,
/// sorted by squared norm; representatives are the smallest coordinates in
/// each shell, so the result is deterministic.
pub fn shells_of<'a, F: Field + 'a>(
    polys: impl Iterator<Item = &'a TrigPoly<F>>,
) -> Vec<(Freq, f64)> {
    let mut field: Option<&'a F> = None;
    let mut coords: Vec<&'a Freq> = Vec::new();
    for p in polys {
        field = Some(p.field.as_ref());
        coords.extend(p.terms.keys());
    }
    let Some(field) = field else {
        return Vec::new();
    };
    coords.sort();
    coords.dedup();
    let mut shells: Vec<(Freq, f64)> = Vec::new();
    for c in coords {
        if !shells.iter().any(|(rep, _)| field.same_shell(rep, c)) {
            shells.push((c.clone(), field.q_f64(c)));
        }
    }
    shells.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    shells
}

/// JSON form of one Fourier term.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermSpec {
    pub coords: Vec<i64>,
    pub re: f64,
    pub im: f64,
}

/// JSON form of a floating trigonometric polynomial. With
/// `hermitian_one_sided`, only one member of each ± pair is stored and the
/// mirror coefficient is implied by conjugation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrigPolySpec {
    pub terms: Vec<TermSpec>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub hermitian_one_sided: bool,
}

impl TrigPolynomial {
    pub fn from_poly_spec(lattice: Arc<Lattice>, spec: &TrigPolySpec) -> Result<Self> {
        let mut raw: Vec<(Freq, Complex64)> = Vec::new();
        for term in &spec.terms {
            let k = Complex64::new(term.re, term.im);
            raw.push((term.coords.clone(), k));
            if spec.hermitian_one_sided && term.coords.iter().any(|&c| c != 0) {
                let neg: Freq = term.coords.iter().map(|c| -c).collect();
                raw.push((neg, Coeff::conj(&k)));
            }
        }
        Self::from_terms(lattice, raw)
    }

    pub fn to_poly_spec(&self) -> TrigPolySpec {
        TrigPolySpec {
            terms: self
                .terms
                .iter()
                .map(|(c, k)| TermSpec {
                    coords: c.clone(),
                    re: k.re,
                    im: k.im,
                })
                .collect(),
            hermitian_one_sided: false,
        }
    }
}
