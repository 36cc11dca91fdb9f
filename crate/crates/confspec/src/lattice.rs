//! Flat-torus lattices and their exact spectral data.
//!
//! A lattice `Γ = A Z^n` determines the torus `T^n_Γ = R^n/Γ` with its flat
//! metric. The Laplace spectrum is indexed by the dual lattice
//! `Γ* = (Aᵀ)⁻¹ Z^n`: every `w ∈ Γ*` contributes the eigenvalue `4π²|w|²`.
//! Everything here works in units of `4π²`, i.e. on the squared norms
//! `q = |w|²`, which keeps shell comparisons exact for rational lattices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tolerances as tol;

pub const FOUR_PI_SQ: f64 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;

/// A full-rank lattice `Γ = A Z^n` together with derived dual data.
#[derive(Debug, Clone)]
pub struct Lattice {
    n: usize,
    basis: DMatrix<f64>,
    dual: DMatrix<f64>,
    gram_dual: DMatrix<f64>,
    det_abs: f64,
    dual_sigma_min: f64,
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.basis == other.basis
    }
}

/// JSON mirror of a lattice: `{"n": 2, "basis_columns": [[1,0],[0,2]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub n: usize,
    pub basis_columns: Vec<Vec<f64>>,
}

impl Lattice {
    /// Builds a lattice from generator columns. Rejects singular input.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.len();
        if n < 2 {
            return Err(Error::InvalidLattice(format!(
                "dimension {n} too small (need n >= 2)"
            )));
        }
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidLattice(
                "basis columns must all have length n".into(),
            ));
        }
        let basis = DMatrix::from_fn(n, n, |i, j| columns[j][i]);
        let det = basis.determinant();
        let scale = basis.amax().max(1.0);
        if !det.is_finite() || det.abs() <= 1e-12 * scale.powi(n as i32) {
            return Err(Error::InvalidLattice(format!(
                "generator matrix is singular (det = {det:.3e})"
            )));
        }
        let dual = basis
            .transpose()
            .try_inverse()
            .ok_or_else(|| Error::InvalidLattice("generator matrix not invertible".into()))?;
        // Dual basis sanity: Bᵀ A = I entrywise.
        let product = dual.transpose() * &basis;
        let id = DMatrix::<f64>::identity(n, n);
        let dev = (&product - &id).amax();
        if dev > tol::DUAL_BASIS_IDENTITY * scale.max(dual.amax()) {
            return Err(Error::InvalidLattice(format!(
                "dual basis identity violated by {dev:.3e}"
            )));
        }
        let gram_dual = dual.transpose() * &dual;
        let sigma_min = dual
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        Ok(Lattice {
            n,
            basis,
            dual,
            gram_dual,
            det_abs: det.abs(),
            dual_sigma_min: sigma_min,
        })
    }

    pub fn from_spec(spec: &LatticeSpec) -> Result<Self> {
        if spec.basis_columns.len() != spec.n {
            return Err(Error::InvalidLattice(format!(
                "expected {} basis columns, got {}",
                spec.n,
                spec.basis_columns.len()
            )));
        }
        Self::from_columns(&spec.basis_columns)
    }

    pub fn to_spec(&self) -> LatticeSpec {
        LatticeSpec {
            n: self.n,
            basis_columns: (0..self.n)
                .map(|j| (0..self.n).map(|i| self.basis[(i, j)]).collect())
                .collect(),
        }
    }

    /// A = diag(entries).
    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        let n = entries.len();
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|j| (0..n).map(|i| if i == j { entries[j] } else { 0.0 }).collect())
            .collect();
        Self::from_columns(&cols)
    }

    /// The standard cubic lattice Z^n.
    pub fn identity(n: usize) -> Result<Self> {
        Self::diagonal(&vec![1.0; n])
    }

    /// The planar lattice generated by (1,0) and (a,b).
    pub fn planar(a: f64, b: f64) -> Result<Self> {
        Self::from_columns(&[vec![1.0, 0.0], vec![a, b]])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// The dual basis `(Aᵀ)⁻¹`, whose columns generate `Γ*`.
    pub fn dual_basis(&self) -> &DMatrix<f64> {
        &self.dual
    }

    /// Gram matrix of the dual basis; `q(c) = cᵀ G* c`.
    pub fn gram_dual(&self) -> &DMatrix<f64> {
        &self.gram_dual
    }

    /// `|det A|`, the volume of the torus.
    pub fn volume(&self) -> f64 {
        self.det_abs
    }

    /// Squared norm of the dual vector with integer coordinates `c`.
    pub fn q_of(&self, coords: &[i64]) -> f64 {
        self.pair_dual(coords, coords)
    }

    /// Dot product `w_a · w_b` of two dual vectors given by coordinates.
    pub fn pair_dual(&self, a: &[i64], b: &[i64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                acc += a[i] as f64 * self.gram_dual[(i, j)] * b[j] as f64;
            }
        }
        acc
    }

    /// Materializes the dual vector with coordinates `c`.
    pub fn dual_vector(&self, coords: &[i64]) -> DualVector {
        let cart: Vec<f64> = (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| self.dual[(i, j)] * coords[j] as f64)
                    .sum()
            })
            .collect();
        let normsq = cart.iter().map(|x| x * x).sum();
        DualVector {
            coords: coords.to_vec(),
            cartesian: cart,
            normsq,
        }
    }

    fn dual_sigma_min(&self) -> f64 {
        self.dual_sigma_min
    }
}

/// A dual-lattice vector `w = (Aᵀ)⁻¹ c` with its integer coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct DualVector {
    pub coords: Vec<i64>,
    pub cartesian: Vec<f64>,
    pub normsq: f64,
}

impl DualVector {
    /// Canonical ± representative: first nonzero coordinate positive.
    pub fn is_canonical(&self) -> bool {
        match self.coords.iter().find(|&&c| c != 0) {
            Some(&c) => c > 0,
            None => true,
        }
    }
}

/// One eigenvalue shell of the flat spectrum.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumLevel {
    /// 1-based index among the nonzero levels (0 is reserved for constants).
    pub index: usize,
    /// Squared dual norm `q`; eigenvalue in units of 4π².
    pub q: f64,
    /// Eigenvalue `4π² q`.
    pub eigenvalue: f64,
    /// One representative per ± pair, sorted by coordinates.
    pub frequency_pairs: Vec<DualVector>,
    pub multiplicity: usize,
}

impl SpectrumLevel {
    /// Integer coordinates of the first representative, identifying the shell.
    pub fn rep_coords(&self) -> &[i64] {
        &self.frequency_pairs[0].coords
    }
}

/// Options controlling dual-vector enumeration.
#[derive(Debug, Clone, Copy)]
pub struct EnumerationConfig {
    pub cap: usize,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        EnumerationConfig {
            cap: tol::ENUMERATION_CAP,
        }
    }
}

/// All `w ∈ Γ*` with `0 < |w|² ≤ radius_sq`, each exactly once, sorted by
/// squared norm then lexicographic coordinates. Completeness follows from the
/// coordinate box `|c| ≤ √radius_sq / σ_min((Aᵀ)⁻¹)`.
pub fn enumerate_dual_vectors(
    lattice: &Lattice,
    radius_sq: f64,
    cfg: EnumerationConfig,
) -> Result<Vec<DualVector>> {
    if radius_sq.is_nan() || radius_sq <= 0.0 {
        return Err(Error::Usage(format!(
            "enumeration radius_sq must be positive, got {radius_sq}"
        )));
    }
    let n = lattice.dim();
    let bound = (radius_sq.sqrt() / lattice.dual_sigma_min()).ceil() as i64;
    let side = 2 * bound + 1;
    let box_count = (side as f64).powi(n as i32);
    if box_count > (cfg.cap as f64) * 64.0 + 2e8 {
        return Err(Error::EnumerationOverflow { cap: cfg.cap });
    }
    // Inclusive boundary with a hair of slack so exact shells at the radius
    // survive roundoff in the dot product.
    let cutoff = radius_sq * (1.0 + 1e-12);
    let mut out = Vec::new();
    let mut coords = vec![-bound; n];
    'outer: loop {
        if coords.iter().any(|&c| c != 0) {
            let v = lattice.dual_vector(&coords);
            if v.normsq <= cutoff {
                if out.len() >= cfg.cap {
                    return Err(Error::EnumerationOverflow { cap: cfg.cap });
                }
                out.push(v);
            }
        }
        for i in (0..n).rev() {
            coords[i] += 1;
            if coords[i] <= bound {
                continue 'outer;
            }
            coords[i] = -bound;
        }
        break;
    }
    out.sort_by(|a, b| {
        a.normsq
            .partial_cmp(&b.normsq)
            .unwrap()
            .then_with(|| a.coords.cmp(&b.coords))
    });
    Ok(out)
}

fn group_into_shells(vectors: &[DualVector]) -> Vec<Vec<DualVector>> {
    let mut shells: Vec<Vec<DualVector>> = Vec::new();
    for v in vectors {
        match shells.last_mut() {
            Some(shell)
                if (v.normsq - shell[0].normsq).abs()
                    <= tol::SHELL_GROUPING_REL * shell[0].normsq =>
            {
                shell.push(v.clone());
            }
            _ => shells.push(vec![v.clone()]),
        }
    }
    shells
}

fn shells_to_levels(shells: Vec<Vec<DualVector>>) -> Vec<SpectrumLevel> {
    shells
        .into_iter()
        .enumerate()
        .map(|(i, shell)| {
            let reps: Vec<DualVector> = shell.iter().filter(|v| v.is_canonical()).cloned().collect();
            let multiplicity = shell.len();
            let q = reps[0].normsq;
            SpectrumLevel {
                index: i + 1,
                q,
                eigenvalue: FOUR_PI_SQ * q,
                frequency_pairs: reps,
                multiplicity,
            }
        })
        .collect()
}

/// The first `level_count` nonzero eigenvalue shells. The zero level (index 0,
/// constants) is implicit and never returned.
pub fn flat_spectrum(
    lattice: &Lattice,
    level_count: usize,
    cfg: EnumerationConfig,
) -> Result<Vec<SpectrumLevel>> {
    if level_count == 0 {
        return Err(Error::Usage("level_count must be at least 1".into()));
    }
    // Shortest dual vector is no longer than the shortest dual basis column.
    let min_col_q = (0..lattice.dim())
        .map(|j| {
            (0..lattice.dim())
                .map(|i| lattice.dual_basis()[(i, j)].powi(2))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    let mut radius = min_col_q * 1.000001;
    for _ in 0..64 {
        let vectors = enumerate_dual_vectors(lattice, radius, cfg)?;
        let shells = group_into_shells(&vectors);
        // Shells hugging the enumeration boundary may be truncated; only
        // levels strictly inside the radius are trusted as complete.
        let complete: Vec<Vec<DualVector>> = shells
            .into_iter()
            .filter(|s| s[0].normsq <= radius / (1.0 + 4.0 * tol::SHELL_GROUPING_REL))
            .collect();
        if complete.len() >= level_count {
            let mut levels = shells_to_levels(complete);
            levels.truncate(level_count);
            return Ok(levels);
        }
        radius *= 2.0;
    }
    Err(Error::InternalConsistency(
        "flat_spectrum failed to collect the requested number of levels".into(),
    ))
}

/// Verdict of the unique-shortest-dual-vector test.
#[derive(Debug, Clone)]
pub enum ShortestVector {
    /// A single ± pair attains the minimum; the strict inequality of the
    /// hypothesis holds against everything else.
    Unique(DualVector),
    /// Several pairs attain the minimum exactly.
    Shared(Vec<DualVector>),
    /// Distinct squared norms fell inside the grouping tolerance without
    /// being exactly equal; too close to call either way.
    Indeterminate { gap_rel: f64 },
}

impl ShortestVector {
    pub fn unique(&self) -> Option<&DualVector> {
        match self {
            ShortestVector::Unique(v) => Some(v),
            _ => None,
        }
    }
}

/// Tests the hypothesis that a single pair `±w` is strictly shorter than every
/// other nonzero dual vector. Checked against the full enumeration of the
/// first shell with grouping margin, then one level beyond.
pub fn unique_shortest(lattice: &Lattice, cfg: EnumerationConfig) -> Result<ShortestVector> {
    let levels = flat_spectrum(lattice, 2, cfg)?;
    let first = &levels[0];
    if first.frequency_pairs.len() == 1 {
        return Ok(ShortestVector::Unique(first.frequency_pairs[0].clone()));
    }
    let qs: Vec<f64> = first.frequency_pairs.iter().map(|v| v.normsq).collect();
    let qmin = qs.iter().copied().fold(f64::INFINITY, f64::min);
    let qmax = qs.iter().copied().fold(0.0_f64, f64::max);
    let gap_rel = (qmax - qmin) / qmin;
    if gap_rel <= tol::SHELL_EXACT_REL {
        Ok(ShortestVector::Shared(first.frequency_pairs.clone()))
    } else {
        Ok(ShortestVector::Indeterminate { gap_rel })
    }
}

fn integer_rank(rows: &[Vec<i64>], n: usize) -> usize {
    // Fraction-free elimination over i128; dimensions are at most 4-ish.
    let mut m: Vec<Vec<i128>> = rows
        .iter()
        .map(|r| r.iter().map(|&x| x as i128).collect())
        .collect();
    let mut rank = 0;
    for col in 0..n {
        let Some(pivot) = (rank..m.len()).find(|&r| m[r][col] != 0) else {
            continue;
        };
        m.swap(rank, pivot);
        let p = m[rank][col];
        for r in rank + 1..m.len() {
            let f = m[r][col];
            if f != 0 {
                for c in 0..n {
                    m[r][c] = m[r][c] * p - m[rank][c] * f;
                }
            }
        }
        rank += 1;
        if rank == m.len() {
            break;
        }
    }
    rank
}

fn det_i64(cols: &[&Vec<i64>]) -> i64 {
    let n = cols.len();
    match n {
        1 => cols[0][0],
        2 => cols[0][0] * cols[1][1] - cols[0][1] * cols[1][0],
        3 => {
            let a = cols[0];
            let b = cols[1];
            let c = cols[2];
            a[0] * (b[1] * c[2] - b[2] * c[1]) - b[0] * (a[1] * c[2] - a[2] * c[1])
                + c[0] * (a[1] * b[2] - a[2] * b[1])
        }
        4 => {
            // Laplace expansion along the first column.
            let mut det = 0i64;
            for i in 0..4 {
                let mut minor = [[0i64; 3]; 3];
                let mut mi = 0;
                for r in 0..4 {
                    if r == i {
                        continue;
                    }
                    for (mj, col) in cols.iter().enumerate().skip(1) {
                        minor[mi][mj - 1] = col[r];
                    }
                    mi += 1;
                }
                let m = minor[0][0] * (minor[1][1] * minor[2][2] - minor[1][2] * minor[2][1])
                    - minor[0][1] * (minor[1][0] * minor[2][2] - minor[1][2] * minor[2][0])
                    + minor[0][2] * (minor[1][0] * minor[2][1] - minor[1][1] * minor[2][0]);
                let sign = if i % 2 == 0 { 1 } else { -1 };
                det += sign * cols[0][i] * m;
            }
            det
        }
        _ => unreachable!("det_i64 only supports n <= 4"),
    }
}

/// Successive minima of `Γ*` (norms, not squared), with witnesses.
pub fn successive_minima(lattice: &Lattice, cfg: EnumerationConfig) -> Result<Vec<DualVector>> {
    let n = lattice.dim();
    let mut radius = {
        let levels = flat_spectrum(lattice, 1, cfg)?;
        levels[0].q * 4.0
    };
    for _ in 0..32 {
        let vectors = enumerate_dual_vectors(lattice, radius, cfg)?;
        let mut chosen: Vec<DualVector> = Vec::new();
        for v in vectors.iter().filter(|v| v.is_canonical()) {
            let mut rows: Vec<Vec<i64>> = chosen.iter().map(|c| c.coords.clone()).collect();
            rows.push(v.coords.clone());
            if integer_rank(&rows, n) == rows.len() {
                chosen.push(v.clone());
                if chosen.len() == n {
                    return Ok(chosen);
                }
            }
        }
        radius *= 2.0;
    }
    Err(Error::InternalConsistency(
        "failed to find n independent dual vectors".into(),
    ))
}

/// Result of the minimal-basis search on `Γ*`.
#[derive(Debug, Clone, Serialize)]
pub struct MinimalBasis {
    /// Minimal value of `Σ |w_i|²` over bases of `Γ*`.
    pub value: f64,
    /// One minimizing basis.
    pub basis: Vec<DualVector>,
    /// Whether some minimizing basis has all squared norms equal.
    pub equal_norms: bool,
}

/// Minimum of `Σ|w_i|²` over bases of the dual lattice, by exhaustive search
/// over candidates below 1.5 × the n-th successive minimum. For n ≤ 4 a
/// basis attaining the successive minima exists, so the search is complete.
pub fn c_gamma_star(lattice: &Lattice, cfg: EnumerationConfig) -> Result<MinimalBasis> {
    let n = lattice.dim();
    if n > 4 {
        return Err(Error::UnsupportedDimension { n, max: 4 });
    }
    let minima = successive_minima(lattice, cfg)?;
    let mu_n_sq = minima.last().unwrap().normsq;
    let mut radius = mu_n_sq * tol::BASIS_SEARCH_SAFETY * tol::BASIS_SEARCH_SAFETY;
    for _attempt in 0..3 {
        let candidates: Vec<DualVector> = enumerate_dual_vectors(lattice, radius, cfg)?
            .into_iter()
            .filter(|v| v.is_canonical())
            .collect();
        if let Some(found) = search_minimal_basis(&candidates, n) {
            return Ok(found);
        }
        radius *= 2.0;
    }
    Err(Error::InternalConsistency(
        "no unimodular basis found among candidate dual vectors".into(),
    ))
}

fn search_minimal_basis(candidates: &[DualVector], n: usize) -> Option<MinimalBasis> {
    let mut best_sum = f64::INFINITY;
    let mut best: Vec<Vec<usize>> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();

    fn recurse(
        candidates: &[DualVector],
        n: usize,
        start: usize,
        sum: f64,
        stack: &mut Vec<usize>,
        best_sum: &mut f64,
        best: &mut Vec<Vec<usize>>,
    ) {
        if stack.len() == n {
            let cols: Vec<&Vec<i64>> = stack.iter().map(|&i| &candidates[i].coords).collect();
            if det_i64(&cols).abs() == 1 {
                if sum < *best_sum * (1.0 - 1e-12) {
                    *best_sum = sum;
                    best.clear();
                    best.push(stack.clone());
                } else if sum <= *best_sum * (1.0 + 1e-12) {
                    best.push(stack.clone());
                }
            }
            return;
        }
        for i in start..candidates.len() {
            let next = sum + candidates[i].normsq;
            if next > *best_sum * (1.0 + 1e-12) {
                break; // candidates sorted by norm: nothing later can help
            }
            stack.push(i);
            recurse(candidates, n, i + 1, next, stack, best_sum, best);
            stack.pop();
        }
    }

    recurse(
        candidates,
        n,
        0,
        0.0,
        &mut stack,
        &mut best_sum,
        &mut best,
    );
    if best.is_empty() {
        return None;
    }
    let equal_norms = best.iter().any(|idxs| {
        let qs: Vec<f64> = idxs.iter().map(|&i| candidates[i].normsq).collect();
        let qmax = qs.iter().copied().fold(0.0_f64, f64::max);
        let qmin = qs.iter().copied().fold(f64::INFINITY, f64::min);
        (qmax - qmin) <= tol::EQUAL_NORMS_REL * qmax
    });
    let basis = best[0]
        .iter()
        .map(|&i| candidates[i].clone())
        .collect::<Vec<_>>();
    Some(MinimalBasis {
        value: basis.iter().map(|v| v.normsq).sum(),
        basis,
        equal_norms,
    })
}

/// The conformal upper bound `4π² c(Γ*)/n` together with the flat metric's
/// own scale-invariant first eigenvalue and the equality flag.
#[derive(Debug, Clone, Serialize)]
pub struct ConformalBound {
    pub c_gamma_star: f64,
    pub bound: f64,
    pub flat_lambda_bar_1: f64,
    pub equality: bool,
}

pub fn conformal_upper_bound(lattice: &Lattice, cfg: EnumerationConfig) -> Result<ConformalBound> {
    let minimal = c_gamma_star(lattice, cfg)?;
    let n = lattice.dim();
    let levels = flat_spectrum(lattice, 1, cfg)?;
    let lambda_1 = levels[0].eigenvalue;
    let flat = lambda_1 * lattice.volume().powf(2.0 / n as f64);
    Ok(ConformalBound {
        c_gamma_star: minimal.value,
        bound: FOUR_PI_SQ * minimal.value / n as f64,
        flat_lambda_bar_1: flat,
        equality: minimal.equal_norms,
    })
}
