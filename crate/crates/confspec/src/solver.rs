//! Independent numerical oracle for the deformed metric.
//!
//! For the conformal family `g_t = e^{φt} g` the Rayleigh quotient weights
//! are analytic: stiffness entries carry `e^{(n−2)φt/2}`, mass entries carry
//! `e^{nφt/2}`. Both are sampled on a uniform grid in lattice coordinates
//! (where plane waves are ordinary exponentials) and transformed once per
//! `t`; trapezoidal quadrature of periodic analytic functions is spectrally
//! accurate, and the plane-wave Galerkin matrices assemble directly from the
//! weight's Fourier coefficients.
//!
//! Eigenvalue branches through a degenerate cluster are followed across the
//! deformation parameter by mass-weighted eigenvector overlaps, with an
//! orthogonal re-alignment inside (near-)degenerate blocks where individual
//! eigenvectors are not well defined. Derivatives in `t` come from quartic
//! least-squares fits over a symmetric grid.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{enumerate_dual_vectors, EnumerationConfig, Lattice, FOUR_PI_SQ};
use crate::tolerances as tol;
use crate::trig::{Freq, TrigPolynomial};

/// A conformal deformation path `g_t = e^{φt} g` with its sample grid.
#[derive(Debug, Clone)]
pub struct DeformationPath {
    lattice: Arc<Lattice>,
    phi: TrigPolynomial,
    t_grid: Vec<f64>,
    sup_phi: f64,
}

impl DeformationPath {
    /// Validates mean-zero φ and a symmetric grid containing 0.
    pub fn new(lattice: Arc<Lattice>, phi: TrigPolynomial, t_grid: Vec<f64>) -> Result<Self> {
        if phi.integrate().norm() > tol::MEAN_ZERO {
            return Err(Error::Usage(
                "deformation direction must be mean-zero".into(),
            ));
        }
        let mut grid = t_grid;
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        if !grid.contains(&0.0) {
            return Err(Error::Usage("t grid must contain 0".into()));
        }
        for t in &grid {
            if !grid.iter().any(|s| (s + t).abs() < 1e-15) {
                return Err(Error::Usage(format!(
                    "t grid must be symmetric about 0; missing -{t}"
                )));
            }
        }
        let sup_phi = phi.sup_norm(64);
        Ok(DeformationPath {
            lattice,
            phi,
            t_grid: grid,
            sup_phi,
        })
    }

    /// Default grid `{0, ±h, ±2h, ±3h}` with `h = 0.02 / ‖φ‖_∞`.
    pub fn with_default_grid(lattice: Arc<Lattice>, phi: TrigPolynomial) -> Result<Self> {
        let sup = phi.sup_norm(64);
        let h = if sup <= 1e-12 { 0.02 } else { 0.02 / sup };
        let grid = vec![-3.0 * h, -2.0 * h, -h, 0.0, h, 2.0 * h, 3.0 * h];
        Self::new(lattice, phi, grid)
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }
    pub fn phi(&self) -> &TrigPolynomial {
        &self.phi
    }
    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }
    pub fn sup_phi(&self) -> f64 {
        self.sup_phi
    }
}

/// Discretization parameters. Unset options fall back to the defaults
/// derived from the cluster: truncation ball `|w|² ≤ 12 q_k` and a weight
/// grid of `max(32, 6 × max frequency index)` points per axis.
#[derive(Debug, Clone)]
pub struct GalerkinConfig {
    pub truncation_radius_sq: Option<f64>,
    pub grid_per_axis: Option<usize>,
    pub eig_count: usize,
    /// Relative tolerance of the truncation-doubling test.
    pub convergence: f64,
    /// Worker threads for independent per-t solves.
    pub threads: usize,
}

impl Default for GalerkinConfig {
    fn default() -> Self {
        GalerkinConfig {
            truncation_radius_sq: None,
            grid_per_axis: None,
            eig_count: 8,
            convergence: tol::DOUBLING_REL,
            threads: 1,
        }
    }
}

/// The eigenvalue window being tracked: positions `k .. k+m` in the
/// multiplicity-counted ordering (the zero mode sits at position 0).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClusterWindow {
    pub k_index: usize,
    pub multiplicity: usize,
    /// Squared dual norm of the cluster shell (eigenvalue in 4π² units).
    pub q: f64,
}

/// Plane-wave basis of the truncation ball, zero frequency first.
#[derive(Debug, Clone)]
pub struct GalerkinBasis {
    pub coords: Vec<Freq>,
    pub qs: Vec<f64>,
    pub max_index: i64,
}

pub fn build_basis(lattice: &Lattice, radius_sq: f64) -> Result<GalerkinBasis> {
    let mut coords = vec![vec![0i64; lattice.dim()]];
    let vectors = enumerate_dual_vectors(lattice, radius_sq, EnumerationConfig::default())?;
    coords.extend(vectors.into_iter().map(|v| v.coords));
    let qs: Vec<f64> = coords.iter().map(|c| lattice.q_of(c)).collect();
    let max_index = coords
        .iter()
        .flat_map(|c| c.iter().map(|x| x.abs()))
        .max()
        .unwrap_or(0);
    Ok(GalerkinBasis {
        coords,
        qs,
        max_index,
    })
}

/// n-dimensional FFT working on a `len^n` row-major grid.
struct GridFft {
    axes: usize,
    len: usize,
    forward: Arc<dyn rustfft::Fft<f64>>,
    backward: Arc<dyn rustfft::Fft<f64>>,
}

impl GridFft {
    fn new(axes: usize, len: usize) -> Self {
        let mut planner = FftPlanner::new();
        GridFft {
            axes,
            len,
            forward: planner.plan_fft_forward(len),
            backward: planner.plan_fft_inverse(len),
        }
    }

    fn total(&self) -> usize {
        self.len.pow(self.axes as u32)
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.len;
        let total = self.total();
        let fft = if inverse {
            &self.backward
        } else {
            &self.forward
        };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..self.axes {
            let stride = n.pow((self.axes - 1 - axis) as u32);
            let lines = total / n;
            let block = stride * n;
            for l in 0..lines {
                let outer = l / stride;
                let inner = l % stride;
                let base = outer * block + inner;
                for i in 0..n {
                    line[i] = data[base + i * stride];
                }
                fft.process(&mut line);
                for i in 0..n {
                    data[base + i * stride] = line[i];
                }
            }
        }
        if !inverse {
            let scale = 1.0 / total as f64;
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }

    /// Grid index of `coords` with periodic wrap.
    fn index_of(&self, coords: &[i64]) -> usize {
        let n = self.len as i64;
        let mut idx = 0usize;
        for &c in coords {
            let wrapped = c.rem_euclid(n) as usize;
            idx = idx * self.len + wrapped;
        }
        idx
    }
}

/// Everything computed at one deformation parameter.
#[derive(Debug, Clone)]
pub struct SolveAtT {
    pub t: f64,
    /// All retained eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// M-orthonormal eigenvectors, columns matching `eigenvalues`.
    pub eigenvectors: DMatrix<Complex64>,
    pub mass: DMatrix<Complex64>,
    pub volume_quadrature: f64,
    pub volume_fourier: f64,
}

struct Assembly {
    stiffness: DMatrix<Complex64>,
    mass: DMatrix<Complex64>,
    volume_quadrature: f64,
    volume_fourier: f64,
}

fn resolved_grid(basis: &GalerkinBasis, cfg: &GalerkinConfig) -> Result<usize> {
    let default = ((6 * basis.max_index) as usize).max(32);
    let n = cfg.grid_per_axis.unwrap_or(default);
    if (n as i64) < 4 * basis.max_index {
        return Err(Error::DiscretizationFailure(format!(
            "weight grid of {n} points per axis aliases frequencies up to index {}",
            basis.max_index
        )));
    }
    Ok(n)
}

/// Samples φ on the `grid^n` lattice-coordinate grid via inverse FFT.
fn sample_phi(path: &DeformationPath, fft: &GridFft) -> Vec<f64> {
    let mut data = vec![Complex64::new(0.0, 0.0); fft.total()];
    for (c, k) in path.phi.terms() {
        data[fft.index_of(c)] += *k;
    }
    fft.transform(&mut data, true);
    data.into_iter().map(|z| z.re).collect()
}

fn assemble(
    path: &DeformationPath,
    basis: &GalerkinBasis,
    fft: &GridFft,
    phi_values: &[f64],
    t: f64,
) -> Result<Assembly> {
    let lattice = path.lattice.as_ref();
    let n = lattice.dim() as f64;
    let dim = basis.coords.len();
    let det = lattice.volume();

    let stiffness_exp = (n - 2.0) / 2.0 * t;
    let mass_exp = n / 2.0 * t;
    let mut w_k: Vec<Complex64> = phi_values
        .iter()
        .map(|p| Complex64::new((stiffness_exp * p).exp(), 0.0))
        .collect();
    let mut w_m: Vec<Complex64> = phi_values
        .iter()
        .map(|p| Complex64::new((mass_exp * p).exp(), 0.0))
        .collect();
    let volume_quadrature = det * w_m.iter().map(|z| z.re).sum::<f64>() / fft.total() as f64;
    fft.transform(&mut w_k, false);
    fft.transform(&mut w_m, false);
    let volume_fourier = det * w_m[0].re;

    let mut stiffness = DMatrix::<Complex64>::zeros(dim, dim);
    let mut mass = DMatrix::<Complex64>::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            let delta: Freq = basis.coords[a]
                .iter()
                .zip(&basis.coords[b])
                .map(|(x, y)| x - y)
                .collect();
            let idx = fft.index_of(&delta);
            let pair = FOUR_PI_SQ * lattice.pair_dual(&basis.coords[a], &basis.coords[b]);
            stiffness[(a, b)] = w_k[idx] * pair;
            mass[(a, b)] = w_m[idx];
        }
    }
    // Clean Hermitian structure against FFT roundoff.
    let stiffness = (stiffness.clone() + stiffness.adjoint()) * Complex64::new(0.5, 0.0);
    let mass = (mass.clone() + mass.adjoint()) * Complex64::new(0.5, 0.0);
    Ok(Assembly {
        stiffness,
        mass,
        volume_quadrature,
        volume_fourier,
    })
}

/// Assembles the stiffness/mass pair of the deformed metric at parameter `t`
/// over the truncation ball of `radius_sq`.
pub fn assemble_galerkin(
    path: &DeformationPath,
    t: f64,
    cfg: &GalerkinConfig,
    radius_sq: f64,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let basis = build_basis(path.lattice(), radius_sq)?;
    let grid = resolved_grid(&basis, cfg)?;
    let fft = GridFft::new(path.lattice().dim(), grid);
    let phi_values = sample_phi(path, &fft);
    let a = assemble(path, &basis, &fft, &phi_values, t)?;
    Ok((a.stiffness, a.mass))
}

/// Smallest `count` generalized eigenpairs of `K x = λ M x` with Hermitian
/// `K` and Hermitian positive-definite `M`; eigenvectors are M-orthonormal.
pub fn lowest_eigenpairs(
    stiffness: &DMatrix<Complex64>,
    mass: &DMatrix<Complex64>,
    count: usize,
) -> Result<Vec<(f64, DVector<Complex64>)>> {
    let dim = stiffness.nrows();
    let chol = Cholesky::new(mass.clone()).ok_or_else(|| {
        Error::DiscretizationFailure(
            "mass matrix is not positive definite; enlarge the truncation ball or grid".into(),
        )
    })?;
    let l = chol.l();
    let s1 = l
        .clone()
        .solve_lower_triangular(stiffness)
        .ok_or_else(|| Error::SolverFailure("triangular solve failed".into()))?;
    let s2 = l
        .clone()
        .solve_lower_triangular(&s1.adjoint())
        .ok_or_else(|| Error::SolverFailure("triangular solve failed".into()))?;
    let reduced = s2.adjoint();
    let reduced = (reduced.clone() + reduced.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(reduced);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut out = Vec::with_capacity(count.min(dim));
    for &idx in order.iter().take(count) {
        let y = eig.eigenvectors.column(idx).into_owned();
        let mut x = l
            .adjoint()
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::SolverFailure("triangular back-solve failed".into()))?;
        // Deterministic phase: largest entry real positive.
        let mut best = 0usize;
        let mut best_norm = 0.0;
        for (i, z) in x.iter().enumerate() {
            if z.norm() > best_norm {
                best_norm = z.norm();
                best = i;
            }
        }
        if best_norm > 0.0 {
            let rot = (x[best] / x[best].norm()).conj();
            for z in x.iter_mut() {
                *z *= rot;
            }
        }
        out.push((eig.eigenvalues[idx], x));
    }
    Ok(out)
}

fn solve_at(
    path: &DeformationPath,
    basis: &GalerkinBasis,
    fft: &GridFft,
    phi_values: &[f64],
    t: f64,
    count: usize,
) -> Result<SolveAtT> {
    let a = assemble(path, basis, fft, phi_values, t)?;
    let pairs = lowest_eigenpairs(&a.stiffness, &a.mass, count)?;
    let dim = basis.coords.len();
    let mut eigenvalues = Vec::with_capacity(pairs.len());
    let mut eigenvectors = DMatrix::<Complex64>::zeros(dim, pairs.len());
    for (j, (val, vec)) in pairs.into_iter().enumerate() {
        eigenvalues.push(val);
        eigenvectors.set_column(j, &vec);
    }
    Ok(SolveAtT {
        t,
        eigenvalues,
        eigenvectors,
        mass: a.mass,
        volume_quadrature: a.volume_quadrature,
        volume_fourier: a.volume_fourier,
    })
}

/// Solves at every grid parameter. Independent `t` solves run on up to
/// `cfg.threads` workers; results are merged in grid order, so the output is
/// identical for any thread count.
pub fn solve_path(
    path: &DeformationPath,
    cfg: &GalerkinConfig,
    window: ClusterWindow,
    radius_sq: f64,
) -> Result<Vec<SolveAtT>> {
    let basis = build_basis(path.lattice(), radius_sq)?;
    let grid = resolved_grid(&basis, cfg)?;
    let fft = GridFft::new(path.lattice().dim(), grid);
    let phi_values = sample_phi(path, &fft);
    let count = cfg
        .eig_count
        .max(window.k_index + window.multiplicity + 2)
        .min(basis.coords.len());
    let ts = path.t_grid.to_vec();
    let threads = cfg.threads.max(1).min(ts.len());
    if threads == 1 {
        return ts
            .iter()
            .map(|&t| solve_at(path, &basis, &fft, &phi_values, t, count))
            .collect();
    }
    let mut slots: Vec<Option<Result<SolveAtT>>> = Vec::new();
    slots.resize_with(ts.len(), || None);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slot_lock = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| {
                // Each worker owns its FFT plan; plans are not Sync.
                let local_fft = GridFft::new(path.lattice().dim(), grid);
                loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= ts.len() {
                        break;
                    }
                    let r = solve_at(path, &basis, &local_fft, &phi_values, ts[i], count);
                    slot_lock.lock().unwrap()[i] = Some(r);
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("worker filled every slot"))
        .collect()
}

/// One tracked sample of an eigenvalue branch.
#[derive(Debug, Clone, Serialize)]
pub struct BranchSample {
    pub t: f64,
    pub value: f64,
    /// Plane-wave coefficients as (re, im) pairs over the solver basis.
    pub eigenvector: Vec<[f64; 2]>,
}

/// Quartic least-squares fit of a sampled curve at `t = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct QuarticFit {
    pub value: f64,
    pub first: f64,
    pub second: f64,
    /// Max absolute misfit over the samples.
    pub residual: f64,
}

/// An eigenvalue branch followed through the deformation.
#[derive(Debug, Clone, Serialize)]
pub struct BranchCurve {
    pub branch_id: usize,
    pub samples: Vec<BranchSample>,
    pub overlap_trace: Vec<f64>,
    pub fitted: QuarticFit,
}

/// Least-squares quartic fit over a symmetric grid of at least 5 samples.
/// Fitting runs in the scaled variable `t/t_max` to keep the Vandermonde
/// system well conditioned.
pub fn fit_derivatives(ts: &[f64], ys: &[f64]) -> Result<QuarticFit> {
    if ts.len() != ys.len() || ts.len() < 5 {
        return Err(Error::FitQuality(format!(
            "need at least 5 samples, got {}",
            ts.len()
        )));
    }
    for t in ts {
        if !ts.iter().any(|s| (s + t).abs() < 1e-14) {
            return Err(Error::FitQuality(format!(
                "samples are not symmetric about 0 (missing -{t})"
            )));
        }
    }
    let t_max = ts.iter().fold(0.0_f64, |m, t| m.max(t.abs()));
    if t_max == 0.0 {
        return Err(Error::FitQuality("all samples at t = 0".into()));
    }
    let rows = ts.len();
    let vander = DMatrix::<f64>::from_fn(rows, 5, |r, c| (ts[r] / t_max).powi(c as i32));
    let svd = vander.clone().svd(true, true);
    let smin = svd
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let smax = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    if smin <= 0.0 || smax / smin > 1e10 {
        return Err(Error::FitQuality(format!(
            "Vandermonde condition {:.3e} too large; widen or rebalance the t grid",
            smax / smin
        )));
    }
    let rhs = DVector::from_column_slice(ys);
    let coeffs = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::FitQuality(e.to_string()))?;
    let fitted = &vander * &coeffs;
    let residual = (fitted - &rhs).amax();
    Ok(QuarticFit {
        value: coeffs[0],
        first: coeffs[1] / t_max,
        second: 2.0 * coeffs[2] / (t_max * t_max),
        residual,
    })
}

/// One in-flight sample while a branch is tracked:
/// (t, eigenvalue, eigenvector, overlap score).
type Tracked = (f64, f64, DVector<Complex64>, f64);

/// Mass-weighted overlap |⟨u, M v⟩|.
fn overlap(mass: &DMatrix<Complex64>, u: &DVector<Complex64>, v: &DVector<Complex64>) -> f64 {
    (u.adjoint() * mass * v)[(0, 0)].norm()
}

/// Re-aligns the eigenvector columns of (near-)degenerate blocks so that
/// they match the previous step's branch vectors; any unitary mix inside an
/// exactly degenerate block is an equally valid eigenbasis. A block is
/// aligned when exactly as many tracked branches point into it (by best
/// overlap) as it has columns — the square Procrustes case; anything else is
/// left for the assignment step to flag.
fn align_degenerate_blocks(solve: &mut SolveAtT, prev: &[DVector<Complex64>]) {
    let count = solve.eigenvalues.len();
    // Best candidate per tracked branch, before any rotation.
    let best_of: Vec<usize> = prev
        .iter()
        .map(|p| {
            (0..count)
                .map(|c| (c, overlap(&solve.mass, p, &solve.eigenvectors.column(c).into_owned())))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .map(|(c, _)| c)
                .unwrap_or(0)
        })
        .collect();
    let mut block_start = 0;
    while block_start < count {
        let mut block_end = block_start + 1;
        while block_end < count {
            let a = solve.eigenvalues[block_end - 1];
            let b = solve.eigenvalues[block_end];
            if (b - a).abs() <= 1e-8 * b.abs().max(1.0) {
                block_end += 1;
            } else {
                break;
            }
        }
        let size = block_end - block_start;
        let pointing: Vec<usize> = (0..prev.len())
            .filter(|&j| (block_start..block_end).contains(&best_of[j]))
            .collect();
        if size > 1 && pointing.len() == size {
            // Square Procrustes alignment of the block columns against the
            // branches that landed in it.
            let mut a = DMatrix::<Complex64>::zeros(size, size);
            for (r, &j) in pointing.iter().enumerate() {
                for c in 0..size {
                    let col = solve.eigenvectors.column(block_start + c).into_owned();
                    a[(r, c)] = (prev[j].adjoint() * &solve.mass * col)[(0, 0)];
                }
            }
            let strength = a.map(|z| z.norm()).max();
            if strength > 0.5 {
                let svd = a.svd(true, true);
                let u = svd.u.as_ref().unwrap();
                let v_t = svd.v_t.as_ref().unwrap();
                let rot = v_t.adjoint() * u.adjoint();
                let cols: Vec<DVector<Complex64>> = (block_start..block_end)
                    .map(|p| solve.eigenvectors.column(p).into_owned())
                    .collect();
                for c_new in 0..size {
                    let mut acc = DVector::<Complex64>::zeros(cols[0].len());
                    for (c_old, col) in cols.iter().enumerate() {
                        acc += col * rot[(c_old, c_new)];
                    }
                    solve.eigenvectors.set_column(block_start + c_new, &acc);
                }
            }
        }
        block_start = block_end;
    }
}

/// Advances every branch across the given solves (in order), appending
/// samples and updating the running seed vectors.
fn march(
    solves: &[SolveAtT],
    seed_vectors: &mut [DVector<Complex64>],
    curves: &mut [Vec<Tracked>],
) -> Result<()> {
    let m = seed_vectors.len();
    for solve in solves {
        let mut solve = solve.clone();
        align_degenerate_blocks(&mut solve, seed_vectors);
        let count = solve.eigenvalues.len();
        let mut assigned = vec![usize::MAX; m];
        let mut taken = vec![false; count];
        for (j, seed) in seed_vectors.iter().enumerate() {
            let mut scores: Vec<(usize, f64)> = (0..count)
                .map(|c| {
                    let col = solve.eigenvectors.column(c).into_owned();
                    (c, overlap(&solve.mass, seed, &col))
                })
                .collect();
            scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let (best, best_score) = scores[0];
            let runner_up = scores.get(1).map(|s| s.1).unwrap_or(0.0);
            if best_score < tol::BRANCH_OVERLAP_MIN {
                return Err(Error::TrackingAmbiguous {
                    t: solve.t,
                    margin: best_score,
                });
            }
            // Two near-equal candidates after block alignment means the
            // branch genuinely cannot be identified at this step.
            if taken[best] || best_score - runner_up < tol::BRANCH_AMBIGUITY {
                return Err(Error::TrackingAmbiguous {
                    t: solve.t,
                    margin: best_score - runner_up,
                });
            }
            assigned[j] = best;
            taken[best] = true;
        }
        for (j, seed) in seed_vectors.iter_mut().enumerate() {
            let c = assigned[j];
            let col = solve.eigenvectors.column(c).into_owned();
            let score = overlap(&solve.mass, seed, &col);
            curves[j].push((solve.t, solve.eigenvalues[c], col.clone(), score));
            *seed = col;
        }
    }
    Ok(())
}

/// Tracks the `m` eigenvalue branches emanating from the cluster across the
/// deformation grid and fits their derivatives at `t = 0`.
pub fn track_branches(
    path: &DeformationPath,
    cfg: &GalerkinConfig,
    window: ClusterWindow,
) -> Result<Vec<BranchCurve>> {
    let radius_sq = cfg
        .truncation_radius_sq
        .unwrap_or(12.0 * window.q.max(1e-12));
    let solves = solve_path(path, cfg, window, radius_sq)?;
    track_branches_from_solves(path, &solves, window)
}

/// Branch tracking over precomputed per-t solves.
pub fn track_branches_from_solves(
    path: &DeformationPath,
    solves: &[SolveAtT],
    window: ClusterWindow,
) -> Result<Vec<BranchCurve>> {
    let m = window.multiplicity;
    let k = window.k_index;
    let grid = path.t_grid();
    let smallest_pos = grid
        .iter()
        .position(|t| *t > 0.0)
        .ok_or_else(|| Error::Usage("t grid has no positive samples".into()))?;
    let seed_solve = &solves[smallest_pos];
    if seed_solve.eigenvalues.len() < k + m {
        return Err(Error::SolverFailure(
            "not enough eigenvalues retained to cover the cluster".into(),
        ));
    }
    // Branch identities are fixed by ascending order at the smallest
    // positive t, where the cluster has split.
    let seeds: Vec<DVector<Complex64>> = (k..k + m)
        .map(|c| seed_solve.eigenvectors.column(c).into_owned())
        .collect();
    let mut curves: Vec<Vec<Tracked>> = vec![Vec::new(); m];
    for (j, seed) in seeds.iter().enumerate() {
        curves[j].push((
            seed_solve.t,
            seed_solve.eigenvalues[k + j],
            seed.clone(),
            1.0,
        ));
    }
    let mut fwd = seeds.clone();
    march(&solves[smallest_pos + 1..], &mut fwd, &mut curves)?;
    let mut bwd = seeds;
    let back: Vec<SolveAtT> = solves[..smallest_pos].iter().rev().cloned().collect();
    march(&back, &mut bwd, &mut curves)?;

    let mut out = Vec::with_capacity(m);
    for (j, mut samples) in curves.into_iter().enumerate() {
        samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let ts: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let fitted = fit_derivatives(&ts, &ys)?;
        let overlap_trace: Vec<f64> = samples.iter().map(|s| s.3).collect();
        out.push(BranchCurve {
            branch_id: j,
            samples: samples
                .into_iter()
                .map(|(t, value, vec, _)| BranchSample {
                    t,
                    value,
                    eigenvector: vec.iter().map(|z| [z.re, z.im]).collect(),
                })
                .collect(),
            overlap_trace,
            fitted,
        });
    }
    Ok(out)
}

/// Scale-invariant functional along the path, fitted and compared against a
/// predicted Taylor coefficient.
#[derive(Debug, Clone, Serialize)]
pub struct FunctionalSeries {
    pub lambda_bar_at_zero: f64,
    pub fitted_alpha: f64,
    pub predicted_alpha: f64,
    pub relative_gap: f64,
    pub fitted_first: f64,
    pub samples: Vec<(f64, f64)>,
}

/// Computes `λ̄_k(g_t) = λ_k(g_t) · Vol(g_t)^{2/n}` on the grid, fits the
/// Taylor polynomial, and compares the curvature with `predicted_alpha`.
/// `λ_k(g_t)` is the k-th sorted eigenvalue — the minimum over the cluster
/// branches near `t = 0`.
pub fn functional_series(
    path: &DeformationPath,
    cfg: &GalerkinConfig,
    window: ClusterWindow,
    predicted_alpha: f64,
) -> Result<FunctionalSeries> {
    let radius_sq = cfg
        .truncation_radius_sq
        .unwrap_or(12.0 * window.q.max(1e-12));
    let solves = solve_path(path, cfg, window, radius_sq)?;
    let n = path.lattice().dim() as f64;
    let samples: Vec<(f64, f64)> = solves
        .iter()
        .map(|s| {
            (
                s.t,
                s.eigenvalues[window.k_index] * s.volume_quadrature.powf(2.0 / n),
            )
        })
        .collect();
    let ts: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let fit = fit_derivatives(&ts, &ys)?;
    let fitted_alpha = fit.second;
    let relative_gap = if predicted_alpha.abs() > 0.0 {
        (fitted_alpha - predicted_alpha).abs() / predicted_alpha.abs()
    } else {
        fitted_alpha.abs()
    };
    Ok(FunctionalSeries {
        lambda_bar_at_zero: fit.value,
        fitted_alpha,
        predicted_alpha,
        relative_gap,
        fitted_first: fit.first,
        samples,
    })
}

/// Volume of the deformed torus along the grid with fitted derivatives; the
/// curvature has the closed form `(n²/4)‖φ‖²` and the first derivative
/// vanishes for mean-zero φ.
#[derive(Debug, Clone, Serialize)]
pub struct VolumeSeries {
    pub fitted_first: f64,
    pub fitted_second: f64,
    pub expected_second: f64,
    /// Worst gap between quadrature volume and the weight's zero mode.
    pub identity_deviation: f64,
    pub samples: Vec<(f64, f64)>,
}

pub fn volume_series(
    path: &DeformationPath,
    cfg: &GalerkinConfig,
    window: ClusterWindow,
) -> Result<VolumeSeries> {
    let radius_sq = cfg
        .truncation_radius_sq
        .unwrap_or(12.0 * window.q.max(1e-12));
    let solves = solve_path(path, cfg, window, radius_sq)?;
    let n = path.lattice().dim() as f64;
    let phi_normsq = path.phi().l2_inner(path.phi())?.re;
    let samples: Vec<(f64, f64)> = solves.iter().map(|s| (s.t, s.volume_quadrature)).collect();
    let identity_deviation = solves
        .iter()
        .map(|s| (s.volume_quadrature - s.volume_fourier).abs())
        .fold(0.0, f64::max);
    let ts: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let fit = fit_derivatives(&ts, &ys)?;
    Ok(VolumeSeries {
        fitted_first: fit.first,
        fitted_second: fit.second,
        expected_second: n * n / 4.0 * phi_normsq,
        identity_deviation,
        samples,
    })
}

/// Truncation-doubling convergence check on the cluster eigenvalues.
#[derive(Debug, Clone, Serialize)]
pub struct DoublingReport {
    pub base_radius_sq: f64,
    pub doubled_radius_sq: f64,
    /// Worst relative eigenvalue change over cluster positions and grid.
    pub max_rel_change: f64,
    pub per_t: Vec<(f64, f64)>,
}

pub fn doubling_check(
    path: &DeformationPath,
    cfg: &GalerkinConfig,
    window: ClusterWindow,
) -> Result<DoublingReport> {
    let base = cfg
        .truncation_radius_sq
        .unwrap_or(12.0 * window.q.max(1e-12));
    let doubled = 2.0 * base;
    let coarse = solve_path(path, cfg, window, base)?;
    let fine = solve_path(path, cfg, window, doubled)?;
    let mut per_t = Vec::with_capacity(coarse.len());
    let mut worst = 0.0_f64;
    for (c, f) in coarse.iter().zip(&fine) {
        let mut local = 0.0_f64;
        for pos in window.k_index..window.k_index + window.multiplicity {
            let a = c.eigenvalues[pos];
            let b = f.eigenvalues[pos];
            local = local.max((a - b).abs() / b.abs().max(1e-300));
        }
        per_t.push((c.t, local));
        worst = worst.max(local);
    }
    Ok(DoublingReport {
        base_radius_sq: base,
        doubled_radius_sq: doubled,
        max_rel_change: worst,
        per_t,
    })
}

/// Max-norm PDE residual of a discrete eigenpair: the deformed operator
/// identity `Δ_{g_t} f = e^{−φt}(Δ f − ((n−2)/2) t g(∇φ, ∇f))` is evaluated
/// pointwise on the quadrature grid against `Λ f`.
pub fn residual_check(
    path: &DeformationPath,
    t: f64,
    cfg: &GalerkinConfig,
    eigenvalue: f64,
    eigenvector: &DVector<Complex64>,
    basis: &GalerkinBasis,
) -> Result<f64> {
    let lattice = path.lattice().as_ref();
    let n = lattice.dim() as f64;
    let grid = resolved_grid(basis, cfg)?;
    let fft = GridFft::new(lattice.dim(), grid);
    let phi_values = sample_phi(path, &fft);
    let det_sqrt = lattice.volume().sqrt();

    // Complex coefficients of f, Δf and g(∇φ,∇f) over the dual lattice.
    let mut f_coeffs: BTreeMap<Freq, Complex64> = BTreeMap::new();
    for (j, c) in basis.coords.iter().enumerate() {
        let v = eigenvector[j] / det_sqrt;
        if v.norm() > 0.0 {
            f_coeffs.insert(c.clone(), v);
        }
    }
    let mut lap_coeffs: BTreeMap<Freq, Complex64> = BTreeMap::new();
    for (c, v) in &f_coeffs {
        lap_coeffs.insert(c.clone(), v * FOUR_PI_SQ * lattice.q_of(c));
    }
    let mut grad_coeffs: BTreeMap<Freq, Complex64> = BTreeMap::new();
    for (a, pa) in path.phi().terms() {
        for (b, vb) in &f_coeffs {
            let factor = -FOUR_PI_SQ * lattice.pair_dual(a, b);
            if factor == 0.0 {
                continue;
            }
            let c: Freq = a.iter().zip(b).map(|(x, y)| x + y).collect();
            *grad_coeffs.entry(c).or_insert(Complex64::new(0.0, 0.0)) += pa * vb * factor;
        }
    }
    let values = |coeffs: &BTreeMap<Freq, Complex64>| -> Vec<Complex64> {
        let mut data = vec![Complex64::new(0.0, 0.0); fft.total()];
        for (c, v) in coeffs {
            data[fft.index_of(c)] += v;
        }
        fft.transform(&mut data, true);
        data
    };
    let f_vals = values(&f_coeffs);
    let lap_vals = values(&lap_coeffs);
    let grad_vals = values(&grad_coeffs);
    let mut worst = 0.0_f64;
    for i in 0..fft.total() {
        let lhs = (-(phi_values[i]) * t).exp()
            * (lap_vals[i] - grad_vals[i] * ((n - 2.0) / 2.0 * t));
        let rhs = f_vals[i] * eigenvalue;
        worst = worst.max((lhs - rhs).norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::flat_spectrum;
    use crate::perturbation::{check_admissible, t_matrix, EigenspaceCluster};
    use crate::trig::{Field, TrigPoly};

    fn rect_path() -> (DeformationPath, ClusterWindow) {
        let lat = Arc::new(Lattice::diagonal(&[1.0, 2.0]).unwrap());
        let norm = lat.sqrt_two_over_vol();
        let u1 = TrigPoly::wave_sin(lat.clone(), &[0, 1]).scale(&norm);
        let path = DeformationPath::with_default_grid(lat, u1).unwrap();
        let window = ClusterWindow {
            k_index: 1,
            multiplicity: 2,
            q: 0.25,
        };
        (path, window)
    }

    #[test]
    fn grid_fft_roundtrip_and_delta() {
        let fft = GridFft::new(2, 8);
        let mut data: Vec<Complex64> = (0..64)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let orig = data.clone();
        fft.transform(&mut data, false);
        fft.transform(&mut data, true);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
        // Constant function → pure zero mode.
        let mut ones = vec![Complex64::new(1.0, 0.0); 64];
        fft.transform(&mut ones, false);
        assert!((ones[0].re - 1.0).abs() < 1e-13);
        for v in &ones[1..] {
            assert!(v.norm() < 1e-13);
        }
    }

    #[test]
    fn assembly_flat_metric_is_diagonal() {
        for entries in [vec![1.0, 2.0], vec![1.0, 1.0, 2.0]] {
            let lat = Arc::new(Lattice::diagonal(&entries).unwrap());
            let norm = lat.sqrt_two_over_vol();
            let rep: Vec<i64> = (0..entries.len())
                .map(|i| if i + 1 == entries.len() { 1 } else { 0 })
                .collect();
            let u1 = TrigPoly::wave_sin(lat.clone(), &rep).scale(&norm);
            let path = DeformationPath::with_default_grid(lat.clone(), u1).unwrap();
            let cfg = GalerkinConfig::default();
            let (k, m) = assemble_galerkin(&path, 0.0, &cfg, 0.75).unwrap();
            let basis = build_basis(&lat, 0.75).unwrap();
            for a in 0..k.nrows() {
                for b in 0..k.ncols() {
                    if a == b {
                        let expect = FOUR_PI_SQ * basis.qs[a];
                        assert!((k[(a, b)].re - expect).abs() < 1e-10 * expect.max(1.0));
                        assert!((m[(a, b)].re - 1.0).abs() < 1e-12);
                    } else {
                        assert!(k[(a, b)].norm() < 1e-11);
                        assert!(m[(a, b)].norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn stiffness_is_t_independent_in_dimension_two() {
        let (path, _) = rect_path();
        let cfg = GalerkinConfig::default();
        let (k0, _) = assemble_galerkin(&path, 0.0, &cfg, 2.0).unwrap();
        let (k1, m1) = assemble_galerkin(&path, 0.12, &cfg, 2.0).unwrap();
        assert!((&k1 - &k0).map(|z| z.norm()).max() < 1e-12);
        // The mass deforms.
        let id = DMatrix::<Complex64>::identity(m1.nrows(), m1.ncols());
        assert!((&m1 - &id).map(|z| z.norm()).max() > 1e-4);
    }

    #[test]
    fn first_order_weight_expansion_matches() {
        // K ≈ K₀ + t((n−2)/2)(φ-weighted stiffness),
        // M ≈ M₀ + t(n/2)(φ-weighted mass).
        let lat = Arc::new(Lattice::diagonal(&[1.0, 1.0, 2.0]).unwrap());
        let norm = lat.sqrt_two_over_vol();
        let u1 = TrigPoly::wave_sin(lat.clone(), &[0, 0, 1]).scale(&norm);
        let path = DeformationPath::with_default_grid(lat.clone(), u1.clone()).unwrap();
        let cfg = GalerkinConfig::default();
        let radius = 1.0;
        let t = 1e-5;
        let (k_t, m_t) = assemble_galerkin(&path, t, &cfg, radius).unwrap();
        let (k_0, m_0) = assemble_galerkin(&path, 0.0, &cfg, radius).unwrap();
        let basis = build_basis(&lat, radius).unwrap();
        let n = 3.0;
        let dk = (&k_t - &k_0) / Complex64::new(t, 0.0);
        let dm = (&m_t - &m_0) / Complex64::new(t, 0.0);
        for a in 0..basis.coords.len() {
            for b in 0..basis.coords.len() {
                let delta: Vec<i64> = basis.coords[a]
                    .iter()
                    .zip(&basis.coords[b])
                    .map(|(x, y)| x - y)
                    .collect();
                let phi_hat = u1.coeff(&delta);
                let pair = FOUR_PI_SQ * lat.pair_dual(&basis.coords[a], &basis.coords[b]);
                let expect_k = phi_hat * ((n - 2.0) / 2.0) * pair;
                let expect_m = phi_hat * (n / 2.0);
                assert!((dk[(a, b)] - expect_k).norm() < 1e-4 * (1.0 + expect_k.norm()));
                assert!((dm[(a, b)] - expect_m).norm() < 1e-4);
            }
        }
    }

    #[test]
    fn generalized_solver_reproduces_flat_spectra() {
        // Identity pencil.
        let id = DMatrix::<Complex64>::identity(4, 4);
        let pairs = lowest_eigenpairs(&id, &id, 4).unwrap();
        for (val, _) in &pairs {
            assert!((val - 1.0).abs() < 1e-12);
        }

        let lat = Arc::new(Lattice::diagonal(&[1.0, 2.0]).unwrap());
        let zero = TrigPoly::zero(lat.clone());
        let path = DeformationPath::new(lat.clone(), zero, vec![-0.01, 0.0, 0.01]).unwrap();
        let cfg = GalerkinConfig::default();
        let (k, m) = assemble_galerkin(&path, 0.0, &cfg, 3.0).unwrap();
        let pairs = lowest_eigenpairs(&k, &m, 4).unwrap();
        let pi_sq = std::f64::consts::PI.powi(2);
        let expect = [0.0, pi_sq, pi_sq, 4.0 * pi_sq];
        for (got, want) in pairs.iter().zip(expect) {
            assert!(
                (got.0 - want).abs() < 1e-9 * want.max(1.0),
                "{} vs {want}",
                got.0
            );
        }

        let z2 = Arc::new(Lattice::identity(2).unwrap());
        let zero = TrigPoly::zero(z2.clone());
        let path = DeformationPath::new(z2, zero, vec![-0.01, 0.0, 0.01]).unwrap();
        let (k, m) = assemble_galerkin(&path, 0.0, &cfg, 4.0).unwrap();
        let pairs = lowest_eigenpairs(&k, &m, 6).unwrap();
        let expect = [
            0.0,
            4.0 * pi_sq,
            4.0 * pi_sq,
            4.0 * pi_sq,
            4.0 * pi_sq,
            8.0 * pi_sq,
        ];
        for (got, want) in pairs.iter().zip(expect) {
            assert!((got.0 - want).abs() < 1e-9 * want.max(1.0));
        }
    }

    #[test]
    fn eigenvectors_are_mass_orthonormal() {
        let (path, window) = rect_path();
        let cfg = GalerkinConfig::default();
        let solves = solve_path(&path, &cfg, window, 3.0).unwrap();
        for s in &solves {
            let count = s.eigenvalues.len();
            for i in 0..count {
                for j in 0..count {
                    let vi = s.eigenvectors.column(i).into_owned();
                    let vj = s.eigenvectors.column(j).into_owned();
                    let inner = (vi.adjoint() * &s.mass * vj)[(0, 0)];
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((inner.norm() - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn quartic_fit_recovers_polynomial() {
        let ts = [-0.03, -0.02, -0.01, 0.0, 0.01, 0.02, 0.03];
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 + 5.0 * t * t).collect();
        let fit = fit_derivatives(&ts, &ys).unwrap();
        assert!((fit.value - 3.0).abs() < 1e-12);
        assert!(fit.first.abs() < 1e-9);
        assert!((fit.second - 10.0).abs() < 1e-7);
        assert!(fit.residual < 1e-12);

        let asym = [0.0, 0.01, 0.02, 0.03, 0.04];
        let ys: Vec<f64> = asym.iter().map(|t| t * t).collect();
        assert!(matches!(
            fit_derivatives(&asym, &ys),
            Err(Error::FitQuality(_))
        ));
    }

    #[test]
    fn branch_curvatures_match_second_variation() {
        let (path, window) = rect_path();
        let cfg = GalerkinConfig::default();
        let curves = track_branches(&path, &cfg, window).unwrap();
        assert_eq!(curves.len(), 2);
        let lambda = FOUR_PI_SQ * 0.25;
        let mut curvatures: Vec<f64> = curves.iter().map(|c| c.fitted.second).collect();
        curvatures.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [-5.0 * lambda / 12.0, lambda / 12.0];
        for (got, want) in curvatures.iter().zip(expect) {
            assert!(
                (got - want).abs() < 0.01 * want.abs(),
                "curvature {got} vs {want}"
            );
        }
        for c in &curves {
            assert!(c.fitted.first.abs() < tol::BRANCH_FIRST_DERIV_REL * lambda);
            assert!(c.overlap_trace.iter().all(|o| *o > tol::BRANCH_OVERLAP_MIN));
            // Flat eigenvalue reproduced at t = 0.
            let at_zero = c
                .samples
                .iter()
                .find(|s| s.t == 0.0)
                .expect("grid contains 0");
            assert!((at_zero.value - lambda).abs() < 1e-9 * lambda);
        }

        // Cross-check against the operator spectrum.
        let lat = path.lattice().clone();
        let spectrum = flat_spectrum(&lat, 3, EnumerationConfig::default()).unwrap();
        let cluster = EigenspaceCluster::from_spectrum(lat.clone(), &spectrum, 1).unwrap();
        let adm = check_admissible(&cluster.basis()[0].clone(), &cluster).unwrap();
        let t = t_matrix(&adm, &cluster).unwrap();
        for (got, want) in curvatures
            .iter()
            .zip(t.curvatures.iter().map(|k| lat.approx(k).re))
        {
            assert!((got - want).abs() < 0.01 * want.abs().max(1e-10));
        }
    }

    #[test]
    fn zero_mode_stays_constant_and_cluster_minimum_is_sorted_position() {
        let (path, window) = rect_path();
        let cfg = GalerkinConfig::default();
        let solves = solve_path(&path, &cfg, window, 3.0).unwrap();
        let curves = track_branches_from_solves(&path, &solves, window).unwrap();
        for s in &solves {
            // λ₀(g_t) = 0 with the constant eigenvector (basis index 0).
            assert!(s.eigenvalues[0].abs() < tol::ZERO_MODE_ABS);
            let v0 = s.eigenvectors.column(0);
            let off: f64 = (1..v0.len()).map(|i| v0[i].norm()).fold(0.0, f64::max);
            assert!(off < 1e-10 * v0[0].norm(), "constant mode mixes: {off}");

            // λ_k(g_t): sorted position equals the minimum over branches.
            let min_branch = curves
                .iter()
                .map(|c| {
                    c.samples
                        .iter()
                        .find(|smp| (smp.t - s.t).abs() < 1e-15)
                        .unwrap()
                        .value
                })
                .fold(f64::INFINITY, f64::min);
            let sorted_k = s.eigenvalues[window.k_index];
            assert!((min_branch - sorted_k).abs() < 1e-12 * sorted_k.abs().max(1.0));
        }
    }

    #[test]
    fn zero_direction_gives_constant_branches() {
        let lat = Arc::new(Lattice::diagonal(&[1.0, 2.0]).unwrap());
        let zero = TrigPoly::zero(lat.clone());
        let path = DeformationPath::with_default_grid(lat, zero).unwrap();
        let window = ClusterWindow {
            k_index: 1,
            multiplicity: 2,
            q: 0.25,
        };
        let cfg = GalerkinConfig::default();
        let curves = track_branches(&path, &cfg, window).unwrap();
        let lambda = FOUR_PI_SQ * 0.25;
        for c in &curves {
            for s in &c.samples {
                assert!((s.value - lambda).abs() < 1e-9 * lambda);
            }
            assert!(c.fitted.second.abs() < 1e-6);
        }
    }

    #[test]
    fn sign_flip_symmetry_of_the_path() {
        // g depends on φt only: solving (φ, t) equals solving (−φ, −t).
        let (path, window) = rect_path();
        let lat = path.lattice().clone();
        let neg_phi = path.phi().scale(&Complex64::new(-1.0, 0.0));
        let neg = DeformationPath::new(lat, neg_phi, path.t_grid().to_vec()).unwrap();
        let cfg = GalerkinConfig::default();
        let a = solve_path(&path, &cfg, window, 3.0).unwrap();
        let b = solve_path(&neg, &cfg, window, 3.0).unwrap();
        for s_a in &a {
            let s_b = b
                .iter()
                .find(|s| (s.t + s_a.t).abs() < 1e-15)
                .expect("symmetric grid");
            for (x, y) in s_a.eigenvalues.iter().zip(&s_b.eigenvalues) {
                assert!((x - y).abs() < 1e-10 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn volume_series_closed_form() {
        let (path, window) = rect_path();
        let cfg = GalerkinConfig::default();
        let vs = volume_series(&path, &cfg, window).unwrap();
        assert!(vs.identity_deviation < tol::VOLUME_IDENTITY);
        assert!(vs.fitted_first.abs() < tol::VOLUME_FIRST_ABS);
        let expect = 1.0; // n²/4 · ‖φ‖² = 4/4 · 1
        assert!((vs.expected_second - expect).abs() < 1e-12);
        assert!(
            (vs.fitted_second - vs.expected_second).abs()
                < tol::VOLUME_SECOND_REL * vs.expected_second
        );
        // Vol(0) = |det A|.
        let at_zero = vs.samples.iter().find(|s| s.0 == 0.0).unwrap();
        assert!((at_zero.1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn functional_series_matches_alpha() {
        let (path, window) = rect_path();
        let cfg = GalerkinConfig::default();
        let lambda = FOUR_PI_SQ * 0.25;
        let predicted = lambda / 6.0;
        let fs = functional_series(&path, &cfg, window, predicted).unwrap();
        assert!(
            fs.relative_gap < tol::ALPHA_FIT_REL_N2,
            "gap {}",
            fs.relative_gap
        );
        assert!((fs.lambda_bar_at_zero - 2.0 * lambda).abs() < 1e-8 * lambda);
        assert!(fs.fitted_first.abs() < 1e-6 * lambda);
    }

    #[test]
    fn doubling_certifies_truncation() {
        let (path, window) = rect_path();
        let cfg = GalerkinConfig::default();
        let report = doubling_check(&path, &cfg, window).unwrap();
        assert!(
            report.max_rel_change < cfg.convergence,
            "doubling moved eigenvalues by {}",
            report.max_rel_change
        );
    }

    #[test]
    fn residual_small_when_converged_and_large_when_not() {
        let (path, window) = rect_path();
        let cfg = GalerkinConfig::default();
        let radius = 12.0 * window.q;
        let basis = build_basis(path.lattice(), radius).unwrap();
        let solves = solve_path(&path, &cfg, window, radius).unwrap();

        // Exact flat eigenfunction at t = 0.
        let at_zero = solves.iter().find(|s| s.t == 0.0).unwrap();
        let r = residual_check(
            &path,
            0.0,
            &cfg,
            at_zero.eigenvalues[1],
            &at_zero.eigenvectors.column(1).into_owned(),
            &basis,
        )
        .unwrap();
        assert!(r < 1e-10, "flat residual {r}");

        // Deformed but converged: still small.
        let t_idx = path.t_grid().len() - 1;
        let t = path.t_grid()[t_idx];
        let s = &solves[t_idx];
        let r = residual_check(
            &path,
            t,
            &cfg,
            s.eigenvalues[1],
            &s.eigenvectors.column(1).into_owned(),
            &basis,
        )
        .unwrap();
        assert!(r < 1e-3, "converged residual {r}");

        // Deliberately under-resolved basis: residual visibly larger.
        let tiny_radius = 1.01 * window.q;
        let tiny_basis = build_basis(path.lattice(), tiny_radius).unwrap();
        let tiny = solve_path(&path, &cfg, window, tiny_radius).unwrap();
        let s = tiny.iter().find(|s| (s.t - t).abs() < 1e-15).unwrap();
        let r_bad = residual_check(
            &path,
            t,
            &cfg,
            s.eigenvalues[1],
            &s.eigenvectors.column(1).into_owned(),
            &tiny_basis,
        )
        .unwrap();
        assert!(r_bad > 10.0 * r, "under-resolved residual {r_bad} vs {r}");
    }

    #[test]
    fn residual_decays_spectrally_with_radius() {
        // Convergence study behind the residual threshold used below:
        // measured max-norm residuals at t = 3h fall roughly a hundredfold
        // per radius doubling (3e-1, 8e-3, 1e-4, 1e-6, 1e-10).
        let (path, window) = rect_path();
        let cfg = GalerkinConfig::default();
        let t = *path.t_grid().last().unwrap();
        let mut previous = f64::INFINITY;
        for mult in [6.0, 12.0, 24.0, 48.0] {
            let radius = mult * window.q;
            let basis = build_basis(path.lattice(), radius).unwrap();
            let solves = solve_path(&path, &cfg, window, radius).unwrap();
            let s = solves.iter().find(|s| (s.t - t).abs() < 1e-15).unwrap();
            let r = residual_check(
                &path,
                t,
                &cfg,
                s.eigenvalues[1],
                &s.eigenvectors.column(1).into_owned(),
                &basis,
            )
            .unwrap();
            assert!(r < previous / 20.0, "radius {mult}q: residual {r} vs {previous}");
            previous = r;
        }
    }

    #[test]
    fn threaded_solves_match_sequential() {
        let (path, window) = rect_path();
        let mut cfg = GalerkinConfig::default();
        let seq = solve_path(&path, &cfg, window, 3.0).unwrap();
        cfg.threads = 3;
        let par = solve_path(&path, &cfg, window, 3.0).unwrap();
        assert_eq!(seq.len(), par.len());
        for (a, b) in seq.iter().zip(&par) {
            assert_eq!(a.t, b.t);
            for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
                assert_eq!(x, y, "per-t solves must be bitwise stable");
            }
        }
    }
}
