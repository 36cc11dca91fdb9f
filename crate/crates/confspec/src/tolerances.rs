//! Centralized tolerances used across the crate.
//!
//! Every threshold that decides a pass/fail or an error path is defined here
//! so the verification pipeline has no ad-hoc magic numbers.

/// Entrywise agreement of the dual basis identity `Bᵀ A = I`.
pub const DUAL_BASIS_IDENTITY: f64 = 1e-12;

/// Integrality of dual pairings `w · x ∈ Z` for lattice vectors `x`.
pub const DUAL_PAIRING_INT: f64 = 1e-10;

/// Relative tolerance grouping two squared norms into one eigenvalue shell.
/// Exact lattices produce exactly equal rationals up to roundoff; genuinely
/// distinct shells of desk-scale lattices are far wider apart.
pub const SHELL_GROUPING_REL: f64 = 1e-9;

/// Relative gap below which two squared norms are treated as exactly equal
/// (roundoff of exact rational data), versus merely unresolved.
pub const SHELL_EXACT_REL: f64 = 1e-12;

/// Default cap on the number of vectors a dual enumeration may return.
pub const ENUMERATION_CAP: usize = 1_000_000;

/// Safety factor applied to the n-th successive minimum when collecting
/// candidate vectors for the minimal-basis search.
pub const BASIS_SEARCH_SAFETY: f64 = 1.5;

/// Relative tolerance for the equal-norms flag of a minimizing dual basis.
pub const EQUAL_NORMS_REL: f64 = 1e-9;

/// Hermitian-symmetry violation accepted when constructing a trigonometric
/// polynomial from raw coefficients.
pub const HERMITIAN_SYMMETRY: f64 = 1e-12;

/// Floating coefficients below this magnitude are pruned from polynomials.
pub const COEFF_PRUNE: f64 = 1e-15;

/// Absolute tolerance on admissibility residuals (mean, mass, gradient).
pub const ADMISSIBILITY: f64 = 1e-10;

/// Mean-zero tolerance for deformation directions.
pub const MEAN_ZERO: f64 = 1e-12;

/// Orthonormality tolerance for eigenspace cluster bases.
pub const CLUSTER_ORTHONORMAL: f64 = 1e-12;

/// Residual above which a vector is rejected as outside the eigenspace.
pub const EIGENSPACE_MEMBERSHIP: f64 = 1e-10;

/// Asymmetry allowed in the second-variation Gram matrix before the
/// computation is declared inconsistent.
pub const T_MATRIX_ASYMMETRY: f64 = 1e-10;

/// Relative threshold under which a shell coefficient on the cluster level is
/// attributed to admissibility roundoff and dropped by the eigenfunction
/// correction; anything larger is an internal-consistency error.
pub const CLUSTER_SHELL_RESIDUAL_REL: f64 = 1e-8;

/// Singular values below this are treated as zero when extracting the
/// admissible null space of a candidate span.
pub const NULLSPACE_SINGULAR: f64 = 1e-10;

/// First-variation matrix entries must vanish below this for admissible
/// directions.
pub const FIRST_VARIATION_ZERO: f64 = 1e-10;

/// Default relative tolerance of the truncation-doubling convergence test.
pub const DOUBLING_REL: f64 = 1e-8;

/// Minimal eigenvector-continuity overlap accepted while tracking a branch.
pub const BRANCH_OVERLAP_MIN: f64 = 0.9;

/// Two tracking candidates closer than this in overlap are ambiguous.
pub const BRANCH_AMBIGUITY: f64 = 0.05;

/// Relative agreement required between fitted branch curvatures and the
/// second-variation eigenvalues (any dimension).
pub const CURVATURE_MATCH_REL: f64 = 0.01;

/// Relative agreement of the fitted Taylor coefficient of the functional
/// with its predicted value, dimension 2.
pub const ALPHA_FIT_REL_N2: f64 = 0.01;

/// Same as [`ALPHA_FIT_REL_N2`] for dimension 3 and above, where the
/// discretization couples more modes.
pub const ALPHA_FIT_REL_N3: f64 = 0.02;

/// Max-norm PDE residual allowed for a converged cluster eigenpair, as a
/// multiple of the cluster eigenvalue. Calibrated by the truncation
/// convergence study (measured ~5e-5 · λ at the default radius).
pub const RESIDUAL_SCALE_REL: f64 = 1e-3;

/// Fitted first derivative of an eigenvalue branch must vanish below this
/// multiple of the eigenvalue.
pub const BRANCH_FIRST_DERIV_REL: f64 = 1e-6;

/// Relative agreement of the fitted volume curvature with its closed form.
pub const VOLUME_SECOND_REL: f64 = 1e-3;

/// Absolute bound on the fitted first derivative of the volume.
pub const VOLUME_FIRST_ABS: f64 = 1e-8;

/// Absolute bound on the discrete zero mode `λ₀(g_t)`.
pub const ZERO_MODE_ABS: f64 = 1e-10;

/// Agreement between the quadrature volume and the weight's zero Fourier
/// mode.
pub const VOLUME_IDENTITY: f64 = 1e-12;

/// Relative reconstruction error tolerated when reporting formula-consistency
/// of a second-variation report.
pub const REPORT_CONSISTENCY_REL: f64 = 1e-12;
