//! Closed-form analysis of the first eigenvalue under the
//! unique-shortest-dual-vector hypothesis, replayed in exact arithmetic.
//!
//! When a single pair `±w` is strictly shorter than every other nonzero dual
//! vector, the first eigenvalue has multiplicity exactly two with
//! eigenfunctions `u₁ = √(2/d) sin(2πw·x)` and `u₂ = √(2/d) cos(2πw·x)`,
//! `d = |det A|`. Taking the deformation direction `φ = u₁`, the whole
//! second-variation pipeline closes in the exact coefficient ring and yields
//!
//! ```text
//! T(u₁) = λ₁(n²+n−5)/(6d) · u₁,   T(u₂) = λ₁(n²−5n+1)/(6d) · u₂,
//! α     = (n−1)² λ₁ / 6 · d^{(2−n)/n}  > 0,
//! ```
//!
//! so the flat metric never locally maximizes the scale-invariant first
//! eigenvalue in its conformal class. This module hard-codes those closed
//! forms and the six product/gradient identities the derivation runs
//! through; the generic operators are diffed against them coefficient by
//! coefficient, with zero tolerance.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{exact_context, exact_poly_gap, ExactField, ExactPoly, ExactScalar};
use crate::lattice::{
    flat_spectrum, unique_shortest, DualVector, EnumerationConfig, Lattice, ShortestVector,
};
use crate::perturbation::{
    check_admissible, second_variation_alpha, AdmissibleDirection, EigenspaceCluster,
    VariationOutcome,
};
use crate::trig::{Coeff, Field};

/// Verdict of the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    /// Hypothesis holds; the flat metric is not a local maximum.
    NotMaximal,
    /// Hypothesis fails (shortest vector not unique); no conclusion.
    Inapplicable,
}

/// One replayed identity with its exact coefficient gap.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub name: &'static str,
    /// Human-readable statement of the identity.
    pub statement: String,
    /// Largest numeric coefficient gap; exactly 0.0 on success.
    pub gap: f64,
}

/// Full report of the unique-shortest-vector case.
#[derive(Debug, Clone, Serialize)]
pub struct CaseworkReport {
    pub n: usize,
    pub det_abs: f64,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<DualVector>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_1: Option<f64>,
    /// `λ₁(n²+n−5)/(6d)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_eigen_u1: Option<f64>,
    /// `λ₁(n²−5n+1)/(6d)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_eigen_u2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// `(n−1)²λ₁/6 · d^{(2−n)/n}`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub identities: Vec<IdentityCheck>,
}

/// The normalized first eigenbasis `(u₁, u₂)` in exact coefficients, plus the
/// witness vector. Errors with [`Error::Inapplicable`] when the hypothesis
/// fails.
pub fn build_first_eigenbasis(
    lattice: &Arc<Lattice>,
) -> Result<(ExactPoly, ExactPoly, DualVector)> {
    let witness = match unique_shortest(lattice, EnumerationConfig::default())? {
        ShortestVector::Unique(v) => v,
        ShortestVector::Shared(reps) => {
            return Err(Error::Inapplicable(format!(
                "{} shortest dual pairs share the minimum",
                reps.len()
            )))
        }
        ShortestVector::Indeterminate { gap_rel } => {
            return Err(Error::Inapplicable(format!(
                "shortest-vector tie within floating tolerance (relative gap {gap_rel:.3e}); \
                 too close to call"
            )))
        }
    };
    let ef = exact_context(lattice)?;
    let norm = ef.sqrt_two_over_vol();
    let u1 = ExactPoly::wave_sin(ef.clone(), &witness.coords).scale(&norm);
    let u2 = ExactPoly::wave_cos(ef.clone(), &witness.coords).scale(&norm);
    Ok((u1, u2, witness))
}

struct IdentityKit {
    ef: Arc<ExactField>,
    w: Vec<i64>,
    u1: ExactPoly,
    u2: ExactPoly,
}

impl IdentityKit {
    fn wave(&self, mult: i64, sin: bool) -> ExactPoly {
        let coords: Vec<i64> = self.w.iter().map(|c| mult * c).collect();
        if sin {
            ExactPoly::wave_sin(self.ef.clone(), &coords)
        } else {
            ExactPoly::wave_cos(self.ef.clone(), &coords)
        }
    }

    fn lambda(&self) -> ExactScalar {
        self.ef.pair4pi2(&self.w, &self.w)
    }

    /// `√2 · d^{num/den}` as one scalar.
    fn sqrt2_vol(&self, num: i64, den: i64) -> ExactScalar {
        self.ef.sqrt2().mul(&self.ef.vol_pow(num, den))
    }
}

fn identity_list(kit: &IdentityKit) -> Result<Vec<(&'static str, String, ExactPoly, ExactPoly)>> {
    let ef = &kit.ef;
    let u1 = &kit.u1;
    let u2 = &kit.u2;
    let lam = kit.lambda();
    let sin2 = kit.wave(2, true);
    let cos2 = kit.wave(2, false);
    let sin3 = kit.wave(3, true);
    let cos3 = kit.wave(3, false);
    let half = ef.rat(1, 2);

    let mut list = Vec::new();

    // u₁³ = (3/(2d)) u₁ − (√2/(2 d^{3/2})) sin 3θ
    let lhs = u1.multiply(u1)?.multiply(u1)?;
    let rhs = u1
        .scale(&ef.rat(3, 2).mul(&ef.vol_pow(-1, 1)))
        .add(&sin3.scale(&half.neg().mul(&kit.sqrt2_vol(-3, 2))))?;
    list.push((
        "u1_cubed",
        "u1^3 = 3/(2d) u1 - sqrt(2)/(2 d^(3/2)) sin(6 pi w.x)".to_string(),
        lhs,
        rhs,
    ));

    // u₁ cos 2θ = −(1/2) u₁ + (√2/(2 d^{1/2})) sin 3θ
    let lhs = u1.multiply(&cos2)?;
    let rhs = u1
        .scale(&half.neg())
        .add(&sin3.scale(&half.mul(&kit.sqrt2_vol(-1, 2))))?;
    list.push((
        "u1_times_cos_double",
        "u1 cos(4 pi w.x) = -1/2 u1 + sqrt(2)/(2 d^(1/2)) sin(6 pi w.x)".to_string(),
        lhs,
        rhs,
    ));

    // g(∇u₁, ∇cos 2θ) = −λ₁ u₁ − (√2 λ₁ / d^{1/2}) sin 3θ
    let lhs = u1.gradient_pairing(&cos2)?;
    let rhs = u1
        .scale(&lam.neg())
        .add(&sin3.scale(&lam.neg().mul(&kit.sqrt2_vol(-1, 2))))?;
    list.push((
        "grad_u1_cos_double",
        "g(grad u1, grad cos(4 pi w.x)) = -lambda1 u1 - sqrt(2) lambda1 / d^(1/2) sin(6 pi w.x)"
            .to_string(),
        lhs,
        rhs,
    ));

    // u₁² u₂ = (1/(2d)) u₂ − (√2/(2 d^{3/2})) cos 3θ
    let lhs = u1.multiply(u1)?.multiply(u2)?;
    let rhs = u2
        .scale(&half.mul(&ef.vol_pow(-1, 1)))
        .add(&cos3.scale(&half.neg().mul(&kit.sqrt2_vol(-3, 2))))?;
    list.push((
        "u1_sq_u2",
        "u1^2 u2 = 1/(2d) u2 - sqrt(2)/(2 d^(3/2)) cos(6 pi w.x)".to_string(),
        lhs,
        rhs,
    ));

    // u₁ sin 2θ = (1/2) u₂ − (√2/(2 d^{1/2})) cos 3θ
    let lhs = u1.multiply(&sin2)?;
    let rhs = u2
        .scale(&half)
        .add(&cos3.scale(&half.neg().mul(&kit.sqrt2_vol(-1, 2))))?;
    list.push((
        "u1_times_sin_double",
        "u1 sin(4 pi w.x) = 1/2 u2 - sqrt(2)/(2 d^(1/2)) cos(6 pi w.x)".to_string(),
        lhs,
        rhs,
    ));

    // g(∇u₁, ∇sin 2θ) = λ₁ u₂ + (√2 λ₁ / d^{1/2}) cos 3θ
    let lhs = u1.gradient_pairing(&sin2)?;
    let rhs = u2
        .scale(&lam)
        .add(&cos3.scale(&lam.mul(&kit.sqrt2_vol(-1, 2))))?;
    list.push((
        "grad_u1_sin_double",
        "g(grad u1, grad sin(4 pi w.x)) = lambda1 u2 + sqrt(2) lambda1 / d^(1/2) cos(6 pi w.x)"
            .to_string(),
        lhs,
        rhs,
    ));

    Ok(list)
}

/// Recomputes the six displayed product/gradient identities of the
/// derivation in exact arithmetic. Any nonzero coefficient gap is a
/// build-breaking regression and comes back as an error naming the identity.
pub fn replay_identities(lattice: &Arc<Lattice>) -> Result<Vec<IdentityCheck>> {
    let (u1, u2, witness) = build_first_eigenbasis(lattice)?;
    let ef = u1.field().clone();
    let kit = IdentityKit {
        ef,
        w: witness.coords.clone(),
        u1,
        u2,
    };
    let mut out = Vec::new();
    for (name, statement, lhs, rhs) in identity_list(&kit)? {
        let gap = exact_poly_gap(&lhs, &rhs);
        if gap != 0.0 {
            return Err(Error::IdentityMismatch {
                name: name.to_string(),
                gap,
            });
        }
        out.push(IdentityCheck {
            name,
            statement,
            gap,
        });
    }
    Ok(out)
}

/// Closed-form second-variation eigenvalues `(λ₁(n²+n−5)/(6d), λ₁(n²−5n+1)/(6d))`.
pub fn closed_form_t_eigens(ef: &ExactField, rep: &[i64]) -> (ExactScalar, ExactScalar) {
    let n = ef.dim() as i64;
    let lam = ef.pair4pi2(rep, rep);
    let base = lam.mul(&ef.rat(1, 6)).mul(&ef.vol_pow(-1, 1));
    let t1 = base.mul(&ef.rat(n * n + n - 5, 1));
    let t2 = base.mul(&ef.rat(n * n - 5 * n + 1, 1));
    (t1, t2)
}

/// Closed-form Taylor coefficient `(n−1)²λ₁/6 · d^{(2−n)/n}`.
pub fn closed_form_alpha(ef: &ExactField, rep: &[i64]) -> ExactScalar {
    let n = ef.dim() as i64;
    ef.pair4pi2(rep, rep)
        .mul(&ef.rat((n - 1) * (n - 1), 6))
        .mul(&ef.vol_pow(2 - n, n))
}

/// The generic variation pipeline run start-to-finish in exact arithmetic
/// with `φ = u₁`.
pub struct ExactCase {
    pub field: Arc<ExactField>,
    pub cluster: EigenspaceCluster<ExactField>,
    pub direction: AdmissibleDirection<ExactField>,
    pub outcome: VariationOutcome<ExactField>,
    pub witness: DualVector,
}

pub fn exact_variation_case(lattice: &Arc<Lattice>) -> Result<ExactCase> {
    let (u1, _, witness) = build_first_eigenbasis(lattice)?;
    let field = u1.field().clone();
    let spectrum = flat_spectrum(lattice, 2, EnumerationConfig::default())?;
    let cluster = EigenspaceCluster::from_spectrum(field.clone(), &spectrum, 1)?;
    let direction = check_admissible(&u1, &cluster)?;
    let outcome = second_variation_alpha(&direction, &cluster)?;
    Ok(ExactCase {
        field,
        cluster,
        direction,
        outcome,
        witness,
    })
}

/// Exact diff between the generic pipeline and the hard-coded closed forms.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceCheck {
    /// Generic exact T entries equal closed-form diagonal, coefficientwise.
    pub t_identical: bool,
    /// Generic exact α equals the closed form.
    pub alpha_identical: bool,
    /// Numeric sizes of any gaps (0 when identical).
    pub t_gap: f64,
    pub alpha_gap: f64,
}

impl EquivalenceCheck {
    pub fn identical(&self) -> bool {
        self.t_identical && self.alpha_identical
    }
}

/// Runs the generic exact pipeline and diffs it against the closed forms.
pub fn exact_equivalence(lattice: &Arc<Lattice>) -> Result<EquivalenceCheck> {
    let case = exact_variation_case(lattice)?;
    let ef = case.field.as_ref();
    let (t1, t2) = closed_form_t_eigens(ef, &case.witness.coords);
    let alpha = closed_form_alpha(ef, &case.witness.coords);

    let entries = &case.outcome.t.entries;
    let mut t_gap = 0.0_f64;
    let mut t_identical = true;
    let expected = [
        [t1.clone(), ExactScalar::zero()],
        [ExactScalar::zero(), t2.clone()],
    ];
    for i in 0..2 {
        for j in 0..2 {
            let diff = entries[i][j].sub(&expected[i][j]);
            if !diff.is_zero() {
                t_identical = false;
                t_gap = t_gap.max(ef.approx(&diff).norm());
            }
        }
    }
    // Curvature list must be {t2, t1} ascending (t2 ≤ t1 for n ≥ 2).
    if case.outcome.t.curvatures != vec![t2.clone(), t1.clone()] {
        t_identical = false;
    }
    if case.outcome.mu != t2 {
        t_identical = false;
    }

    let alpha_diff = case.outcome.alpha.sub(&alpha);
    let alpha_identical = alpha_diff.is_zero();
    let alpha_gap = if alpha_identical {
        0.0
    } else {
        ef.approx(&alpha_diff).norm()
    };
    Ok(EquivalenceCheck {
        t_identical,
        alpha_identical,
        t_gap,
        alpha_gap,
    })
}

/// Full report: closed-form numbers, identity replay, and the verdict.
/// `Inapplicable` is a verdict, not an error.
pub fn casework_report(lattice: &Arc<Lattice>) -> Result<CaseworkReport> {
    let n = lattice.dim();
    let det_abs = lattice.volume();
    let witness = match unique_shortest(lattice, EnumerationConfig::default())? {
        ShortestVector::Unique(v) => v,
        _ => {
            return Ok(CaseworkReport {
                n,
                det_abs,
                verdict: Verdict::Inapplicable,
                w: None,
                lambda_1: None,
                t_eigen_u1: None,
                t_eigen_u2: None,
                mu: None,
                alpha: None,
                identities: Vec::new(),
            })
        }
    };
    let identities = replay_identities(lattice)?;
    let ef = exact_context(lattice)?;
    let (t1, t2) = closed_form_t_eigens(&ef, &witness.coords);
    let alpha = closed_form_alpha(&ef, &witness.coords);
    let lambda_1 = ef.approx(&ef.pair4pi2(&witness.coords, &witness.coords)).re;
    let t1f = ef.approx(&t1).re;
    let t2f = ef.approx(&t2).re;
    Ok(CaseworkReport {
        n,
        det_abs,
        verdict: Verdict::NotMaximal,
        w: Some(witness),
        lambda_1: Some(lambda_1),
        t_eigen_u1: Some(t1f),
        t_eigen_u2: Some(t2f),
        mu: Some(t2f.min(t1f)),
        alpha: Some(ef.approx(&alpha).re),
        identities,
    })
}

/// Plain-text rendering mirroring the derivation's sequence of identities.
pub fn render_report_text(report: &CaseworkReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "dimension n = {}, |det A| = {}\n",
        report.n, report.det_abs
    ));
    match report.verdict {
        Verdict::Inapplicable => {
            out.push_str("verdict: INAPPLICABLE (no unique shortest dual vector)\n");
        }
        Verdict::NotMaximal => {
            let w = report.w.as_ref().unwrap();
            out.push_str(&format!(
                "unique shortest dual vector w = {:?}, |w|^2 = {}\n",
                w.coords, w.normsq
            ));
            out.push_str(&format!(
                "lambda_1 = 4 pi^2 |w|^2 = {:.12} (multiplicity two)\n",
                report.lambda_1.unwrap()
            ));
            out.push_str("replayed identities (exact, gap must be 0):\n");
            for id in &report.identities {
                out.push_str(&format!("  [gap {:.1e}] {}\n", id.gap, id.statement));
            }
            out.push_str(&format!(
                "T eigenvalues: {:.12} (u1), {:.12} (u2); mu = {:.12}\n",
                report.t_eigen_u1.unwrap(),
                report.t_eigen_u2.unwrap(),
                report.mu.unwrap()
            ));
            out.push_str(&format!(
                "alpha = (n-1)^2 lambda_1 / 6 * d^((2-n)/n) = {:.12} > 0\n",
                report.alpha.unwrap()
            ));
            out.push_str("verdict: NOT MAXIMAL (second variation positive along phi = u1)\n");
        }
    }
    out
}
