//! Risk over reach sets: exact integration of sum-of-powers polynomials over
//! simplices and 2-D zonotopes, per-step risk, mission success probability
//! and risk-to-go.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{closed_loop, GainMatrix, LinearModel};
use crate::error::RiskError;
use crate::geometry::{Simplex, Zonotope};
use crate::hazard::LinearFormPoly;
use crate::reach::{propagate, PropagateOpts, ReachSequence};

/// Area floor for degenerate planar projections; keeps the risk ratio finite
/// while an incident counter surfaces the event.
pub const AREA_FLOOR: f64 = 1e-9;

fn factorial(n: u32) -> f64 {
    (2..=n).map(|k| k as f64).product()
}

/// Exact integral of `(l . (x, y, 1))^m` over a planar simplex:
/// `Vol(S) * 2 * m!/(m+2)! * sum over |j| = m of prod_i (l . v~_i)^{j_i}`
/// with `v~` the homogenized vertices. Degenerate simplices integrate to 0.
pub fn integrate_term_over_simplex(l: &[f64; 3], degree: u32, simplex: &Simplex) -> f64 {
    debug_assert_eq!(simplex.dim(), 2, "closed form is the d = 2 specialization");
    let vol = simplex.volume();
    if vol == 0.0 || degree == 0 {
        return 0.0;
    }
    let lv: Vec<f64> = simplex
        .vertices()
        .iter()
        .map(|v| l[0] * v[0] + l[1] * v[1] + l[2])
        .collect();
    let m = degree;
    let mut sum = 0.0;
    for j0 in 0..=m {
        for j1 in 0..=(m - j0) {
            let j2 = m - j0 - j1;
            sum += lv[0].powi(j0 as i32) * lv[1].powi(j1 as i32) * lv[2].powi(j2 as i32);
        }
    }
    vol * 2.0 * factorial(m) / factorial(m + 2) * sum
}

/// Integral of the full polynomial over a full-dimensional 2-D zonotope:
/// triangulate the vertex polygon, sum the closed form over every
/// (term, simplex) pair.
pub fn integrate_poly_over_zonotope(poly: &LinearFormPoly, z: &Zonotope) -> Result<f64, RiskError> {
    let polygon = z.vertices_2d()?;
    let simplices = polygon.triangulate();
    let mut total = 0.0;
    for term in &poly.terms {
        for s in &simplices {
            total += integrate_term_over_simplex(&term.form, term.degree, s);
        }
    }
    Ok(total)
}

/// Per-step risk with clamp control. Returns `(value, degenerate)`; the
/// degenerate flag fires when the area fell below [`AREA_FLOOR`] (the floor
/// is used as the denominator so the ratio stays finite). With
/// `clamp = false` the raw ratio is returned, which is what the optimizer
/// differentiates through.
pub fn reach_risk_detailed(poly: &LinearFormPoly, z: &Zonotope, clamp: bool) -> (f64, bool) {
    let (integral, area) = match z.vertices_2d() {
        Ok(polygon) => {
            let simplices = polygon.triangulate();
            let mut total = 0.0;
            for term in &poly.terms {
                for s in &simplices {
                    total += integrate_term_over_simplex(&term.form, term.degree, s);
                }
            }
            (total, polygon.area())
        }
        // measure-zero set: the integral vanishes
        Err(_) => (0.0, 0.0),
    };
    let degenerate = area < AREA_FLOOR;
    let ratio = integral / area.max(AREA_FLOOR);
    let value = if clamp { ratio.clamp(0.0, 1.0) } else { ratio };
    (value, degenerate)
}

/// Probability of the hazard outcome over a reach set: mean of the fitted
/// map over the set, clamped into [0, 1].
pub fn reach_risk(poly: &LinearFormPoly, z: &Zonotope) -> f64 {
    reach_risk_detailed(poly, z, true).0
}

/// Per-step reach-set risks p_k for k = 1..=T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    per_step: Vec<f64>,
}

impl RiskProfile {
    pub fn new(per_step: Vec<f64>) -> Result<Self, RiskError> {
        for (i, &p) in per_step.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(RiskError::OutOfRange {
                    step: i + 1,
                    value: p,
                });
            }
        }
        Ok(Self { per_step })
    }

    pub fn per_step(&self) -> &[f64] {
        &self.per_step
    }

    pub fn horizon(&self) -> usize {
        self.per_step.len()
    }

    /// Risk at step k (1-based).
    pub fn at(&self, k: usize) -> f64 {
        self.per_step[k - 1]
    }

    /// Element-wise sum of outcome profiles, clamped to 1 per step.
    pub fn combined(profiles: &[&RiskProfile]) -> Result<Self, RiskError> {
        let t = profiles.first().map_or(0, |p| p.horizon());
        let mut per_step = vec![0.0; t];
        for p in profiles {
            for (acc, v) in per_step.iter_mut().zip(p.per_step.iter()) {
                *acc = (*acc + v).min(1.0);
            }
        }
        Self::new(per_step)
    }

    /// CSV emission: `k, p_k, cumulative` where cumulative is
    /// `1 - prod_{i<=k} (1 - p_i)`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "p_k", "cumulative"])?;
        let mut survival = 1.0;
        for (i, &p) in self.per_step.iter().enumerate() {
            survival *= 1.0 - p;
            w.write_record(&[
                (i + 1).to_string(),
                p.to_string(),
                (1.0 - survival).to_string(),
            ])?;
        }
        w.flush()
    }
}

/// Probability that the mission experiences no hazard outcome:
/// `prod_k (1 - p_k)`.
pub fn mission_success(profile: &RiskProfile) -> f64 {
    profile.per_step.iter().map(|p| 1.0 - p).product()
}

/// Mission success over several simultaneous outcomes; per-step outcome sums
/// are clamped to 1 before the survival product.
pub fn mission_success_multi(profiles: &[&RiskProfile]) -> Result<f64, RiskError> {
    Ok(mission_success(&RiskProfile::combined(profiles)?))
}

/// Aggregate risk over the tail `[k', T]`: `1 - prod_{k >= k'} (1 - p_k)`.
pub fn risk_to_go(profile: &RiskProfile, onset: usize) -> Result<f64, RiskError> {
    if onset == 0 || onset > profile.horizon() {
        return Err(RiskError::OnsetOutOfRange {
            onset,
            horizon: profile.horizon(),
        });
    }
    let survival: f64 = profile.per_step[onset - 1..]
        .iter()
        .map(|p| 1.0 - p)
        .product();
    Ok(1.0 - survival)
}

/// Per-step risk thresholds r_k plus the overall budget r, with the
/// consistency requirement `1 - prod (1 - r_k) <= r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskThresholds {
    per_step: Vec<f64>,
    overall: f64,
}

impl RiskThresholds {
    pub fn new(per_step: Vec<f64>, overall: f64) -> Result<Self, RiskError> {
        for (i, &r) in per_step.iter().enumerate() {
            if !(0.0..=1.0).contains(&r) {
                return Err(RiskError::OutOfRange {
                    step: i + 1,
                    value: r,
                });
            }
        }
        let cumulative = 1.0 - per_step.iter().map(|r| 1.0 - r).product::<f64>();
        if cumulative > overall + 1e-12 {
            return Err(RiskError::InconsistentThresholds {
                cumulative,
                overall,
            });
        }
        Ok(Self { per_step, overall })
    }

    /// Thresholds set exactly at a baseline risk profile; the overall budget
    /// is the induced cumulative risk.
    pub fn from_profile(profile: &RiskProfile) -> Self {
        let per_step = profile.per_step.clone();
        let overall = 1.0 - per_step.iter().map(|r| 1.0 - r).product::<f64>();
        Self { per_step, overall }
    }

    pub fn per_step(&self) -> &[f64] {
        &self.per_step
    }

    pub fn overall(&self) -> f64 {
        self.overall
    }

    pub fn horizon(&self) -> usize {
        self.per_step.len()
    }

    /// Threshold at step k (1-based).
    pub fn at(&self, k: usize) -> f64 {
        self.per_step[k - 1]
    }

    /// Tail thresholds for an online re-solve from step `onset + 1`.
    pub fn tail(&self, onset: usize) -> Self {
        let per_step: Vec<f64> = self.per_step[onset..].to_vec();
        let overall = 1.0 - per_step.iter().map(|r| 1.0 - r).product::<f64>();
        Self { per_step, overall }
    }
}

/// The canonical propagation-and-risk path: every consumer of per-step risk
/// (threshold construction, solver constraints, verification, experiment
/// scoring) goes through this one evaluator so their numbers agree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskPipeline {
    pub proj_dims: [usize; 2],
    pub reduce_to: Option<usize>,
    pub reduce_proj: Option<usize>,
}

impl RiskPipeline {
    /// Pipeline for the 12-state quadrotor: planar positions at dims (9, 10),
    /// full sets capped at 2n generators, projections kept at 2 generators.
    pub fn quadrotor() -> Self {
        Self {
            proj_dims: [crate::dynamics::POS_X, crate::dynamics::POS_Y],
            reduce_to: Some(2 * crate::dynamics::STATE_DIM),
            reduce_proj: Some(2),
        }
    }

    /// Planar problems where the state is already the projection.
    pub fn planar() -> Self {
        Self {
            proj_dims: [0, 1],
            reduce_to: None,
            reduce_proj: Some(2),
        }
    }

    pub fn propagate_opts(&self) -> PropagateOpts {
        PropagateOpts {
            reduce_to: self.reduce_to,
            proj_dims: Some(self.proj_dims),
            reduce_proj: self.reduce_proj,
        }
    }

    /// Propagate under `d` and evaluate per-step risks. Returns the raw or
    /// clamped values plus the count of degenerate projections encountered.
    pub fn risks(
        &self,
        d: &DMatrix<f64>,
        x0: &Zonotope,
        disturbance: &Zonotope,
        horizon: usize,
        poly: &LinearFormPoly,
        clamp: bool,
    ) -> Result<(Vec<f64>, usize), RiskError> {
        let seq =
            propagate(d, x0, disturbance, horizon, &self.propagate_opts()).map_err(
                |e| match e {
                    crate::error::ReachError::Geometry(g) => RiskError::Geometry(g),
                    other => RiskError::Geometry(crate::error::GeometryError::DimensionMismatch(
                        other.to_string(),
                    )),
                },
            )?;
        Ok(self.risks_of_sequence(&seq, poly, clamp))
    }

    /// Risks of an already-propagated sequence.
    pub fn risks_of_sequence(
        &self,
        seq: &ReachSequence,
        poly: &LinearFormPoly,
        clamp: bool,
    ) -> (Vec<f64>, usize) {
        let mut degenerate_events = 0;
        let risks = seq
            .projected()
            .iter()
            .map(|z| {
                let (v, degenerate) = reach_risk_detailed(poly, z, clamp);
                if degenerate {
                    degenerate_events += 1;
                }
                v
            })
            .collect();
        (risks, degenerate_events)
    }
}

/// Per-step thresholds from the baseline controller: r_k is the reach-set
/// risk at step k under the no-hazard closed loop, and the overall budget is
/// the induced cumulative risk.
pub fn lqr_baseline_thresholds(
    nominal: &LinearModel,
    gain: &GainMatrix,
    x0: &Zonotope,
    horizon: usize,
    poly: &LinearFormPoly,
    pipeline: &RiskPipeline,
) -> Result<RiskThresholds, RiskError> {
    let d = closed_loop(nominal, gain).map_err(|e| {
        RiskError::Geometry(crate::error::GeometryError::DimensionMismatch(
            e.to_string(),
        ))
    })?;
    let zero = Zonotope::point(nalgebra::DVector::zeros(x0.dim()));
    let (risks, _) = pipeline.risks(&d, x0, &zero, horizon, poly, true)?;
    Ok(RiskThresholds::from_profile(&RiskProfile::new(risks)?))
}
