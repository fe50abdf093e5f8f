//! Risk-bounded controller optimization: minimally perturb a baseline
//! closed loop subject to per-step reach-set risk constraints, then recover
//! the feedback gain through the Moore-Penrose pseudoinverse.
//!
//! The decision variable is the gain perturbation `V` with
//! `D = D0 + B V`, i.e. the search runs over closed-loop matrices that are
//! exactly realizable as `A - B K'`. That keeps the pseudoinverse recovery
//! exact, so the risk guarantee established during the solve carries over
//! to the realized loop unchanged. The objective is the Frobenius distance
//! `||D - D0||_F` between closed loops; the gain-space distance
//! `||K0 - K'||_F` is reported alongside.
//!
//! Method: augmented-Lagrangian outer rounds (PHR inequality form, penalty
//! growth x10 from 10, up to 6 rounds) around a BFGS inner minimization with
//! central finite-difference gradients.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{spectral_radius, GainMatrix, LinearModel};
use crate::error::OptimizerError;
use crate::geometry::Zonotope;
use crate::hazard::LinearFormPoly;
use crate::risk::{RiskPipeline, RiskProfile, RiskThresholds};

/// Everything a solve needs: the hazard-variant model, the baseline gain,
/// the sets, the fitted hazard map and the per-step thresholds.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub model: LinearModel,
    pub baseline_gain: GainMatrix,
    pub x0: Zonotope,
    /// Disturbance already mapped into state space (Bw * W); a zero point
    /// when the cause carries no disturbance.
    pub disturbance: Zonotope,
    pub poly: LinearFormPoly,
    pub thresholds: RiskThresholds,
    pub pipeline: RiskPipeline,
}

impl ProblemSpec {
    pub fn horizon(&self) -> usize {
        self.thresholds.horizon()
    }

    fn validate(&self) -> Result<(), OptimizerError> {
        let n = self.model.state_dim();
        let m = self.model.control_dim();
        let k = &self.baseline_gain.0;
        if k.nrows() != m || k.ncols() != n {
            return Err(OptimizerError::DimensionMismatch(format!(
                "baseline gain is {}x{}, expected {m}x{n}",
                k.nrows(),
                k.ncols()
            )));
        }
        if self.x0.dim() != n || self.disturbance.dim() != n {
            return Err(OptimizerError::DimensionMismatch(format!(
                "initial set dimension {} / disturbance dimension {} vs state dimension {n}",
                self.x0.dim(),
                self.disturbance.dim()
            )));
        }
        if self.horizon() == 0 {
            return Err(OptimizerError::DimensionMismatch(
                "thresholds are empty".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub max_rounds: usize,
    /// Global cap on inner BFGS iterations across rounds.
    pub max_iterations: usize,
    pub max_iterations_per_round: usize,
    /// Relative central-difference step.
    pub fd_step_rel: f64,
    /// Constraint violation at or below this is "optimal".
    pub violation_tol: f64,
    /// Violation at or below this still counts as "feasible".
    pub feasible_tol: f64,
    pub step_tol: f64,
    /// The solver targets `r_k - constraint_margin` internally so that
    /// finite-difference noise cannot leave the returned iterate a hair
    /// above the true threshold.
    pub constraint_margin: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            penalty_init: 10.0,
            penalty_growth: 10.0,
            max_rounds: 6,
            max_iterations: 5000,
            max_iterations_per_round: 400,
            fd_step_rel: 1e-6,
            violation_tol: 1e-8,
            feasible_tol: 1e-6,
            step_tol: 1e-9,
            constraint_margin: 5e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    MaxIter,
}

/// Solve artifact: optimized closed loop, recovered gain, risk profile and
/// solver accounting.
#[derive(Debug, Clone, Serialize)]
pub struct Solution {
    #[serde(serialize_with = "serialize_matrix")]
    pub d_star: DMatrix<f64>,
    #[serde(serialize_with = "serialize_gain")]
    pub k_prime: GainMatrix,
    /// `||D* - D0||_F`, the closed-loop-space objective.
    pub objective_closed_loop: f64,
    /// `||K0 - K'||_F`, the gain-space objective.
    pub objective_gain: f64,
    pub per_step_risk: RiskProfile,
    pub status: SolveStatus,
    pub iterations: usize,
    pub rounds: usize,
    pub runtime_seconds: f64,
    /// Max constraint violation at the end of each outer round.
    pub round_violations: Vec<f64>,
    /// `||A - B K' - D*||_F`; zero up to floating point because the search
    /// space is the realizable subspace.
    pub recovery_residual: f64,
    /// Spectral radius of the realized closed loop; > 1 is reported, not
    /// rejected.
    pub spectral_radius: f64,
    pub degenerate_events: usize,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = (0..m.ncols()).map(|j| m[(i, j)]).collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

fn serialize_gain<S: serde::Serializer>(g: &GainMatrix, s: S) -> Result<S::Ok, S::Error> {
    serialize_matrix(&g.0, s)
}

/// `K' = pinv(B) (A - D)`, pseudoinverse by SVD with singular values below
/// `1e-12 * sigma_max` treated as zero.
pub fn recover_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<GainMatrix, OptimizerError> {
    let svd = b.clone().svd(true, true);
    let sigma_max = svd
        .singular_values
        .iter()
        .fold(0.0f64, |acc, &s| acc.max(s));
    let pinv = svd
        .pseudo_inverse(1e-12 * sigma_max)
        .map_err(|e| OptimizerError::Svd(e.to_string()))?;
    Ok(GainMatrix(pinv * (a - d)))
}

/// Re-propagate with the realized closed loop `A - B K` and recompute all
/// per-step risks (clamped). Returns the profile, the feasibility flag
/// against the problem thresholds, and the degenerate-projection count.
pub fn verify(
    spec: &ProblemSpec,
    gain: &GainMatrix,
) -> Result<(RiskProfile, bool, usize), OptimizerError> {
    spec.validate()?;
    let d = &spec.model.a - &spec.model.b * &gain.0;
    let (risks, degenerate) = spec.pipeline.risks(
        &d,
        &spec.x0,
        &spec.disturbance,
        spec.horizon(),
        &spec.poly,
        true,
    )?;
    let feasible = risks
        .iter()
        .zip(spec.thresholds.per_step())
        .all(|(p, r)| *p <= r + 1e-6);
    Ok((RiskProfile::new(risks)?, feasible, degenerate))
}

struct AlProblem<'a> {
    spec: &'a ProblemSpec,
    d0: DMatrix<f64>,
    n: usize,
    m: usize,
    margin: f64,
}

impl AlProblem<'_> {
    fn d_of(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let vm = DMatrix::from_fn(self.m, self.n, |i, j| v[i * self.n + j]);
        &self.d0 + &self.spec.model.b * vm
    }

    /// Raw (unclamped) per-step constraint values `g_k = risk_k - r_k`,
    /// tightened by the internal margin.
    fn constraints(&self, v: &DVector<f64>) -> Result<Vec<f64>, OptimizerError> {
        let d = self.d_of(v);
        let (risks, _) = self.spec.pipeline.risks(
            &d,
            &self.spec.x0,
            &self.spec.disturbance,
            self.spec.horizon(),
            &self.spec.poly,
            false,
        )?;
        Ok(risks
            .iter()
            .zip(self.spec.thresholds.per_step())
            .map(|(p, r)| p - (r - self.margin))
            .collect())
    }

    /// Pure feasibility objective for the polish phase.
    fn infeasibility(&self, v: &DVector<f64>) -> Result<f64, OptimizerError> {
        let g = self.constraints(v)?;
        Ok(g.iter().map(|gk| gk.max(0.0).powi(2)).sum())
    }

    /// Central-difference Jacobian of the full constraint vector; one
    /// propagation evaluates every row, so this costs the same as a single
    /// scalar gradient.
    fn constraint_jacobian(
        &self,
        v: &DVector<f64>,
        step_rel: f64,
    ) -> Result<DMatrix<f64>, OptimizerError> {
        let t = self.spec.horizon();
        let mut jac = DMatrix::zeros(t, v.len());
        let mut probe = v.clone();
        for i in 0..v.len() {
            let h = step_rel * (1.0 + v[i].abs());
            probe[i] = v[i] + h;
            let gp = self.constraints(&probe)?;
            probe[i] = v[i] - h;
            let gm = self.constraints(&probe)?;
            probe[i] = v[i];
            for k in 0..t {
                jac[(k, i)] = (gp[k] - gm[k]) / (2.0 * h);
            }
        }
        Ok(jac)
    }

    fn objective(&self, v: &DVector<f64>) -> f64 {
        let vm = DMatrix::from_fn(self.m, self.n, |i, j| v[i * self.n + j]);
        (&self.spec.model.b * vm).norm_squared()
    }

    /// PHR augmented Lagrangian for inequality constraints.
    fn al_value(
        &self,
        v: &DVector<f64>,
        multipliers: &[f64],
        penalty: f64,
    ) -> Result<f64, OptimizerError> {
        let g = self.constraints(v)?;
        let mut value = self.objective(v);
        for (gk, lk) in g.iter().zip(multipliers) {
            let shifted = (lk / penalty + gk).max(0.0);
            value += 0.5 * penalty * shifted * shifted - lk * lk / (2.0 * penalty);
        }
        Ok(value)
    }

    fn al_gradient(
        &self,
        v: &DVector<f64>,
        multipliers: &[f64],
        penalty: f64,
        step_rel: f64,
    ) -> Result<DVector<f64>, OptimizerError> {
        let mut grad = DVector::zeros(v.len());
        let mut probe = v.clone();
        for i in 0..v.len() {
            let h = step_rel * (1.0 + v[i].abs());
            probe[i] = v[i] + h;
            let fp = self.al_value(&probe, multipliers, penalty)?;
            probe[i] = v[i] - h;
            let fm = self.al_value(&probe, multipliers, penalty)?;
            probe[i] = v[i];
            grad[i] = (fp - fm) / (2.0 * h);
        }
        Ok(grad)
    }
}

fn max_violation(constraints: &[f64]) -> f64 {
    constraints.iter().fold(0.0f64, |acc, g| acc.max(*g))
}

/// BFGS with an Armijo backtracking line search. Returns the minimizer, the
/// iteration count and the final step norm.
fn bfgs_minimize(
    problem: &AlProblem,
    start: DVector<f64>,
    multipliers: &[f64],
    penalty: f64,
    opts: &SolverOptions,
    iteration_budget: usize,
) -> Result<(DVector<f64>, usize, f64), OptimizerError> {
    let dim = start.len();
    let mut v = start;
    let mut f = problem.al_value(&v, multipliers, penalty)?;
    let mut grad = problem.al_gradient(&v, multipliers, penalty, opts.fd_step_rel)?;
    let mut h_inv = DMatrix::<f64>::identity(dim, dim);
    let mut last_step = f64::INFINITY;
    let mut iterations = 0;
    let budget = iteration_budget.min(opts.max_iterations_per_round);

    while iterations < budget {
        iterations += 1;
        if grad.norm() <= 1e-12 * (1.0 + f.abs()) {
            last_step = 0.0;
            break;
        }
        let mut direction = -(&h_inv * &grad);
        if direction.dot(&grad) >= 0.0 {
            // lost positive-definiteness; restart from steepest descent
            h_inv = DMatrix::identity(dim, dim);
            direction = -grad.clone();
        }
        let slope = direction.dot(&grad);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = &v + &direction * t;
            let fc = problem.al_value(&candidate, multipliers, penalty)?;
            if fc <= f + 1e-4 * t * slope {
                accepted = Some((candidate, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((v_new, f_new)) = accepted else {
            last_step = 0.0;
            break;
        };
        let grad_new = problem.al_gradient(&v_new, multipliers, penalty, opts.fd_step_rel)?;
        let s = &v_new - &v;
        let y = &grad_new - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            // BFGS inverse update
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            let s_hy = &s * hy.transpose();
            h_inv = &h_inv - (&s_hy + s_hy.transpose()) * rho
                + &s * s.transpose() * (rho * rho * yhy + rho);
        }
        last_step = s.norm();
        v = v_new;
        f = f_new;
        grad = grad_new;
        if last_step <= opts.step_tol * (1.0 + v.norm()) {
            break;
        }
    }
    Ok((v, iterations, last_step))
}

/// Damped Gauss-Newton on the violated constraints, used as a final
/// clean-up when the augmented rounds stall near the boundary. Each step
/// solves for the least-norm perturbation that zeroes the active
/// constraints to first order, so it crosses shallow feasibility valleys
/// that defeat plain gradient descent.
fn polish_feasibility(
    problem: &AlProblem,
    start: DVector<f64>,
    opts: &SolverOptions,
    budget: usize,
) -> Result<(DVector<f64>, usize), OptimizerError> {
    let mut v = start;
    let mut f = problem.infeasibility(&v)?;
    let mut iterations = 0;
    while iterations < budget && f > 0.0 {
        iterations += 1;
        let g = problem.constraints(&v)?;
        let active: Vec<usize> = (0..g.len()).filter(|&k| g[k] > 0.0).collect();
        if active.is_empty() {
            break;
        }
        let jac = problem.constraint_jacobian(&v, opts.fd_step_rel)?;
        let ja = DMatrix::from_fn(active.len(), v.len(), |r, c| jac[(active[r], c)]);
        let ga = DVector::from_fn(active.len(), |r, _| g[active[r]]);
        // least-norm step: delta = -Ja' (Ja Ja' + lambda I)^-1 ga
        let mut lambda = 1e-10;
        let mut accepted = false;
        for _ in 0..20 {
            let mut gram = &ja * ja.transpose();
            for i in 0..gram.nrows() {
                gram[(i, i)] += lambda;
            }
            let Some(y) = gram.lu().solve(&ga) else {
                lambda *= 100.0;
                continue;
            };
            let delta = -ja.transpose() * y;
            // aim slightly past the boundary to absorb curvature
            let candidate = &v + &delta * 1.05;
            let fc = problem.infeasibility(&candidate)?;
            if fc < f {
                v = candidate;
                f = fc;
                accepted = true;
                break;
            }
            lambda *= 100.0;
        }
        if !accepted {
            break;
        }
    }
    Ok((v, iterations))
}

/// Solve the risk-bounded perturbation problem. Deterministic: no random
/// state anywhere in the solve path.
pub fn solve(spec: &ProblemSpec, opts: &SolverOptions) -> Result<Solution, OptimizerError> {
    spec.validate()?;
    let start_time = Instant::now();
    let n = spec.model.state_dim();
    let m = spec.model.control_dim();
    let d0 = &spec.model.a - &spec.model.b * &spec.baseline_gain.0;
    let problem = AlProblem {
        spec,
        d0: d0.clone(),
        n,
        m,
        margin: opts.constraint_margin,
    };
    let t = spec.horizon();

    let mut v = DVector::zeros(m * n);
    // baseline feasibility against the true thresholds: a feasible initial
    // point is the unconstrained minimizer
    let g0_true: Vec<f64> = problem
        .constraints(&v)?
        .iter()
        .map(|g| g - opts.constraint_margin)
        .collect();
    let mut round_violations = Vec::new();
    let mut iterations = 0usize;
    let mut rounds = 0usize;
    let mut converged = false;

    if max_violation(&g0_true) > opts.violation_tol {
        let mut multipliers = vec![0.0f64; t];
        let mut penalty = opts.penalty_init;
        let mut prev_violation = max_violation(&problem.constraints(&v)?);
        for _ in 0..opts.max_rounds {
            rounds += 1;
            let budget = opts.max_iterations.saturating_sub(iterations);
            if budget == 0 {
                break;
            }
            let (v_round, its, last_step) =
                bfgs_minimize(&problem, v.clone(), &multipliers, penalty, opts, budget)?;
            iterations += its;
            let g_round = problem.constraints(&v_round)?;
            let viol_round = max_violation(&g_round);
            // monotone safeguard: never accept a round that worsened the
            // violation; keep the multiplier and penalty escalation going
            let (g_acc, viol_acc) = if viol_round <= prev_violation + 1e-15 {
                v = v_round;
                (g_round, viol_round)
            } else {
                (problem.constraints(&v)?, prev_violation)
            };
            round_violations.push(viol_acc);
            prev_violation = viol_acc;
            for (lk, gk) in multipliers.iter_mut().zip(&g_acc) {
                *lk = (*lk + penalty * gk).max(0.0);
            }
            if viol_acc <= opts.violation_tol && last_step <= opts.step_tol * (1.0 + v.norm()) {
                converged = true;
                break;
            }
            if iterations >= opts.max_iterations {
                break;
            }
            penalty *= opts.penalty_growth;
        }
        // feasibility polish: when the augmented rounds stall a hair above
        // the margin, walk the pure infeasibility measure down
        if !converged && prev_violation > 0.0 {
            let budget = opts
                .max_iterations
                .saturating_sub(iterations)
                .min(opts.max_iterations_per_round);
            if budget > 0 {
                let (v_polish, its) = polish_feasibility(&problem, v.clone(), opts, budget)?;
                iterations += its;
                let viol_polish = max_violation(&problem.constraints(&v_polish)?);
                if viol_polish < prev_violation {
                    v = v_polish;
                    round_violations.push(viol_polish);
                }
            }
        }
    } else {
        converged = true;
        round_violations.push(0.0);
    }

    let d_star = problem.d_of(&v);
    let k_prime = recover_gain(&spec.model.a, &spec.model.b, &d_star)?;
    let recovery_residual = (&spec.model.a - &spec.model.b * &k_prime.0 - &d_star).norm();
    let d_realized = &spec.model.a - &spec.model.b * &k_prime.0;
    let (risks, degenerate_events) = spec.pipeline.risks(
        &d_realized,
        &spec.x0,
        &spec.disturbance,
        t,
        &spec.poly,
        true,
    )?;
    let feasible = risks
        .iter()
        .zip(spec.thresholds.per_step())
        .all(|(p, r)| *p <= r + opts.feasible_tol);
    let final_violation = round_violations.last().copied().unwrap_or(0.0);

    let status = if converged && final_violation <= opts.violation_tol && feasible {
        SolveStatus::Optimal
    } else if feasible {
        SolveStatus::Feasible
    } else if iterations >= opts.max_iterations {
        SolveStatus::MaxIter
    } else {
        SolveStatus::Infeasible
    };

    Ok(Solution {
        objective_closed_loop: (&d_star - &d0).norm(),
        objective_gain: (&spec.baseline_gain.0 - &k_prime.0).norm(),
        per_step_risk: RiskProfile::new(risks)?,
        status,
        iterations,
        rounds,
        runtime_seconds: start_time.elapsed().as_secs_f64(),
        round_violations,
        recovery_residual,
        spectral_radius: spectral_radius(&d_realized),
        degenerate_events,
        d_star,
        k_prime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TimeDomain;
    use crate::hazard::PolyTerm;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// n = 2 toy: B = I so the realizable subspace is everything; a linear
    /// hazard map so risk(D) = P(D c0) exactly.
    fn toy_spec(threshold: f64, map: LinearFormPoly) -> ProblemSpec {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.05, 0.0, 0.9]);
        let b = DMatrix::identity(2, 2);
        let model =
            LinearModel::new(a, b, DMatrix::zeros(2, 2), TimeDomain::Discrete { dt: 1.0 }).unwrap();
        let k0 = GainMatrix(DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.2]));
        let x0 = Zonotope::axis_box(DVector::from_row_slice(&[1.0, 0.5]), &[0.3, 0.3]).unwrap();
        ProblemSpec {
            model,
            baseline_gain: k0,
            x0,
            disturbance: Zonotope::point(DVector::zeros(2)),
            poly: map,
            thresholds: RiskThresholds::new(vec![threshold], threshold).unwrap(),
            pipeline: RiskPipeline::planar(),
        }
    }

    fn ramp_map() -> LinearFormPoly {
        LinearFormPoly::new(
            1,
            vec![PolyTerm {
                degree: 1,
                form: [0.4, 0.0, 0.1],
            }],
        )
        .unwrap()
    }

    #[test]
    fn feasible_baseline_returns_immediately() {
        // baseline risk is 0.4*0.725 + 0.1 = 0.39; threshold 0.5 is slack
        let spec = toy_spec(0.5, ramp_map());
        let solution = solve(&spec, &SolverOptions::default()).unwrap();
        assert_eq!(solution.status, SolveStatus::Optimal);
        assert_eq!(solution.objective_closed_loop, 0.0);
        assert_eq!(solution.iterations, 0);
        let d0 = &spec.model.a - &spec.model.b * &spec.baseline_gain.0;
        assert_eq!(solution.d_star, d0);
    }

    #[test]
    fn binding_constraint_reaches_the_analytic_projection() {
        // risk(D) = 0.4 (D c0)_x + 0.1 <= 0.3 <=> d11 + 0.5 d12 <= 0.5;
        // the minimizer is the Euclidean projection of (0.7, 0.05) onto that
        // half-plane, at Frobenius distance 0.225/sqrt(1.25)
        let spec = toy_spec(0.3, ramp_map());
        let solution = solve(&spec, &SolverOptions::default()).unwrap();
        assert!(
            matches!(
                solution.status,
                SolveStatus::Optimal | SolveStatus::Feasible
            ),
            "status {:?}",
            solution.status
        );
        let expected = 0.225 / 1.25f64.sqrt();
        assert_relative_eq!(
            solution.objective_closed_loop,
            expected,
            max_relative = 1e-3
        );
        assert!(solution.per_step_risk.at(1) <= 0.3 + 1e-6);
        // optimal status certifies the tighter tolerance
        if solution.status == SolveStatus::Optimal {
            assert!(solution.per_step_risk.at(1) <= 0.3 + 1e-8);
        }
        assert!(solution.recovery_residual <= 1e-10);
        // gain recovery is exact on the realizable subspace: D-space and
        // K-space objectives coincide for B = I
        assert_relative_eq!(
            solution.objective_gain,
            solution.objective_closed_loop,
            epsilon = 1e-9
        );
    }

    #[test]
    fn round_violations_are_monotone_non_increasing() {
        let spec = toy_spec(0.3, ramp_map());
        let solution = solve(&spec, &SolverOptions::default()).unwrap();
        for w in solution.round_violations.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "violations {:?}",
                solution.round_violations
            );
        }
    }

    #[test]
    fn unsatisfiable_thresholds_report_infeasible() {
        // strictly positive map everywhere, zero thresholds
        let spec = toy_spec(0.0, LinearFormPoly::constant(0.2));
        let solution = solve(&spec, &SolverOptions::default()).unwrap();
        assert_eq!(solution.status, SolveStatus::Infeasible);
    }

    #[test]
    fn recover_gain_cases() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.1, 0.8]);
        // D = A -> K' = 0
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 2.0]);
        let k = recover_gain(&a, &b, &a).unwrap();
        assert!(k.0.norm() < 1e-12);
        // square invertible B: K' = B^-1 (A - D), residual ~ 0
        let d = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        let k = recover_gain(&a, &b, &d).unwrap();
        let oracle = b.clone().try_inverse().unwrap() * (&a - &d);
        assert!((&k.0 - oracle).norm() < 1e-10);
        assert!((&a - &b * &k.0 - &d).norm() <= 1e-10);
    }

    #[test]
    fn recover_gain_out_of_range_is_least_squares() {
        // B has rank 1; A - D outside range(B) leaves a residual, and the
        // pseudoinverse solution minimizes it
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        let k = recover_gain(&a, &b, &d).unwrap();
        // least squares: first row of A - D recovered exactly, second row
        // unreachable
        let residual = (&a - &b * &k.0 - &d).norm();
        assert_relative_eq!(residual, 1.0, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let k_probe = DMatrix::from_fn(1, 2, |_, _| rng.gen_range(-2.0..2.0));
            let probe_res = (&a - &b * k_probe - &d).norm();
            assert!(probe_res >= residual - 1e-12);
        }
    }

    #[test]
    fn recover_round_trips_closed_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            // full column rank B
            let b = DMatrix::from_fn(4, 2, |i, j| {
                if i == j {
                    1.0
                } else {
                    rng.gen_range(-0.5..0.5)
                }
            });
            let k = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
            let d = &a - &b * &k;
            let recovered = recover_gain(&a, &b, &d).unwrap();
            assert!((recovered.0 - &k).norm() < 1e-9);
        }
    }

    #[test]
    fn verify_matches_baseline_profile() {
        let spec = toy_spec(0.5, ramp_map());
        let (profile, feasible, degenerate) = verify(&spec, &spec.baseline_gain).unwrap();
        assert!(feasible);
        assert_eq!(degenerate, 0);
        // baseline risk = 0.4 * 0.725 + 0.1
        assert_relative_eq!(profile.at(1), 0.39, epsilon = 1e-12);
        // zero hazard map: always feasible with zero risks
        let mut zero_spec = toy_spec(0.0, LinearFormPoly::zero());
        zero_spec.thresholds = RiskThresholds::new(vec![0.0], 0.0).unwrap();
        let (profile, feasible, _) = verify(&zero_spec, &zero_spec.baseline_gain).unwrap();
        assert!(feasible);
        assert_eq!(profile.at(1), 0.0);
    }

    #[test]
    fn verify_confirms_recovered_gain() {
        let spec = toy_spec(0.3, ramp_map());
        let solution = solve(&spec, &SolverOptions::default()).unwrap();
        let (profile, feasible, _) = verify(&spec, &solution.k_prime).unwrap();
        assert!(feasible, "realized risks {:?}", profile.per_step());
    }

    #[test]
    fn objective_gradient_matches_analytic_form() {
        // f(D) = ||D - D0||_F^2 has gradient 2 (D - D0)
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d0 = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let d = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let f = |m: &DMatrix<f64>| (m - &d0).norm_squared();
        for i in 0..3 {
            for j in 0..3 {
                let h: f64 = 1e-6 * (1.0 + f64::abs(d[(i, j)]));
                let mut dp = d.clone();
                dp[(i, j)] += h;
                let mut dm = d.clone();
                dm[(i, j)] -= h;
                let fd = (f(&dp) - f(&dm)) / (2.0 * h);
                let analytic = 2.0 * (d[(i, j)] - d0[(i, j)]);
                assert_relative_eq!(fd, analytic, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let spec = toy_spec(0.3, ramp_map());
        let a = solve(&spec, &SolverOptions::default()).unwrap();
        let b = solve(&spec, &SolverOptions::default()).unwrap();
        assert_eq!(a.d_star, b.d_star);
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.status, b.status);
        assert_eq!(a.per_step_risk, b.per_step_risk);
    }
}
