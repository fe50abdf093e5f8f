//! Closed-loop flight simulation with sampled wind, hazard injection at a
//! chosen onset step, and the offline / online experiment drivers with their
//! report tables.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dynamics::{
    apply_hazard, build_nominal, closed_loop, discretize, lqr, GainMatrix, HazardCause,
    LinearModel, QuadrotorParams, CONTROL_DIM, POS_X, POS_Y, POS_Z, STATE_DIM, WIND_DIM,
};
use crate::error::SimError;
use crate::geometry::{sample_directions, Zonotope};
use crate::hazard::{GridCell, HazardGrid, LinearFormPoly};
use crate::optimizer::{solve, ProblemSpec, SolveStatus, SolverOptions};
use crate::reach::{propagate, PropagateOpts};
use crate::risk::{risk_to_go, RiskPipeline, RiskProfile, RiskThresholds};

/// Gaussian wind: i.i.d. per-axis samples, clipped to the 3-sigma box so
/// simulation stays inside the reachability assumptions. The unclipped mode
/// exists for robustness probing only.
#[derive(Debug, Clone, PartialEq)]
pub struct WindModel {
    pub mean: DVector<f64>,
    pub std: f64,
}

impl WindModel {
    pub fn new(mean: [f64; 6], std: f64) -> Self {
        Self {
            mean: DVector::from_row_slice(&mean),
            std,
        }
    }

    /// The disturbance set W: mean +/- 3 sigma per axis.
    pub fn zonotope(&self) -> Zonotope {
        let half = vec![3.0 * self.std; WIND_DIM];
        Zonotope::axis_box(self.mean.clone(), &half).expect("dimensions agree")
    }

    /// W mapped into state space through the discretized disturbance matrix.
    pub fn state_disturbance(&self, bw_d: &DMatrix<f64>) -> Zonotope {
        self.zonotope()
            .linear_map(bw_d)
            .expect("disturbance matrix has matching columns")
    }

    fn sample(&self, rng: &mut ChaCha8Rng, clip: bool) -> DVector<f64> {
        DVector::from_fn(WIND_DIM, |i, _| {
            let v = self.mean[i] + self.std * std_normal(rng);
            if clip {
                v.clamp(self.mean[i] - 3.0 * self.std, self.mean[i] + 3.0 * self.std)
            } else {
                v
            }
        })
    }
}

/// Box-Muller standard normal; hand-rolled to keep the stream stable across
/// dependency versions.
fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Which gain is active at each step: segments of (start step, gain),
/// sorted by start step, first segment starting at 0.
#[derive(Debug, Clone)]
pub struct ControllerSchedule {
    segments: Vec<(usize, GainMatrix)>,
}

impl ControllerSchedule {
    pub fn single(gain: GainMatrix) -> Self {
        Self {
            segments: vec![(0, gain)],
        }
    }

    pub fn switched(segments: Vec<(usize, GainMatrix)>) -> Result<Self, SimError> {
        if segments.is_empty() || segments[0].0 != 0 {
            return Err(SimError::DimensionMismatch(
                "schedule must start at step 0".to_string(),
            ));
        }
        if segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(SimError::DimensionMismatch(
                "schedule switch steps must be strictly increasing".to_string(),
            ));
        }
        Ok(Self { segments })
    }

    fn active(&self, k: usize) -> (usize, &GainMatrix) {
        let idx = self
            .segments
            .iter()
            .rposition(|(start, _)| *start <= k)
            .unwrap_or(0);
        (idx, &self.segments[idx].1)
    }
}

/// One simulated flight.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// Absolute states, length T + 1.
    pub states: Vec<DVector<f64>>,
    /// Control inputs, length T.
    pub controls: Vec<DVector<f64>>,
    /// Index into the schedule of the gain active at each step, length T.
    pub active_gain: Vec<usize>,
    /// Per-step reach-set risk of the flown configuration, when evaluated.
    pub realized_risk: Option<RiskProfile>,
    /// Planar Euclidean distance from the final state to the target.
    pub final_distance: f64,
}

impl TrajectoryRecord {
    /// CSV emission: `k, x, y, z, roll, pitch, yaw, p, q, r, u, v, w,
    /// u1..u4` (positions first for plotting).
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "k", "x", "y", "z", "roll", "pitch", "yaw", "p", "q", "r", "u", "v", "w", "u1", "u2",
            "u3", "u4",
        ])?;
        for (k, state) in self.states.iter().enumerate() {
            let mut record = vec![k.to_string()];
            for idx in [POS_X, POS_Y, POS_Z, 0, 1, 2, 3, 4, 5, 6, 7, 8] {
                record.push(state[idx].to_string());
            }
            if k < self.controls.len() {
                for i in 0..CONTROL_DIM {
                    record.push(self.controls[k][i].to_string());
                }
            } else {
                record.extend(std::iter::repeat(String::new()).take(CONTROL_DIM));
            }
            w.write_record(&record)?;
        }
        w.flush()
    }
}

/// Simulate `x[k+1] = A x[k] + B u[k] + Bw w[k]` with `u = -K (x - target)`.
/// Wind is sampled i.i.d. from the model (zero when absent) and the whole
/// run is deterministic per seed.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    model: &LinearModel,
    schedule: &ControllerSchedule,
    x0: &DVector<f64>,
    target: &DVector<f64>,
    horizon: usize,
    wind: Option<&WindModel>,
    clip_wind: bool,
    seed: u64,
) -> Result<TrajectoryRecord, SimError> {
    let n = model.state_dim();
    if x0.len() != n || target.len() != n {
        return Err(SimError::DimensionMismatch(format!(
            "state dimension {n} vs x0 {} / target {}",
            x0.len(),
            target.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    let mut active = Vec::with_capacity(horizon);
    let mut error = x0 - target;
    states.push(x0.clone());
    for k in 0..horizon {
        let (idx, gain) = schedule.active(k);
        let u = -(&gain.0 * &error);
        let mut next = &model.a * &error + &model.b * &u;
        if let Some(w) = wind {
            next += &model.bw * w.sample(&mut rng, clip_wind);
        }
        controls.push(u);
        active.push(idx);
        error = next;
        states.push(&error + target);
    }
    // planar distance for the quadrotor layout; whole-error norm otherwise
    let final_distance = if n > POS_Y {
        ((error[POS_X]).powi(2) + (error[POS_Y]).powi(2)).sqrt()
    } else {
        error.norm()
    };
    Ok(TrajectoryRecord {
        states,
        controls,
        active_gain: active,
        realized_risk: None,
        final_distance,
    })
}

/// Row-level metric pair of the report tables.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricRow {
    /// `(rtg_lqr - rtg_cand) / rtg_lqr * 100`.
    pub risk_reduction_pct: f64,
    /// `(dist_cand - dist_lqr) / dist_lqr * 100`; negative means the
    /// candidate finished closer to the target.
    pub distance_change_pct: f64,
    /// Set when the LQR reference risk was zero and the reduction was
    /// reported as 0 by convention.
    pub degenerate: bool,
}

/// Metrics of a candidate record against the LQR record over the tail
/// `[onset, T]` of their realized-risk profiles.
pub fn compute_metrics(
    lqr_record: &TrajectoryRecord,
    candidate: &TrajectoryRecord,
    onset: usize,
) -> Result<MetricRow, SimError> {
    let lqr_profile = lqr_record
        .realized_risk
        .as_ref()
        .ok_or_else(|| SimError::DimensionMismatch("LQR record has no risk profile".into()))?;
    let cand_profile = candidate.realized_risk.as_ref().ok_or_else(|| {
        SimError::DimensionMismatch("candidate record has no risk profile".into())
    })?;
    if lqr_profile.horizon() != cand_profile.horizon() {
        return Err(SimError::DimensionMismatch(
            "risk profiles have different horizons".to_string(),
        ));
    }
    let rtg_lqr = risk_to_go(lqr_profile, onset)?;
    let rtg_cand = risk_to_go(cand_profile, onset)?;
    let (risk_reduction_pct, degenerate) = if rtg_lqr == 0.0 {
        (0.0, true)
    } else {
        ((rtg_lqr - rtg_cand) / rtg_lqr * 100.0, false)
    };
    let distance_change_pct = if lqr_record.final_distance == 0.0 {
        0.0
    } else {
        (candidate.final_distance - lqr_record.final_distance) / lqr_record.final_distance * 100.0
    };
    Ok(MetricRow {
        risk_reduction_pct,
        distance_change_pct,
        degenerate,
    })
}

/// Hazard cause plus everything derived from it once.
#[derive(Debug, Clone)]
pub struct CauseSetup {
    pub cause: HazardCause,
    /// Discretized hazard-variant model.
    pub model: LinearModel,
    /// LQR baseline gain for this cause's dynamics.
    pub gain: GainMatrix,
    /// Disturbance set mapped into state space; zero point without wind.
    pub disturbance: Zonotope,
    pub wind: Option<WindModel>,
}

/// Shared experiment state: models, gains, maps, sets and options.
#[derive(Debug, Clone)]
pub struct ExperimentContext {
    pub params: QuadrotorParams,
    pub horizon: usize,
    pub nominal: LinearModel,
    pub nominal_gain: GainMatrix,
    pub causes: Vec<CauseSetup>,
    pub maps: Vec<(String, LinearFormPoly)>,
    /// Initial set in error coordinates (positions relative to the target).
    pub x0: Zonotope,
    pub target: DVector<f64>,
    pub pipeline: RiskPipeline,
    pub solver: SolverOptions,
    pub threshold_slack: f64,
    pub threshold_front_slack: f64,
    pub threshold_front_decay: f64,
    pub onset_half_width: f64,
    pub seed: u64,
}

impl ExperimentContext {
    /// Build from a run configuration plus fitted maps. The target is the
    /// origin at the configured altitude; the initial set is a planar square
    /// around the configured start position, all other states at target.
    pub fn new(cfg: &RunConfig, maps: Vec<(String, LinearFormPoly)>) -> Result<Self, SimError> {
        let params = cfg.params();
        let continuous = build_nominal(&params)?;
        let nominal = discretize(&continuous, params.dt)?;
        let q = DMatrix::identity(STATE_DIM, STATE_DIM) * cfg.q_scale;
        let r = DMatrix::identity(CONTROL_DIM, CONTROL_DIM) * cfg.r_scale;
        let nominal_gain = lqr(&nominal, &q, &r)?;

        let wind_mean = cfg.wind_mean_6().map_err(SimError::DimensionMismatch)?;
        let wind = WindModel::new(wind_mean, cfg.wind_std);
        let cause_list = vec![
            HazardCause::DeficientRotor {
                alpha: cfg.alpha_dr,
            },
            HazardCause::SensorError {
                alpha_x: cfg.alpha_se[0],
                alpha_y: cfg.alpha_se[1],
            },
            HazardCause::WindDisturbance { w: wind.zonotope() },
        ];
        let mut causes = Vec::new();
        for cause in cause_list {
            let model = discretize(&apply_hazard(&continuous, &cause)?, params.dt)?;
            let gain = lqr(&model, &q, &r)?;
            let (disturbance, wind_model) = match &cause {
                HazardCause::WindDisturbance { .. } => {
                    (wind.state_disturbance(&model.bw), Some(wind.clone()))
                }
                _ => (Zonotope::point(DVector::zeros(STATE_DIM)), None),
            };
            causes.push(CauseSetup {
                cause,
                model,
                gain,
                disturbance,
                wind: wind_model,
            });
        }

        let mut target = DVector::zeros(STATE_DIM);
        target[POS_Z] = cfg.target_altitude;
        let mut x0_center = DVector::zeros(STATE_DIM);
        x0_center[POS_X] = cfg.x0_center[0];
        x0_center[POS_Y] = cfg.x0_center[1];
        let mut half = vec![0.0; STATE_DIM];
        half[POS_X] = cfg.x0_half_width;
        half[POS_Y] = cfg.x0_half_width;
        let x0 = Zonotope::axis_box(x0_center, &half).expect("dimensions agree");

        Ok(Self {
            params,
            horizon: cfg.horizon,
            nominal,
            nominal_gain,
            causes,
            maps,
            x0,
            target,
            pipeline: RiskPipeline::quadrotor(),
            solver: SolverOptions::from(&cfg.solver),
            threshold_slack: cfg.threshold_slack,
            threshold_front_slack: cfg.threshold_front_slack,
            threshold_front_decay: cfg.threshold_front_decay,
            onset_half_width: cfg.onset_half_width,
            seed: cfg.seed,
        })
    }

    /// No-hazard LQR risk thresholds from an arbitrary initial set, with the
    /// configured slack multipliers applied per step. The front slack decays
    /// over the actuation deadtime; the uniform slack applies everywhere.
    pub fn thresholds_from(
        &self,
        x0: &Zonotope,
        horizon: usize,
        poly: &LinearFormPoly,
    ) -> Result<RiskThresholds, SimError> {
        let d = closed_loop(&self.nominal, &self.nominal_gain)?;
        let zero = Zonotope::point(DVector::zeros(STATE_DIM));
        let (risks, _) = self.pipeline.risks(&d, x0, &zero, horizon, poly, true)?;
        let slacked: Vec<f64> = risks
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let front =
                    self.threshold_front_slack * (-(i as f64) / self.threshold_front_decay).exp();
                (r * self.threshold_slack * (1.0 + front)).min(1.0)
            })
            .collect();
        Ok(RiskThresholds::from_profile(&RiskProfile::new(slacked)?))
    }

    /// The offline optimization problem for one cause and one map.
    pub fn offline_problem(
        &self,
        cause: &CauseSetup,
        poly: &LinearFormPoly,
    ) -> Result<ProblemSpec, SimError> {
        let thresholds = self.thresholds_from(&self.x0, self.horizon, poly)?;
        Ok(ProblemSpec {
            model: cause.model.clone(),
            baseline_gain: cause.gain.clone(),
            x0: self.x0.clone(),
            disturbance: cause.disturbance.clone(),
            poly: poly.clone(),
            thresholds,
            pipeline: self.pipeline,
        })
    }

    /// Online re-optimization at onset: a small planar box around the
    /// current error state and the remaining horizon. The re-plan must
    /// never be worse than the incumbent offline controller flown from
    /// here, and where the incumbent sits above both the original plan's
    /// tail and the from-here nominal budget, it must come back down to
    /// them. The incumbent profile itself is always achievable, so the
    /// problem stays well posed.
    pub fn online_problem(
        &self,
        cause: &CauseSetup,
        poly: &LinearFormPoly,
        error_state: &DVector<f64>,
        onset: usize,
        plan: &RiskThresholds,
        incumbent: &GainMatrix,
    ) -> Result<ProblemSpec, SimError> {
        let remaining = plan.horizon() - onset;
        let mut half = vec![0.0; STATE_DIM];
        half[POS_X] = self.onset_half_width;
        half[POS_Y] = self.onset_half_width;
        let x0 = Zonotope::axis_box(error_state.clone(), &half).expect("dimensions agree");
        let here = self.thresholds_from(&x0, remaining, poly)?;
        let tail = plan.tail(onset);
        let d_inc = closed_loop(&cause.model, incumbent)?;
        let incumbent_profile =
            self.risk_profile(&d_inc, &x0, &cause.disturbance, remaining, poly)?;
        let per_step: Vec<f64> = incumbent_profile
            .per_step()
            .iter()
            .zip(here.per_step().iter().zip(tail.per_step()))
            .map(|(inc, (h, t))| inc.min(h.max(*t)))
            .collect();
        let thresholds = RiskThresholds::from_profile(&RiskProfile::new(per_step)?);
        Ok(ProblemSpec {
            model: cause.model.clone(),
            baseline_gain: cause.gain.clone(),
            x0,
            disturbance: cause.disturbance.clone(),
            poly: poly.clone(),
            thresholds,
            pipeline: self.pipeline,
        })
    }

    /// Per-step clamped risks of a closed loop from a given set.
    fn risk_profile(
        &self,
        d: &DMatrix<f64>,
        x0: &Zonotope,
        disturbance: &Zonotope,
        horizon: usize,
        poly: &LinearFormPoly,
    ) -> Result<RiskProfile, SimError> {
        let (risks, _) = self
            .pipeline
            .risks(d, x0, disturbance, horizon, poly, true)?;
        Ok(RiskProfile::new(risks)?)
    }
}

/// One report row: a candidate controller against the LQR baseline for a
/// (cause, map) pair. For online experiments the raw fields are means over
/// the included flights.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub cause: String,
    pub map: String,
    pub controller: String,
    pub risk_reduction_pct: f64,
    pub distance_change_pct: f64,
    pub degenerate: bool,
    pub solver_status: String,
    pub rtg_lqr: f64,
    pub rtg_candidate: f64,
    pub dist_lqr: f64,
    pub dist_candidate: f64,
    pub flights: usize,
    pub excluded: usize,
}

/// Solver runtime statistics per (cause, map).
#[derive(Debug, Clone, Serialize)]
pub struct RuntimeRow {
    pub cause: String,
    pub map: String,
    pub avg_seconds: f64,
    pub max_seconds: f64,
    pub std_seconds: f64,
    pub solves: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub mode: String,
    pub rows: Vec<ReportRow>,
    pub runtimes: Vec<RuntimeRow>,
}

impl ExperimentReport {
    /// Markdown tables mirroring the risk/distance and runtime layouts.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("## {} experiment\n\n", self.mode));
        out.push_str(
            "| Hazard cause | Map | Controller | % risk reduction | % distance change | Status |\n",
        );
        out.push_str("|---|---|---|---|---|---|\n");
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {:.2}% | {:.2}% | {} |\n",
                r.cause,
                r.map,
                r.controller,
                r.risk_reduction_pct,
                r.distance_change_pct,
                r.solver_status
            ));
        }
        if !self.runtimes.is_empty() {
            out.push_str("\n| Hazard cause | Map | Avg s | Max s | Std dev s | Solves |\n");
            out.push_str("|---|---|---|---|---|---|\n");
            for r in &self.runtimes {
                out.push_str(&format!(
                    "| {} | {} | {:.3} | {:.3} | {:.3} | {} |\n",
                    r.cause, r.map, r.avg_seconds, r.max_seconds, r.std_seconds, r.solves
                ));
            }
        }
        out
    }
}

fn runtime_stats(cause: &str, map: &str, samples: &[f64]) -> RuntimeRow {
    let n = samples.len().max(1) as f64;
    let avg = samples.iter().sum::<f64>() / n;
    let max = samples.iter().fold(0.0f64, |a, &b| a.max(b));
    let var = samples.iter().map(|s| (s - avg).powi(2)).sum::<f64>() / n;
    RuntimeRow {
        cause: cause.to_string(),
        map: map.to_string(),
        avg_seconds: avg,
        max_seconds: max,
        std_seconds: var.sqrt(),
        solves: samples.len(),
    }
}

/// Per-(cause, map) artifacts of the offline experiment, kept so the CLI
/// can emit plot data (trajectories, reach overlays) without re-solving.
#[derive(Debug, Clone)]
pub struct OfflineArtifact {
    pub cause: String,
    pub map: String,
    pub gain: GainMatrix,
    pub lqr_record: TrajectoryRecord,
    pub prr_record: TrajectoryRecord,
}

#[derive(Debug, Clone)]
pub struct OfflineOutcome {
    pub report: ExperimentReport,
    pub artifacts: Vec<OfflineArtifact>,
}

/// Offline experiment: pre-compute a risk-bounded controller per
/// (cause, map), then compare reach-set risk-to-go and simulated final
/// distance against the LQR baseline from the same start and wind seed.
pub fn run_offline_experiment(ctx: &ExperimentContext) -> Result<OfflineOutcome, SimError> {
    let mut rows = Vec::new();
    let mut runtimes = Vec::new();
    let mut artifacts = Vec::new();
    for cause in &ctx.causes {
        for (map_name, poly) in &ctx.maps {
            let spec = ctx.offline_problem(cause, poly)?;
            let solution = solve(&spec, &ctx.solver)?;
            let d_lqr = closed_loop(&cause.model, &cause.gain)?;
            let d_prr = closed_loop(&cause.model, &solution.k_prime)?;

            let profile_lqr =
                ctx.risk_profile(&d_lqr, &ctx.x0, &cause.disturbance, ctx.horizon, poly)?;
            let profile_prr =
                ctx.risk_profile(&d_prr, &ctx.x0, &cause.disturbance, ctx.horizon, poly)?;

            // same start (the set center) and the same wind realization
            let x0_abs = ctx.x0.center() + &ctx.target;
            let seed = ctx.seed ^ 0x0ff1_1e5e;
            let mut lqr_rec = simulate(
                &cause.model,
                &ControllerSchedule::single(cause.gain.clone()),
                &x0_abs,
                &ctx.target,
                ctx.horizon,
                cause.wind.as_ref(),
                true,
                seed,
            )?;
            let mut prr_rec = simulate(
                &cause.model,
                &ControllerSchedule::single(solution.k_prime.clone()),
                &x0_abs,
                &ctx.target,
                ctx.horizon,
                cause.wind.as_ref(),
                true,
                seed,
            )?;
            lqr_rec.realized_risk = Some(profile_lqr);
            prr_rec.realized_risk = Some(profile_prr);
            let metrics = compute_metrics(&lqr_rec, &prr_rec, 1)?;

            rows.push(ReportRow {
                cause: cause.cause.label().to_string(),
                map: map_name.clone(),
                controller: "prr-offline".to_string(),
                risk_reduction_pct: metrics.risk_reduction_pct,
                distance_change_pct: metrics.distance_change_pct,
                degenerate: metrics.degenerate,
                solver_status: format!("{:?}", solution.status).to_lowercase(),
                rtg_lqr: risk_to_go(lqr_rec.realized_risk.as_ref().unwrap(), 1)?,
                rtg_candidate: risk_to_go(prr_rec.realized_risk.as_ref().unwrap(), 1)?,
                dist_lqr: lqr_rec.final_distance,
                dist_candidate: prr_rec.final_distance,
                flights: 1,
                excluded: 0,
            });
            runtimes.push(runtime_stats(
                cause.cause.label(),
                map_name,
                &[solution.runtime_seconds],
            ));
            artifacts.push(OfflineArtifact {
                cause: cause.cause.label().to_string(),
                map: map_name.clone(),
                gain: solution.k_prime.clone(),
                lqr_record: lqr_rec,
                prr_record: prr_rec,
            });
        }
    }
    Ok(OfflineOutcome {
        report: ExperimentReport {
            mode: "offline".to_string(),
            rows,
            runtimes,
        },
        artifacts,
    })
}

/// Per-flight outcome of the online experiment.
#[derive(Debug, Clone)]
struct FlightOutcome {
    rtg_lqr: f64,
    rtg_offline: f64,
    rtg_online: f64,
    dist_lqr: f64,
    dist_offline: f64,
    dist_online: f64,
    online_runtime: f64,
    online_ok: bool,
}

/// Precomputed per-(cause, map) assets for the online experiment.
struct OnlineAssets<'a> {
    cause: &'a CauseSetup,
    poly: &'a LinearFormPoly,
    offline_gain: GainMatrix,
    offline_status: SolveStatus,
    /// The offline plan's thresholds over the full horizon.
    plan: RiskThresholds,
}

fn run_one_flight(
    ctx: &ExperimentContext,
    assets: &OnlineAssets,
    flight: usize,
    base_seed: u64,
) -> Result<FlightOutcome, SimError> {
    let seed = base_seed.wrapping_add(flight as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // initial error state sampled uniformly inside the X0 square
    let mut e0 = ctx.x0.center().clone();
    for dim in [POS_X, POS_Y] {
        let g = ctx
            .x0
            .generators()
            .column_iter()
            .map(|c| c[dim].abs())
            .fold(0.0f64, f64::max);
        e0[dim] += rng.gen_range(-1.0..1.0) * g;
    }
    let onset = rng.gen_range(1..=ctx.horizon - 2);
    let remaining = ctx.horizon - onset;

    // nominal pre-onset phase, no hazard, no wind
    let x0_abs = &e0 + &ctx.target;
    let pre = simulate(
        &ctx.nominal,
        &ControllerSchedule::single(ctx.nominal_gain.clone()),
        &x0_abs,
        &ctx.target,
        onset,
        None,
        true,
        seed ^ 0x5eed_0001,
    )?;
    let e_onset = pre.states.last().unwrap() - &ctx.target;

    // three continuations from the same onset state and wind realization
    let wind_seed = seed ^ 0x5eed_0002;
    let onset_abs = &e_onset + &ctx.target;
    let branch = |gain: &GainMatrix| -> Result<TrajectoryRecord, SimError> {
        simulate(
            &assets.cause.model,
            &ControllerSchedule::single(gain.clone()),
            &onset_abs,
            &ctx.target,
            remaining,
            assets.cause.wind.as_ref(),
            true,
            wind_seed,
        )
    };
    let lqr_rec = branch(&assets.cause.gain)?;
    let offline_rec = branch(&assets.offline_gain)?;

    let online_spec = ctx.online_problem(
        assets.cause,
        assets.poly,
        &e_onset,
        onset,
        &assets.plan,
        &assets.offline_gain,
    )?;
    let online_solution = solve(&online_spec, &ctx.solver)?;
    let online_ok = matches!(
        online_solution.status,
        SolveStatus::Optimal | SolveStatus::Feasible
    );
    let online_rec = branch(&online_solution.k_prime)?;

    // risk-to-go of each branch over the remaining horizon, from the same
    // onset box
    let onset_box = &online_spec.x0;
    let rtg_of = |gain: &GainMatrix| -> Result<f64, SimError> {
        let d = closed_loop(&assets.cause.model, gain)?;
        let profile = ctx.risk_profile(
            &d,
            onset_box,
            &assets.cause.disturbance,
            remaining,
            assets.poly,
        )?;
        Ok(risk_to_go(&profile, 1)?)
    };
    Ok(FlightOutcome {
        rtg_lqr: rtg_of(&assets.cause.gain)?,
        rtg_offline: rtg_of(&assets.offline_gain)?,
        rtg_online: rtg_of(&online_solution.k_prime)?,
        dist_lqr: lqr_rec.final_distance,
        dist_offline: offline_rec.final_distance,
        dist_online: online_rec.final_distance,
        online_runtime: online_solution.runtime_seconds,
        online_ok,
    })
}

/// Online experiment: seeded flights with a random hazard onset; at onset
/// the LQR, precomputed offline and freshly solved online controllers branch
/// from the same state and wind stream. Failed online solves are excluded
/// from the averages with a count.
pub fn run_online_experiment(
    ctx: &ExperimentContext,
    n_flights: usize,
    seed: u64,
) -> Result<ExperimentReport, SimError> {
    let mut rows = Vec::new();
    let mut runtimes = Vec::new();
    for cause in &ctx.causes {
        for (map_name, poly) in &ctx.maps {
            let offline_spec = ctx.offline_problem(cause, poly)?;
            let offline_solution = solve(&offline_spec, &ctx.solver)?;
            let assets = OnlineAssets {
                cause,
                poly,
                offline_gain: offline_solution.k_prime.clone(),
                offline_status: offline_solution.status,
                plan: offline_spec.thresholds.clone(),
            };
            let outcomes: Vec<Result<FlightOutcome, SimError>> = (0..n_flights)
                .into_par_iter()
                .map(|flight| run_one_flight(ctx, &assets, flight, seed))
                .collect();
            let mut ok = Vec::new();
            let mut excluded = 0usize;
            let mut solve_times = Vec::new();
            for outcome in outcomes {
                let outcome = outcome?;
                solve_times.push(outcome.online_runtime);
                if outcome.online_ok {
                    ok.push(outcome);
                } else {
                    excluded += 1;
                }
            }
            let n = ok.len().max(1) as f64;
            let mean = |f: fn(&FlightOutcome) -> f64| ok.iter().map(f).sum::<f64>() / n;
            let rtg_lqr = mean(|o| o.rtg_lqr);
            let rtg_offline = mean(|o| o.rtg_offline);
            let rtg_online = mean(|o| o.rtg_online);
            let dist_lqr = mean(|o| o.dist_lqr);
            let dist_offline = mean(|o| o.dist_offline);
            let dist_online = mean(|o| o.dist_online);
            let pct = |reference: f64, cand: f64| {
                if reference == 0.0 {
                    (0.0, true)
                } else {
                    ((reference - cand) / reference * 100.0, false)
                }
            };
            for (controller, rtg, dist) in [
                ("prr-offline", rtg_offline, dist_offline),
                ("prr-online", rtg_online, dist_online),
            ] {
                let (risk_reduction_pct, degenerate) = pct(rtg_lqr, rtg);
                let distance_change_pct = if dist_lqr == 0.0 {
                    0.0
                } else {
                    (dist - dist_lqr) / dist_lqr * 100.0
                };
                rows.push(ReportRow {
                    cause: cause.cause.label().to_string(),
                    map: map_name.clone(),
                    controller: controller.to_string(),
                    risk_reduction_pct,
                    distance_change_pct,
                    degenerate,
                    solver_status: format!("{:?}", assets.offline_status).to_lowercase(),
                    rtg_lqr,
                    rtg_candidate: rtg,
                    dist_lqr,
                    dist_candidate: dist,
                    flights: ok.len(),
                    excluded,
                });
            }
            runtimes.push(runtime_stats(cause.cause.label(), map_name, &solve_times));
        }
    }
    Ok(ExperimentReport {
        mode: "online".to_string(),
        rows,
        runtimes,
    })
}

/// Reachability soundness check: simulate one seeded flight under a cause
/// and gain, propagate the unreduced reach sets from the initial set, and
/// require every simulated error state to lie inside the matching set
/// (support functions over a sampled direction set, tolerance 1e-9).
pub fn check_reach_membership(
    model: &LinearModel,
    gain: &GainMatrix,
    x0_set: &Zonotope,
    disturbance: &Zonotope,
    wind: Option<&WindModel>,
    target: &DVector<f64>,
    horizon: usize,
    seed: u64,
) -> Result<bool, SimError> {
    let d = closed_loop(model, gain)?;
    let seq = propagate(
        &d,
        x0_set,
        disturbance,
        horizon,
        &PropagateOpts {
            reduce_to: None,
            proj_dims: None,
            reduce_proj: None,
        },
    )?;
    // initial error state sampled inside the set
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e0 = x0_set.center().clone();
    for j in 0..x0_set.num_generators() {
        let beta: f64 = rng.gen_range(-1.0..1.0);
        e0 += x0_set.generators().column(j) * beta;
    }
    let x0_abs = &e0 + target;
    let record = simulate(
        model,
        &ControllerSchedule::single(gain.clone()),
        &x0_abs,
        target,
        horizon,
        wind,
        true,
        seed ^ 0x77,
    )?;
    let mut dirs = sample_directions(model.state_dim(), 32, 1234);
    for i in 0..model.state_dim() {
        let mut axis = DVector::zeros(model.state_dim());
        axis[i] = 1.0;
        dirs.push(axis.clone());
        dirs.push(-axis);
    }
    for k in 1..=horizon {
        let e = &record.states[k] - target;
        if !seq.set(k).contains_point_sampled(&e, &dirs, 1e-9) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Bundled synthetic hazard maps for the experiments: a blob map standing in
/// for population density ("person") and a ramp map standing in for building
/// density ("building"). Deterministic per seed.
pub fn default_experiment_maps(seed: u64) -> Result<Vec<(String, LinearFormPoly)>, SimError> {
    let extent: Vec<(f64, f64)> = {
        let mut v = Vec::new();
        let (x_lo, x_hi, y_lo, y_hi, h) = (1.0f64, 10.0f64, 3.0f64, 10.0f64, 0.25f64);
        let nx = ((x_hi - x_lo) / h) as usize + 1;
        let ny = ((y_hi - y_lo) / h) as usize + 1;
        for iy in 0..ny {
            for ix in 0..nx {
                v.push((x_lo + ix as f64 * h, y_lo + iy as f64 * h));
            }
        }
        v
    };
    // Both maps rise steeply north of the start region (the direction every
    // hazard cause pushes: +y wind force, outward sensor drift, lingering
    // deficient-rotor sets) and fall off along the approach to the target.
    // The odd-cubic profile keeps values small where the reach sets live so
    // the cumulative risk stays away from saturation.
    let cube = |y: f64| 0.03 + 0.045 * (y - 6.0).powi(3);
    // building: cubic density ramp in the wind drift direction
    let building_cells: Vec<GridCell> = extent
        .iter()
        .map(|&(x, y)| GridCell {
            x,
            y,
            value: cube(y).clamp(0.0, 1.0),
        })
        .collect();
    // person: the same rising field at 60% strength plus density bumps
    let person_cells: Vec<GridCell> = extent
        .iter()
        .map(|&(x, y)| {
            let bump = |cx: f64, cy: f64, amp: f64, sigma: f64| {
                amp * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp()
            };
            let value = 0.6 * cube(y) + bump(6.2, 7.6, 0.22, 1.2) + bump(3.0, 4.2, 0.08, 1.0);
            GridCell {
                x,
                y,
                value: value.clamp(0.0, 1.0),
            }
        })
        .collect();
    let person = HazardGrid::from_cells(person_cells).map_err(dyn_err)?;
    let building = HazardGrid::from_cells(building_cells).map_err(dyn_err)?;
    let (person_poly, _) = crate::hazard::fit_poly(&person, 3, 2, seed).map_err(dyn_err)?;
    let (building_poly, _) = crate::hazard::fit_poly(&building, 3, 2, seed).map_err(dyn_err)?;
    Ok(vec![
        ("person".to_string(), person_poly),
        ("building".to_string(), building_poly),
    ])
}

fn dyn_err(e: crate::error::HazardError) -> SimError {
    SimError::DimensionMismatch(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TimeDomain;
    use approx::assert_relative_eq;

    fn scalar_model(a: f64, b: f64) -> LinearModel {
        LinearModel::new(
            DMatrix::from_row_slice(1, 1, &[a]),
            DMatrix::from_row_slice(1, 1, &[b]),
            DMatrix::zeros(1, 1),
            TimeDomain::Discrete { dt: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_stays_at_target() {
        let params = QuadrotorParams::default();
        let model = discretize(&build_nominal(&params).unwrap(), params.dt).unwrap();
        let q = DMatrix::identity(STATE_DIM, STATE_DIM);
        let r = DMatrix::identity(CONTROL_DIM, CONTROL_DIM);
        let gain = lqr(&model, &q, &r).unwrap();
        let mut target = DVector::zeros(STATE_DIM);
        target[POS_Z] = 10.0;
        let record = simulate(
            &model,
            &ControllerSchedule::single(gain),
            &target,
            &target,
            10,
            None,
            true,
            0,
        )
        .unwrap();
        for state in &record.states {
            assert!((state - &target).norm() < 1e-12);
        }
        assert_eq!(record.final_distance, 0.0);
    }

    #[test]
    fn scalar_geometric_decay() {
        let model = scalar_model(0.5, 1.0);
        let x0 = DVector::from_row_slice(&[1.0]);
        let target = DVector::zeros(1);
        let record = simulate(
            &model,
            &ControllerSchedule::single(GainMatrix::zeros(1, 1)),
            &x0,
            &target,
            4,
            None,
            true,
            0,
        )
        .unwrap();
        let expected = [1.0, 0.5, 0.25, 0.125, 0.0625];
        for (state, want) in record.states.iter().zip(expected) {
            assert_relative_eq!(state[0], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let params = QuadrotorParams::default();
        let model = discretize(&build_nominal(&params).unwrap(), params.dt).unwrap();
        let gain = GainMatrix::zeros(CONTROL_DIM, STATE_DIM);
        let wind = WindModel::new([0.05, 0.31, 0.0, -0.005, -0.03, 0.0], 0.03);
        let x0 = DVector::zeros(STATE_DIM);
        let target = DVector::zeros(STATE_DIM);
        let a = simulate(
            &model,
            &ControllerSchedule::single(gain.clone()),
            &x0,
            &target,
            20,
            Some(&wind),
            true,
            42,
        )
        .unwrap();
        let b = simulate(
            &model,
            &ControllerSchedule::single(gain),
            &x0,
            &target,
            20,
            Some(&wind),
            true,
            42,
        )
        .unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert_eq!(sa, sb);
        }
    }

    #[test]
    fn schedule_switches_at_the_right_step() {
        let g0 = GainMatrix::zeros(1, 1);
        let g1 = GainMatrix(DMatrix::from_row_slice(1, 1, &[0.5]));
        let schedule = ControllerSchedule::switched(vec![(0, g0), (3, g1)]).unwrap();
        let model = scalar_model(1.0, 1.0);
        let record = simulate(
            &model,
            &schedule,
            &DVector::from_row_slice(&[1.0]),
            &DVector::zeros(1),
            6,
            None,
            true,
            0,
        )
        .unwrap();
        assert_eq!(record.active_gain, vec![0, 0, 0, 1, 1, 1]);
        // x stays at 1 under zero gain, then decays by 0.5 per step
        assert_relative_eq!(record.states[3][0], 1.0);
        assert_relative_eq!(record.states[4][0], 0.5);
    }

    #[test]
    fn metric_row_values() {
        let mk = |risks: Vec<f64>, dist: f64| TrajectoryRecord {
            states: vec![DVector::zeros(1)],
            controls: vec![],
            active_gain: vec![],
            realized_risk: Some(RiskProfile::new(risks).unwrap()),
            final_distance: dist,
        };
        // identical records: 0 / 0
        let a = mk(vec![0.1, 0.1], 1.0);
        let m = compute_metrics(&a, &mk(vec![0.1, 0.1], 1.0), 1).unwrap();
        assert_relative_eq!(m.risk_reduction_pct, 0.0, epsilon = 1e-12);
        assert_relative_eq!(m.distance_change_pct, 0.0, epsilon = 1e-12);
        // single-step rtg 0.79 -> 0.61 is a 22.78% reduction
        let lqr = mk(vec![0.79], 1.0);
        let cand = mk(vec![0.61], 1.0);
        let m = compute_metrics(&lqr, &cand, 1).unwrap();
        assert_relative_eq!(m.risk_reduction_pct, 22.78, epsilon = 0.01);
        // distance sign convention: closer is negative
        let lqr = mk(vec![0.5], 1.0);
        let cand = mk(vec![0.5], 0.72);
        let m = compute_metrics(&lqr, &cand, 1).unwrap();
        assert_relative_eq!(m.distance_change_pct, -28.0, epsilon = 1e-9);
        // degenerate reference risk
        let lqr = mk(vec![0.0], 1.0);
        let cand = mk(vec![0.0], 1.0);
        let m = compute_metrics(&lqr, &cand, 1).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.risk_reduction_pct, 0.0);
    }

    #[test]
    fn wind_zonotope_is_the_three_sigma_box() {
        let wind = WindModel::new([0.05, 0.31, 0.0, -0.005, -0.03, 0.0], 0.03);
        let w = wind.zonotope();
        assert_eq!(w.dim(), WIND_DIM);
        assert_eq!(w.num_generators(), WIND_DIM);
        let e1 = DVector::from_fn(WIND_DIM, |i, _| if i == 1 { 1.0 } else { 0.0 });
        assert_relative_eq!(w.support(&e1), 0.31 + 0.09, epsilon = 1e-12);
    }

    #[test]
    fn clipped_samples_stay_inside_w() {
        let wind = WindModel::new([0.05, 0.31, 0.0, -0.005, -0.03, 0.0], 0.03);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let w = wind.sample(&mut rng, true);
            for i in 0..WIND_DIM {
                assert!(w[i] >= wind.mean[i] - 3.0 * wind.std - 1e-12);
                assert!(w[i] <= wind.mean[i] + 3.0 * wind.std + 1e-12);
            }
        }
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let params = QuadrotorParams::default();
        let model = discretize(&build_nominal(&params).unwrap(), params.dt).unwrap();
        let gain = GainMatrix::zeros(CONTROL_DIM, STATE_DIM);
        let x0 = DVector::zeros(STATE_DIM);
        let record = simulate(
            &model,
            &ControllerSchedule::single(gain),
            &x0,
            &x0,
            3,
            None,
            true,
            0,
        )
        .unwrap();
        let mut buf = Vec::new();
        record.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("k,x,y,z,roll"));
    }
}
