//! Quadrotor linear model construction, hazard-cause variants, continuous to
//! discrete conversion, and LQR gain synthesis.
//!
//! State ordering (12 dims): `[roll, pitch, yaw, p, q, r, u, v, w, x, y, z]`
//! — attitude, body rates, linear velocities, position. Control input
//! (4 dims): `[f_t, tau_x, tau_y, tau_z]`. Disturbance (6 dims): three wind
//! forces then three wind torques. Positions therefore live at state indices
//! 9..12; the planar hazard projection uses dims (9, 10).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::DynamicsError;
use crate::geometry::Zonotope;

pub const STATE_DIM: usize = 12;
pub const CONTROL_DIM: usize = 4;
pub const WIND_DIM: usize = 6;

/// State indices of the planar position, used for every hazard projection.
pub const POS_X: usize = 9;
pub const POS_Y: usize = 10;
pub const POS_Z: usize = 11;

/// Physical quadrotor parameters plus the sampling time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadrotorParams {
    /// Mass, kg.
    pub mass: f64,
    /// Gravity, m/s^2.
    pub gravity: f64,
    /// Moments of inertia, kg*m^2.
    pub jx: f64,
    pub jy: f64,
    pub jz: f64,
    /// Sampling time, s.
    pub dt: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            mass: 1.5,
            gravity: 9.81,
            jx: 0.02,
            jy: 0.02,
            jz: 0.04,
            dt: 0.01,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        for (name, v) in [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("Jx", self.jx),
            ("Jy", self.jy),
            ("Jz", self.jz),
            ("dt", self.dt),
        ] {
            if !(v > 0.0) {
                return Err(DynamicsError::InvalidParameter(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeDomain {
    Continuous,
    Discrete { dt: f64 },
}

/// Linear dynamics `x' = A x + B u + Bw w` (continuous) or
/// `x[k+1] = A x[k] + B u[k] + Bw w[k]` (discrete).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bw: DMatrix<f64>,
    pub time_domain: TimeDomain,
}

impl LinearModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        bw: DMatrix<f64>,
        time_domain: TimeDomain,
    ) -> Result<Self, DynamicsError> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || bw.nrows() != n {
            return Err(DynamicsError::DimensionMismatch(format!(
                "A is {}x{}, B has {} rows, Bw has {} rows",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                bw.nrows()
            )));
        }
        Ok(Self {
            a,
            b,
            bw,
            time_domain,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.time_domain, TimeDomain::Discrete { .. })
    }
}

/// A condition altering the UAV dynamics.
#[derive(Debug, Clone, PartialEq)]
pub enum HazardCause {
    None,
    /// Scales the control matrix by `alpha` in (0, 1].
    DeficientRotor {
        alpha: f64,
    },
    /// Installs self-coupling `alpha_x`, `alpha_y` on the planar position
    /// diagonals: the farther the vehicle is from the origin, the faster it
    /// drifts outward.
    SensorError {
        alpha_x: f64,
        alpha_y: f64,
    },
    /// Attaches the disturbance set `w` (6-dim zonotope) routed through Bw.
    WindDisturbance {
        w: Zonotope,
    },
}

impl HazardCause {
    pub fn label(&self) -> &'static str {
        match self {
            HazardCause::None => "none",
            HazardCause::DeficientRotor { .. } => "deficient-rotor",
            HazardCause::SensorError { .. } => "sensor-error",
            HazardCause::WindDisturbance { .. } => "wind",
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        match self {
            HazardCause::None => Ok(()),
            HazardCause::DeficientRotor { alpha } => {
                if *alpha > 0.0 && *alpha <= 1.0 {
                    Ok(())
                } else {
                    Err(DynamicsError::InvalidParameter(format!(
                        "deficient-rotor alpha must be in (0, 1], got {alpha}"
                    )))
                }
            }
            HazardCause::SensorError { alpha_x, alpha_y } => {
                for a in [alpha_x, alpha_y] {
                    if !(*a > 0.0 && *a <= 1.0) {
                        return Err(DynamicsError::InvalidParameter(format!(
                            "sensor-error alpha must be in (0, 1], got {a}"
                        )));
                    }
                }
                Ok(())
            }
            HazardCause::WindDisturbance { w } => {
                if w.dim() == WIND_DIM {
                    Ok(())
                } else {
                    Err(DynamicsError::DimensionMismatch(format!(
                        "wind set has dimension {}, expected {WIND_DIM}",
                        w.dim()
                    )))
                }
            }
        }
    }
}

/// Feedback gain, `u = -K e`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix(pub DMatrix<f64>);

impl GainMatrix {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self(DMatrix::zeros(m, n))
    }
}

/// Continuous-time nominal quadrotor model.
///
/// A couples attitude to rates and position to velocity with identity
/// blocks, and tilts gravity into the planar velocities; B routes thrust
/// into the vertical velocity and the torques into the body rates; Bw routes
/// wind forces through 1/m and wind torques through 1/J.
pub fn build_nominal(params: &QuadrotorParams) -> Result<LinearModel, DynamicsError> {
    params.validate()?;
    let g = params.gravity;
    let mut a = DMatrix::zeros(STATE_DIM, STATE_DIM);
    // attitude rates: d(roll,pitch,yaw)/dt = (p, q, r)
    a[(0, 3)] = 1.0;
    a[(1, 4)] = 1.0;
    a[(2, 5)] = 1.0;
    // gravity tilt: du/dt = -g*pitch, dv/dt = g*roll
    a[(6, 1)] = -g;
    a[(7, 0)] = g;
    // kinematics: d(x,y,z)/dt = (u, v, w)
    a[(9, 6)] = 1.0;
    a[(10, 7)] = 1.0;
    a[(11, 8)] = 1.0;

    let mut b = DMatrix::zeros(STATE_DIM, CONTROL_DIM);
    b[(3, 1)] = 1.0 / params.jx;
    b[(4, 2)] = 1.0 / params.jy;
    b[(5, 3)] = 1.0 / params.jz;
    b[(8, 0)] = 1.0 / params.mass;

    let mut bw = DMatrix::zeros(STATE_DIM, WIND_DIM);
    bw[(3, 3)] = 1.0 / params.jx;
    bw[(4, 4)] = 1.0 / params.jy;
    bw[(5, 5)] = 1.0 / params.jz;
    bw[(6, 0)] = 1.0 / params.mass;
    bw[(7, 1)] = 1.0 / params.mass;
    bw[(8, 2)] = 1.0 / params.mass;

    LinearModel::new(a, b, bw, TimeDomain::Continuous)
}

/// Apply a hazard-cause variant to a continuous-time model.
pub fn apply_hazard(
    model: &LinearModel,
    cause: &HazardCause,
) -> Result<LinearModel, DynamicsError> {
    if model.is_discrete() {
        return Err(DynamicsError::AlreadyDiscrete);
    }
    cause.validate()?;
    let mut out = model.clone();
    match cause {
        HazardCause::None => {}
        HazardCause::DeficientRotor { alpha } => {
            out.b *= *alpha;
        }
        HazardCause::SensorError { alpha_x, alpha_y } => {
            out.a[(POS_X, POS_X)] = *alpha_x;
            out.a[(POS_Y, POS_Y)] = *alpha_y;
        }
        HazardCause::WindDisturbance { .. } => {
            // Bw is already installed on the nominal model; the disturbance
            // set itself rides along with the cause.
        }
    }
    Ok(out)
}

/// Matrix exponential and its integral, by scaled-and-squared truncated
/// series. Returns `(exp(A dt), int_0^dt exp(A tau) dtau)`.
fn expm_with_integral(a: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = a * dt;
    let norm = m.amax() * n as f64;
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let h = &m / 2f64.powi(s);
    let dt0 = dt / 2f64.powi(s);

    // exp(h) = sum h^k / k!, phi(h) = sum h^k / (k+1)!; add terms until the
    // relative increment drops below 1e-14
    let mut exp = DMatrix::identity(n, n);
    let mut phi = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..200usize {
        term = &term * &h / k as f64;
        exp += &term;
        phi += &term / (k + 1) as f64;
        let inc = term.norm();
        if inc <= 1e-14 * exp.norm().max(1.0) {
            break;
        }
    }
    let mut integral = phi * dt0;
    // double: int over [0, 2h] = (I + exp(Ah)) * int over [0, h]
    for _ in 0..s {
        integral = (DMatrix::identity(n, n) + &exp) * integral;
        exp = &exp * &exp;
    }
    (exp, integral)
}

/// Zero-order-hold discretization: `A_d = exp(A dt)`,
/// `B_d = (int_0^dt exp(A tau) dtau) B`, and `Bw` identically.
pub fn discretize(model: &LinearModel, dt: f64) -> Result<LinearModel, DynamicsError> {
    if model.is_discrete() {
        return Err(DynamicsError::AlreadyDiscrete);
    }
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let (a_d, integral) = expm_with_integral(&model.a, dt);
    let b_d = &integral * &model.b;
    let bw_d = &integral * &model.bw;
    LinearModel::new(a_d, b_d, bw_d, TimeDomain::Discrete { dt })
}

/// Discrete-time LQR: iterate the Riccati recursion to a fixed point and
/// return `K = (R + B'PB)^-1 B'PA`. Errors if the iteration does not reach
/// residual 1e-9 within 1e5 steps (uncontrollable or ill-posed weights).
pub fn lqr(
    model: &LinearModel,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<GainMatrix, DynamicsError> {
    if !model.is_discrete() {
        return Err(DynamicsError::NotDiscrete);
    }
    let n = model.state_dim();
    let m = model.control_dim();
    if q.nrows() != n || q.ncols() != n || r.nrows() != m || r.ncols() != m {
        return Err(DynamicsError::DimensionMismatch(format!(
            "Q must be {n}x{n} and R {m}x{m}"
        )));
    }
    const TOL: f64 = 1e-9;
    const MAX_ITER: usize = 100_000;
    let a = &model.a;
    let b = &model.b;
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for i in 0..MAX_ITER {
        let btp = &bt * &p;
        let gain_term = (r + &btp * b)
            .try_inverse()
            .ok_or_else(|| DynamicsError::Singular("R + B'PB is not invertible".to_string()))?;
        let pn = &at * &p * a - &at * &p * b * &gain_term * &btp * a + q;
        residual = (&pn - &p).norm();
        p = pn;
        if !residual.is_finite() {
            return Err(DynamicsError::RiccatiNonConvergence {
                iterations: i + 1,
                residual,
            });
        }
        if residual <= TOL {
            let gain_term = (r + &bt * &p * b)
                .try_inverse()
                .ok_or_else(|| DynamicsError::Singular("R + B'PB is not invertible".to_string()))?;
            return Ok(GainMatrix(gain_term * &bt * &p * a));
        }
    }
    Err(DynamicsError::RiccatiNonConvergence {
        iterations: MAX_ITER,
        residual,
    })
}

/// Fixed-point defect of the discrete algebraic Riccati equation at `p`.
pub fn dare_residual(
    model: &LinearModel,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let a = &model.a;
    let b = &model.b;
    let at = a.transpose();
    let bt = b.transpose();
    let inner = (r + &bt * p * b)
        .try_inverse()
        .expect("R + B'PB invertible");
    (&at * p * a - &at * p * b * inner * &bt * p * a + q - p).norm()
}

/// Riccati solution matrix for test and report use; same iteration as `lqr`.
pub fn dare_solution(
    model: &LinearModel,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, DynamicsError> {
    if !model.is_discrete() {
        return Err(DynamicsError::NotDiscrete);
    }
    let a = &model.a;
    let b = &model.b;
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    for i in 0..100_000usize {
        let btp = &bt * &p;
        let inner = (r + &btp * b)
            .try_inverse()
            .ok_or_else(|| DynamicsError::Singular("R + B'PB is not invertible".to_string()))?;
        let pn = &at * &p * a - &at * &p * b * &inner * &btp * a + q;
        let residual = (&pn - &p).norm();
        p = pn;
        if !residual.is_finite() {
            return Err(DynamicsError::RiccatiNonConvergence {
                iterations: i + 1,
                residual,
            });
        }
        if residual <= 1e-9 {
            return Ok(p);
        }
    }
    Err(DynamicsError::RiccatiNonConvergence {
        iterations: 100_000,
        residual: f64::NAN,
    })
}

/// Closed-loop matrix `D = A - B K`.
pub fn closed_loop(model: &LinearModel, gain: &GainMatrix) -> Result<DMatrix<f64>, DynamicsError> {
    let k = &gain.0;
    if k.nrows() != model.control_dim() || k.ncols() != model.state_dim() {
        return Err(DynamicsError::DimensionMismatch(format!(
            "gain is {}x{} for a model with {} states and {} inputs",
            k.nrows(),
            k.ncols(),
            model.state_dim(),
            model.control_dim()
        )));
    }
    Ok(&model.a - &model.b * k)
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, e| acc.max(e.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
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
    fn nominal_model_matches_printed_entries() {
        let model = build_nominal(&QuadrotorParams::default()).unwrap();
        assert_relative_eq!(model.a[(6, 1)], -9.81);
        assert_relative_eq!(model.a[(7, 0)], 9.81);
        assert_relative_eq!(model.b[(8, 0)], 1.0 / 1.5);
        assert_relative_eq!(model.b[(3, 1)], 1.0 / 0.02);
        assert_relative_eq!(model.b[(4, 2)], 1.0 / 0.02);
        assert_relative_eq!(model.b[(5, 3)], 1.0 / 0.04);
        // attitude rows carry nothing except the identity coupling to rates
        for i in 0..3 {
            for j in 0..STATE_DIM {
                let expected = if j == i + 3 { 1.0 } else { 0.0 };
                assert_eq!(model.a[(i, j)], expected, "A[{i}][{j}]");
            }
        }
        // wind routing: 1/m on force rows, 1/J on torque rows
        assert_relative_eq!(model.bw[(6, 0)], 1.0 / 1.5);
        assert_relative_eq!(model.bw[(7, 1)], 1.0 / 1.5);
        assert_relative_eq!(model.bw[(8, 2)], 1.0 / 1.5);
        assert_relative_eq!(model.bw[(3, 3)], 1.0 / 0.02);
        assert_relative_eq!(model.bw[(5, 5)], 1.0 / 0.04);
    }

    #[test]
    fn params_must_be_positive() {
        let mut p = QuadrotorParams::default();
        p.mass = 0.0;
        assert!(build_nominal(&p).is_err());
    }

    #[test]
    fn hazard_deficient_rotor_scales_b_only() {
        let model = build_nominal(&QuadrotorParams::default()).unwrap();
        let out = apply_hazard(&model, &HazardCause::DeficientRotor { alpha: 0.4 }).unwrap();
        assert_eq!(out.a, model.a);
        assert_relative_eq!(out.b[(8, 0)], 0.4 / 1.5);
        assert_relative_eq!(out.b[(3, 1)], 0.4 / 0.02);
    }

    #[test]
    fn hazard_none_is_identity() {
        let model = build_nominal(&QuadrotorParams::default()).unwrap();
        let out = apply_hazard(&model, &HazardCause::None).unwrap();
        assert_eq!(out, model);
    }

    #[test]
    fn hazard_sensor_error_sets_position_diagonal() {
        let model = build_nominal(&QuadrotorParams::default()).unwrap();
        let out = apply_hazard(
            &model,
            &HazardCause::SensorError {
                alpha_x: 0.6,
                alpha_y: 0.6,
            },
        )
        .unwrap();
        assert_relative_eq!(out.a[(POS_X, POS_X)], 0.6);
        assert_relative_eq!(out.a[(POS_Y, POS_Y)], 0.6);
        // the altitude keeps no self-coupling
        assert_eq!(out.a[(POS_Z, POS_Z)], 0.0);
        assert_eq!(out.b, model.b);
        // everything off the planar position diagonal is untouched
        let mut expected = model.a.clone();
        expected[(POS_X, POS_X)] = 0.6;
        expected[(POS_Y, POS_Y)] = 0.6;
        assert_eq!(out.a, expected);
    }

    #[test]
    fn discretize_zero_drift_collapses_the_series() {
        let model = LinearModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            DMatrix::zeros(2, 1),
            TimeDomain::Continuous,
        )
        .unwrap();
        let d = discretize(&model, 0.5).unwrap();
        assert_eq!(d.a, DMatrix::identity(2, 2));
        assert_relative_eq!(d.b[(0, 0)], 0.5);
        assert_relative_eq!(d.b[(1, 0)], 1.0);
    }

    #[test]
    fn discretize_scalar_matches_exponential() {
        let model = LinearModel::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::zeros(1, 1),
            TimeDomain::Continuous,
        )
        .unwrap();
        let d = discretize(&model, 0.01).unwrap();
        assert_relative_eq!(d.a[(0, 0)], 0.01f64.exp(), epsilon = 1e-14);
        assert_relative_eq!(d.b[(0, 0)], 0.01f64.exp() - 1.0, epsilon = 1e-14);
    }

    #[test]
    fn discretize_double_integrator_is_exact() {
        let dt = 0.3;
        let model = LinearModel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::zeros(2, 1),
            TimeDomain::Continuous,
        )
        .unwrap();
        let d = discretize(&model, dt).unwrap();
        assert_relative_eq!(d.a[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(d.a[(0, 1)], dt, epsilon = 1e-14);
        assert_relative_eq!(d.a[(1, 0)], 0.0, epsilon = 1e-14);
        assert_relative_eq!(d.a[(1, 1)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(d.b[(0, 0)], dt * dt / 2.0, epsilon = 1e-14);
        assert_relative_eq!(d.b[(1, 0)], dt, epsilon = 1e-14);
    }

    #[test]
    fn discretize_rejects_discrete_input() {
        let m = scalar_model(1.0, 1.0);
        assert!(matches!(
            discretize(&m, 0.1),
            Err(DynamicsError::AlreadyDiscrete)
        ));
    }

    #[test]
    fn lqr_scalar_closed_form_golden_ratio() {
        let m = scalar_model(1.0, 1.0);
        let q = DMatrix::from_row_slice(1, 1, &[1.0]);
        let r = DMatrix::from_row_slice(1, 1, &[1.0]);
        let k = lqr(&m, &q, &r).unwrap();
        // p^2 - p - 1 = 0 -> p = (1 + sqrt 5)/2, k = p/(1+p) = 2/(1+sqrt 5)
        assert_relative_eq!(k.0[(0, 0)], 2.0 / (1.0 + 5f64.sqrt()), epsilon = 1e-9);
        let p = dare_solution(&m, &q, &r).unwrap();
        assert_relative_eq!(p[(0, 0)], (1.0 + 5f64.sqrt()) / 2.0, epsilon = 1e-9);
        assert!(dare_residual(&m, &q, &r, &p) <= 1e-9);
    }

    #[test]
    fn lqr_zero_cost_gives_zero_gain() {
        let m = scalar_model(0.5, 1.0);
        let q = DMatrix::zeros(1, 1);
        let r = DMatrix::from_row_slice(1, 1, &[1.0]);
        let k = lqr(&m, &q, &r).unwrap();
        assert_eq!(k.0[(0, 0)], 0.0);
    }

    #[test]
    fn lqr_uncontrollable_unstable_mode_fails() {
        let m = scalar_model(2.0, 0.0);
        let q = DMatrix::from_row_slice(1, 1, &[1.0]);
        let r = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(matches!(
            lqr(&m, &q, &r),
            Err(DynamicsError::RiccatiNonConvergence { .. })
        ));
    }

    #[test]
    fn quadrotor_lqr_stabilizes_the_discrete_model() {
        let params = QuadrotorParams::default();
        let model = discretize(&build_nominal(&params).unwrap(), params.dt).unwrap();
        let q = DMatrix::identity(STATE_DIM, STATE_DIM);
        let r = DMatrix::identity(CONTROL_DIM, CONTROL_DIM);
        let k = lqr(&model, &q, &r).unwrap();
        let d = closed_loop(&model, &k).unwrap();
        assert!(spectral_radius(&d) < 1.0);
        let p = dare_solution(&model, &q, &r).unwrap();
        assert!(dare_residual(&model, &q, &r, &p) <= 1e-9);
    }

    #[test]
    fn closed_loop_cases() {
        let m = scalar_model(0.7, 2.0);
        let d = closed_loop(&m, &GainMatrix::zeros(1, 1)).unwrap();
        assert_eq!(d, m.a);
        // B square invertible, K = B^-1 A -> D = 0
        let k = GainMatrix(DMatrix::from_row_slice(1, 1, &[0.35]));
        let d = closed_loop(&m, &k).unwrap();
        assert_relative_eq!(d[(0, 0)], 0.0);
        // dimension mismatch
        let bad = GainMatrix::zeros(2, 1);
        assert!(closed_loop(&m, &bad).is_err());
    }

    #[test]
    fn expm_composition_property() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let (dt1, dt2) = (rng.gen_range(0.01..0.3), rng.gen_range(0.01..0.3));
            let (e1, _) = expm_with_integral(&a, dt1);
            let (e2, _) = expm_with_integral(&a, dt2);
            let (e12, _) = expm_with_integral(&a, dt1 + dt2);
            assert!((e1 * e2 - e12).norm() < 1e-10);
        }
    }
}
