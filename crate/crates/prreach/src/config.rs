//! Run configuration: one flat JSON file carrying the model parameters,
//! hazard-cause settings, initial-set geometry, solver options and
//! experiment sizes. Every run is seeded from this file; nothing is seeded
//! from the wall clock.

use serde::{Deserialize, Serialize};

use crate::dynamics::QuadrotorParams;
use crate::optimizer::SolverOptions;

fn default_x0_center() -> [f64; 2] {
    [5.5, 6.0]
}

fn default_x0_half_width() -> f64 {
    0.5
}

fn default_target_altitude() -> f64 {
    10.0
}

fn default_threshold_slack() -> f64 {
    1.0
}

fn default_onset_half_width() -> f64 {
    0.05
}

fn default_front_decay() -> f64 {
    2.0
}

fn default_seed() -> u64 {
    1
}

fn default_flights() -> usize {
    20
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default = "SolverConfig::default_penalty_init")]
    pub penalty_init: f64,
    #[serde(default = "SolverConfig::default_penalty_growth")]
    pub penalty_growth: f64,
    #[serde(default = "SolverConfig::default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default = "SolverConfig::default_max_iterations")]
    pub max_iterations: usize,
}

impl SolverConfig {
    fn default_penalty_init() -> f64 {
        10.0
    }
    fn default_penalty_growth() -> f64 {
        10.0
    }
    fn default_max_rounds() -> usize {
        6
    }
    fn default_max_iterations() -> usize {
        5000
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            penalty_init: Self::default_penalty_init(),
            penalty_growth: Self::default_penalty_growth(),
            max_rounds: Self::default_max_rounds(),
            max_iterations: Self::default_max_iterations(),
        }
    }
}

impl From<&SolverConfig> for SolverOptions {
    fn from(cfg: &SolverConfig) -> Self {
        SolverOptions {
            penalty_init: cfg.penalty_init,
            penalty_growth: cfg.penalty_growth,
            max_rounds: cfg.max_rounds,
            max_iterations: cfg.max_iterations,
            ..SolverOptions::default()
        }
    }
}

/// Flat run configuration. The physical block mirrors the model-parameter
/// schema (`m`, `g`, `Jx`, `Jy`, `Jz`, `dt`, `T`, `alpha_dr`, `alpha_se`,
/// `wind_mean`, `wind_std`); everything else has defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub m: f64,
    pub g: f64,
    #[serde(rename = "Jx")]
    pub jx: f64,
    #[serde(rename = "Jy")]
    pub jy: f64,
    #[serde(rename = "Jz")]
    pub jz: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub alpha_dr: f64,
    pub alpha_se: [f64; 2],
    /// 5 or 6 entries; a 5-vector gets a trailing zero appended.
    pub wind_mean: Vec<f64>,
    pub wind_std: f64,

    #[serde(default = "default_x0_center")]
    pub x0_center: [f64; 2],
    #[serde(default = "default_x0_half_width")]
    pub x0_half_width: f64,
    #[serde(default = "default_target_altitude")]
    pub target_altitude: f64,
    /// Per-step threshold multiplier (>= 1 loosens, never below the
    /// baseline construction).
    #[serde(default = "default_threshold_slack")]
    pub threshold_slack: f64,
    /// Extra multiplicative allowance on the first few steps, decaying as
    /// `1 + front * exp(-(k-1)/decay)`. Positions cannot respond to control
    /// within the actuation deadtime, so thresholds inside it must carry the
    /// baseline's own uncontrollable drift.
    #[serde(default)]
    pub threshold_front_slack: f64,
    #[serde(default = "default_front_decay")]
    pub threshold_front_decay: f64,
    #[serde(default = "default_onset_half_width")]
    pub onset_half_width: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_flights")]
    pub flights: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Optional fitted-map files (name + path); experiments fall back to
    /// the bundled synthetic maps when empty.
    #[serde(default)]
    pub maps: Vec<MapRef>,
    /// LQR weights are identity scaled by these factors.
    #[serde(default = "default_one")]
    pub q_scale: f64,
    #[serde(default = "default_one")]
    pub r_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapRef {
    pub name: String,
    pub path: String,
}

impl RunConfig {
    pub fn params(&self) -> QuadrotorParams {
        QuadrotorParams {
            mass: self.m,
            gravity: self.g,
            jx: self.jx,
            jy: self.jy,
            jz: self.jz,
            dt: self.dt,
        }
    }

    /// Wind mean as a full 6-vector (trailing zero appended to a 5-vector).
    pub fn wind_mean_6(&self) -> Result<[f64; 6], String> {
        match self.wind_mean.len() {
            6 => {
                let mut out = [0.0; 6];
                out.copy_from_slice(&self.wind_mean);
                Ok(out)
            }
            5 => {
                let mut out = [0.0; 6];
                out[..5].copy_from_slice(&self.wind_mean);
                Ok(out)
            }
            n => Err(format!("wind_mean must have 5 or 6 entries, got {n}")),
        }
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    /// The reference parameter set used throughout the experiments.
    pub fn example() -> Self {
        Self {
            m: 1.5,
            g: 9.81,
            jx: 0.02,
            jy: 0.02,
            jz: 0.04,
            dt: 0.01,
            horizon: 25,
            alpha_dr: 0.4,
            alpha_se: [0.6, 0.6],
            wind_mean: vec![0.05, 0.31, 0.0, -0.005, -0.03],
            wind_std: 0.03,
            x0_center: default_x0_center(),
            x0_half_width: default_x0_half_width(),
            target_altitude: default_target_altitude(),
            threshold_slack: default_threshold_slack(),
            threshold_front_slack: 0.0,
            threshold_front_decay: default_front_decay(),
            onset_half_width: default_onset_half_width(),
            seed: default_seed(),
            flights: default_flights(),
            solver: SolverConfig::default(),
            maps: Vec::new(),
            q_scale: 1.0,
            r_scale: 1.0,
        }
    }
}
