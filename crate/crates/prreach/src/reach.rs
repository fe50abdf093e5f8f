//! Reach-set propagation: zonotopes pushed through the closed-loop matrix
//! with accumulated disturbances and per-step order reduction.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::ReachError;
use crate::geometry::Zonotope;

/// Propagation knobs. `reduce_to` caps the full-dimensional sets after every
/// step; `proj_dims`/`reduce_proj` control the planar projections kept
/// alongside (the risk pipeline reduces those to 2 generators).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagateOpts {
    pub reduce_to: Option<usize>,
    pub proj_dims: Option<[usize; 2]>,
    pub reduce_proj: Option<usize>,
}

impl Default for PropagateOpts {
    fn default() -> Self {
        Self {
            reduce_to: Some(24),
            proj_dims: None,
            reduce_proj: Some(2),
        }
    }
}

/// Reach sets for k = 1..=T plus their planar projections.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachSequence {
    sets: Vec<Zonotope>,
    projected: Vec<Zonotope>,
}

impl ReachSequence {
    /// Full-dimensional set at step k (1-based).
    pub fn set(&self, k: usize) -> &Zonotope {
        &self.sets[k - 1]
    }

    pub fn sets(&self) -> &[Zonotope] {
        &self.sets
    }

    /// Planar projections, empty when `proj_dims` was not requested.
    pub fn projected(&self) -> &[Zonotope] {
        &self.projected
    }

    pub fn horizon(&self) -> usize {
        self.sets.len()
    }

    /// One JSON record per step with the projected polygon, for overlay
    /// plots. Degenerate projections emit an empty vertex list.
    pub fn write_jsonl<W: std::io::Write>(&self, mut writer: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Record {
            k: usize,
            center: Vec<f64>,
            vertices: Vec<[f64; 2]>,
            degenerate: bool,
        }
        for (i, z) in self.projected.iter().enumerate() {
            let (vertices, degenerate) = match z.vertices_2d() {
                Ok(poly) => (poly.vertices().to_vec(), false),
                Err(_) => (Vec::new(), true),
            };
            let record = Record {
                k: i + 1,
                center: z.center().iter().copied().collect(),
                vertices,
                degenerate,
            };
            serde_json::to_writer(&mut writer, &record)?;
            writeln!(writer)?;
        }
        Ok(())
    }
}

/// Iterate `Z(k) = D Z(k-1) + BwW` from `Z(0) = X0`, order-reducing after
/// every step. Equivalent to the closed form `D^k X0 + sum_{l=0}^{k-1} D^l
/// BwW` when no reduction is applied.
pub fn propagate(
    d: &DMatrix<f64>,
    x0: &Zonotope,
    disturbance: &Zonotope,
    horizon: usize,
    opts: &PropagateOpts,
) -> Result<ReachSequence, ReachError> {
    let n = x0.dim();
    if d.nrows() != n || d.ncols() != n {
        return Err(ReachError::DimensionMismatch(format!(
            "closed-loop matrix is {}x{} for a {n}-dimensional initial set",
            d.nrows(),
            d.ncols()
        )));
    }
    if disturbance.dim() != n {
        return Err(ReachError::DimensionMismatch(format!(
            "disturbance set has dimension {}, expected {n}",
            disturbance.dim()
        )));
    }
    if horizon == 0 {
        return Err(ReachError::EmptyHorizon);
    }
    let disturbance_is_point =
        disturbance.num_generators() == 0 && disturbance.center().iter().all(|&v| v == 0.0);

    let mut sets = Vec::with_capacity(horizon);
    let mut projected = Vec::with_capacity(horizon);
    let mut current = x0.clone();
    for _ in 0..horizon {
        let mut next = current.linear_map(d)?;
        if !disturbance_is_point {
            next = next.minkowski_sum(disturbance)?;
        }
        if let Some(cap) = opts.reduce_to {
            next = next.reduce_order(cap)?;
        }
        if let Some(dims) = opts.proj_dims {
            let mut proj = next.project(&dims)?;
            if let Some(cap) = opts.reduce_proj {
                proj = proj.reduce_order(cap)?;
            }
            projected.push(proj);
        }
        sets.push(next.clone());
        current = next;
    }
    Ok(ReachSequence { sets, projected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_directions;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interval(center: f64, half: f64) -> Zonotope {
        if half == 0.0 {
            Zonotope::point(DVector::from_row_slice(&[center]))
        } else {
            Zonotope::axis_box(DVector::from_row_slice(&[center]), &[half]).unwrap()
        }
    }

    fn no_reduce() -> PropagateOpts {
        PropagateOpts {
            reduce_to: None,
            proj_dims: None,
            reduce_proj: None,
        }
    }

    #[test]
    fn identity_map_without_disturbance_is_stationary() {
        let x0 = Zonotope::axis_box(DVector::from_row_slice(&[1.0, 2.0]), &[0.5, 0.5]).unwrap();
        let d = DMatrix::identity(2, 2);
        let zero = Zonotope::point(DVector::zeros(2));
        let seq = propagate(&d, &x0, &zero, 5, &no_reduce()).unwrap();
        for k in 1..=5 {
            assert_eq!(seq.set(k), &x0);
        }
    }

    #[test]
    fn zero_map_yields_the_disturbance_set() {
        let x0 = Zonotope::axis_box(DVector::from_row_slice(&[1.0, 2.0]), &[0.5, 0.5]).unwrap();
        let d = DMatrix::zeros(2, 2);
        let w = Zonotope::axis_box(DVector::from_row_slice(&[0.1, 0.0]), &[0.2, 0.2]).unwrap();
        let seq = propagate(&d, &x0, &w, 3, &no_reduce()).unwrap();
        for k in 1..=3 {
            let dirs = sample_directions(2, 16, 1);
            for dir in &dirs {
                assert_relative_eq!(seq.set(k).support(dir), w.support(dir), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn scalar_recursion_half_widths() {
        let d = DMatrix::from_row_slice(1, 1, &[0.5]);
        let x0 = interval(0.0, 1.0);
        let w = interval(0.0, 0.1);
        let seq = propagate(&d, &x0, &w, 2, &no_reduce()).unwrap();
        let e1 = DVector::from_row_slice(&[1.0]);
        // Z(1): 0.5*1 + 0.1 = 0.6; Z(2): 0.25 + 0.05 + 0.1 = 0.4
        assert_relative_eq!(seq.set(1).support(&e1), 0.6, epsilon = 1e-12);
        assert_relative_eq!(seq.set(2).support(&e1), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn recursion_matches_closed_form_without_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            // random stable 4x4 D
            let raw = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let rho = crate::dynamics::spectral_radius(&raw);
            let d = raw * (0.9 / rho.max(1e-6));
            let x0 = Zonotope::axis_box(
                DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)),
                &[0.3, 0.2, 0.1, 0.4],
            )
            .unwrap();
            let w = Zonotope::axis_box(
                DVector::from_fn(4, |_, _| rng.gen_range(-0.05..0.05)),
                &[0.02, 0.02, 0.02, 0.02],
            )
            .unwrap();
            let seq = propagate(&d, &x0, &w, 10, &no_reduce()).unwrap();
            // closed form: D^k X0 + sum_{l=0}^{k-1} D^l W
            let dirs = sample_directions(4, 16, 3);
            let mut dk = DMatrix::identity(4, 4);
            for k in 1..=10usize {
                dk = &d * dk;
                let mut closed = x0.linear_map(&dk).unwrap();
                let mut dl = DMatrix::identity(4, 4);
                for _ in 0..k {
                    closed = closed.minkowski_sum(&w.linear_map(&dl).unwrap()).unwrap();
                    dl = &d * dl;
                }
                for dir in &dirs {
                    assert_relative_eq!(
                        seq.set(k).support(dir),
                        closed.support(dir),
                        epsilon = 1e-9,
                        max_relative = 1e-9
                    );
                }
            }
        }
    }

    #[test]
    fn reduced_sets_contain_unreduced_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let rho = crate::dynamics::spectral_radius(&raw);
        let d = raw * (0.85 / rho.max(1e-6));
        let x0 = Zonotope::axis_box(DVector::zeros(4), &[0.3, 0.2, 0.1, 0.4]).unwrap();
        let w = Zonotope::axis_box(
            DVector::from_row_slice(&[0.01, 0.0, -0.01, 0.0]),
            &[0.02, 0.02, 0.02, 0.02],
        )
        .unwrap();
        let exact = propagate(&d, &x0, &w, 12, &no_reduce()).unwrap();
        let reduced = propagate(
            &d,
            &x0,
            &w,
            12,
            &PropagateOpts {
                reduce_to: Some(6),
                proj_dims: None,
                reduce_proj: None,
            },
        )
        .unwrap();
        let dirs = sample_directions(4, 32, 9);
        for k in 1..=12usize {
            assert!(reduced.set(k).num_generators() <= 6);
            for dir in &dirs {
                assert!(
                    reduced.set(k).support(dir) >= exact.set(k).support(dir) - 1e-9,
                    "containment violated at k={k}"
                );
            }
        }
    }

    #[test]
    fn stable_dynamics_stay_bounded_over_long_horizons() {
        let d = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.05, 0.8]);
        assert!(crate::dynamics::spectral_radius(&d) < 1.0);
        let x0 = Zonotope::axis_box(DVector::zeros(2), &[1.0, 1.0]).unwrap();
        let w = Zonotope::axis_box(DVector::zeros(2), &[0.1, 0.1]).unwrap();
        let seq = propagate(
            &d,
            &x0,
            &w,
            200,
            &PropagateOpts {
                reduce_to: Some(6),
                proj_dims: None,
                reduce_proj: None,
            },
        )
        .unwrap();
        for k in 1..=200usize {
            let radius: f64 = (0..seq.set(k).num_generators())
                .map(|j| seq.set(k).generators().column(j).norm())
                .sum();
            assert!(radius < 50.0, "radius blow-up at k={k}: {radius}");
        }
    }

    #[test]
    fn projection_tracks_requested_dims() {
        let d = DMatrix::identity(3, 3);
        let x0 = Zonotope::axis_box(DVector::from_row_slice(&[1.0, 2.0, 3.0]), &[0.1, 0.2, 0.3])
            .unwrap();
        let zero = Zonotope::point(DVector::zeros(3));
        let seq = propagate(
            &d,
            &x0,
            &zero,
            2,
            &PropagateOpts {
                reduce_to: None,
                proj_dims: Some([0, 2]),
                reduce_proj: Some(2),
            },
        )
        .unwrap();
        assert_eq!(seq.projected().len(), 2);
        assert_eq!(seq.projected()[0].center()[0], 1.0);
        assert_eq!(seq.projected()[0].center()[1], 3.0);
    }

    #[test]
    fn dimension_errors() {
        let x0 = Zonotope::axis_box(DVector::zeros(2), &[1.0, 1.0]).unwrap();
        let zero3 = Zonotope::point(DVector::zeros(3));
        let d3 = DMatrix::identity(3, 3);
        assert!(propagate(&d3, &x0, &zero3, 3, &no_reduce()).is_err());
        let d2 = DMatrix::identity(2, 2);
        assert!(propagate(&d2, &x0, &zero3, 3, &no_reduce()).is_err());
        let zero2 = Zonotope::point(DVector::zeros(2));
        assert!(matches!(
            propagate(&d2, &x0, &zero2, 0, &no_reduce()),
            Err(ReachError::EmptyHorizon)
        ));
    }
}
