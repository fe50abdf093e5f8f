//! Zonotopes: center + generator matrix, the set representation used for
//! initial sets, disturbance sets and reach sets.
//!
//! A zonotope is `{ c + G·beta : beta in [-1,1]^g }`. The class is closed
//! under linear maps and Minkowski sums, which is what makes the reach-set
//! recursion exact.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::polygon::Polygon2D;
use crate::error::GeometryError;

/// Centrally symmetric convex set `c + G·[-1,1]^g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ZonotopeRepr", into = "ZonotopeRepr")]
pub struct Zonotope {
    center: DVector<f64>,
    /// d x g matrix; columns are generator vectors. g = 0 means a point.
    generators: DMatrix<f64>,
}

/// JSON form: `{"center": [...], "generators": [[col], ...]}`.
#[derive(Serialize, Deserialize)]
struct ZonotopeRepr {
    center: Vec<f64>,
    generators: Vec<Vec<f64>>,
}

impl From<Zonotope> for ZonotopeRepr {
    fn from(z: Zonotope) -> Self {
        let generators = z
            .generators
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect();
        ZonotopeRepr {
            center: z.center.iter().copied().collect(),
            generators,
        }
    }
}

impl TryFrom<ZonotopeRepr> for Zonotope {
    type Error = String;

    fn try_from(repr: ZonotopeRepr) -> Result<Self, String> {
        let d = repr.center.len();
        let g = repr.generators.len();
        let mut m = DMatrix::zeros(d, g);
        for (j, col) in repr.generators.iter().enumerate() {
            if col.len() != d {
                return Err(format!(
                    "generator column {j} has length {} but the center has dimension {d}",
                    col.len()
                ));
            }
            for (i, v) in col.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Zonotope::new(DVector::from_vec(repr.center), m).map_err(|e| e.to_string())
    }
}

impl Zonotope {
    /// Build from a center and a d x g generator matrix.
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Result<Self, GeometryError> {
        if generators.nrows() != center.len() {
            return Err(GeometryError::DimensionMismatch(format!(
                "center has dimension {} but generators have {} rows",
                center.len(),
                generators.nrows()
            )));
        }
        Ok(Self { center, generators })
    }

    /// A point (zero generators).
    pub fn point(center: DVector<f64>) -> Self {
        let d = center.len();
        Self {
            center,
            generators: DMatrix::zeros(d, 0),
        }
    }

    /// Axis-aligned box: one generator per non-zero half-width.
    pub fn axis_box(center: DVector<f64>, half_widths: &[f64]) -> Result<Self, GeometryError> {
        if half_widths.len() != center.len() {
            return Err(GeometryError::DimensionMismatch(format!(
                "center has dimension {} but {} half-widths were given",
                center.len(),
                half_widths.len()
            )));
        }
        let d = center.len();
        let cols: Vec<usize> = (0..d).filter(|&i| half_widths[i] != 0.0).collect();
        let mut gens = DMatrix::zeros(d, cols.len());
        for (j, &i) in cols.iter().enumerate() {
            gens[(i, j)] = half_widths[i];
        }
        Ok(Self {
            center,
            generators: gens,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.ncols()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn generators(&self) -> &DMatrix<f64> {
        &self.generators
    }

    /// Image under a linear map: `M·Z = { M·c + (M·G)·beta }`. Exact.
    pub fn linear_map(&self, m: &DMatrix<f64>) -> Result<Zonotope, GeometryError> {
        if m.ncols() != self.dim() {
            return Err(GeometryError::DimensionMismatch(format!(
                "map has {} columns but the zonotope has dimension {}",
                m.ncols(),
                self.dim()
            )));
        }
        Ok(Zonotope {
            center: m * &self.center,
            generators: m * &self.generators,
        })
    }

    /// Minkowski sum: centers add, generator matrices concatenate.
    pub fn minkowski_sum(&self, other: &Zonotope) -> Result<Zonotope, GeometryError> {
        if self.dim() != other.dim() {
            return Err(GeometryError::DimensionMismatch(format!(
                "dimensions {} and {} differ",
                self.dim(),
                other.dim()
            )));
        }
        let d = self.dim();
        let g1 = self.num_generators();
        let g2 = other.num_generators();
        let generators = DMatrix::from_fn(d, g1 + g2, |i, j| {
            if j < g1 {
                self.generators[(i, j)]
            } else {
                other.generators[(i, j - g1)]
            }
        });
        Ok(Zonotope {
            center: &self.center + &other.center,
            generators,
        })
    }

    /// Support function `h(Z, dir) = dir·c + sum_j |dir·g_j|`.
    pub fn support(&self, dir: &DVector<f64>) -> f64 {
        let mut h = dir.dot(&self.center);
        for col in self.generators.column_iter() {
            h += dir.dot(&col).abs();
        }
        h
    }

    /// Support-function membership test over a sampled direction set.
    /// Necessary conditions only, but exact in the limit of dense sampling.
    pub fn contains_point_sampled(
        &self,
        p: &DVector<f64>,
        dirs: &[DVector<f64>],
        tol: f64,
    ) -> bool {
        dirs.iter().all(|dir| dir.dot(p) <= self.support(dir) + tol)
    }

    /// Row selection of center and generators; exact projection.
    pub fn project(&self, dims: &[usize]) -> Result<Zonotope, GeometryError> {
        let d = self.dim();
        for &i in dims {
            if i >= d {
                return Err(GeometryError::IndexOutOfRange { index: i, dim: d });
            }
        }
        let center = DVector::from_fn(dims.len(), |i, _| self.center[dims[i]]);
        let generators = DMatrix::from_fn(dims.len(), self.num_generators(), |i, j| {
            self.generators[(dims[i], j)]
        });
        Ok(Zonotope { center, generators })
    }

    /// Girard-style order reduction: keep the `target - d` generators that
    /// are farthest from being axis-aligned intervals, replace the rest by
    /// their interval hull. The result contains `self`.
    pub fn reduce_order(&self, target: usize) -> Result<Zonotope, GeometryError> {
        let d = self.dim();
        if target < d {
            return Err(GeometryError::ReductionTarget { target, dim: d });
        }
        let g = self.num_generators();
        if g <= target {
            return Ok(self.clone());
        }
        let keep = target - d;
        let mut order: Vec<usize> = (0..g).collect();
        let score = |j: usize| {
            let col = self.generators.column(j);
            let l1: f64 = col.iter().map(|v| v.abs()).sum();
            let linf: f64 = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            l1 - linf
        };
        order.sort_by(|&a, &b| {
            score(b)
                .partial_cmp(&score(a))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let kept = &order[..keep];
        let boxed = &order[keep..];
        let mut half_widths = vec![0.0f64; d];
        for &j in boxed {
            for i in 0..d {
                half_widths[i] += self.generators[(i, j)].abs();
            }
        }
        let box_cols: Vec<usize> = (0..d).filter(|&i| half_widths[i] != 0.0).collect();
        let generators = DMatrix::from_fn(d, keep + box_cols.len(), |i, j| {
            if j < keep {
                self.generators[(i, kept[j])]
            } else if i == box_cols[j - keep] {
                half_widths[i]
            } else {
                0.0
            }
        });
        Ok(Zonotope {
            center: self.center.clone(),
            generators,
        })
    }

    /// Volume: `2^d * sum over d-subsets S of |det(G_S)|`; 0 when g < d or
    /// the generators are rank deficient.
    pub fn volume(&self) -> f64 {
        let d = self.dim();
        let g = self.num_generators();
        if d == 0 || g < d {
            return 0.0;
        }
        let mut idx: Vec<usize> = (0..d).collect();
        let mut total = 0.0;
        loop {
            let sub = self.generators.select_columns(idx.iter());
            total += sub.determinant().abs();
            // next d-combination of 0..g in lexicographic order
            let mut i = d;
            loop {
                if i == 0 {
                    return total * 2f64.powi(d as i32);
                }
                i -= 1;
                if idx[i] != i + g - d {
                    break;
                }
            }
            idx[i] += 1;
            for k in i + 1..d {
                idx[k] = idx[k - 1] + 1;
            }
        }
    }

    /// Vertex enumeration for full-dimensional 2-D zonotopes: sort the
    /// generators by angle and walk the boundary. `2g` vertices for
    /// generators in general position, counter-clockwise.
    pub fn vertices_2d(&self) -> Result<Polygon2D, GeometryError> {
        if self.dim() != 2 {
            return Err(GeometryError::DimensionMismatch(format!(
                "vertex enumeration requires dimension 2, got {}",
                self.dim()
            )));
        }
        // flip generators into the upper half-plane; zonotopes are invariant
        // under generator sign changes
        let mut gens: Vec<[f64; 2]> = Vec::new();
        let mut scale = 0.0f64;
        for col in self.generators.column_iter() {
            let (x, y) = (col[0], col[1]);
            if x == 0.0 && y == 0.0 {
                continue;
            }
            scale = scale.max(x.abs().max(y.abs()));
            if y < 0.0 || (y == 0.0 && x < 0.0) {
                gens.push([-x, -y]);
            } else {
                gens.push([x, y]);
            }
        }
        let mut max_cross = 0.0f64;
        for i in 0..gens.len() {
            for j in i + 1..gens.len() {
                let cross = gens[i][0] * gens[j][1] - gens[i][1] * gens[j][0];
                max_cross = max_cross.max(cross.abs());
            }
        }
        if gens.len() < 2 || max_cross <= 1e-12 * scale * scale {
            return Err(GeometryError::Degenerate(
                "zonotope has rank < 2 in the plane".to_string(),
            ));
        }
        gens.sort_by(|a, b| {
            let aa = a[1].atan2(a[0]);
            let ab = b[1].atan2(b[0]);
            aa.partial_cmp(&ab).unwrap_or(std::cmp::Ordering::Equal)
        });
        // lowest vertex, then accumulate 2*g_i in angular order for one half
        // of the boundary; the other half is the central reflection
        let g = gens.len();
        let (cx, cy) = (self.center[0], self.center[1]);
        let mut vx = cx - gens.iter().map(|v| v[0]).sum::<f64>();
        let mut vy = cy - gens.iter().map(|v| v[1]).sum::<f64>();
        let mut half: Vec<[f64; 2]> = Vec::with_capacity(g);
        half.push([vx, vy]);
        for gen in gens.iter().take(g - 1) {
            vx += 2.0 * gen[0];
            vy += 2.0 * gen[1];
            half.push([vx, vy]);
        }
        let mut verts = half.clone();
        verts.extend(half.iter().map(|v| [2.0 * cx - v[0], 2.0 * cy - v[1]]));
        Polygon2D::new(verts)
    }
}

/// Deterministic unit direction sample for support-function checks.
pub fn sample_directions(dim: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = Vec::with_capacity(count);
    while dirs.len() < count {
        let v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-6 {
            dirs.push(v / n);
        }
    }
    dirs
}
