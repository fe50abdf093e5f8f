//! Planar polygons and simplices: the intermediate shapes between a 2-D
//! zonotope and the simplex integrals.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Simple polygon with counter-clockwise vertices (signed area > 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolygonRepr", into = "PolygonRepr")]
pub struct Polygon2D {
    vertices: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct PolygonRepr {
    vertices: Vec<[f64; 2]>,
}

impl From<Polygon2D> for PolygonRepr {
    fn from(p: Polygon2D) -> Self {
        PolygonRepr {
            vertices: p.vertices,
        }
    }
}

impl TryFrom<PolygonRepr> for Polygon2D {
    type Error = String;

    fn try_from(repr: PolygonRepr) -> Result<Self, String> {
        Polygon2D::new(repr.vertices).map_err(|e| e.to_string())
    }
}

fn shoelace(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = vertices[i];
        let [x1, y1] = vertices[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}

fn segments_properly_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    };
    let d1 = orient(a, b, c);
    let d2 = orient(a, b, d);
    let d3 = orient(c, d, a);
    let d4 = orient(c, d, b);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

impl Polygon2D {
    /// Validate vertex count, orientation and simplicity.
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::InvalidPolygon(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            if a == b {
                return Err(GeometryError::InvalidPolygon(format!(
                    "repeated vertex at index {i}"
                )));
            }
        }
        if shoelace(&vertices) <= 0.0 {
            return Err(GeometryError::InvalidPolygon(
                "vertices must be counter-clockwise with positive area".to_string(),
            ));
        }
        // non-adjacent edge crossings only; shared endpoints are fine
        for i in 0..n {
            for j in i + 1..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_properly_intersect(
                    vertices[i],
                    vertices[(i + 1) % n],
                    vertices[j],
                    vertices[(j + 1) % n],
                ) {
                    return Err(GeometryError::InvalidPolygon(format!(
                        "edges {i} and {j} intersect"
                    )));
                }
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Shoelace area (positive by the CCW invariant).
    pub fn area(&self) -> f64 {
        shoelace(&self.vertices)
    }

    /// Area centroid.
    pub fn centroid(&self) -> [f64; 2] {
        let n = self.vertices.len();
        let a = self.area();
        let mut cx = 0.0;
        let mut cy = 0.0;
        for i in 0..n {
            let [x0, y0] = self.vertices[i];
            let [x1, y1] = self.vertices[(i + 1) % n];
            let w = x0 * y1 - x1 * y0;
            cx += (x0 + x1) * w;
            cy += (y0 + y1) * w;
        }
        [cx / (6.0 * a), cy / (6.0 * a)]
    }

    /// Fan triangulation from the centroid; one triangle per edge.
    pub fn triangulate(&self) -> Vec<Simplex> {
        self.triangulate_from(self.centroid())
    }

    /// Fan triangulation from an explicit apex (must see every edge, which
    /// holds for any interior point of a convex polygon).
    pub fn triangulate_from(&self, apex: [f64; 2]) -> Vec<Simplex> {
        let n = self.vertices.len();
        (0..n)
            .map(|i| Simplex::triangle(apex, self.vertices[i], self.vertices[(i + 1) % n]))
            .collect()
    }
}

/// d+1 points in dimension d.
#[derive(Debug, Clone, PartialEq)]
pub struct Simplex {
    vertices: Vec<DVector<f64>>,
}

impl Simplex {
    pub fn new(vertices: Vec<DVector<f64>>) -> Result<Self, GeometryError> {
        if vertices.is_empty() {
            return Err(GeometryError::DimensionMismatch(
                "simplex needs at least one vertex".to_string(),
            ));
        }
        let d = vertices[0].len();
        if vertices.len() != d + 1 || vertices.iter().any(|v| v.len() != d) {
            return Err(GeometryError::DimensionMismatch(format!(
                "simplex in dimension {d} needs exactly {} vertices of that dimension",
                d + 1
            )));
        }
        Ok(Self { vertices })
    }

    pub fn triangle(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Self {
        Self {
            vertices: vec![
                DVector::from_row_slice(&a),
                DVector::from_row_slice(&b),
                DVector::from_row_slice(&c),
            ],
        }
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    /// `|det([v1 - v0, ..., vd - v0])| / d!`
    pub fn volume(&self) -> f64 {
        let d = self.dim();
        let m =
            nalgebra::DMatrix::from_fn(d, d, |i, j| self.vertices[j + 1][i] - self.vertices[0][i]);
        let mut fact = 1.0;
        for k in 2..=d {
            fact *= k as f64;
        }
        m.determinant().abs() / fact
    }
}
