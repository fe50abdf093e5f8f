//! Set-based geometry: zonotopes, polygons and simplices.

mod polygon;
mod zonotope;

pub use polygon::{Polygon2D, Simplex};
pub use zonotope::{sample_directions, Zonotope};
