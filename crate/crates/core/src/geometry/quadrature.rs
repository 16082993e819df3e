use super::CutPolygon;
use crate::{Error, Point, Result};

/// Points and positive weights; the weights sum to the measure of the domain.
#[derive(Clone, Debug, Default)]
pub struct QuadratureRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

const TRI_DEG2: [([f64; 3], f64); 3] = [
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

// Dunavant, 6 points, exact for total degree 4.
const D4_A: f64 = 0.445_948_490_915_964_886_32;
const D4_WA: f64 = 0.223_381_589_678_011_465_70;
const D4_B: f64 = 0.091_576_213_509_770_743_46;
const D4_WB: f64 = 0.109_951_743_655_321_867_64;

const TRI_DEG4: [([f64; 3], f64); 6] = [
    ([1.0 - 2.0 * D4_A, D4_A, D4_A], D4_WA),
    ([D4_A, 1.0 - 2.0 * D4_A, D4_A], D4_WA),
    ([D4_A, D4_A, 1.0 - 2.0 * D4_A], D4_WA),
    ([1.0 - 2.0 * D4_B, D4_B, D4_B], D4_WB),
    ([D4_B, 1.0 - 2.0 * D4_B, D4_B], D4_WB),
    ([D4_B, D4_B, 1.0 - 2.0 * D4_B], D4_WB),
];

const TET_DEG1: [([f64; 4], f64); 1] = [([0.25; 4], 1.0)];

// (5 - √5)/20 and (5 + 3√5)/20
const T2_B: f64 = 0.138_196_601_125_010_5;
const T2_A: f64 = 0.585_410_196_624_968_5;

const TET_DEG2: [([f64; 4], f64); 4] = [
    ([T2_A, T2_B, T2_B, T2_B], 0.25),
    ([T2_B, T2_A, T2_B, T2_B], 0.25),
    ([T2_B, T2_B, T2_A, T2_B], 0.25),
    ([T2_B, T2_B, T2_B, T2_A], 0.25),
];

/// Reference triangle rule in barycentric coordinates; weights sum to 1.
pub fn triangle_rule(degree: u32) -> Result<&'static [([f64; 3], f64)]> {
    match degree {
        2 => Ok(&TRI_DEG2),
        4 => Ok(&TRI_DEG4),
        _ => Err(Error::UnsupportedQuadrature { degree, domain: "triangle" }),
    }
}

/// Reference tetrahedron rule in barycentric coordinates; weights sum to 1.
pub fn tet_rule(degree: u32) -> Result<&'static [([f64; 4], f64)]> {
    match degree {
        1 => Ok(&TET_DEG1),
        2 => Ok(&TET_DEG2),
        _ => Err(Error::UnsupportedQuadrature { degree, domain: "tetrahedron" }),
    }
}

/// Rule on each fan triangle of the polygon. Degenerate polygons keep their
/// points but get zero weights.
pub fn surface_quadrature(polygon: &CutPolygon, degree: u32) -> Result<QuadratureRule> {
    let rule = triangle_rule(degree)?;
    let mut out = QuadratureRule::default();
    for t in &polygon.triangles {
        let [a, b, c] = t.map(|i| polygon.vertices[i]);
        let area = if polygon.degenerate { 0.0 } else { polygon.triangle_area(t) };
        for (bary, w) in rule {
            out.points.push(bary[0] * a + bary[1] * b + bary[2] * c);
            out.weights.push(w * area);
        }
    }
    Ok(out)
}

/// Rule on the full tetrahedron volume.
pub fn bulk_quadrature(x: &[Point; 4], degree: u32) -> Result<QuadratureRule> {
    let rule = tet_rule(degree)?;
    let vol = (x[1] - x[0]).cross(&(x[2] - x[0])).dot(&(x[3] - x[0])).abs() / 6.0;
    let mut out = QuadratureRule::default();
    for (bary, w) in rule {
        out.points.push(bary[0] * x[0] + bary[1] * x[1] + bary[2] * x[2] + bary[3] * x[3]);
        out.weights.push(w * vol);
    }
    Ok(out)
}
