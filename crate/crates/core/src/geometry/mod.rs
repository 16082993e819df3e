//! Implicit surfaces and the discrete surface Γ_h.
//!
//! A surface is the zero level set of a function φ. The discrete surface is
//! the zero set of the P1 interpolant φ_h on the background mesh: a planar
//! triangle or quadrilateral inside every cut tetrahedron.

mod cut;
mod quadrature;

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use crate::mesh::BackgroundMesh;
use crate::{Error, Point, Result};

pub use cut::{classify_tet, extract_cut_polygon, perturb_zero, CutPolygon, TetClass, ZERO_SHIFT};
pub use quadrature::{
    bulk_quadrature, surface_quadrature, tet_rule, triangle_rule, QuadratureRule,
};

/// User supplied level-set function.
pub type LevelSetFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

/// A scalar function whose zero level set is the surface.
///
/// The surface lies where φ = 0, with φ < 0 inside.
#[derive(Clone)]
pub enum LevelSet {
    /// φ(x) = |x - center| - radius
    Sphere { radius: f64, center: Point },
    /// φ(x) = x₁²/4 + x₂² + 4x₃²/(1 + ½ sin(πx₁))² - 1
    IdealizedCell,
    UserAnalytic(LevelSetFn),
}

impl fmt::Debug for LevelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelSet::Sphere { radius, center } => f
                .debug_struct("Sphere")
                .field("radius", radius)
                .field("center", center)
                .finish(),
            LevelSet::IdealizedCell => f.write_str("IdealizedCell"),
            LevelSet::UserAnalytic(_) => f.write_str("UserAnalytic"),
        }
    }
}

impl LevelSet {
    pub fn unit_sphere() -> Self {
        LevelSet::Sphere { radius: 1.0, center: Point::zeros() }
    }

    pub fn eval(&self, x: &Point) -> f64 {
        match self {
            LevelSet::Sphere { radius, center } => (x - center).norm() - radius,
            LevelSet::IdealizedCell => {
                let s = 1.0 + 0.5 * (PI * x[0]).sin();
                0.25 * x[0] * x[0] + x[1] * x[1] + 4.0 * x[2] * x[2] / (s * s) - 1.0
            }
            LevelSet::UserAnalytic(f) => f(x),
        }
    }

    /// Gradient of φ; analytic for the built-in surfaces, central differences otherwise.
    pub fn gradient(&self, x: &Point) -> Point {
        match self {
            LevelSet::Sphere { center, .. } => {
                let d = x - center;
                let n = d.norm();
                if n > 0.0 {
                    d / n
                } else {
                    Point::zeros()
                }
            }
            LevelSet::IdealizedCell => {
                let s = 1.0 + 0.5 * (PI * x[0]).sin();
                let ds = 0.5 * PI * (PI * x[0]).cos();
                Point::new(
                    0.5 * x[0] - 8.0 * x[2] * x[2] * ds / (s * s * s),
                    2.0 * x[1],
                    8.0 * x[2] / (s * s),
                )
            }
            LevelSet::UserAnalytic(f) => {
                let delta = 1e-6;
                let mut g = Point::zeros();
                for d in 0..3 {
                    let mut xp = *x;
                    let mut xm = *x;
                    xp[d] += delta;
                    xm[d] -= delta;
                    g[d] = (f(&xp) - f(&xm)) / (2.0 * delta);
                }
                g
            }
        }
    }
}

/// Nodal interpolant φ_h(node) = φ(node) on every background mesh node.
pub fn interpolate_p1(levelset: &LevelSet, mesh: &BackgroundMesh) -> Result<Vec<f64>> {
    mesh.nodes
        .iter()
        .enumerate()
        .map(|(node, x)| {
            let value = levelset.eval(x);
            if value.is_finite() {
                Ok(value)
            } else {
                Err(Error::NonFiniteLevelSet { node, value })
            }
        })
        .collect()
}

/// Writes Γ_h as an ASCII OFF triangle soup (one vertex triple per triangle).
pub fn write_triangle_soup<W: Write>(out: &mut W, polygons: &[&CutPolygon]) -> Result<()> {
    let ntri: usize = polygons.iter().map(|p| p.triangles.len()).sum();
    writeln!(out, "OFF")?;
    writeln!(out, "{} {} 0", 3 * ntri, ntri)?;
    for p in polygons {
        for t in &p.triangles {
            for &v in t {
                let x = p.vertices[v];
                writeln!(out, "{:.12e} {:.12e} {:.12e}", x[0], x[1], x[2])?;
            }
        }
    }
    for i in 0..ntri {
        writeln!(out, "3 {} {} {}", 3 * i, 3 * i + 1, 3 * i + 2)?;
    }
    Ok(())
}
