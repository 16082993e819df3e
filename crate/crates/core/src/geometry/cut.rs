use nalgebra::Matrix3;

use crate::Point;

/// Exact zeros of φ_h are moved to `-ZERO_SHIFT * h` before any sign test.
pub const ZERO_SHIFT: f64 = 1e-13;

/// Polygons with area below `DEGENERATE_AREA * diam²` get zero quadrature weight.
const DEGENERATE_AREA: f64 = 1e-14;

/// Applies the zero-value convention: an exact zero becomes a tiny negative value.
#[inline]
pub fn perturb_zero(value: f64, scale: f64) -> f64 {
    if value == 0.0 {
        -ZERO_SHIFT * scale
    } else {
        value
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TetClass {
    Negative,
    Positive,
    Cut,
}

/// Sign classification of a tetrahedron from its four nodal level-set values.
///
/// Exact zeros count as negative (see [`perturb_zero`]), so `(0, 1, 1, 1)` is
/// cut and `(0, -1, -1, -1)` is negative.
pub fn classify_tet(values: &[f64; 4]) -> TetClass {
    let negative = values.iter().filter(|&&v| v <= 0.0).count();
    match negative {
        0 => TetClass::Positive,
        4 => TetClass::Negative,
        _ => TetClass::Cut,
    }
}

/// The piece of Γ_h inside one cut tetrahedron.
#[derive(Clone, Debug)]
pub struct CutPolygon {
    pub parent_tet: usize,
    /// 3 or 4 coplanar points, counter-clockwise around `normal`.
    pub vertices: Vec<Point>,
    /// Local tet vertex pair (negative end, positive end) of the edge each vertex lies on.
    pub edges: Vec<(usize, usize)>,
    /// Fan triangulation from vertex 0.
    pub triangles: Vec<[usize; 3]>,
    /// ∇φ_h / |∇φ_h| of the parent tet; points to the positive side.
    pub normal: Point,
    pub area: f64,
    pub degenerate: bool,
}

impl CutPolygon {
    pub fn triangle_area(&self, t: &[usize; 3]) -> f64 {
        let a = self.vertices[t[0]];
        let b = self.vertices[t[1]];
        let c = self.vertices[t[2]];
        0.5 * (b - a).cross(&(c - a)).norm()
    }
}

fn tet_diameter(x: &[Point; 4]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            d = d.max((x[i] - x[j]).norm());
        }
    }
    d
}

/// Gradient of the linear function taking `values` at the tet vertices.
pub(crate) fn linear_gradient(x: &[Point; 4], values: &[f64; 4]) -> Option<Point> {
    let jac = Matrix3::from_rows(&[
        (x[1] - x[0]).transpose(),
        (x[2] - x[0]).transpose(),
        (x[3] - x[0]).transpose(),
    ]);
    let rhs = Point::new(values[1] - values[0], values[2] - values[0], values[3] - values[0]);
    jac.lu().solve(&rhs)
}

/// Marching-tetrahedra extraction of {φ_h = 0} inside one tetrahedron.
///
/// Returns `None` unless the tet is cut. Each vertex is the linear zero
/// crossing `x_a + φ_a / (φ_a - φ_b) (x_b - x_a)` on an edge whose endpoint
/// signs differ, always evaluated from the negative end `a`.
pub fn extract_cut_polygon(x: &[Point; 4], values: &[f64; 4], parent_tet: usize) -> Option<CutPolygon> {
    let diam = tet_diameter(x);
    let phi: [f64; 4] = std::array::from_fn(|i| perturb_zero(values[i], diam));
    if classify_tet(&phi) != TetClass::Cut {
        return None;
    }

    let mut vertices = Vec::with_capacity(4);
    let mut edges = Vec::with_capacity(4);
    for a in 0..4 {
        for b in 0..4 {
            if phi[a] < 0.0 && phi[b] > 0.0 {
                let t = phi[a] / (phi[a] - phi[b]);
                vertices.push(x[a] + t * (x[b] - x[a]));
                edges.push((a, b));
            }
        }
    }
    debug_assert!(vertices.len() == 3 || vertices.len() == 4);

    let grad = linear_gradient(x, &phi)?;
    let gnorm = grad.norm();
    if gnorm == 0.0 || !gnorm.is_finite() {
        return None;
    }
    let normal = grad / gnorm;

    // Order counter-clockwise around the normal, starting from the smallest angle.
    let centroid = vertices.iter().fold(Point::zeros(), |acc, v| acc + v) / vertices.len() as f64;
    let helper = if normal[0].abs() < 0.9 { Point::x() } else { Point::y() };
    let e1 = normal.cross(&helper).normalize();
    let e2 = normal.cross(&e1);
    let mut order: Vec<(f64, usize)> = vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let d = v - centroid;
            (d.dot(&e2).atan2(d.dot(&e1)), i)
        })
        .collect();
    order.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
    let vertices: Vec<Point> = order.iter().map(|&(_, i)| vertices[i]).collect();
    let edges: Vec<(usize, usize)> = order.iter().map(|&(_, i)| edges[i]).collect();

    let triangles: Vec<[usize; 3]> = (1..vertices.len() - 1).map(|k| [0, k, k + 1]).collect();
    let mut poly = CutPolygon {
        parent_tet,
        vertices,
        edges,
        triangles,
        normal,
        area: 0.0,
        degenerate: false,
    };
    poly.area = poly.triangles.iter().map(|t| poly.triangle_area(t)).sum();
    if poly.area < DEGENERATE_AREA * diam * diam {
        log::debug!("degenerate cut polygon in tet {parent_tet} (area {:e})", poly.area);
        poly.degenerate = true;
    }
    Some(poly)
}
