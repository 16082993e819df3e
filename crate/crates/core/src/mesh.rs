//! Background tetrahedral mesh in a band around the surface, and the active
//! mesh of cut elements that carries the P1 degrees of freedom.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::geometry::{
    bulk_quadrature, classify_tet, extract_cut_polygon, perturb_zero, surface_quadrature, CutPolygon,
    LevelSet, QuadratureRule, TetClass,
};
use crate::{Error, Point, Result};

/// Quadrature degree used on surface triangles.
pub const SURFACE_DEGREE: u32 = 4;
/// Quadrature degree used on cut tetrahedra.
pub const BULK_DEGREE: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min: Point::from(min), max: Point::from(max) }
    }

    /// [-5/3, 5/3]³
    pub fn sphere_box() -> Self {
        let a = 5.0 / 3.0;
        Self::new([-a; 3], [a; 3])
    }

    /// [-2, 2] x [-4/3, 4/3] x [-4/3, 4/3]
    pub fn cell_box() -> Self {
        let b = 4.0 / 3.0;
        Self::new([-2.0, -b, -b], [2.0, b, b])
    }

    pub fn extent(&self) -> Point {
        self.max - self.min
    }
}

// Kuhn split of the unit cube along the 000-111 diagonal; corner index bits are (x, y, z).
const KUHN: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

#[derive(Clone, Debug)]
pub struct BackgroundMesh {
    pub domain: Aabb,
    pub level: u32,
    pub h: f64,
    /// Number of cubes of the full grid along each axis.
    pub cells: [usize; 3],
    pub nodes: Vec<Point>,
    pub tets: Vec<[usize; 4]>,
    /// Materialized cubes as grid indices (i, j, k).
    pub cubes: Vec<[usize; 3]>,
}

/// Cube edge at refinement level ℓ: (shortest box side) / 2^(ℓ+1).
pub fn mesh_size(domain: &Aabb, level: u32) -> f64 {
    let e = domain.extent();
    e.min() / f64::from(1u32 << (level + 1))
}

/// Uniform Kuhn-split cube grid, materialized only for cubes that are cut by
/// the level set or whose center satisfies |φ| ≤ 2√3 h.
pub fn build_mesh(domain: Aabb, level: u32, levelset: &LevelSet) -> Result<BackgroundMesh> {
    if level < 1 {
        return Err(Error::InvalidMesh("refinement level must be at least 1".into()));
    }
    let ext = domain.extent();
    if ext.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidMesh(format!("empty box {domain:?}")));
    }
    let h = mesh_size(&domain, level);
    let mut cells = [0usize; 3];
    for d in 0..3 {
        let n = ext[d] / h;
        let r = n.round();
        if (n - r).abs() > 1e-9 * n {
            return Err(Error::InvalidMesh(format!(
                "box side {} is not a multiple of h = {h}",
                ext[d]
            )));
        }
        cells[d] = r as usize;
    }
    let [nx, ny, nz] = cells;
    let grid_point = |i: usize, j: usize, k: usize| {
        Point::new(
            domain.min[0] + i as f64 * h,
            domain.min[1] + j as f64 * h,
            domain.min[2] + k as f64 * h,
        )
    };
    let gidx = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;

    // φ at every grid node; values are used for cube selection only.
    let phi: Vec<f64> = (0..(nz + 1) * (ny + 1) * (nx + 1))
        .into_par_iter()
        .map(|g| {
            let i = g % (nx + 1);
            let j = (g / (nx + 1)) % (ny + 1);
            let k = g / ((nx + 1) * (ny + 1));
            levelset.eval(&grid_point(i, j, k))
        })
        .collect();
    let band = 2.0 * 3f64.sqrt() * h;

    let mut cubes = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let mut neg = false;
                let mut pos = false;
                for c in 0..8 {
                    let v = perturb_zero(phi[gidx(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2))], h);
                    if v < 0.0 {
                        neg = true;
                    } else {
                        pos = true;
                    }
                }
                let center = grid_point(i, j, k) + Point::repeat(0.5 * h);
                if (neg && pos) || levelset.eval(&center).abs() <= band {
                    cubes.push([i, j, k]);
                }
            }
        }
    }
    if cubes.is_empty() {
        return Err(Error::InvalidMesh("no cube of the box lies in the band around the surface".into()));
    }

    let mut node_of_grid = vec![usize::MAX; phi.len()];
    let mut nodes = Vec::new();
    let mut tets = Vec::with_capacity(6 * cubes.len());
    for &[i, j, k] in &cubes {
        let corner: [usize; 8] = std::array::from_fn(|c| {
            let (ci, cj, ck) = (i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2));
            let g = gidx(ci, cj, ck);
            if node_of_grid[g] == usize::MAX {
                node_of_grid[g] = nodes.len();
                nodes.push(grid_point(ci, cj, ck));
            }
            node_of_grid[g]
        });
        for t in &KUHN {
            tets.push(t.map(|c| corner[c]));
        }
    }

    Ok(BackgroundMesh { domain, level, h, cells, nodes, tets, cubes })
}

impl BackgroundMesh {
    pub fn tet_vertices(&self, tet: usize) -> [Point; 4] {
        self.tets[tet].map(|n| self.nodes[n])
    }
}

/// One cut tetrahedron with its geometry and local P1 data.
#[derive(Clone, Debug)]
pub struct CutElement {
    pub tet: usize,
    pub nodes: [usize; 4],
    pub dofs: [usize; 4],
    pub vertices: [Point; 4],
    /// Constant gradients of the four barycentric basis functions.
    pub grads: [Point; 4],
    pub volume: f64,
    /// Largest vertex distance (circumscribed cube diagonal for Kuhn tets).
    pub diameter: f64,
    pub polygon: CutPolygon,
    pub surface_rule: QuadratureRule,
    /// Basis values at each surface quadrature point.
    pub surface_basis: Vec<[f64; 4]>,
    pub bulk_rule: QuadratureRule,
}

impl CutElement {
    pub fn normal(&self) -> Point {
        self.polygon.normal
    }

    /// Barycentric coordinates of `x` with respect to this tetrahedron.
    pub fn barycentric(&self, x: &Point) -> [f64; 4] {
        let d = x - self.vertices[0];
        let l1 = self.grads[1].dot(&d);
        let l2 = self.grads[2].dot(&d);
        let l3 = self.grads[3].dot(&d);
        [1.0 - l1 - l2 - l3, l1, l2, l3]
    }

    /// Tangential basis gradients P_h ∇ψ_i, P_h = I - n nᵀ.
    pub fn tangential_grads(&self) -> [Point; 4] {
        let n = self.normal();
        self.grads.map(|g| g - n * n.dot(&g))
    }

    /// Normal derivatives n_h · ∇ψ_i.
    pub fn normal_derivatives(&self) -> [f64; 4] {
        let n = self.normal();
        self.grads.map(|g| n.dot(&g))
    }

    /// P1 interpolation of DOF values at each surface quadrature point.
    pub fn surface_values(&self, u: &[f64]) -> impl Iterator<Item = (f64, f64)> + '_ {
        let local = self.dofs.map(|d| u[d]);
        self.surface_basis
            .iter()
            .zip(&self.surface_rule.weights)
            .map(move |(b, &w)| (w, b[0] * local[0] + b[1] * local[1] + b[2] * local[2] + b[3] * local[3]))
    }
}

/// Cut elements T_h^Γ, the active node set and the dense DOF map.
#[derive(Clone, Debug)]
pub struct ActiveMesh {
    pub h: f64,
    pub elements: Vec<CutElement>,
    /// Sorted background node ids; position = DOF index.
    pub active_nodes: Vec<usize>,
    /// Background node id -> DOF index.
    pub dof_of_node: Vec<Option<usize>>,
    /// Coordinates of each DOF.
    pub dof_points: Vec<Point>,
    /// φ_h at each DOF (before the zero perturbation).
    pub phi: Vec<f64>,
}

fn basis_gradients(x: &[Point; 4]) -> Option<([Point; 4], f64)> {
    let jac = Matrix3::from_columns(&[x[1] - x[0], x[2] - x[0], x[3] - x[0]]);
    let det = jac.determinant();
    let inv = jac.try_inverse()?;
    let g1 = inv.row(0).transpose();
    let g2 = inv.row(1).transpose();
    let g3 = inv.row(2).transpose();
    Some(([-(g1 + g2 + g3), g1, g2, g3], det.abs() / 6.0))
}

/// Selects the cut elements of `mesh` for the nodal level-set values `phi_h`
/// and attaches their surface and bulk quadrature.
pub fn build_active_mesh(mesh: &BackgroundMesh, phi_h: &[f64]) -> Result<ActiveMesh> {
    if phi_h.len() != mesh.nodes.len() {
        return Err(Error::Dimension(format!(
            "{} level-set values for {} nodes",
            phi_h.len(),
            mesh.nodes.len()
        )));
    }
    let h = mesh.h;
    let cut: Vec<(usize, CutPolygon)> = mesh
        .tets
        .par_iter()
        .enumerate()
        .filter_map(|(t, nodes)| {
            let vals = nodes.map(|n| perturb_zero(phi_h[n], h));
            if classify_tet(&vals) != TetClass::Cut {
                return None;
            }
            extract_cut_polygon(&mesh.tet_vertices(t), &vals, t).map(|p| (t, p))
        })
        .collect();
    if cut.is_empty() {
        return Err(Error::SurfaceMissed);
    }

    let mut dof_of_node = vec![None; mesh.nodes.len()];
    for (t, _) in &cut {
        for &n in &mesh.tets[*t] {
            dof_of_node[n] = Some(0);
        }
    }
    let mut active_nodes = Vec::new();
    for (n, slot) in dof_of_node.iter_mut().enumerate() {
        if slot.is_some() {
            *slot = Some(active_nodes.len());
            active_nodes.push(n);
        }
    }

    let elements = cut
        .into_par_iter()
        .map(|(t, polygon)| {
            let nodes = mesh.tets[t];
            let vertices = mesh.tet_vertices(t);
            let (grads, volume) = basis_gradients(&vertices)
                .ok_or_else(|| Error::InvalidMesh(format!("degenerate tetrahedron {t}")))?;
            let mut diameter: f64 = 0.0;
            for i in 0..4 {
                for j in i + 1..4 {
                    diameter = diameter.max((vertices[i] - vertices[j]).norm());
                }
            }
            let surface_rule = surface_quadrature(&polygon, SURFACE_DEGREE)?;
            let bulk_rule = bulk_quadrature(&vertices, BULK_DEGREE)?;
            let mut el = CutElement {
                tet: t,
                nodes,
                dofs: nodes.map(|n| dof_of_node[n].expect("active node")),
                vertices,
                grads,
                volume,
                diameter,
                polygon,
                surface_rule,
                surface_basis: Vec::new(),
                bulk_rule,
            };
            el.surface_basis = el.surface_rule.points.iter().map(|x| el.barycentric(x)).collect();
            Ok(el)
        })
        .collect::<Result<Vec<_>>>()?;

    let dof_points = active_nodes.iter().map(|&n| mesh.nodes[n]).collect();
    let phi = active_nodes.iter().map(|&n| phi_h[n]).collect();
    Ok(ActiveMesh { h, elements, active_nodes, dof_of_node, dof_points, phi })
}

impl ActiveMesh {
    pub fn num_dofs(&self) -> usize {
        self.active_nodes.len()
    }

    /// Area of Γ_h.
    pub fn surface_area(&self) -> f64 {
        self.elements.iter().map(|e| e.surface_rule.total_weight()).sum()
    }

    /// Volume of Ω_h^Γ.
    pub fn bulk_volume(&self) -> f64 {
        self.elements.iter().map(|e| e.bulk_rule.total_weight()).sum()
    }

    /// Nodal interpolant of `f` on the active DOFs.
    pub fn interpolate(&self, f: impl Fn(&Point) -> f64) -> Vec<f64> {
        self.dof_points.iter().map(f).collect()
    }
}

/// Convenience: background mesh, nodal interpolant and active mesh in one call.
pub fn build_surface_mesh(domain: Aabb, level: u32, levelset: &LevelSet) -> Result<(BackgroundMesh, ActiveMesh)> {
    let mesh = build_mesh(domain, level, levelset)?;
    let phi_h = crate::geometry::interpolate_p1(levelset, &mesh)?;
    let active = build_active_mesh(&mesh, &phi_h)?;
    Ok((mesh, active))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::HashMap;

    #[test]
    fn sphere_mesh_size() {
        let m = build_mesh(Aabb::sphere_box(), 3, &LevelSet::unit_sphere()).unwrap();
        assert_relative_eq!(m.h, 10.0 / 3.0 / 16.0, epsilon = 1e-15);
        assert_relative_eq!(m.h, 0.208_333_333_333_333_3, epsilon = 1e-15);
        let m4 = build_mesh(Aabb::sphere_box(), 4, &LevelSet::unit_sphere()).unwrap();
        assert_eq!(m.h, 2.0 * m4.h);
    }

    #[test]
    fn level_zero_is_rejected() {
        assert!(build_mesh(Aabb::sphere_box(), 0, &LevelSet::unit_sphere()).is_err());
    }

    #[test]
    fn surface_outside_box_errors() {
        let ls = LevelSet::Sphere { radius: 1.0, center: Point::new(20.0, 0.0, 0.0) };
        assert!(build_mesh(Aabb::sphere_box(), 2, &ls).is_err());
    }

    #[test]
    fn all_positive_misses_surface() {
        let m = build_mesh(Aabb::sphere_box(), 2, &LevelSet::unit_sphere()).unwrap();
        let phi = vec![1.0; m.nodes.len()];
        assert!(matches!(build_active_mesh(&m, &phi), Err(Error::SurfaceMissed)));
    }

    #[test]
    fn faces_are_shared_by_at_most_two_tets() {
        let m = build_mesh(Aabb::sphere_box(), 2, &LevelSet::unit_sphere()).unwrap();
        let mut faces: HashMap<[usize; 3], usize> = HashMap::new();
        for t in &m.tets {
            for skip in 0..4 {
                let mut f = [0; 3];
                let mut k = 0;
                for (i, &n) in t.iter().enumerate() {
                    if i != skip {
                        f[k] = n;
                        k += 1;
                    }
                }
                f.sort_unstable();
                *faces.entry(f).or_default() += 1;
            }
        }
        assert!(faces.values().all(|&c| c == 1 || c == 2));
        assert!(faces.values().any(|&c| c == 2));
        // every tet has positive volume
        for t in 0..m.tets.len() {
            let (_, vol) = basis_gradients(&m.tet_vertices(t)).unwrap();
            assert_relative_eq!(vol, m.h.powi(3) / 6.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn active_mesh_dof_map_is_a_bijection() {
        let ls = LevelSet::unit_sphere();
        let (m, a) = build_surface_mesh(Aabb::sphere_box(), 2, &ls).unwrap();
        assert!(a.num_dofs() > 0 && a.num_dofs() < m.nodes.len());
        for (dof, &n) in a.active_nodes.iter().enumerate() {
            assert_eq!(a.dof_of_node[n], Some(dof));
        }
        let mapped = a.dof_of_node.iter().filter(|d| d.is_some()).count();
        assert_eq!(mapped, a.num_dofs());
        let mut used = vec![false; a.num_dofs()];
        for e in &a.elements {
            for &d in &e.dofs {
                used[d] = true;
            }
        }
        assert!(used.iter().all(|&u| u));
        assert!(a.bulk_volume() > 0.0);
        let box_volume = (10.0f64 / 3.0).powi(3);
        assert!(a.bulk_volume() <= box_volume);
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let ls = LevelSet::IdealizedCell;
        let (_, a) = build_surface_mesh(Aabb::cell_box(), 2, &ls).unwrap();
        let (_, b) = build_surface_mesh(Aabb::cell_box(), 2, &ls).unwrap();
        assert_eq!(a.active_nodes, b.active_nodes);
        assert_eq!(a.elements.len(), b.elements.len());
        for (x, y) in a.elements.iter().zip(&b.elements) {
            assert_eq!(x.tet, y.tet);
            assert_eq!(x.surface_rule.weights, y.surface_rule.weights);
        }
    }

    #[test]
    fn barycentric_basis_is_partition_of_unity() {
        let (_, a) = build_surface_mesh(Aabb::sphere_box(), 2, &LevelSet::unit_sphere()).unwrap();
        for e in a.elements.iter().take(50) {
            for b in &e.surface_basis {
                assert_relative_eq!(b.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
                assert!(b.iter().all(|&l| l > -1e-12 && l < 1.0 + 1e-12));
            }
            let g: Point = e.grads.iter().sum();
            assert!(g.norm() < 1e-12);
        }
    }
}
