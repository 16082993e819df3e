//! Bilinear forms and load vectors of the trace finite element discretization.
//!
//! Surface integrals run over Γ_h with the degree-4 rule attached to each cut
//! element; volumetric stabilization integrals run over the cut tetrahedra.
//! Element contributions are computed in parallel and merged in element
//! order, so results do not depend on the thread count.

mod sparse;

use rayon::prelude::*;

use crate::mesh::{ActiveMesh, CutElement};
use crate::physics::{f0, f0_prime, Mobility};
use crate::Point;

pub use sparse::CsrMatrix;

/// Pointwise coefficient: nodal values interpolated to quadrature points and
/// then passed through `map`.
pub struct Coefficient<'a> {
    pub values: &'a [f64],
    pub map: &'a (dyn Fn(f64) -> f64 + Sync),
}

fn assemble_elementwise<F>(active: &ActiveMesh, local: F) -> CsrMatrix
where
    F: Fn(&CutElement) -> [[f64; 4]; 4] + Sync,
{
    let n = active.num_dofs();
    let blocks: Vec<[[f64; 4]; 4]> = active.elements.par_iter().map(&local).collect();
    let mut trip = Vec::with_capacity(16 * blocks.len());
    for (e, block) in active.elements.iter().zip(&blocks) {
        for i in 0..4 {
            for j in 0..4 {
                trip.push((e.dofs[i], e.dofs[j], block[i][j]));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, trip)
}

fn load_elementwise<F>(active: &ActiveMesh, local: F) -> Vec<f64>
where
    F: Fn(&CutElement) -> [f64; 4] + Sync,
{
    let parts: Vec<[f64; 4]> = active.elements.par_iter().map(&local).collect();
    let mut out = vec![0.0; active.num_dofs()];
    for (e, part) in active.elements.iter().zip(&parts) {
        for i in 0..4 {
            out[e.dofs[i]] += part[i];
        }
    }
    out
}

/// Surface mass matrix (ψ_i, ψ_j)_{Γ_h}.
pub fn assemble_surface_mass(active: &ActiveMesh) -> CsrMatrix {
    assemble_elementwise(active, |e| {
        let mut m = [[0.0; 4]; 4];
        for (b, &w) in e.surface_basis.iter().zip(&e.surface_rule.weights) {
            for i in 0..4 {
                for j in 0..4 {
                    m[i][j] += w * b[i] * b[j];
                }
            }
        }
        m
    })
}

/// Surface stiffness (k P_h∇ψ_i, P_h∇ψ_j)_{Γ_h}; k ≡ 1 when no coefficient is given.
pub fn assemble_surface_stiffness(active: &ActiveMesh, coefficient: Option<&Coefficient<'_>>) -> CsrMatrix {
    assemble_elementwise(active, |e| {
        let weight: f64 = match coefficient {
            None => e.surface_rule.total_weight(),
            Some(k) => e.surface_values(k.values).map(|(w, c)| w * (k.map)(c)).sum(),
        };
        let g = e.tangential_grads();
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = weight * g[i].dot(&g[j]);
            }
        }
        m
    })
}

/// Mobility-weighted stiffness (M(c_h) ∇_Γ ψ_i, ∇_Γ ψ_j), with M evaluated at
/// quadrature points from the interpolated (unclamped) concentration.
pub fn assemble_mobility_stiffness(active: &ActiveMesh, c: &[f64], kind: Mobility) -> CsrMatrix {
    let map = move |x: f64| crate::physics::mobility(kind, x);
    assemble_surface_stiffness(active, Some(&Coefficient { values: c, map: &map }))
}

/// ∫_T (n_h·∇ψ_i)(n_h·∇ψ_j) dx summed over cut tetrahedra, each scaled by `weight(T)`.
pub fn assemble_weighted_normal_stabilization<W>(active: &ActiveMesh, weight: W) -> CsrMatrix
where
    W: Fn(&CutElement) -> f64 + Sync,
{
    assemble_elementwise(active, |e| {
        let s = weight(e) * e.bulk_rule.total_weight();
        let d = e.normal_derivatives();
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = s * d[i] * d[j];
            }
        }
        m
    })
}

/// Unweighted normal-gradient stabilization over Ω_h^Γ.
pub fn assemble_normal_stabilization(active: &ActiveMesh) -> CsrMatrix {
    assemble_weighted_normal_stabilization(active, |_| 1.0)
}

/// w_j = (f0'(c_h), ψ_j)_{Γ_h}
pub fn assemble_f0prime_load(active: &ActiveMesh, c: &[f64]) -> Vec<f64> {
    load_elementwise(active, |e| {
        let mut out = [0.0; 4];
        for ((w, ch), b) in e.surface_values(c).zip(&e.surface_basis) {
            let g = w * f0_prime(ch);
            for i in 0..4 {
                out[i] += g * b[i];
            }
        }
        out
    })
}

/// (f, ψ_j)_{Γ_h} for a function given at physical points.
pub fn assemble_load<F>(active: &ActiveMesh, f: F) -> Vec<f64>
where
    F: Fn(&Point) -> f64 + Sync,
{
    load_elementwise(active, |e| {
        let mut out = [0.0; 4];
        for ((x, &w), b) in e.surface_rule.points.iter().zip(&e.surface_rule.weights).zip(&e.surface_basis) {
            let g = w * f(x);
            for i in 0..4 {
                out[i] += g * b[i];
            }
        }
        out
    })
}

/// ∫_{Γ_h} g(u_h) ds
pub fn integrate_surface<G>(active: &ActiveMesh, u: &[f64], g: G) -> f64
where
    G: Fn(f64) -> f64 + Sync,
{
    let parts: Vec<f64> = active
        .elements
        .par_iter()
        .map(|e| e.surface_values(u).map(|(w, v)| w * g(v)).sum())
        .collect();
    parts.iter().sum()
}

/// E1(c) = ∫_{Γ_h} f0(c_h) ds
pub fn compute_e1(active: &ActiveMesh, c: &[f64]) -> f64 {
    integrate_surface(active, c, f0)
}

/// ∫_{Γ_h} c_h ds
pub fn compute_mass(active: &ActiveMesh, c: &[f64]) -> f64 {
    integrate_surface(active, c, |v| v)
}

/// ‖u_h‖_{L²(Γ_h)}
pub fn l2_norm_gamma(active: &ActiveMesh, u: &[f64]) -> f64 {
    integrate_surface(active, u, |v| v * v).sqrt()
}

/// The coefficient-independent matrices, assembled once per mesh.
#[derive(Clone, Debug)]
pub struct GeometricForms {
    /// (u, v)_{Γ_h}
    pub mass: CsrMatrix,
    /// (∇_Γ u, ∇_Γ v)_{Γ_h}
    pub stiffness: CsrMatrix,
    /// Σ_T h_T ∫_T (n_h·∇u)(n_h·∇v)
    pub stab_h: CsrMatrix,
    /// Σ_T h_T⁻¹ ∫_T (n_h·∇u)(n_h·∇v)
    pub stab_hinv: CsrMatrix,
}

impl GeometricForms {
    pub fn assemble(active: &ActiveMesh) -> Self {
        Self {
            mass: assemble_surface_mass(active),
            stiffness: assemble_surface_stiffness(active, None),
            stab_h: assemble_weighted_normal_stabilization(active, |e| e.diameter),
            stab_hinv: assemble_weighted_normal_stabilization(active, |e| 1.0 / e.diameter),
        }
    }

    pub fn num_dofs(&self) -> usize {
        self.mass.nrows()
    }

    /// 𝟙ᵀ M c = ∫_{Γ_h} c_h
    pub fn mass_of(&self, c: &[f64]) -> f64 {
        self.mass.mul_vec(c).iter().sum()
    }
}
