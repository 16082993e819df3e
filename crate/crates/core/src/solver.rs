//! Coupled concentration / chemical-potential solve.
//!
//! The unknown is x = [c; μ] ∈ R^{2N}. The operator is a sparse 2 x 2 block
//! matrix plus the SAV rank-one term σ u vᵀ acting from the c-columns into the
//! μ-rows. Forming that term explicitly would densify the matrix, so the
//! system is solved with the Sherman–Morrison–Woodbury identity on top of two
//! solves with the sparse base matrix.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::assembly::CsrMatrix;
use crate::{Error, Result};

/// Smallest admissible |1 + σ v̂ᵀ A⁻¹ û|.
pub const WOODBURY_MIN_DENOMINATOR: f64 = 1e-14;

/// σ u vᵀ with u living in the μ-rows and v in the c-columns.
#[derive(Clone, Debug, Default)]
pub struct RankOne {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl RankOne {
    pub fn is_trivial(&self) -> bool {
        self.sigma == 0.0 || self.u.iter().all(|&x| x == 0.0) || self.v.iter().all(|&x| x == 0.0)
    }
}

/// [[B_cc, B_cμ], [B_μc + σ u vᵀ, B_μμ]] [c; μ] = rhs
#[derive(Clone, Debug)]
pub struct BlockSystem {
    pub cc: CsrMatrix,
    pub cmu: CsrMatrix,
    pub muc: CsrMatrix,
    pub mumu: CsrMatrix,
    pub rank_one: RankOne,
    pub rhs: Vec<f64>,
}

impl BlockSystem {
    pub fn n(&self) -> usize {
        self.cc.nrows()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        for (name, m) in [("B_cc", &self.cc), ("B_cmu", &self.cmu), ("B_muc", &self.muc), ("B_mumu", &self.mumu)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension(format!("{name} is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
            }
        }
        if self.rank_one.u.len() != n || self.rank_one.v.len() != n {
            return Err(Error::Dimension("rank-one vectors must have length N".into()));
        }
        if self.rhs.len() != 2 * n {
            return Err(Error::Dimension(format!("rhs has length {}, expected {}", self.rhs.len(), 2 * n)));
        }
        if !self.rank_one.sigma.is_finite() {
            return Err(Error::NonFinite("rank-one scale"));
        }
        Ok(())
    }

    fn base_triplets(&self) -> Vec<Triplet<usize, usize, f64>> {
        let n = self.n();
        let mut t = Vec::with_capacity(self.cc.nnz() + self.cmu.nnz() + self.muc.nnz() + self.mumu.nnz());
        for (m, dr, dc) in [(&self.cc, 0, 0), (&self.cmu, 0, n), (&self.muc, n, 0), (&self.mumu, n, n)] {
            t.extend(m.triplets().map(|(r, c, v)| Triplet::new(r + dr, c + dc, v)));
        }
        t
    }

    /// Base (sparse) operator only.
    pub fn apply_base(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let (xc, xm) = x.split_at(n);
        let mut y = vec![0.0; 2 * n];
        let (yc, ym) = y.split_at_mut(n);
        for r in 0..n {
            yc[r] = self.cc.row(r).map(|(c, v)| v * xc[c]).sum::<f64>()
                + self.cmu.row(r).map(|(c, v)| v * xm[c]).sum::<f64>();
            ym[r] = self.muc.row(r).map(|(c, v)| v * xc[c]).sum::<f64>()
                + self.mumu.row(r).map(|(c, v)| v * xm[c]).sum::<f64>();
        }
        y
    }

    fn base_diagonal(&self) -> Vec<f64> {
        let mut d = self.cc.diagonal();
        d.extend(self.mumu.diagonal());
        d
    }
}

/// Full operator including the rank-one term.
pub fn apply_operator(sys: &BlockSystem, x: &[f64]) -> Vec<f64> {
    let n = sys.n();
    let mut y = sys.apply_base(x);
    let ro = &sys.rank_one;
    let s = ro.sigma * dot(&ro.v, &x[..n]);
    for (yi, ui) in y[n..].iter_mut().zip(&ro.u) {
        *yi += s * ui;
    }
    y
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverMethod {
    SparseDirect,
    IterativeKrylov,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    /// Jacobi scaling with the diagonals of B_cc and B_μμ.
    DiagonalBlock,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub rel_tolerance: f64,
    pub max_iterations: usize,
    pub preconditioner: Preconditioner,
    /// GMRES restart length.
    pub restart: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::SparseDirect,
            rel_tolerance: 1e-10,
            max_iterations: 5000,
            preconditioner: Preconditioner::DiagonalBlock,
            restart: 200,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0 && self.rel_tolerance <= 1e-2) {
            return Err(Error::InvalidParameter(format!(
                "solver tolerance must lie in (0, 1e-2], got {}",
                self.rel_tolerance
            )));
        }
        if self.max_iterations == 0 || self.restart == 0 {
            return Err(Error::InvalidParameter("solver iteration limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    /// ‖rhs - A x‖ / ‖rhs‖ for the full operator.
    pub residual: f64,
    /// Krylov iterations (0 for the direct path).
    pub iterations: usize,
    /// 1 + σ v̂ᵀ A⁻¹ û (1 when the update is trivial).
    pub denominator: f64,
    pub refinements: usize,
}

enum BaseSolver<'a> {
    Direct(Lu<usize, f64>),
    Krylov { sys: &'a BlockSystem, inv_diag: Vec<f64>, cfg: SolverConfig },
}

impl BaseSolver<'_> {
    /// Solves B x = b for each column; returns the Krylov iteration count.
    fn solve(&self, rhs: &mut [Vec<f64>]) -> Result<usize> {
        match self {
            BaseSolver::Direct(lu) => {
                let n = rhs[0].len();
                let mut m = Mat::from_fn(n, rhs.len(), |i, j| rhs[j][i]);
                lu.solve_in_place(m.as_mut());
                for (j, col) in rhs.iter_mut().enumerate() {
                    for (i, v) in col.iter_mut().enumerate() {
                        *v = m[(i, j)];
                    }
                }
                Ok(0)
            }
            BaseSolver::Krylov { sys, inv_diag, cfg } => {
                let mut total = 0;
                for col in rhs.iter_mut() {
                    let (x, it) = gmres(
                        |x| sys.apply_base(x),
                        inv_diag,
                        col,
                        0.1 * cfg.rel_tolerance,
                        cfg.max_iterations,
                        cfg.restart,
                    )?;
                    *col = x;
                    total += it;
                }
                Ok(total)
            }
        }
    }
}

/// Woodbury-updated solver. Keeps the symbolic LU of the base matrix and
/// reuses it while the sparsity pattern does not change.
pub struct RankOneSolver {
    config: SolverConfig,
    symbolic: Option<(Vec<usize>, Vec<usize>, SymbolicLu<usize>)>,
}

impl RankOneSolver {
    pub fn new(config: SolverConfig) -> Self {
        Self { config, symbolic: None }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    fn factor(&mut self, sys: &BlockSystem) -> Result<Lu<usize, f64>> {
        let n2 = 2 * sys.n();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n2, n2, &sys.base_triplets())
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let sym = mat.symbolic();
        let reuse = matches!(&self.symbolic, Some((cp, ri, _)) if cp.as_slice() == sym.col_ptr() && ri.as_slice() == sym.row_idx());
        if !reuse {
            let s = SymbolicLu::try_new(sym).map_err(|e| Error::Factorization(format!("{e:?}")))?;
            self.symbolic = Some((sym.col_ptr().to_vec(), sym.row_idx().to_vec(), s));
        }
        let symbolic = self.symbolic.as_ref().unwrap().2.clone();
        Lu::try_new_with_symbolic(symbolic, mat.as_ref()).map_err(|e| Error::Factorization(format!("{e:?}")))
    }

    /// Solves the full system; returns (c, μ, stats).
    pub fn solve(&mut self, sys: &BlockSystem) -> Result<(Vec<f64>, Vec<f64>, SolveStats)> {
        sys.validate()?;
        self.config.validate()?;
        let n = sys.n();
        let base = match self.config.method {
            SolverMethod::SparseDirect => BaseSolver::Direct(self.factor(sys)?),
            SolverMethod::IterativeKrylov => {
                let inv_diag = match self.config.preconditioner {
                    Preconditioner::None => vec![1.0; 2 * n],
                    Preconditioner::DiagonalBlock => sys
                        .base_diagonal()
                        .iter()
                        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
                        .collect(),
                };
                BaseSolver::Krylov { sys, inv_diag, cfg: self.config }
            }
        };

        let ro = &sys.rank_one;
        let trivial = ro.is_trivial();
        let mut stats = SolveStats { denominator: 1.0, ..Default::default() };

        // x1 = B⁻¹ û is shared by the initial solve and every refinement.
        let mut x1 = None;
        let woodbury = |b: Vec<f64>, x1: &mut Option<Vec<f64>>, stats: &mut SolveStats| -> Result<Vec<f64>> {
            if trivial {
                let mut cols = vec![b];
                stats.iterations += base.solve(&mut cols)?;
                return Ok(cols.pop().unwrap());
            }
            let mut cols = vec![b];
            if x1.is_none() {
                let mut uhat = vec![0.0; 2 * n];
                uhat[n..].copy_from_slice(&ro.u);
                cols.push(uhat);
            }
            stats.iterations += base.solve(&mut cols)?;
            if cols.len() == 2 {
                *x1 = cols.pop();
            }
            let x0 = cols.pop().unwrap();
            let x1 = x1.as_ref().unwrap();
            let denom = 1.0 + ro.sigma * dot(&ro.v, &x1[..n]);
            stats.denominator = denom;
            if !(denom.abs() >= WOODBURY_MIN_DENOMINATOR) {
                return Err(Error::SingularUpdate(denom.abs()));
            }
            let s = ro.sigma * dot(&ro.v, &x0[..n]) / denom;
            Ok(x0.iter().zip(x1).map(|(a, b)| a - s * b).collect())
        };

        let bnorm = norm(&sys.rhs);
        let mut x = woodbury(sys.rhs.clone(), &mut x1, &mut stats)?;
        let residual_of = |x: &[f64]| -> (Vec<f64>, f64) {
            let ax = apply_operator(sys, x);
            let r: Vec<f64> = sys.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let rn = norm(&r);
            (r, if bnorm > 0.0 { rn / bnorm } else { rn })
        };
        let (mut r, mut rel) = residual_of(&x);
        while rel > self.config.rel_tolerance && stats.refinements < 3 {
            let dx = woodbury(r, &mut x1, &mut stats)?;
            x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
            stats.refinements += 1;
            (r, rel) = residual_of(&x);
        }
        stats.residual = rel;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear solve"));
        }
        if !(rel <= self.config.rel_tolerance) {
            return Err(Error::Residual { residual: rel, tolerance: self.config.rel_tolerance });
        }
        let mu = x.split_off(n);
        Ok((x, mu, stats))
    }
}

/// One-shot solve with a fresh [`RankOneSolver`].
pub fn solve_rank_one_system(sys: &BlockSystem, cfg: &SolverConfig) -> Result<(Vec<f64>, Vec<f64>, SolveStats)> {
    RankOneSolver::new(*cfg).solve(sys)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Restarted GMRES with right Jacobi preconditioning. Returns (x, iterations).
fn gmres<A>(apply: A, inv_diag: &[f64], b: &[f64], tol: f64, max_iter: usize, restart: usize) -> Result<(Vec<f64>, usize)>
where
    A: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < max_iter {
        let ax = apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= tol {
            return Ok((x, iterations));
        }
        let m = restart.min(max_iter - iterations);
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let z: Vec<f64> = basis[k].iter().zip(inv_diag).map(|(v, d)| v * d).collect();
            let mut w = apply(&z);
            for (i, vi) in basis.iter().enumerate() {
                let hik = dot(&w, vi);
                hess[i][k] = hik;
                w.iter_mut().zip(vi).for_each(|(a, b)| *a -= hik * b);
            }
            let hn = norm(&w);
            hess[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * hess[i][k] + sn[i] * hess[i + 1][k];
                hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
                hess[i][k] = t;
            }
            let d = hess[k][k].hypot(hess[k + 1][k]);
            cs[k] = if d == 0.0 { 1.0 } else { hess[k][k] / d };
            sn[k] = if d == 0.0 { 0.0 } else { hess[k + 1][k] / d };
            hess[k][k] = d;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k_used = k + 1;
            rel = g[k + 1].abs() / bnorm;
            if rel <= tol || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|j| hess[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / hess[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, (vi, di)) in x.iter_mut().zip(basis[j].iter().zip(inv_diag)) {
                *xi += yj * vi * di;
            }
        }
    }
    let ax = apply(&x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let final_rel = norm(&r) / bnorm;
    if final_rel <= tol {
        Ok((x, iterations))
    } else {
        Err(Error::NoConvergence { iterations, residual: final_rel.max(rel) })
    }
}
