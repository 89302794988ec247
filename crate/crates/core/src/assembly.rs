//! Global system for the mixed weak form
//!
//! ```text
//! sum_j ∫ q w̄ + eps ∫ u w̄' - eps [û w̄]_{j-1/2}^{j+1/2}            = 0
//! sum_j eps ∫ q v̄' - eps [q̂ v̄]_{j-1/2}^{j+1/2} - ∫ f u v̄          = 0
//! ```
//!
//! Unknowns are ordered element by element: the `dim` coefficients of `u_h`
//! on element `j`, then the `dim` coefficients of `q_h` on element `j`.
//! Rows follow the same layout with the first equation (test `w`) before
//! the second (test `v`). The constant parts of the left boundary traces are
//! moved to the right-hand side.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::basis::{ElementBasis, QuadratureOptions, SpaceKind};
use crate::coefficient::Coefficient;
use crate::error::{Error, Result};
use crate::mesh::MeshPartition;
use crate::trace::{self, TraceParams, TraceValues};

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);

/// Which field a degree of freedom belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    U,
    Q,
}

/// Square block-tridiagonal matrix with uniform square blocks, stored
/// row-major block by block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTridiagonal {
    n_blocks: usize,
    bs: usize,
    /// Block `(j, j-1)`; block 0 is unused and stays zero.
    lower: Vec<C>,
    diag: Vec<C>,
    /// Block `(j, j+1)`; the last block is unused and stays zero.
    upper: Vec<C>,
}

impl BlockTridiagonal {
    pub fn zeros(n_blocks: usize, bs: usize) -> Self {
        let len = n_blocks * bs * bs;
        Self {
            n_blocks,
            bs,
            lower: vec![ZERO; len],
            diag: vec![ZERO; len],
            upper: vec![ZERO; len],
        }
    }

    pub fn dim(&self) -> usize {
        self.n_blocks * self.bs
    }

    pub fn block_size(&self) -> usize {
        self.bs
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    fn slot(&self, row: usize, col: usize) -> Option<(&Vec<C>, usize)> {
        let (rb, r) = (row / self.bs, row % self.bs);
        let (cb, c) = (col / self.bs, col % self.bs);
        let off = rb * self.bs * self.bs + r * self.bs + c;
        if cb == rb {
            Some((&self.diag, off))
        } else if cb + 1 == rb {
            Some((&self.lower, off))
        } else if cb == rb + 1 {
            Some((&self.upper, off))
        } else {
            None
        }
    }

    /// Entry `(row, col)`; zero outside the block tridiagonal pattern.
    pub fn get(&self, row: usize, col: usize) -> C {
        match self.slot(row, col) {
            Some((v, off)) => v[off],
            None => ZERO,
        }
    }

    /// Mutable access; panics outside the pattern.
    pub fn entry_mut(&mut self, row: usize, col: usize) -> &mut C {
        let (rb, r) = (row / self.bs, row % self.bs);
        let (cb, c) = (col / self.bs, col % self.bs);
        let off = rb * self.bs * self.bs + r * self.bs + c;
        if cb == rb {
            &mut self.diag[off]
        } else if cb + 1 == rb {
            &mut self.lower[off]
        } else if cb == rb + 1 {
            &mut self.upper[off]
        } else {
            panic!("entry ({row}, {col}) outside block tridiagonal pattern")
        }
    }

    /// Stored entries of row `row` as `(col, value)`, in increasing column order.
    pub fn row_entries(&self, row: usize) -> impl Iterator<Item = (usize, C)> + '_ {
        let rb = row / self.bs;
        let first = rb.saturating_sub(1) * self.bs;
        let last = ((rb + 2).min(self.n_blocks)) * self.bs;
        (first..last).map(move |c| (c, self.get(row, c)))
    }

    pub fn matvec(&self, x: &[C]) -> Vec<C> {
        (0..self.dim())
            .map(|r| self.row_entries(r).map(|(c, a)| a * x[c]).sum())
            .collect()
    }

    /// `A^H x`.
    pub fn adjoint_matvec(&self, x: &[C]) -> Vec<C> {
        let mut y = vec![ZERO; self.dim()];
        for r in 0..self.dim() {
            for (c, a) in self.row_entries(r) {
                y[c] += a.conj() * x[r];
            }
        }
        y
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        let mut col = vec![0.0; self.dim()];
        for r in 0..self.dim() {
            for (c, a) in self.row_entries(r) {
                col[c] += a.norm();
            }
        }
        col.into_iter().fold(0.0, f64::max)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim())
            .map(|r| self.row_entries(r).map(|(_, a)| a.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<Vec<C>> {
        (0..self.dim())
            .map(|r| (0..self.dim()).map(|c| self.get(r, c)).collect())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub mesh: MeshPartition,
    pub space: SpaceKind,
    pub eps: f64,
    pub f: Coefficient,
    pub params: TraceParams,
    pub quad: QuadratureOptions,
    /// Incoming data `g` in `q(a) + i sqrt(f_a) u(a) = g i sqrt(f_a)`; 2 for
    /// the standard problem.
    pub incoming: f64,
}

impl SolveConfig {
    pub fn new(mesh: MeshPartition, space: SpaceKind, eps: f64, f: Coefficient, params: TraceParams) -> Self {
        Self {
            mesh,
            space,
            eps,
            f,
            params,
            quad: QuadratureOptions::default(),
            incoming: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {}", self.eps)));
        }
        if self.mesh.is_empty() {
            return Err(Error::InvalidMesh("mesh has no elements".into()));
        }
        TraceParams::new(self.params.alpha, self.params.beta, self.params.gamma)?;
        self.f.eval_positive(self.mesh.a())?;
        self.f.eval_positive(self.mesh.b())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GlobalSystem {
    pub matrix: BlockTridiagonal,
    pub rhs: Vec<C>,
    pub bases: Vec<ElementBasis>,
    pub space: SpaceKind,
}

impl GlobalSystem {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Local dimension of the approximation space.
    pub fn local_dim(&self) -> usize {
        self.space.dim()
    }

    /// Global index of coefficient `m` (1-based) of `var` on element `j` (1-based).
    pub fn dof(&self, j: usize, var: Var, m: usize) -> usize {
        dof_index(self.local_dim(), j, var, m)
    }
}

pub fn dof_index(local_dim: usize, j: usize, var: Var, m: usize) -> usize {
    assert!(j >= 1 && m >= 1 && m <= local_dim);
    let base = (j - 1) * 2 * local_dim;
    match var {
        Var::U => base + m - 1,
        Var::Q => base + local_dim + m - 1,
    }
}

/// Element-local integrals and endpoint values.
struct LocalData {
    basis: ElementBasis,
    /// `∫ φ_n conj(φ_m)`, row-major `[m][n]`.
    mass: Vec<C>,
    /// `∫ φ_n conj(φ_m')`.
    deriv: Vec<C>,
    /// `∫ f φ_n conj(φ_m)`.
    potential: Vec<C>,
    left: Vec<C>,
    right: Vec<C>,
}

fn local_data(cfg: &SolveConfig, j: usize) -> Result<LocalData> {
    let (l, r) = cfg.mesh.element(j)?;
    let basis = ElementBasis::for_element(cfg.space, l, r, &cfg.f, cfg.eps)?;
    let d = basis.dim();
    let rule = basis.quadrature(&cfg.quad);
    let mut mass = vec![ZERO; d * d];
    let mut deriv = vec![ZERO; d * d];
    let mut potential = vec![ZERO; d * d];
    let mut v = vec![ZERO; d];
    let mut dv = vec![ZERO; d];
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        basis.eval_with_deriv(x, &mut v, &mut dv);
        let fw = cfg.f.eval(x) * w;
        for m in 0..d {
            let vm = v[m].conj();
            let dm = dv[m].conj();
            for n in 0..d {
                mass[m * d + n] += v[n] * vm * w;
                deriv[m * d + n] += v[n] * dm * w;
                potential[m * d + n] += v[n] * vm * fw;
            }
        }
    }
    let mut left = vec![ZERO; d];
    let mut right = vec![ZERO; d];
    basis.eval_all(l, &mut left);
    basis.eval_all(r, &mut right);
    Ok(LocalData {
        basis,
        mass,
        deriv,
        potential,
        left,
        right,
    })
}

/// Affine trace `value = Σ cu_k * u_k + Σ cq_k * q_k + constant` seen from
/// the (up to two) elements adjacent to a point.
#[derive(Debug, Clone, Copy)]
struct AffineTrace {
    /// Coefficients of `(u^-, u^+)` / `(q^-, q^+)` in `û` and `q̂`.
    u_hat: [[C; 2]; 2],
    q_hat: [[C; 2]; 2],
    constant: TraceValues,
}

fn affine_interior(params: &TraceParams) -> AffineTrace {
    // interior_trace is linear with no constant part
    let t = |um, up, qm, qp| trace::interior_trace(um, up, qm, qp, params);
    let du_m = t(ONE, ZERO, ZERO, ZERO);
    let du_p = t(ZERO, ONE, ZERO, ZERO);
    let dq_m = t(ZERO, ZERO, ONE, ZERO);
    let dq_p = t(ZERO, ZERO, ZERO, ONE);
    AffineTrace {
        u_hat: [[du_m.u_hat, du_p.u_hat], [dq_m.u_hat, dq_p.u_hat]],
        q_hat: [[du_m.q_hat, du_p.q_hat], [dq_m.q_hat, dq_p.q_hat]],
        constant: TraceValues { u_hat: ZERO, q_hat: ZERO },
    }
}

/// One-sided affine trace; only the "inside" slot is populated. `t(u, q, g)`
/// evaluates the trace with boundary data `g`.
fn affine_boundary(
    t: impl Fn(C, C, f64) -> Result<TraceValues>,
    g: f64,
    slot: usize,
) -> Result<AffineTrace> {
    let constant = t(ZERO, ZERO, g)?;
    let du = t(ONE, ZERO, 0.0)?;
    let dq = t(ZERO, ONE, 0.0)?;
    let mut u_hat = [[ZERO; 2]; 2];
    let mut q_hat = [[ZERO; 2]; 2];
    u_hat[0][slot] = du.u_hat;
    u_hat[1][slot] = dq.u_hat;
    q_hat[0][slot] = du.q_hat;
    q_hat[1][slot] = dq.q_hat;
    Ok(AffineTrace { u_hat, q_hat, constant })
}

/// Adds the contribution `sign * eps * trace * conj(test)` of one point to
/// the rows of element `row_elem`. `sides[s] = (element, values of its
/// members at the point)` for `s = 0` (minus) and `1` (plus).
fn add_point_terms(
    mat: &mut BlockTridiagonal,
    rhs: &mut [C],
    d: usize,
    eps: f64,
    row_elem: usize,
    sign: f64,
    test: &[C],
    sides: [Option<(usize, &[C])>; 2],
    tr: &AffineTrace,
) {
    let row0 = row_elem * 2 * d;
    for (eq, coeffs, constant) in [
        (0, &tr.u_hat, tr.constant.u_hat),
        (1, &tr.q_hat, tr.constant.q_hat),
    ] {
        for m in 0..d {
            let row = row0 + eq * d + m;
            let wt = test[m].conj() * (sign * eps);
            for (s, side) in sides.iter().enumerate() {
                let Some((elem, vals)) = side else { continue };
                let col0 = elem * 2 * d;
                let (cu, cq) = (coeffs[0][s], coeffs[1][s]);
                for n in 0..d {
                    if cu != ZERO {
                        *mat.entry_mut(row, col0 + n) += wt * cu * vals[n];
                    }
                    if cq != ZERO {
                        *mat.entry_mut(row, col0 + d + n) += wt * cq * vals[n];
                    }
                }
            }
            rhs[row] -= wt * constant;
        }
    }
}

/// Assembles the global system with one set of trace parameters everywhere.
pub fn assemble_global(cfg: &SolveConfig) -> Result<GlobalSystem> {
    let params = cfg.params;
    assemble_with_interface_params(cfg, |_| params)
}

/// Assembly with per-interface penalties: `interface(i)` gives the
/// parameters at interior breakpoint `x_{i+1/2}`, `i = 1..N-1`. The boundary
/// weight `gamma` always comes from `cfg.params`.
pub(crate) fn assemble_with_interface_params(
    cfg: &SolveConfig,
    interface: impl Fn(usize) -> TraceParams,
) -> Result<GlobalSystem> {
    cfg.validate()?;
    let n = cfg.mesh.len();
    let d = cfg.space.dim();
    let mut mat = BlockTridiagonal::zeros(n, 2 * d);
    let mut rhs = vec![ZERO; 2 * d * n];
    let mut bases = Vec::with_capacity(n);
    let eps = cfg.eps;
    let (a, b) = (cfg.mesh.a(), cfg.mesh.b());
    let f_a = cfg.f.eval_positive(a)?;
    let f_b = cfg.f.eval_positive(b)?;
    let gamma = cfg.params.gamma;
    let g = cfg.incoming;
    let left_bc = affine_boundary(|u, q, g| trace::boundary_trace_left_with_data(u, q, f_a, gamma, g), g, 1)?;
    let right_bc = affine_boundary(|u, q, _| trace::boundary_trace_right(u, q, f_b, gamma), 0.0, 0)?;

    const CHUNK: usize = 4096;
    // right-end values of the last element of the previous chunk
    let mut prev: Option<Vec<C>> = None;
    for start in (1..=n).step_by(CHUNK) {
        let end = (start + CHUNK - 1).min(n);
        let locals: Vec<LocalData> = (start..=end)
            .into_par_iter()
            .map(|j| local_data(cfg, j))
            .collect::<Result<_>>()?;
        for (offset, loc) in locals.iter().enumerate() {
            let e = start - 1 + offset;
            let r0 = e * 2 * d;
            for m in 0..d {
                for k in 0..d {
                    let i = m * d + k;
                    // first equation: ∫ q w̄ + eps ∫ u w̄'
                    *mat.entry_mut(r0 + m, r0 + d + k) += loc.mass[i];
                    *mat.entry_mut(r0 + m, r0 + k) += loc.deriv[i] * eps;
                    // second equation: eps ∫ q v̄' - ∫ f u v̄
                    *mat.entry_mut(r0 + d + m, r0 + d + k) += loc.deriv[i] * eps;
                    *mat.entry_mut(r0 + d + m, r0 + k) -= loc.potential[i];
                }
            }
            // point x_{e-1/2}: enters element e with sign +
            if e == 0 {
                add_point_terms(&mut mat, &mut rhs, d, eps, e, 1.0, &loc.left, [None, Some((e, &loc.left))], &left_bc);
            } else {
                let tr = affine_interior(&interface(e));
                let left_vals = prev.as_deref().expect("previous element values");
                let sides = [Some((e - 1, left_vals)), Some((e, &loc.left[..]))];
                // seen from element e-1 (sign -) and element e (sign +)
                add_point_terms(&mut mat, &mut rhs, d, eps, e - 1, -1.0, left_vals, sides, &tr);
                add_point_terms(&mut mat, &mut rhs, d, eps, e, 1.0, &loc.left, sides, &tr);
            }
            if e == n - 1 {
                add_point_terms(&mut mat, &mut rhs, d, eps, e, -1.0, &loc.right, [Some((e, &loc.right)), None], &right_bc);
            }
            prev = Some(loc.right.clone());
            bases.push(loc.basis);
        }
    }
    Ok(GlobalSystem {
        matrix: mat,
        rhs,
        bases,
        space: cfg.space,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixStats {
    pub dimension: usize,
    /// Entries with a nonzero value.
    pub nonzeros: usize,
    /// `max(col - row) + max(row - col) + 1` over nonzero entries.
    pub bandwidth: usize,
}

pub fn matrix_stats(sys: &GlobalSystem) -> MatrixStats {
    let m = &sys.matrix;
    let mut nonzeros = 0;
    let mut upper = 0;
    let mut lower = 0;
    for r in 0..m.dim() {
        for (c, v) in m.row_entries(r) {
            if v != ZERO {
                nonzeros += 1;
                upper = upper.max(c.saturating_sub(r));
                lower = lower.max(r.saturating_sub(c));
            }
        }
    }
    MatrixStats {
        dimension: m.dim(),
        nonzeros,
        bandwidth: upper + lower + 1,
    }
}
