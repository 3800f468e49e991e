//! Semi-Lagrangian finite-difference evaluation at a single grid node.
//!
//! Each node is traced back along its characteristic with one third-order
//! Runge–Kutta step, and the solution is reconstructed at the foot from the
//! 3×3 stencil around the host cell by a quadratic that interpolates the five
//! cross points and fits the four corners in the least-squares sense.

use crate::lowrank::{DenseMatrix, MatrixAccessor};
use crate::mesh::{BoundaryRule, PhaseGrid, UniformGrid1D};

/// Velocity field `(a, b)` of `f_t + a f_x + b f_y = 0`.
pub trait VelocityField: Sync {
    fn a(&self, x: f64, y: f64, t: f64) -> f64;
    fn b(&self, x: f64, y: f64, t: f64) -> f64;
    /// Upper bound of `|a|` used for CFL time steps.
    fn amax(&self) -> f64;
    /// Upper bound of `|b|` used for CFL time steps.
    fn bmax(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantField {
    pub a: f64,
    pub b: f64,
}

impl VelocityField for ConstantField {
    fn a(&self, _: f64, _: f64, _: f64) -> f64 {
        self.a
    }
    fn b(&self, _: f64, _: f64, _: f64) -> f64 {
        self.b
    }
    fn amax(&self) -> f64 {
        self.a.abs()
    }
    fn bmax(&self) -> f64 {
        self.b.abs()
    }
}

/// Characteristic foot and its host cell; `xi`, `eta` are the foot's offsets
/// from the host cell centre in cell widths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharFoot {
    pub xs: f64,
    pub ys: f64,
    pub i: usize,
    pub j: usize,
    pub xi: f64,
    pub eta: f64,
}

/// 3×3 nodal values around the host cell, `f[di][dj]` for offsets −1..=1,
/// and the local coordinates of the evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilFrame {
    pub f: [[f64; 3]; 3],
    pub xi: f64,
    pub eta: f64,
}

/// One backward Kutta RK3 step of `dx/dt = a, dy/dt = b` from `t1` to `t0`.
/// Returns the raw foot coordinates without any boundary treatment.
#[inline]
pub fn trace_back_rk3<V: VelocityField + ?Sized>(field: &V, x: f64, y: f64, t1: f64, t0: f64) -> (f64, f64) {
    let h = t1 - t0;
    let k1x = field.a(x, y, t1);
    let k1y = field.b(x, y, t1);
    let (x2, y2) = (x - 0.5 * h * k1x, y - 0.5 * h * k1y);
    let tm = t1 - 0.5 * h;
    let k2x = field.a(x2, y2, tm);
    let k2y = field.b(x2, y2, tm);
    let (x3, y3) = (x - h * (2.0 * k2x - k1x), y - h * (2.0 * k2y - k1y));
    let k3x = field.a(x3, y3, t0);
    let k3y = field.b(x3, y3, t0);
    (
        x - h / 6.0 * (k1x + 4.0 * k2x + k3x),
        y - h / 6.0 * (k1y + 4.0 * k2y + k3y),
    )
}

/// One forward Kutta RK3 step from `t0` to `t1`.
#[inline]
pub fn trace_forward_rk3<V: VelocityField + ?Sized>(field: &V, x: f64, y: f64, t0: f64, t1: f64) -> (f64, f64) {
    let h = t1 - t0;
    let k1x = field.a(x, y, t0);
    let k1y = field.b(x, y, t0);
    let (x2, y2) = (x + 0.5 * h * k1x, y + 0.5 * h * k1y);
    let tm = t0 + 0.5 * h;
    let k2x = field.a(x2, y2, tm);
    let k2y = field.b(x2, y2, tm);
    let (x3, y3) = (x + h * (2.0 * k2x - k1x), y + h * (2.0 * k2y - k1y));
    let k3x = field.a(x3, y3, t1);
    let k3y = field.b(x3, y3, t1);
    (
        x + h / 6.0 * (k1x + 4.0 * k2x + k3x),
        y + h / 6.0 * (k1y + 4.0 * k2y + k3y),
    )
}

/// Host cell and local offset along one axis: periodic axes wrap the
/// coordinate first, other axes clamp the cell into range.
#[inline]
fn host(g: &UniformGrid1D, rule: BoundaryRule, x: f64) -> (f64, usize, f64) {
    match rule {
        BoundaryRule::Periodic => {
            let w = g.wrap_coord(x);
            let k = g.raw_cell(w);
            (w, g.wrap_index(k), (w - g.center(k)) / g.delta())
        }
        BoundaryRule::ZeroExtension => {
            let k = g.raw_cell(x).clamp(0, g.n_cells() as isize - 1);
            (x, k as usize, (x - g.center(k)) / g.delta())
        }
    }
}

/// Foot of the characteristic through node `(i, j)` at `t1`.
#[inline]
pub fn char_foot<V: VelocityField + ?Sized>(grid: &PhaseGrid, field: &V, t0: f64, t1: f64, i: usize, j: usize) -> CharFoot {
    let x = grid.gx.center(i as isize);
    let y = grid.gy.center(j as isize);
    let (xs, ys) = trace_back_rk3(field, x, y, t1, t0);
    let (xs, hi, xi) = host(&grid.gx, grid.bx, xs);
    let (ys, hj, eta) = host(&grid.gy, grid.by, ys);
    CharFoot { xs, ys, i: hi, j: hj, xi, eta }
}

/// Quadratic reconstruction `a1 + a2 ξ + a3 η + a4 ξ² + a5 ξη + a6 η²`.
#[inline]
pub fn reconstruct_p2(frame: &StencilFrame) -> f64 {
    let f = &frame.f;
    let c = f[1][1];
    let a2 = 0.5 * (f[2][1] - f[0][1]);
    let a3 = 0.5 * (f[1][2] - f[1][0]);
    let a4 = -c + 0.5 * (f[0][1] + f[2][1]);
    let a5 = 0.25 * (f[2][2] + f[0][0] - f[0][2] - f[2][0]);
    let a6 = -c + 0.5 * (f[1][0] + f[1][2]);
    let (xi, eta) = (frame.xi, frame.eta);
    c + a2 * xi + a3 * eta + a4 * xi * xi + a5 * xi * eta + a6 * eta * eta
}

/// Gather the stencil of `src` around `foot`.
#[inline]
pub fn gather_stencil<A: MatrixAccessor + ?Sized>(src: &A, grid: &PhaseGrid, foot: &CharFoot) -> StencilFrame {
    let (nx, ny) = grid.shape();
    let mut f = [[0.0; 3]; 3];
    let cols: [Option<usize>; 3] = std::array::from_fn(|d| grid.by.resolve(foot.j as isize + d as isize - 1, ny));
    for (di, row) in f.iter_mut().enumerate() {
        if let Some(ii) = grid.bx.resolve(foot.i as isize + di as isize - 1, nx) {
            for (dj, c) in cols.iter().enumerate() {
                if let Some(jj) = c {
                    row[dj] = src.entry(ii, *jj);
                }
            }
        }
    }
    StencilFrame { f, xi: foot.xi, eta: foot.eta }
}

/// Semi-Lagrangian update of entry `(i, j)` from `t0` to `t1`.
#[inline]
pub fn sl_entry<A, V>(src: &A, grid: &PhaseGrid, field: &V, t0: f64, t1: f64, i: usize, j: usize) -> f64
where
    A: MatrixAccessor + ?Sized,
    V: VelocityField + ?Sized,
{
    let foot = char_foot(grid, field, t0, t1, i, j);
    reconstruct_p2(&gather_stencil(src, grid, &foot))
}

/// Full-rank semi-Lagrangian step over every node.
pub fn sl_dense_step<A, V>(src: &A, grid: &PhaseGrid, field: &V, t0: f64, t1: f64) -> DenseMatrix
where
    A: MatrixAccessor + ?Sized,
    V: VelocityField + ?Sized,
{
    let (nx, ny) = grid.shape();
    DenseMatrix::from_fn(nx, ny, |i, j| sl_entry(src, grid, field, t0, t1, i, j))
}
