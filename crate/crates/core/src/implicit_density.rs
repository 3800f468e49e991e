//! Implicit conservative update of the charge density.
//!
//! The flux `rho u` is split as `g+ + g-` with `g± = (u ± alpha) rho / 2` and
//! each part is differenced with a third-order upwind-biased stencil on a
//! periodic grid. Time integration uses a three-stage, stiffly accurate
//! DIRK scheme; every stage is a sparse linear solve done with restarted
//! GMRES and an ILUT preconditioner.

use std::collections::BTreeSet;

use crate::error::{Result, SlarError};

/// Square compressed-sparse-row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Assemble from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(trip.len());
        let mut vals: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *vals.last_mut().expect("previous entry") += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(j, a)| a * x[*j]).sum()
            })
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for (c, v) in self.cols.iter().zip(&self.vals) {
            s[*c] += v;
        }
        s
    }

    /// `self * diag(d)`.
    pub fn scale_columns(&self, d: &[f64]) -> Self {
        let mut m = self.clone();
        for (c, v) in m.cols.iter().zip(m.vals.iter_mut()) {
            *v *= d[*c];
        }
        m
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        let mut trip = Vec::with_capacity(self.nnz() + other.nnz());
        for (m, s) in [(self, a), (other, b)] {
            for i in 0..m.n {
                let (c, v) = m.row(i);
                trip.extend(c.iter().zip(v).map(|(j, x)| (i, *j, s * x)));
            }
        }
        Self::from_triplets(self.n, trip)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (j, x) in c.iter().zip(v) {
                row[*j] = *x;
            }
        }
        d
    }
}

/// Periodic upwind-biased difference matrices for the split fluxes.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxSplitOperator {
    pub dp: SparseMatrix,
    pub dm: SparseMatrix,
}

const DP_STENCIL: [(isize, f64); 4] = [(-2, 1.0 / 6.0), (-1, -1.0), (0, 0.5), (1, 1.0 / 3.0)];
const DM_STENCIL: [(isize, f64); 4] = [(-1, -1.0 / 3.0), (0, -0.5), (1, 1.0), (2, -1.0 / 6.0)];

impl FluxSplitOperator {
    pub fn new(n: usize, dx: f64) -> Self {
        let build = |st: &[(isize, f64)]| {
            let mut trip = Vec::with_capacity(4 * n);
            for i in 0..n {
                for (off, w) in st {
                    trip.push((i, (i as isize + off).rem_euclid(n as isize) as usize, w / dx));
                }
            }
            SparseMatrix::from_triplets(n, trip)
        };
        Self {
            dp: build(&DP_STENCIL),
            dm: build(&DM_STENCIL),
        }
    }

    /// `D^u = D+ diag((u + alpha)/2) + D- diag((u - alpha)/2)`, `alpha = max |u|`.
    pub fn assemble(&self, u: &[f64]) -> SparseMatrix {
        let alpha = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let up: Vec<f64> = u.iter().map(|x| 0.5 * (x + alpha)).collect();
        let um: Vec<f64> = u.iter().map(|x| 0.5 * (x - alpha)).collect();
        self.dp.scale_columns(&up).combine(1.0, &self.dm.scale_columns(&um), 1.0)
    }

    /// Discrete `(rho u)_x` in flux-split form.
    pub fn apply_upwind_div(&self, rho: &[f64], u: &[f64]) -> Vec<f64> {
        let alpha = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let gp: Vec<f64> = rho.iter().zip(u).map(|(r, x)| 0.5 * (x + alpha) * r).collect();
        let gm: Vec<f64> = rho.iter().zip(u).map(|(r, x)| 0.5 * (x - alpha) * r).collect();
        let a = self.dp.matvec(&gp);
        let b = self.dm.matvec(&gm);
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    }
}

/// Three-stage stiffly accurate DIRK coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirkTableau {
    pub beta: f64,
    pub tau2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl DirkTableau {
    pub fn new() -> Self {
        // root of x^3 - 3x^2 + 3x/2 - 1/6 in (1/6, 1/2)
        let mut x: f64 = 0.4;
        for _ in 0..50 {
            let f = x * x * x - 3.0 * x * x + 1.5 * x - 1.0 / 6.0;
            let df = 3.0 * x * x - 6.0 * x + 1.5;
            let step = f / df;
            x -= step;
            if step.abs() < 1e-17 {
                break;
            }
        }
        let beta = x;
        Self {
            beta,
            tau2: 0.5 * (1.0 + beta),
            b1: -(6.0 * beta * beta - 16.0 * beta + 1.0) / 4.0,
            b2: (6.0 * beta * beta - 20.0 * beta + 5.0) / 4.0,
        }
    }

    /// Lower-triangular stage matrix.
    pub fn a(&self) -> [[f64; 3]; 3] {
        [
            [self.beta, 0.0, 0.0],
            [self.tau2 - self.beta, self.beta, 0.0],
            [self.b1, self.b2, self.beta],
        ]
    }

    pub fn c(&self) -> [f64; 3] {
        [self.beta, self.tau2, 1.0]
    }
}

impl Default for DirkTableau {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresConfig {
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
    pub ilu_droptol: f64,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self {
            tol: 1e-14,
            restart: 30,
            max_iter: 500,
            ilu_droptol: 1e-6,
        }
    }
}

pub trait Preconditioner {
    /// Approximate `A^{-1} z`.
    fn apply(&self, z: &[f64]) -> Vec<f64>;
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.to_vec()
    }
}

/// Incomplete LU factors: `L` unit lower (strict part stored), `U` upper.
#[derive(Debug, Clone)]
pub struct Ilu {
    lower: Vec<Vec<(usize, f64)>>,
    upper: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

/// Threshold ILU: entries of the working row below `droptol * |row|_2` are
/// dropped (the diagonal is always kept).
pub fn ilu_factor(a: &SparseMatrix, droptol: f64) -> Result<Ilu> {
    let n = a.n();
    let mut lower: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut upper: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut diag: Vec<f64> = Vec::with_capacity(n);
    let mut w = vec![0.0; n];
    let mut nz = vec![false; n];
    for i in 0..n {
        let (cols, vals) = a.row(i);
        let tau = droptol * vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut pattern: Vec<usize> = Vec::new();
        let mut pending: BTreeSet<usize> = BTreeSet::new();
        for (c, v) in cols.iter().zip(vals) {
            w[*c] = *v;
            nz[*c] = true;
            pattern.push(*c);
            if *c < i {
                pending.insert(*c);
            }
        }
        while let Some(k) = pending.pop_first() {
            let lik: f64 = w[k] / diag[k];
            if lik.abs() < tau {
                w[k] = 0.0;
                continue;
            }
            w[k] = lik;
            for &(j, ukj) in &upper[k] {
                if !nz[j] {
                    nz[j] = true;
                    pattern.push(j);
                    if j < i {
                        pending.insert(j);
                    }
                }
                w[j] -= lik * ukj;
            }
        }
        let mut lrow = Vec::new();
        let mut urow = Vec::new();
        let mut d = 0.0;
        pattern.sort_unstable();
        for &j in &pattern {
            let v = w[j];
            if j == i {
                d = v;
            } else if v.abs() >= tau && v != 0.0 {
                if j < i {
                    lrow.push((j, v));
                } else {
                    urow.push((j, v));
                }
            }
            w[j] = 0.0;
            nz[j] = false;
        }
        if d == 0.0 {
            return Err(SlarError::ZeroPivot { row: i });
        }
        lower.push(lrow);
        upper.push(urow);
        diag.push(d);
    }
    Ok(Ilu { lower, upper, diag })
}

impl Preconditioner for Ilu {
    fn apply(&self, z: &[f64]) -> Vec<f64> {
        let n = z.len();
        let mut y = z.to_vec();
        for i in 0..n {
            let s: f64 = self.lower[i].iter().map(|(j, l)| l * y[*j]).sum();
            y[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = self.upper[i].iter().map(|(j, u)| u * y[*j]).sum();
            y[i] = (y[i] - s) / self.diag[i];
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative true residual `|b - A x| / |b|`.
    pub residual: f64,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Restarted GMRES with right preconditioning.
pub fn gmres_solve<P: Preconditioner + ?Sized>(a: &SparseMatrix, b: &[f64], x0: &[f64], pc: &P, cfg: &GmresConfig) -> Result<GmresOutcome> {
    let n = a.n();
    if b.len() != n || x0.len() != n {
        return Err(SlarError::DimensionMismatch {
            expected: n,
            got: if b.len() != n { b.len() } else { x0.len() },
        });
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut x = x0.to_vec();
    let mut iterations = 0;
    let mut history = Vec::new();
    let m = cfg.restart.max(1);
    let mut best = f64::INFINITY;
    let mut inner_converged = false;
    loop {
        let ax = a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        let rel = beta / bnorm;
        history.push(rel);
        // inner solve converged but the true residual no longer drops: round-off floor
        let stalled = inner_converged && rel > 0.5 * best;
        if rel <= cfg.tol || stalled {
            return Ok(GmresOutcome { x, iterations, residual: rel });
        }
        best = best.min(rel);
        if iterations >= cfg.max_iter {
            return Err(SlarError::GmresNotConverged {
                iterations,
                residual: rel,
                history,
            });
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        inner_converged = false;
        while k < m && iterations < cfg.max_iter {
            let zk = pc.apply(&v[k]);
            let mut w = a.matvec(&zk);
            z.push(zk);
            for (j, vj) in v.iter().enumerate() {
                let hjk: f64 = w.iter().zip(vj).map(|(a, b)| a * b).sum();
                h[j][k] = hjk;
                w.iter_mut().zip(vj).for_each(|(wi, vi)| *wi -= hjk * vi);
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let d = h[k][k].hypot(h[k + 1][k]);
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            h[k][k] = d;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k += 1;
            history.push(g[k].abs() / bnorm);
            if g[k].abs() <= cfg.tol * bnorm || hn == 0.0 {
                inner_converged = true;
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| h[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (yi, zi) in y.iter().zip(&z) {
            x.iter_mut().zip(zi).for_each(|(xj, zj)| *xj += yi * zj);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondKind {
    Ilu,
    None,
}

/// Data at the previous time level for quadratic stage interpolation.
#[derive(Debug, Clone, Copy)]
pub struct DensityHistory<'a> {
    pub rho: &'a [f64],
    pub u: &'a [f64],
    /// `t^n - t^{n-1}`.
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityStats {
    pub iterations: [usize; 3],
    /// True when no previous level was available and interpolation was linear.
    pub first_step: bool,
}

/// Lagrange weights at `t` for nodes `ts`.
fn lagrange_weights(ts: &[f64], t: f64) -> Vec<f64> {
    (0..ts.len())
        .map(|a| {
            (0..ts.len())
                .filter(|&c| c != a)
                .map(|c| (t - ts[c]) / (ts[a] - ts[c]))
                .product()
        })
        .collect()
}

fn interpolate(ws: &[f64], data: &[&[f64]]) -> Vec<f64> {
    let n = data[0].len();
    (0..n).map(|i| ws.iter().zip(data).map(|(w, d)| w * d[i]).sum()).collect()
}

/// One DIRK3 step of `rho_t + (rho u)_x = 0` from `t^n` to `t^n + dt`.
#[allow(clippy::too_many_arguments)]
pub fn dirk3_density_step(
    op: &FluxSplitOperator,
    rho_n: &[f64],
    u_n: &[f64],
    prev: Option<DensityHistory<'_>>,
    rho_pred: &[f64],
    u_pred: &[f64],
    dt: f64,
    cfg: &GmresConfig,
    precond: PrecondKind,
) -> Result<(Vec<f64>, DensityStats)> {
    let tab = DirkTableau::new();
    let a = tab.a();
    let n = rho_n.len();
    let mut stage_flux: Vec<Vec<f64>> = Vec::with_capacity(3);
    let mut iterations = [0; 3];
    let mut rho_s = rho_n.to_vec();
    for (s, c) in tab.c().iter().enumerate() {
        let t = c * dt;
        let (u_s, guess) = match prev {
            Some(h) => {
                let w = lagrange_weights(&[-h.dt, 0.0, dt], t);
                (interpolate(&w, &[h.u, u_n, u_pred]), interpolate(&w, &[h.rho, rho_n, rho_pred]))
            }
            None => {
                let w = lagrange_weights(&[0.0, dt], t);
                (interpolate(&w, &[u_n, u_pred]), interpolate(&w, &[rho_n, rho_pred]))
            }
        };
        let du = op.assemble(&u_s);
        let mat = SparseMatrix::identity(n).combine(1.0, &du, dt * tab.beta);
        let mut rhs = rho_n.to_vec();
        for (sp, fl) in stage_flux.iter().enumerate() {
            rhs.iter_mut().zip(fl).for_each(|(r, f)| *r -= dt * a[s][sp] * f);
        }
        let out = match precond {
            PrecondKind::Ilu => gmres_solve(&mat, &rhs, &guess, &ilu_factor(&mat, cfg.ilu_droptol)?, cfg)?,
            PrecondKind::None => gmres_solve(&mat, &rhs, &guess, &IdentityPreconditioner, cfg)?,
        };
        iterations[s] = out.iterations;
        rho_s = out.x;
        stage_flux.push(du.matvec(&rho_s));
    }
    Ok((
        rho_s,
        DensityStats {
            iterations,
            first_step: prev.is_none(),
        },
    ))
}
