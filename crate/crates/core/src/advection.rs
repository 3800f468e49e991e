//! Low-rank semi-Lagrangian time stepping for linear advection.
//!
//! A step evaluates the semi-Lagrangian update lazily through an entry
//! oracle, compresses it with adaptive cross approximation and truncates the
//! result with an SVD. For compactly supported data the pivot search can be
//! restricted to a window predicted by forward characteristic tracing.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Result, SlarError};
use crate::lowrank::{aca_build, svd_truncate, AcaConfig, DenseMatrix, EntryOracle, IndexRange, MatrixAccessor, SvdFactors, ToleranceMode};
use crate::mesh::{BoundaryRule, PhaseGrid};
use crate::slfd::{sl_entry, trace_forward_rk3, VelocityField};

/// Rectangular pivot search window (inclusive, 0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexWindow {
    pub ix: IndexRange,
    pub iy: IndexRange,
}

impl IndexWindow {
    pub fn full(grid: &PhaseGrid) -> Self {
        let (nx, ny) = grid.shape();
        Self {
            ix: IndexRange::full(nx),
            iy: IndexRange::full(ny),
        }
    }

    /// Bounding box of pivot index sets; `None` if there are no pivots.
    pub fn from_pivots(rows: &[usize], cols: &[usize]) -> Option<Self> {
        let (rlo, rhi) = (rows.iter().min()?, rows.iter().max()?);
        let (clo, chi) = (cols.iter().min()?, cols.iter().max()?);
        Some(Self {
            ix: IndexRange::new(*rlo, *rhi),
            iy: IndexRange::new(*clo, *chi),
        })
    }

    /// Smallest window outside which every entry of `f` is below `tol`, from
    /// the bounds `|f_ij| <= |(U S)_i|` and `|f_ij| <= |(V S)_j|`.
    pub fn from_support(f: &SvdFactors, tol: f64) -> Option<Self> {
        let r = f.rank();
        let rows: Vec<usize> = (0..f.nrows()).filter(|&i| crate::lowrank::dot(f.scaled_left_row(i), f.scaled_left_row(i)).sqrt() >= tol).collect();
        let cols: Vec<usize> = (0..f.ncols())
            .filter(|&j| (0..r).map(|k| (f.v(j, k) * f.sigma()[k]).powi(2)).sum::<f64>().sqrt() >= tol)
            .collect();
        Self::from_pivots(&rows, &cols)
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            ix: IndexRange::new(self.ix.lo.min(other.ix.lo), self.ix.hi.max(other.ix.hi)),
            iy: IndexRange::new(self.iy.lo.min(other.iy.lo), self.iy.hi.max(other.iy.hi)),
        }
    }

    /// Window fed to [`predict_ranges`]: the pivot bounding box joined with
    /// the numerical support of the factors at level `tol`.
    pub fn tracking_base(f: &SvdFactors, rows: &[usize], cols: &[usize], tol: f64) -> Option<Self> {
        match (Self::from_pivots(rows, cols), Self::from_support(f, tol)) {
            (Some(a), Some(b)) => Some(a.union(&b)),
            (a, b) => a.or(b),
        }
    }

    /// Grow by `k` cells on every side, clamped to the grid.
    pub fn expand(&self, k: usize, grid: &PhaseGrid) -> Self {
        let (nx, ny) = grid.shape();
        Self {
            ix: IndexRange::new(self.ix.lo.saturating_sub(k), (self.ix.hi + k).min(nx - 1)),
            iy: IndexRange::new(self.iy.lo.saturating_sub(k), (self.iy.hi + k).min(ny - 1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlarConfig {
    pub eps_c: f64,
    pub eps_s: f64,
    pub r_max: usize,
    pub p: usize,
    pub s: usize,
    pub window_tracking: bool,
    pub tolerance_mode: ToleranceMode,
}

impl SlarConfig {
    pub fn new(eps_c: f64, eps_s: f64) -> Self {
        Self {
            eps_c,
            eps_s,
            r_max: usize::MAX,
            p: 5,
            s: 8,
            window_tracking: false,
            tolerance_mode: ToleranceMode::Absolute,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_c > 0.0) || !(self.eps_s > 0.0) {
            return Err(SlarError::config("eps", "tolerances must be positive"));
        }
        if self.eps_c >= self.eps_s {
            return Err(SlarError::config("eps_c", "must be smaller than eps_s"));
        }
        if self.r_max == 0 || self.p == 0 || self.s == 0 {
            return Err(SlarError::config("rmax/p/s", "must be at least 1"));
        }
        Ok(())
    }

    fn aca(&self, grid: &PhaseGrid) -> AcaConfig {
        let (nx, ny) = grid.shape();
        AcaConfig {
            eps_c: self.eps_c,
            r_max: self.r_max.min(nx.min(ny)),
            p: self.p,
            mode: self.tolerance_mode,
        }
    }
}

/// Per-step record of ranks, work and pivots.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub rank_cross: usize,
    pub rank_svd: usize,
    pub oracle_calls: usize,
    pub row_pivots: Vec<usize>,
    pub col_pivots: Vec<usize>,
    pub window: IndexWindow,
}

/// Predict the window at `t1` by tracing samples on the boundary of the
/// (±2-expanded) window forward from `t0`.
pub fn predict_ranges<V, R>(win: &IndexWindow, field: &V, t0: f64, t1: f64, grid: &PhaseGrid, s: usize, rng: &mut R) -> IndexWindow
where
    V: VelocityField + ?Sized,
    R: Rng + ?Sized,
{
    let w = win.expand(2, grid);
    let (x0, x1) = (grid.gx.center(w.ix.lo as isize), grid.gx.center(w.ix.hi as isize));
    let (y0, y1) = (grid.gy.center(w.iy.lo as isize), grid.gy.center(w.iy.hi as isize));
    let mut pts = vec![(x0, y0), (x0, y1), (x1, y0), (x1, y1)];
    for _ in 0..s {
        let tx = x0 + (x1 - x0) * rng.gen::<f64>();
        let ty = y0 + (y1 - y0) * rng.gen::<f64>();
        pts.extend([(tx, y0), (tx, y1), (x0, ty), (x1, ty)]);
    }
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        let (xf, yf) = trace_forward_rk3(field, x, y, t0, t1);
        xmin = xmin.min(xf);
        xmax = xmax.max(xf);
        ymin = ymin.min(yf);
        ymax = ymax.max(yf);
    }
    let bracket = |g: &crate::mesh::UniformGrid1D, lo: f64, hi: f64| {
        let n = g.n_cells() as isize;
        // largest center <= lo, smallest center >= hi; clamp when none exists
        let tie = crate::mesh::FACE_TIE;
        let a = ((lo - g.lo()) / g.delta() - 0.5 + tie).floor().clamp(0.0, (n - 1) as f64) as usize;
        let b = ((hi - g.lo()) / g.delta() - 0.5 - tie).ceil().clamp(0.0, (n - 1) as f64) as usize;
        IndexRange::new(a.min(b), b.max(a))
    };
    IndexWindow {
        ix: bracket(&grid.gx, xmin, xmax),
        iy: bracket(&grid.gy, ymin, ymax),
    }
}

/// One SLAR step: lazy semi-Lagrangian oracle, ACA, SVD truncation.
pub fn slar_step<A, V, R>(
    src: &A,
    grid: &PhaseGrid,
    field: &V,
    t0: f64,
    t1: f64,
    cfg: &SlarConfig,
    window: Option<IndexWindow>,
    rng: &mut R,
) -> Result<(SvdFactors, StepStats)>
where
    A: MatrixAccessor + ?Sized,
    V: VelocityField + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let (nx, ny) = grid.shape();
    if src.nrows() != nx || src.ncols() != ny {
        return Err(SlarError::GridMismatch(format!("solution is {}x{}, grid is {nx}x{ny}", src.nrows(), src.ncols())));
    }
    let window = window.unwrap_or_else(|| IndexWindow::full(grid));
    let oracle = EntryOracle::new(nx, ny, |i, j| sl_entry(src, grid, field, t0, t1, i, j)).with_ranges(window.ix, window.iy);
    let (cross, calls) = aca_build(&oracle, &cfg.aca(grid), rng)?;
    let svd = svd_truncate(&cross, cfg.eps_s);
    let stats = StepStats {
        rank_cross: cross.rank(),
        rank_svd: svd.rank(),
        oracle_calls: calls,
        row_pivots: cross.row_pivots().to_vec(),
        col_pivots: cross.col_pivots().to_vec(),
        window,
    };
    Ok((svd, stats))
}

/// Constant-coefficient advection on `[-pi, pi]^2`, `a = b = 1`.
pub fn constant_field() -> crate::slfd::ConstantField {
    crate::slfd::ConstantField { a: 1.0, b: 1.0 }
}

/// Rigid body rotation about the origin, `a = -y`, `b = x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidRotation;

impl VelocityField for RigidRotation {
    fn a(&self, _: f64, y: f64, _: f64) -> f64 {
        -y
    }
    fn b(&self, x: f64, _: f64, _: f64) -> f64 {
        x
    }
    fn amax(&self) -> f64 {
        PI
    }
    fn bmax(&self) -> f64 {
        PI
    }
}

/// Swirling deformation flow reversing at half `period`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Swirl {
    pub period: f64,
}

impl Swirl {
    fn g(&self, t: f64) -> f64 {
        (PI * t / self.period).cos()
    }
}

impl VelocityField for Swirl {
    fn a(&self, x: f64, y: f64, t: f64) -> f64 {
        -2.0 * PI * (0.5 * x).cos().powi(2) * y.sin() * self.g(t)
    }
    fn b(&self, x: f64, y: f64, t: f64) -> f64 {
        2.0 * PI * x.sin() * (0.5 * y).cos().powi(2) * self.g(t)
    }
    fn amax(&self) -> f64 {
        2.0 * PI
    }
    fn bmax(&self) -> f64 {
        2.0 * PI
    }
}

/// Cosine bell of radius `0.3 pi` centred at `(0.3 pi, 0)`.
pub fn cosine_bell(x: f64, y: f64) -> f64 {
    let r0 = 0.3 * PI;
    let r = (x - 0.3 * PI).hypot(y);
    if r < r0 {
        r0 * (r * PI / (2.0 * r0)).cos().powi(6)
    } else {
        0.0
    }
}

/// Linear benchmark initial conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearProblem {
    ConstAdvSine,
    RbrCosineBell,
    RbrGaussian,
    SwirlCosineBell,
}

impl LinearProblem {
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "const_adv_sine" => Self::ConstAdvSine,
            "rbr_cosine_bell" => Self::RbrCosineBell,
            "rbr_gaussian" => Self::RbrGaussian,
            "swirl_cosine_bell" => Self::SwirlCosineBell,
            other => return Err(SlarError::UnknownScenario(other.to_string())),
        })
    }

    pub fn boundary(&self) -> BoundaryRule {
        match self {
            Self::ConstAdvSine => BoundaryRule::Periodic,
            _ => BoundaryRule::ZeroExtension,
        }
    }

    /// Analytic initial value.
    pub fn initial(&self, x: f64, y: f64) -> f64 {
        match self {
            Self::ConstAdvSine => (x + y).sin(),
            Self::RbrCosineBell | Self::SwirlCosineBell => cosine_bell(x, y),
            Self::RbrGaussian => (-25.0 * x * x).exp() * (-2.0 * y * y).exp(),
        }
    }

    /// Exact solution at time `t` where one is available in closed form.
    pub fn exact(&self, x: f64, y: f64, t: f64) -> Option<f64> {
        match self {
            Self::ConstAdvSine => Some((x + y - 2.0 * t).sin()),
            Self::RbrCosineBell | Self::RbrGaussian => {
                let (c, s) = (t.cos(), t.sin());
                Some(self.initial(c * x + s * y, -s * x + c * y))
            }
            Self::SwirlCosineBell => {
                let k = (t / 1.5).round();
                ((t - 1.5 * k).abs() < 1e-12).then(|| self.initial(x, y))
            }
        }
    }

    pub fn is_compact(&self) -> bool {
        !matches!(self, Self::ConstAdvSine)
    }
}

/// Factored initial condition on `grid`, with the ACA pivots used to build it.
pub fn init_problem<R: Rng + ?Sized>(problem: LinearProblem, grid: &PhaseGrid, rng: &mut R) -> Result<(SvdFactors, Vec<usize>, Vec<usize>)> {
    let xs = grid.gx.centers();
    let ys = grid.gy.centers();
    match problem {
        LinearProblem::ConstAdvSine => {
            let sx: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
            let cx: Vec<f64> = xs.iter().map(|x| x.cos()).collect();
            let sy: Vec<f64> = ys.iter().map(|y| y.sin()).collect();
            let cy: Vec<f64> = ys.iter().map(|y| y.cos()).collect();
            // sin(x + y) = sin x cos y + cos x sin y, re-orthogonalised
            let m = DenseMatrix::from_fn(xs.len(), ys.len(), |i, j| sx[i] * cy[j] + cx[i] * sy[j]);
            let f = SvdFactors::from_dense(&m, 1e-10);
            Ok((f, Vec::new(), Vec::new()))
        }
        LinearProblem::RbrGaussian => {
            let gx: Vec<f64> = xs.iter().map(|x| (-25.0 * x * x).exp()).collect();
            let gy: Vec<f64> = ys.iter().map(|y| (-2.0 * y * y).exp()).collect();
            Ok((SvdFactors::rank_one(&gx, &gy), Vec::new(), Vec::new()))
        }
        _ => {
            // the bell vanishes outside its bounding box, so search there only
            let r0 = 0.3 * PI;
            let span = |g: &crate::mesh::UniformGrid1D, lo: f64, hi: f64| {
                let a = g.raw_cell(lo).clamp(0, g.n_cells() as isize - 1) as usize;
                let b = g.raw_cell(hi).clamp(0, g.n_cells() as isize - 1) as usize;
                IndexRange::new(a, b)
            };
            let oracle = EntryOracle::new(xs.len(), ys.len(), |i, j| problem.initial(xs[i], ys[j]))
                .with_ranges(span(&grid.gx, 0.3 * PI - r0, 0.3 * PI + r0), span(&grid.gy, -r0, r0));
            let (cross, _) = aca_build(&oracle, &AcaConfig::new(1e-12, xs.len().min(ys.len())), rng)?;
            Ok((svd_truncate(&cross, 1e-10), cross.row_pivots().to_vec(), cross.col_pivots().to_vec()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::UniformGrid1D;
    use crate::slfd::{sl_dense_step, ConstantField};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, rule: BoundaryRule) -> PhaseGrid {
        let g = UniformGrid1D::new(n, -PI, PI).unwrap();
        PhaseGrid::new(g, g, rule, rule)
    }

    #[test]
    fn sine_initial_condition_rank_two() {
        let g = grid(32, BoundaryRule::Periodic);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (f, _, _) = init_problem(LinearProblem::ConstAdvSine, &g, &mut rng).unwrap();
        assert_eq!(f.rank(), 2);
        let xs = g.gx.centers();
        for i in 0..32 {
            for j in 0..32 {
                assert!((f.entry(i, j) - (xs[i] + xs[j]).sin()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gaussian_rank_one_and_bell_accuracy() {
        let g = grid(64, BoundaryRule::ZeroExtension);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (f, _, _) = init_problem(LinearProblem::RbrGaussian, &g, &mut rng).unwrap();
        assert_eq!(f.rank(), 1);
        let g = grid(256, BoundaryRule::ZeroExtension);
        let (f, rows, _) = init_problem(LinearProblem::RbrCosineBell, &g, &mut rng).unwrap();
        assert!(!rows.is_empty());
        let xs = g.gx.centers();
        let mut worst: f64 = 0.0;
        for i in 0..256 {
            for j in 0..256 {
                worst = worst.max((f.entry(i, j) - cosine_bell(xs[i], xs[j])).abs());
            }
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn zero_solution_stays_rank_zero() {
        let g = grid(16, BoundaryRule::Periodic);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (f, st) = slar_step(&SvdFactors::zero(16, 16), &g, &RigidRotation, 0.0, 0.1, &SlarConfig::new(1e-6, 1e-5), None, &mut rng).unwrap();
        assert_eq!(f.rank(), 0);
        assert_eq!(st.rank_cross, 0);
    }

    #[test]
    fn sine_step_keeps_rank_two() {
        let g = grid(32, BoundaryRule::Periodic);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (f, _, _) = init_problem(LinearProblem::ConstAdvSine, &g, &mut rng).unwrap();
        let dt = 0.5 * g.gx.delta();
        let cfg = SlarConfig::new(1e-10, 1e-8);
        let (out, st) = slar_step(&f, &g, &constant_field(), 0.0, dt, &cfg, None, &mut rng).unwrap();
        assert_eq!(out.rank(), 2, "{:?} {}", out.sigma(), st.rank_cross);
        assert!(st.rank_svd <= st.rank_cross);
        let dense = sl_dense_step(&f, &g, &constant_field(), 0.0, dt);
        let xs = g.gx.centers();
        let mut err: f64 = 0.0;
        for i in 0..32 {
            for j in 0..32 {
                assert!((out.entry(i, j) - dense.get(i, j)).abs() < 1e-8);
                err = err.max((out.entry(i, j) - (xs[i] + xs[j] - 2.0 * dt).sin()).abs());
            }
        }
        assert!(err < 1e-3);
    }

    #[test]
    fn window_unchanged_for_zero_field() {
        let g = grid(64, BoundaryRule::ZeroExtension);
        let w = IndexWindow {
            ix: IndexRange::new(10, 20),
            iy: IndexRange::new(30, 40),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = predict_ranges(&w, &ConstantField { a: 0.0, b: 0.0 }, 0.0, 1.0, &g, 8, &mut rng);
        assert_eq!(p, w.expand(2, &g));
    }

    #[test]
    fn window_follows_constant_shift() {
        let g = grid(64, BoundaryRule::ZeroExtension);
        let dx = g.gx.delta();
        let w = IndexWindow {
            ix: IndexRange::new(10, 20),
            iy: IndexRange::new(30, 40),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = ConstantField { a: 3.0 * dx, b: 0.0 };
        let p = predict_ranges(&w, &f, 0.0, 1.0, &g, 8, &mut rng);
        let e = w.expand(2, &g);
        // corners move exactly three cells
        assert_eq!(p.ix, IndexRange::new(e.ix.lo + 3, e.ix.hi + 3));
        assert_eq!(p.iy, e.iy);
    }

    #[test]
    fn window_contains_rotated_box() {
        let g = grid(128, BoundaryRule::ZeroExtension);
        let c = g.gx.raw_cell(0.3 * PI) as usize;
        let w = IndexWindow {
            ix: IndexRange::new(c - 5, c + 5),
            iy: IndexRange::new(59, 68),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dt = 0.1;
        let p = predict_ranges(&w, &RigidRotation, 0.0, dt, &g, 8, &mut rng);
        let e = w.expand(2, &g);
        let (cs, sn) = (dt.cos(), dt.sin());
        for &i in &[e.ix.lo, e.ix.hi] {
            for &j in &[e.iy.lo, e.iy.hi] {
                let (x, y) = (g.gx.center(i as isize), g.gy.center(j as isize));
                let (xr, yr) = (cs * x - sn * y, sn * x + cs * y);
                assert!(g.gx.center(p.ix.lo as isize) <= xr + 1e-4 && xr - 1e-4 <= g.gx.center(p.ix.hi as isize));
                assert!(g.gy.center(p.iy.lo as isize) <= yr + 1e-4 && yr - 1e-4 <= g.gy.center(p.iy.hi as isize));
            }
        }
        // a quarter turn in small steps ends in the upper half plane
        let mut win = w;
        for k in 0..16 {
            let t = k as f64 * PI / 32.0;
            win = predict_ranges(&win, &RigidRotation, t, t + PI / 32.0, &g, 8, &mut rng);
        }
        assert!(g.gy.center(win.iy.hi as isize) > 0.3 * PI);
        assert!(g.gx.center(win.ix.lo as isize) < 0.0 && g.gx.center(win.ix.hi as isize) > 0.0);
    }

    #[test]
    fn tracked_window_keeps_outside_small() {
        let g = grid(64, BoundaryRule::ZeroExtension);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (f0, rows, cols) = init_problem(LinearProblem::RbrCosineBell, &g, &mut rng).unwrap();
        let mut cfg = SlarConfig::new(1e-6, 1e-5);
        cfg.window_tracking = true;
        let dt = 0.2;
        let win = IndexWindow::tracking_base(&f0, &rows, &cols, cfg.eps_c).unwrap();
        assert!(win.iy.hi > IndexWindow::from_pivots(&rows, &cols).unwrap().iy.hi);
        let pred = predict_ranges(&win, &RigidRotation, 0.0, dt, &g, cfg.s, &mut rng);
        let (f1, st) = slar_step(&f0, &g, &RigidRotation, 0.0, dt, &cfg, Some(pred), &mut rng).unwrap();
        assert!(st.row_pivots.iter().all(|i| pred.ix.contains(*i)));
        let dense = sl_dense_step(&f0, &g, &RigidRotation, 0.0, dt);
        for i in 0..64 {
            for j in 0..64 {
                if !pred.ix.contains(i) || !pred.iy.contains(j) {
                    assert!(dense.get(i, j).abs() < cfg.eps_s, "{i} {j} {}", dense.get(i, j));
                }
                assert!((f1.entry(i, j) - dense.get(i, j)).abs() < 1e-3);
            }
        }
    }
}
