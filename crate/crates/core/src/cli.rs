//! Scenario presets, run orchestration, convergence and scaling drivers.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::advection::{constant_field, init_problem, predict_ranges, slar_step, IndexWindow, LinearProblem, RigidRotation, SlarConfig, Swirl};
use crate::diagnostics::{error_norms, find_peaks, fit_peak_range, fit_rate, least_squares_slope, successive_orders, Invariants, RunDiagnostics, PEAK_SEPARATION};
use crate::error::{Result, SlarError};
use crate::implicit_density::{FluxSplitOperator, PrecondKind};
use crate::lowrank::{DenseMatrix, MatrixAccessor, SvdFactors};
use crate::mesh::{time_step_from_cfl, BoundaryRule, PhaseGrid, UniformGrid1D};
use crate::slfd::VelocityField;
use crate::vlasov::{vp_step, vp_time_step, KineticSolution, VpOptions, VpProblem, VpState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    ConstAdv,
    RigidRotation,
    RigidRotationGaussian,
    Swirl,
    LandauWeak,
    LandauStrong,
    BumpOnTail,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::ConstAdv,
        Scenario::RigidRotation,
        Scenario::RigidRotationGaussian,
        Scenario::Swirl,
        Scenario::LandauWeak,
        Scenario::LandauStrong,
        Scenario::BumpOnTail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::ConstAdv => "const_adv",
            Scenario::RigidRotation => "rigid_rotation",
            Scenario::RigidRotationGaussian => "rigid_rotation_gaussian",
            Scenario::Swirl => "swirl",
            Scenario::LandauWeak => "landau_weak",
            Scenario::LandauStrong => "landau_strong",
            Scenario::BumpOnTail => "bump_on_tail",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| SlarError::UnknownScenario(s.to_string()))
    }

    pub fn is_vp(self) -> bool {
        matches!(self, Scenario::LandauWeak | Scenario::LandauStrong | Scenario::BumpOnTail)
    }

    pub fn linear_problem(self) -> Option<LinearProblem> {
        match self {
            Scenario::ConstAdv => Some(LinearProblem::ConstAdvSine),
            Scenario::RigidRotation => Some(LinearProblem::RbrCosineBell),
            Scenario::RigidRotationGaussian => Some(LinearProblem::RbrGaussian),
            Scenario::Swirl => Some(LinearProblem::SwirlCosineBell),
            _ => None,
        }
    }

    pub fn vp_problem(self) -> Option<VpProblem> {
        match self {
            Scenario::LandauWeak => Some(VpProblem::Landau { k: 0.5, alpha: 0.01 }),
            Scenario::LandauStrong => Some(VpProblem::Landau { k: 0.5, alpha: 0.5 }),
            Scenario::BumpOnTail => Some(VpProblem::BumpOnTail),
            _ => None,
        }
    }

    /// `(x_lo, x_hi, y_lo, y_hi)` of the computational domain.
    pub fn domain(self) -> (f64, f64, f64, f64) {
        match self {
            Scenario::LandauWeak | Scenario::LandauStrong => (0.0, 4.0 * PI, -2.0 * PI, 2.0 * PI),
            Scenario::BumpOnTail => (0.0, 20.0 * PI / 3.0, -13.0, 13.0),
            _ => (-PI, PI, -PI, PI),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub nx: usize,
    pub ny: usize,
    pub cfl: f64,
    pub t_final: f64,
    /// Fixed step size overriding the CFL rule.
    pub dt: Option<f64>,
    pub eps_c: f64,
    pub eps_s: f64,
    pub r_max: usize,
    pub p: usize,
    pub s: usize,
    pub seed: u64,
    pub vmin: Option<f64>,
    pub vmax: Option<f64>,
    /// Record every `cadence` steps (the final step is always recorded).
    pub cadence: usize,
    pub window: WindowMode,
    pub precond: PrecondKind,
    /// Write pivots every this many steps; 0 disables.
    pub pivots: usize,
    pub zero_initial: bool,
    pub out: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn preset(scenario: Scenario) -> Self {
        let (n, cfl, t_final, eps_c, eps_s) = match scenario {
            Scenario::ConstAdv => (128, 1.0, 2.0, 1e-4, 1e-3),
            Scenario::RigidRotation => (128, 10.0, 2.0 * PI, 1e-4, 1e-3),
            Scenario::RigidRotationGaussian => (256, 10.0, 2.0 * PI, 1e-4, 1e-3),
            Scenario::Swirl => (256, 10.0, 1.5, 1e-4, 1e-3),
            Scenario::LandauWeak => (256, 10.0, 30.0, 1e-5, 1e-4),
            Scenario::LandauStrong => (256, 10.0, 40.0, 1e-4, 1e-3),
            Scenario::BumpOnTail => (256, 10.0, 40.0, 1e-4, 1e-3),
        };
        Self {
            scenario,
            nx: n,
            ny: n,
            cfl,
            t_final,
            dt: None,
            eps_c,
            eps_s,
            r_max: usize::MAX,
            p: 5,
            s: 8,
            seed: 0,
            vmin: None,
            vmax: None,
            cadence: 1,
            window: WindowMode::Auto,
            precond: PrecondKind::Ilu,
            pivots: 0,
            zero_initial: false,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 4 || self.ny < 4 {
            return Err(SlarError::config("nx/ny", "need at least 4 cells per dimension"));
        }
        if !(self.t_final > 0.0) {
            return Err(SlarError::config("tfinal", "must be positive"));
        }
        if !(self.cfl > 0.0) {
            return Err(SlarError::config("cfl", "must be positive"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(SlarError::config("dt", "must be positive"));
            }
        }
        if self.cadence == 0 {
            return Err(SlarError::config("cadence", "must be at least 1"));
        }
        let (_, _, lo, hi) = self.domain();
        if !(hi > lo) {
            return Err(SlarError::config("vmin/vmax", "need vmin < vmax"));
        }
        self.slar().validate()
    }

    pub fn domain(&self) -> (f64, f64, f64, f64) {
        let (x0, x1, y0, y1) = self.scenario.domain();
        (x0, x1, self.vmin.unwrap_or(y0), self.vmax.unwrap_or(y1))
    }

    pub fn grid(&self) -> Result<PhaseGrid> {
        let (x0, x1, y0, y1) = self.domain();
        let (bx, by) = match self.scenario.linear_problem() {
            Some(p) => (p.boundary(), p.boundary()),
            None => (BoundaryRule::Periodic, BoundaryRule::ZeroExtension),
        };
        Ok(PhaseGrid::new(UniformGrid1D::new(self.nx, x0, x1)?, UniformGrid1D::new(self.ny, y0, y1)?, bx, by))
    }

    pub fn slar(&self) -> SlarConfig {
        let mut c = SlarConfig::new(self.eps_c, self.eps_s);
        c.r_max = self.r_max;
        c.p = self.p;
        c.s = self.s;
        c.window_tracking = self.window_tracking();
        c
    }

    pub fn window_tracking(&self) -> bool {
        match self.window {
            WindowMode::On => true,
            WindowMode::Off => false,
            WindowMode::Auto => self.scenario.linear_problem().is_some_and(|p| p.is_compact()),
        }
    }

    /// Apply one `key=value` setting; keys accept `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| SlarError::config(key, format!("cannot parse `{v}`")))
        }
        let opt_f64 = |v: &str| -> Result<Option<f64>> {
            if v == "none" {
                Ok(None)
            } else {
                num(&key, v).map(Some)
            }
        };
        match key.as_str() {
            "scenario" => self.scenario = Scenario::from_name(v)?,
            "nx" => self.nx = num(&key, v)?,
            "ny" => self.ny = num(&key, v)?,
            "cfl" => self.cfl = num(&key, v)?,
            "tfinal" | "t_final" => self.t_final = num(&key, v)?,
            "dt" => self.dt = opt_f64(v)?,
            "eps_c" => self.eps_c = num(&key, v)?,
            "eps_s" => self.eps_s = num(&key, v)?,
            "rmax" | "r_max" => self.r_max = if v == "none" { usize::MAX } else { num(&key, v)? },
            "samples_p" | "p" => self.p = num(&key, v)?,
            "samples_s" | "s" => self.s = num(&key, v)?,
            "seed" => self.seed = num(&key, v)?,
            "vmin" => self.vmin = opt_f64(v)?,
            "vmax" => self.vmax = opt_f64(v)?,
            "cadence" => self.cadence = num(&key, v)?,
            "pivots" => self.pivots = num(&key, v)?,
            "zero_initial" => self.zero_initial = num(&key, v)?,
            "window" => {
                self.window = match v {
                    "auto" => WindowMode::Auto,
                    "on" => WindowMode::On,
                    "off" => WindowMode::Off,
                    _ => return Err(SlarError::config("window", "expected auto, on or off")),
                }
            }
            "precond" => {
                self.precond = match v {
                    "ilu" => PrecondKind::Ilu,
                    "none" => PrecondKind::None,
                    _ => return Err(SlarError::config("precond", "expected ilu or none")),
                }
            }
            "out" => self.out = Some(PathBuf::from(v)),
            _ => return Err(SlarError::config(&key, "unknown key")),
        }
        Ok(())
    }

    /// Apply a `key=value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SlarError::config("config", format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v).map_err(|e| match e {
                SlarError::Config { field, message } => SlarError::Config {
                    field,
                    message: format!("line {}: {message}", n + 1),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Fully resolved configuration in the format read by [`Self::apply_text`].
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:e}"));
        let mut s = String::new();
        let _ = writeln!(s, "scenario={}", self.scenario.name());
        let _ = writeln!(s, "nx={}", self.nx);
        let _ = writeln!(s, "ny={}", self.ny);
        let _ = writeln!(s, "cfl={:e}", self.cfl);
        let _ = writeln!(s, "tfinal={:e}", self.t_final);
        let _ = writeln!(s, "dt={}", opt(self.dt));
        let _ = writeln!(s, "eps_c={:e}", self.eps_c);
        let _ = writeln!(s, "eps_s={:e}", self.eps_s);
        let _ = writeln!(s, "rmax={}", if self.r_max == usize::MAX { "none".to_string() } else { self.r_max.to_string() });
        let _ = writeln!(s, "samples_p={}", self.p);
        let _ = writeln!(s, "samples_s={}", self.s);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "vmin={}", opt(self.vmin));
        let _ = writeln!(s, "vmax={}", opt(self.vmax));
        let _ = writeln!(s, "cadence={}", self.cadence);
        let _ = writeln!(s, "window={}", match self.window {
            WindowMode::Auto => "auto",
            WindowMode::On => "on",
            WindowMode::Off => "off",
        });
        let _ = writeln!(s, "precond={}", match self.precond {
            PrecondKind::Ilu => "ilu",
            PrecondKind::None => "none",
        });
        let _ = writeln!(s, "pivots={}", self.pivots);
        let _ = writeln!(s, "zero_initial={}", self.zero_initial);
        s
    }
}

/// Final solution of a run.
#[derive(Debug, Clone)]
pub enum FinalState {
    Advection(SvdFactors),
    Vlasov(KineticSolution),
}

impl FinalState {
    pub fn rank(&self) -> usize {
        match self {
            FinalState::Advection(f) => f.rank(),
            FinalState::Vlasov(f) => f.rank(),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            FinalState::Advection(f) => f.to_dense(),
            FinalState::Vlasov(f) => f.to_dense(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub diagnostics: RunDiagnostics,
    pub steps: usize,
    pub final_time: f64,
    pub errors: Option<(f64, f64)>,
    pub domain_area: f64,
    pub wall_time: f64,
    /// GMRES iteration counts, three per step.
    pub gmres_iterations: Vec<usize>,
    pub decay_rate: Option<f64>,
    pub growth_rate: Option<f64>,
    pub state: FinalState,
}

impl RunOutcome {
    pub fn average_gmres_iterations(&self) -> f64 {
        if self.gmres_iterations.is_empty() {
            return 0.0;
        }
        self.gmres_iterations.iter().sum::<usize>() as f64 / self.gmres_iterations.len() as f64
    }

    pub fn summary(&self, cfg: &ScenarioConfig) -> String {
        let (rc, rs) = self.diagnostics.average_ranks();
        let opt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.10e}"));
        let mut s = String::new();
        let _ = writeln!(s, "scenario={}", cfg.scenario.name());
        let _ = writeln!(s, "nx={}", cfg.nx);
        let _ = writeln!(s, "ny={}", cfg.ny);
        let _ = writeln!(s, "seed={}", cfg.seed);
        let _ = writeln!(s, "steps={}", self.steps);
        let _ = writeln!(s, "final_time={:.10e}", self.final_time);
        let _ = writeln!(s, "l1_error={}", opt(self.errors.map(|e| e.0)));
        let _ = writeln!(s, "l1_error_per_area={}", opt(self.errors.map(|e| e.0 / self.domain_area)));
        let _ = writeln!(s, "linf_error={}", opt(self.errors.map(|e| e.1)));
        let _ = writeln!(s, "avg_rank_cross={rc:.4}");
        let _ = writeln!(s, "avg_rank_svd={rs:.4}");
        let _ = writeln!(s, "final_rank_svd={}", self.state.rank());
        let _ = writeln!(s, "mass_max_rel_dev={:.6e}", self.diagnostics.max_abs_mass_dev());
        let _ = writeln!(s, "momentum_max_dev={:.6e}", self.diagnostics.max_abs_momentum_dev());
        let _ = writeln!(s, "energy_max_rel_dev={:.6e}", self.diagnostics.max_abs_energy_dev());
        let _ = writeln!(s, "gmres_avg_iterations={:.4}", self.average_gmres_iterations());
        let _ = writeln!(s, "decay_rate={}", opt(self.decay_rate));
        let _ = writeln!(s, "growth_rate={}", opt(self.growth_rate));
        let _ = writeln!(s, "wall_time_s={:.3}", self.wall_time);
        s
    }
}

fn linear_field(sc: Scenario) -> Box<dyn VelocityField> {
    match sc {
        Scenario::ConstAdv => Box::new(constant_field()),
        Scenario::Swirl => Box::new(Swirl { period: 1.5 }),
        _ => Box::new(RigidRotation),
    }
}

fn is_recorded(step: usize, cadence: usize, last: bool) -> bool {
    last || step % cadence == 0
}

/// Execute the scenario to `t_final`.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = if cfg.scenario.is_vp() { run_vp(cfg)? } else { run_linear(cfg)? };
    out.wall_time = start.elapsed().as_secs_f64();
    Ok(out)
}

fn run_linear(cfg: &ScenarioConfig) -> Result<RunOutcome> {
    let problem = cfg.scenario.linear_problem().expect("linear scenario");
    let grid = cfg.grid()?;
    let field = linear_field(cfg.scenario);
    let slar = cfg.slar();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut f, rows, cols) = init_problem(problem, &grid, &mut rng)?;
    if cfg.zero_initial {
        f = SvdFactors::zero(cfg.nx, cfg.ny);
    }
    let dt = match cfg.dt {
        Some(dt) => dt,
        None => {
            // equal steps no larger than the CFL step
            let h = time_step_from_cfl(cfg.cfl, field.amax(), field.bmax(), grid.gx.delta(), grid.gy.delta())?;
            cfg.t_final / (cfg.t_final / h - 1e-9).ceil()
        }
    };
    let mut diag = RunDiagnostics::new();
    diag.record(0.0, f.rank(), f.rank(), 0, 0.0, Invariants::advection(&f, &grid));
    let mut base = if slar.window_tracking { IndexWindow::tracking_base(&f, &rows, &cols, slar.eps_c) } else { None };
    let (mut t, mut step) = (0.0, 0);
    let tol = 1e-12 * cfg.t_final;
    while t < cfg.t_final - tol {
        let h = dt.min(cfg.t_final - t);
        let t1 = if cfg.t_final - (t + h) <= tol { cfg.t_final } else { t + h };
        let win = base.map(|b| predict_ranges(&b, field.as_ref(), t, t1, &grid, slar.s, &mut rng));
        let (next, st) = slar_step(&f, &grid, field.as_ref(), t, t1, &slar, win, &mut rng)?;
        f = next;
        t = t1;
        step += 1;
        if slar.window_tracking {
            base = IndexWindow::tracking_base(&f, &st.row_pivots, &st.col_pivots, slar.eps_c);
        }
        let last = t >= cfg.t_final - tol;
        if is_recorded(step, cfg.cadence, last) {
            diag.record(t, st.rank_cross, st.rank_svd, st.oracle_calls, 0.0, Invariants::advection(&f, &grid));
        }
        if cfg.pivots > 0 && (step % cfg.pivots == 0 || last) {
            diag.record_pivots(step, &st.row_pivots, &st.col_pivots);
        }
    }
    let errors = match problem.exact(0.0, 0.0, t) {
        Some(_) if !cfg.zero_initial => {
            let xs = grid.gx.centers();
            let ys = grid.gy.centers();
            let exact = DenseMatrix::from_fn(cfg.nx, cfg.ny, |i, j| problem.exact(xs[i], ys[j], t).unwrap());
            Some(error_norms(&f, &exact, &grid)?)
        }
        _ => None,
    };
    Ok(RunOutcome {
        diagnostics: diag,
        steps: step,
        final_time: t,
        errors,
        domain_area: grid.gx.length() * grid.gy.length(),
        wall_time: 0.0,
        gmres_iterations: Vec::new(),
        decay_rate: None,
        growth_rate: None,
        state: FinalState::Advection(f),
    })
}

fn run_vp(cfg: &ScenarioConfig) -> Result<RunOutcome> {
    let problem = cfg.scenario.vp_problem().expect("VP scenario");
    let grid = cfg.grid()?;
    let slar = cfg.slar();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f0 = if cfg.zero_initial { SvdFactors::zero(cfg.nx, cfg.ny) } else { problem.initial(&grid) };
    let mut state = VpState::new(KineticSolution::from_svd(f0), &grid)?;
    let op = FluxSplitOperator::new(cfg.nx, grid.gx.delta());
    let opts = VpOptions {
        precond: cfg.precond,
        ..VpOptions::default()
    };
    let dx = grid.gx.delta();
    let mut diag = RunDiagnostics::new();
    let r0 = state.f.rank();
    diag.record(0.0, r0, r0, 0, state.field.e_l2(dx), Invariants::vp(&state.macro_state, &state.field, dx));
    let mut gmres = Vec::new();
    let mut step = 0;
    let tol = 1e-12 * cfg.t_final;
    while state.t < cfg.t_final - tol {
        let h = match cfg.dt {
            Some(dt) => dt,
            None => vp_time_step(cfg.cfl, &state, &grid)?,
        };
        let h = h.min(cfg.t_final - state.t);
        let h = if cfg.t_final - (state.t + h) <= tol { cfg.t_final - state.t } else { h };
        let (mut next, st) = vp_step(&state, h, &slar, &opts, &grid, &op, &mut rng)?;
        if cfg.t_final - next.t <= tol {
            next.t = cfg.t_final;
        }
        state = next;
        step += 1;
        if let Some(d) = &st.density {
            gmres.extend_from_slice(&d.iterations);
        }
        let last = state.t >= cfg.t_final - tol;
        let s3 = st.last();
        if is_recorded(step, cfg.cadence, last) {
            diag.record(state.t, s3.rank_cross, s3.rank_svd, st.oracle_calls(), state.field.e_l2(dx), Invariants::vp(&state.macro_state, &state.field, dx));
        }
        if cfg.pivots > 0 && (step % cfg.pivots == 0 || last) {
            diag.record_pivots(step, &s3.row_pivots, &s3.col_pivots);
        }
    }
    let (t, e) = (diag.times(), diag.e_l2());
    let (decay_rate, growth_rate) = match cfg.scenario {
        Scenario::LandauStrong => (fit_peak_range(&t, &e, 1, 2).ok(), fit_peak_range(&t, &e, 9, 11).ok()),
        Scenario::LandauWeak => {
            let logs: Vec<f64> = e.iter().map(|x| x.ln()).collect();
            (fit_rate(&t, &e, &find_peaks(&logs, PEAK_SEPARATION)).ok(), None)
        }
        _ => (None, None),
    };
    Ok(RunOutcome {
        diagnostics: diag,
        steps: step,
        final_time: state.t,
        errors: None,
        domain_area: grid.gx.length() * grid.gy.length(),
        wall_time: 0.0,
        gmres_iterations: gmres,
        decay_rate,
        growth_rate,
        state: FinalState::Vlasov(state.f),
    })
}

fn write_pivots(dir: &Path, diag: &RunDiagnostics) -> Result<()> {
    for p in diag.pivots() {
        let mut w = BufWriter::new(fs::File::create(dir.join(format!("pivots_{}.csv", p.step)))?);
        writeln!(w, "axis,index")?;
        for i in &p.rows {
            writeln!(w, "row,{}", i + 1)?;
        }
        for j in &p.cols {
            writeln!(w, "col,{}", j + 1)?;
        }
    }
    Ok(())
}

/// Write `diagnostics.csv`, `summary.txt`, `config.txt` and pivot files.
pub fn write_outputs(dir: &Path, cfg: &ScenarioConfig, out: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(fs::File::create(dir.join("diagnostics.csv"))?);
    out.diagnostics.write_csv(&mut w)?;
    w.flush()?;
    fs::write(dir.join("summary.txt"), out.summary(cfg))?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    write_pivots(dir, &out.diagnostics)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScanMode {
    Mesh(Vec<usize>),
    Cfl(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub cfl: f64,
    pub l1: f64,
    pub linf: f64,
    pub order_l1: f64,
    pub order_linf: f64,
    pub avg_rank_svd: f64,
    pub avg_rank_cross: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slopes of `log e` against `log CFL` (temporal mode).
    pub slope_l1: Option<f64>,
    pub slope_linf: Option<f64>,
}

impl ConvergenceTable {
    pub fn mean_order_l1(&self) -> f64 {
        let o: Vec<f64> = self.rows.iter().map(|r| r.order_l1).filter(|x| x.is_finite()).collect();
        o.iter().sum::<f64>() / o.len() as f64
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "n,cfl,l1,linf,order_l1,order_linf,avg_rank_svd,avg_rank_cross,wall_time_s")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:e},{:.6e},{:.6e},{:.4},{:.4},{:.4},{:.4},{:.3}",
                r.n, r.cfl, r.l1, r.linf, r.order_l1, r.order_linf, r.avg_rank_svd, r.avg_rank_cross, r.wall_time
            )?;
        }
        Ok(())
    }
}

/// Ratio of the time-step refinement used for self-references.
pub const SELF_REFERENCE_REFINEMENT: f64 = 16.0;

/// Error of `out` against the exact solution or against `reference`.
fn level_errors(cfg: &ScenarioConfig, out: &RunOutcome, reference: Option<&DenseMatrix>) -> Result<(f64, f64)> {
    match (out.errors, reference) {
        (Some(e), _) => Ok(e),
        (None, Some(r)) => error_norms(&out.state.to_dense(), r, &cfg.grid()?),
        (None, None) => Err(SlarError::config("scenario", "no exact solution and no reference available")),
    }
}

/// Run the scenario on each level and tabulate errors and orders.
///
/// Mesh mode needs an exact solution. Temporal mode uses the exact solution
/// when available and otherwise a same-mesh full-window run with the
/// smallest CFL divided by [`SELF_REFERENCE_REFINEMENT`].
pub fn convergence(base: &ScenarioConfig, mode: &ScanMode) -> Result<ConvergenceTable> {
    let levels: Vec<ScenarioConfig> = match mode {
        ScanMode::Mesh(ns) => ns
            .iter()
            .map(|&n| ScenarioConfig { nx: n, ny: n, ..base.clone() })
            .collect(),
        ScanMode::Cfl(cs) => cs.iter().map(|&c| ScenarioConfig { cfl: c, dt: None, ..base.clone() }).collect(),
    };
    if levels.len() < 2 {
        return Err(SlarError::config("levels", "need at least two levels"));
    }
    let needs_ref = base.scenario.is_vp() || base.scenario.linear_problem().and_then(|p| p.exact(0.0, 0.0, base.t_final)).is_none();
    let reference = match mode {
        ScanMode::Cfl(cs) if needs_ref => {
            let cmin = cs.iter().cloned().fold(f64::INFINITY, f64::min);
            let rcfg = ScenarioConfig {
                cfl: cmin / SELF_REFERENCE_REFINEMENT,
                dt: None,
                window: WindowMode::Off,
                ..base.clone()
            };
            Some(run(&rcfg)?.state.to_dense())
        }
        _ => None,
    };
    let mut rows = Vec::new();
    for cfg in &levels {
        let out = run(cfg)?;
        let (l1, linf) = level_errors(cfg, &out, reference.as_ref())?;
        let (rc, rs) = out.diagnostics.average_ranks();
        rows.push(ConvergenceRow {
            n: cfg.nx,
            cfl: cfg.cfl,
            l1,
            linf,
            order_l1: f64::NAN,
            order_linf: f64::NAN,
            avg_rank_svd: rs,
            avg_rank_cross: rc,
            wall_time: out.wall_time,
        });
    }
    let (slope_l1, slope_linf) = match mode {
        ScanMode::Mesh(ns) => {
            let o1 = successive_orders(&rows.iter().map(|r| r.l1).collect::<Vec<_>>(), ns);
            let oi = successive_orders(&rows.iter().map(|r| r.linf).collect::<Vec<_>>(), ns);
            for k in 1..rows.len() {
                rows[k].order_l1 = o1[k - 1];
                rows[k].order_linf = oi[k - 1];
            }
            (None, None)
        }
        ScanMode::Cfl(cs) => {
            let lc: Vec<f64> = cs.iter().map(|c| c.ln()).collect();
            let l1: Vec<f64> = rows.iter().map(|r| r.l1.ln()).collect();
            let li: Vec<f64> = rows.iter().map(|r| r.linf.ln()).collect();
            (Some(least_squares_slope(&lc, &l1)), Some(least_squares_slope(&lc, &li)))
        }
    };
    Ok(ConvergenceTable { rows, slope_l1, slope_linf })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleRow {
    pub n: usize,
    pub wall_time: f64,
    /// Wall-time ratio to the previous level.
    pub growth: f64,
    pub avg_rank_svd: f64,
    pub gmres_avg_iterations: f64,
}

/// Time the scenario on `n x n` meshes at a fixed step.
pub fn scale(base: &ScenarioConfig, ns: &[usize], dt: f64) -> Result<Vec<ScaleRow>> {
    let mut rows: Vec<ScaleRow> = Vec::new();
    for &n in ns {
        let cfg = ScenarioConfig {
            nx: n,
            ny: n,
            dt: Some(dt),
            ..base.clone()
        };
        let out = run(&cfg)?;
        let growth = rows.last().map_or(f64::NAN, |p| out.wall_time / p.wall_time);
        rows.push(ScaleRow {
            n,
            wall_time: out.wall_time,
            growth,
            avg_rank_svd: out.diagnostics.average_ranks().1,
            gmres_avg_iterations: out.average_gmres_iterations(),
        });
    }
    Ok(rows)
}

pub fn write_scale_csv<W: Write>(w: &mut W, rows: &[ScaleRow]) -> Result<()> {
    writeln!(w, "n,wall_time_s,growth,avg_rank_svd,gmres_avg_iterations")?;
    for r in rows {
        writeln!(w, "{},{:.4},{:.4},{:.4},{:.4}", r.n, r.wall_time, r.growth, r.avg_rank_svd, r.gmres_avg_iterations)?;
    }
    Ok(())
}
