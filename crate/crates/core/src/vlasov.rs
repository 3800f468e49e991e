//! Vlasov–Poisson stepping in 1D1V.
//!
//! Each step freezes the nonlinear characteristics at three exponential
//! Runge–Kutta stages and advances the distribution with low-rank
//! semi-Lagrangian steps. The charge density is then advanced implicitly and
//! the kinetic solution is corrected with a local Maxwellian so that its
//! density matches the conservative update cell by cell.

use rand::Rng;

use crate::advection::{slar_step, SlarConfig, StepStats};
use crate::error::{Result, SlarError};
use crate::fieldsolve::{solve_poisson, FieldState, PeriodicInterpolant};
use crate::implicit_density::{dirk3_density_step, DensityHistory, DensityStats, FluxSplitOperator, GmresConfig, PrecondKind};
use crate::lowrank::{MatrixAccessor, SvdFactors};
use crate::mesh::{PhaseGrid, UniformGrid1D};
use crate::slfd::VelocityField;

/// Per-cell macroscopic quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub rho: Vec<f64>,
    pub j: Vec<f64>,
    pub kappa: Vec<f64>,
    pub u: Vec<f64>,
    pub t: Vec<f64>,
}

/// Locally Maxwellian correction `c_i rho_i w_ij / Z_i` with
/// `w_ij = exp(-(v_j - u_i)^2 / (2 T_i))` and `Z_i = dv sum_j w_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxwellianLayer {
    pub coeff: Vec<f64>,
    pub uref: Vec<f64>,
    pub tref: Vec<f64>,
    scale: Vec<f64>,
    v: Vec<f64>,
    // dv-weighted row moments of 1, v, v^2/2
    row_moments: Vec<[f64; 3]>,
}

impl MaxwellianLayer {
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if self.scale[i] == 0.0 {
            return 0.0;
        }
        let d = self.v[j] - self.uref[i];
        self.scale[i] * (-d * d / (2.0 * self.tref[i])).exp()
    }

    /// `dv * sum_j` of the layer's row `i` against `1`, `v`, `v^2/2`.
    pub fn row_moments(&self, i: usize) -> [f64; 3] {
        self.row_moments[i]
    }
}

/// Distribution function: SVD factors plus an optional Maxwellian layer.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticSolution {
    pub base: SvdFactors,
    pub correction: Option<MaxwellianLayer>,
}

impl KineticSolution {
    pub fn from_svd(base: SvdFactors) -> Self {
        Self { base, correction: None }
    }

    pub fn rank(&self) -> usize {
        self.base.rank()
    }
}

impl MatrixAccessor for KineticSolution {
    fn nrows(&self) -> usize {
        self.base.nrows()
    }
    fn ncols(&self) -> usize {
        self.base.ncols()
    }
    #[inline]
    fn entry(&self, i: usize, j: usize) -> f64 {
        let b = self.base.entry(i, j);
        match &self.correction {
            Some(layer) => b + layer.entry(i, j),
            None => b,
        }
    }
}

/// Density, current and kinetic-energy density without positivity checks.
pub fn raw_moments(f: &KineticSolution, vgrid: &UniformGrid1D) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dv = vgrid.delta();
    let v = vgrid.centers();
    let ones = vec![dv; v.len()];
    let vv: Vec<f64> = v.iter().map(|x| dv * x).collect();
    let kk: Vec<f64> = v.iter().map(|x| dv * 0.5 * x * x).collect();
    let (c0, c1, c2) = (f.base.contract_right(&ones), f.base.contract_right(&vv), f.base.contract_right(&kk));
    let mut rho = f.base.apply_left(&c0);
    let mut j = f.base.apply_left(&c1);
    let mut kappa = f.base.apply_left(&c2);
    if let Some(layer) = &f.correction {
        for i in 0..rho.len() {
            let m = layer.row_moments(i);
            rho[i] += m[0];
            j[i] += m[1];
            kappa[i] += m[2];
        }
    }
    (rho, j, kappa)
}

/// Macroscopic state; fails on non-positive density or temperature.
pub fn moments(f: &KineticSolution, vgrid: &UniformGrid1D) -> Result<MacroState> {
    let (rho, j, kappa) = raw_moments(f, vgrid);
    let mut u = Vec::with_capacity(rho.len());
    let mut t = Vec::with_capacity(rho.len());
    for i in 0..rho.len() {
        if !(rho[i] > 0.0) {
            return Err(SlarError::NonPositiveDensity { cell: i, value: rho[i] });
        }
        let ui = j[i] / rho[i];
        let ti = 2.0 * kappa[i] / rho[i] - ui * ui;
        if !(ti > 0.0) {
            return Err(SlarError::NonPositiveTemperature { cell: i, value: ti });
        }
        u.push(ui);
        t.push(ti);
    }
    Ok(MacroState { rho, j, kappa, u, t })
}

fn layer(coeff: Vec<f64>, rho_target: &[f64], uref: &[f64], tref: &[f64], vgrid: &UniformGrid1D) -> Result<MaxwellianLayer> {
    let dv = vgrid.delta();
    let v = vgrid.centers();
    let n = rho_target.len();
    let mut scale = vec![0.0; n];
    let mut row_moments = vec![[0.0; 3]; n];
    for i in 0..n {
        if !(tref[i] > 0.0) {
            return Err(SlarError::NonPositiveTemperature { cell: i, value: tref[i] });
        }
        let amp = coeff[i] * rho_target[i];
        if amp == 0.0 {
            continue;
        }
        let w: Vec<f64> = v.iter().map(|vj| (-(vj - uref[i]).powi(2) / (2.0 * tref[i])).exp()).collect();
        let z = dv * w.iter().sum::<f64>();
        let s = amp / z;
        scale[i] = s;
        let m1: f64 = v.iter().zip(&w).map(|(vj, wj)| vj * wj).sum();
        let m2: f64 = v.iter().zip(&w).map(|(vj, wj)| 0.5 * vj * vj * wj).sum();
        row_moments[i] = [amp, s * dv * m1, s * dv * m2];
    }
    Ok(MaxwellianLayer {
        coeff,
        uref: uref.to_vec(),
        tref: tref.to_vec(),
        scale,
        v,
        row_moments,
    })
}

/// Discretely normalised Maxwellian with row masses `rho_target`.
pub fn build_maxwellian(rho_target: &[f64], state: &MacroState, vgrid: &UniformGrid1D) -> Result<MaxwellianLayer> {
    layer(vec![1.0; rho_target.len()], rho_target, &state.u, &state.t, vgrid)
}

/// Add `((rho_new - rho*) / rho_new) M` with `M` built on `(rho_new, u*, T*)`.
pub fn lomac_correct(fstar: &KineticSolution, star: &MacroState, rho_new: &[f64], vgrid: &UniformGrid1D) -> Result<KineticSolution> {
    if fstar.correction.is_some() {
        return Err(SlarError::config("fstar", "predictor must be a pure SVD solution"));
    }
    let mut coeff = Vec::with_capacity(rho_new.len());
    for (i, (rn, rs)) in rho_new.iter().zip(&star.rho).enumerate() {
        if !(*rn > 0.0) {
            return Err(SlarError::NonPositiveDensity { cell: i, value: *rn });
        }
        coeff.push((rn - rs) / rn);
    }
    let correction = layer(coeff, rho_new, &star.u, &star.t, vgrid)?;
    Ok(KineticSolution {
        base: fstar.base.clone(),
        correction: Some(correction),
    })
}

/// Frozen characteristic field `(cv v, E(x))` of one exponential stage.
pub struct FrozenVpField {
    pub cv: f64,
    e: PeriodicInterpolant,
    amax: f64,
    bmax: f64,
}

impl FrozenVpField {
    pub fn new(cv: f64, e: Vec<f64>, grid: &PhaseGrid) -> Self {
        let vmax = grid.gy.lo().abs().max(grid.gy.hi().abs());
        let bmax = e.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Self {
            cv,
            e: PeriodicInterpolant::new(grid.gx, e),
            amax: cv.abs() * vmax,
            bmax,
        }
    }
}

impl VelocityField for FrozenVpField {
    #[inline]
    fn a(&self, _: f64, v: f64, _: f64) -> f64 {
        self.cv * v
    }
    #[inline]
    fn b(&self, x: f64, _: f64, _: f64) -> f64 {
        self.e.eval(x)
    }
    fn amax(&self) -> f64 {
        self.amax
    }
    fn bmax(&self) -> f64 {
        self.bmax
    }
}

/// Third-order exponential Runge–Kutta stage coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpRkTableau {
    pub c: [f64; 3],
    pub a21: f64,
    pub a32: f64,
    pub b1: [f64; 3],
    pub b2: [f64; 3],
}

impl Default for ExpRkTableau {
    fn default() -> Self {
        Self {
            c: [0.0, 1.0 / 3.0, 2.0 / 3.0],
            a21: 1.0 / 3.0,
            a32: 2.0 / 3.0,
            b1: [1.0 / 3.0, 0.0, 0.0],
            b2: [-1.0 / 12.0, 0.0, 0.75],
        }
    }
}

/// Evolving VP state at one time level.
#[derive(Debug, Clone)]
pub struct VpState {
    pub f: KineticSolution,
    pub t: f64,
    pub macro_state: MacroState,
    pub field: FieldState,
    /// Density and velocity at the previous level with its step size.
    pub prev: Option<(Vec<f64>, Vec<f64>, f64)>,
}

impl VpState {
    pub fn new(f: KineticSolution, grid: &PhaseGrid) -> Result<Self> {
        let macro_state = moments(&f, &grid.gy)?;
        let field = solve_poisson(&macro_state.rho, &grid.gx, grid.bx)?;
        Ok(Self {
            f,
            t: 0.0,
            macro_state,
            field,
            prev: None,
        })
    }
}

/// Options of the composite VP step beyond the SLAR tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VpOptions {
    pub gmres: GmresConfig,
    pub precond: PrecondKind,
    /// Apply the implicit density solve and Maxwellian correction.
    pub conservative: bool,
}

impl Default for VpOptions {
    fn default() -> Self {
        Self {
            gmres: GmresConfig::default(),
            precond: PrecondKind::Ilu,
            conservative: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VpStepStats {
    pub stages: [StepStats; 3],
    pub density: Option<DensityStats>,
    /// Density from the implicit solve that the correction matched.
    pub rho_implicit: Option<Vec<f64>>,
}

impl VpStepStats {
    /// Statistics of the final stage, which produces the new solution.
    pub fn last(&self) -> &StepStats {
        &self.stages[2]
    }

    pub fn oracle_calls(&self) -> usize {
        self.stages.iter().map(|s| s.oracle_calls).sum()
    }
}

/// CFL time step `cfl / (max|v|/dx + max|E|/dv)` for the current field.
pub fn vp_time_step(cfl: f64, state: &VpState, grid: &PhaseGrid) -> Result<f64> {
    let vmax = grid.gy.lo().abs().max(grid.gy.hi().abs());
    crate::mesh::time_step_from_cfl(cfl, vmax, state.field.e_max(), grid.gx.delta(), grid.gy.delta())
}

/// One composite step of length `dt`.
pub fn vp_step<R: Rng + ?Sized>(state: &VpState, dt: f64, cfg: &SlarConfig, opts: &VpOptions, grid: &PhaseGrid, op: &FluxSplitOperator, rng: &mut R) -> Result<(VpState, VpStepStats)> {
    let (t0, t1) = (state.t, state.t + dt);
    let tab = ExpRkTableau::default();
    let en = &state.field.e;
    let scaled = |c: f64, e: &[f64]| e.iter().map(|x| c * x).collect::<Vec<f64>>();

    let fld1 = FrozenVpField::new(tab.a21, scaled(tab.a21, en), grid);
    let (f1, s1) = slar_step(&state.f, grid, &fld1, t0, t1, cfg, None, rng)?;
    let f1 = KineticSolution::from_svd(f1);
    let e1 = solve_poisson(&raw_moments(&f1, &grid.gy).0, &grid.gx, grid.bx)?.e;

    let fld2 = FrozenVpField::new(tab.a32, scaled(tab.a32, &e1), grid);
    let (f2, s2) = slar_step(&state.f, grid, &fld2, t0, t1, cfg, None, rng)?;
    let f2 = KineticSolution::from_svd(f2);
    let e2 = solve_poisson(&raw_moments(&f2, &grid.gy).0, &grid.gx, grid.bx)?.e;

    let e3: Vec<f64> = en.iter().zip(&e2).map(|(a, b)| tab.b2[0] * a + tab.b2[2] * b).collect();
    let fld3 = FrozenVpField::new(tab.b2[0] + tab.b2[2], e3, grid);
    let (fs, s3) = slar_step(&f1, grid, &fld3, t0, t1, cfg, None, rng)?;
    let fstar = KineticSolution::from_svd(fs);

    let (f_new, density, rho_implicit) = if opts.conservative {
        let star = moments(&fstar, &grid.gy)?;
        let hist = state.prev.as_ref().map(|(rho, u, h)| DensityHistory { rho, u, dt: *h });
        let (rho_new, dstats) = dirk3_density_step(
            op,
            &state.macro_state.rho,
            &state.macro_state.u,
            hist,
            &star.rho,
            &star.u,
            dt,
            &opts.gmres,
            opts.precond,
        )?;
        (lomac_correct(&fstar, &star, &rho_new, &grid.gy)?, Some(dstats), Some(rho_new))
    } else {
        (fstar, None, None)
    };
    let macro_state = moments(&f_new, &grid.gy)?;
    let field = solve_poisson(&macro_state.rho, &grid.gx, grid.bx)?;
    let next = VpState {
        f: f_new,
        t: t1,
        macro_state,
        field,
        prev: Some((state.macro_state.rho.clone(), state.macro_state.u.clone(), dt)),
    };
    Ok((next, VpStepStats {
            stages: [s1, s2, s3],
            density,
            rho_implicit,
        }))
}

/// VP benchmark initial conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VpProblem {
    Landau { k: f64, alpha: f64 },
    BumpOnTail,
}

impl VpProblem {
    /// Separable initial condition `g(x) h(v)` as rank-one factors.
    pub fn initial(&self, grid: &PhaseGrid) -> SvdFactors {
        let xs = grid.gx.centers();
        let vs = grid.gy.centers();
        let (gx, hv): (Vec<f64>, Vec<f64>) = match *self {
            VpProblem::Landau { k, alpha } => (
                xs.iter().map(|x| 1.0 + alpha * (k * x).cos()).collect(),
                vs.iter().map(|v| (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt()).collect(),
            ),
            VpProblem::BumpOnTail => {
                let s = (2.0 * std::f64::consts::PI).sqrt();
                let (np, nb, u, vt) = (9.0 / (10.0 * s), 2.0 / (10.0 * s), 4.5, 0.5);
                (
                    xs.iter().map(|x| 1.0 + 0.04 * (0.3 * x).cos()).collect(),
                    vs.iter().map(|v| np * (-0.5 * v * v).exp() + nb * (-(v - u) * (v - u) / (2.0 * vt)).exp()).collect(),
                )
            }
        };
        SvdFactors::rank_one(&gx, &hv)
    }
}
