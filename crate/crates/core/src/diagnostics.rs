//! Error norms, conserved-quantity histories and peak-based rate fits.

use std::io::Write;

use crate::error::{Result, SlarError};
use crate::fieldsolve::FieldState;
use crate::lowrank::{MatrixAccessor, SvdFactors};
use crate::mesh::PhaseGrid;
use crate::vlasov::MacroState;

pub const CSV_HEADER: &str = "t,rank_cross,rank_svd,oracle_calls,E_l2,mass_rel_dev,momentum_dev,energy_rel_dev";

/// Minimum number of samples between two accepted peaks.
pub const PEAK_SEPARATION: usize = 3;

/// Mass, momentum and total energy of one state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Invariants {
    pub mass: f64,
    pub momentum: f64,
    pub energy: f64,
}

impl Invariants {
    /// `dx sum rho`, `dx sum J` and `dx sum kappa + dx/2 sum E^2`.
    pub fn vp(m: &MacroState, field: &FieldState, dx: f64) -> Self {
        Self {
            mass: dx * m.rho.iter().sum::<f64>(),
            momentum: dx * m.j.iter().sum::<f64>(),
            energy: dx * m.kappa.iter().sum::<f64>() + 0.5 * dx * field.e.iter().map(|e| e * e).sum::<f64>(),
        }
    }

    /// Total mass `dx dy sum F` of a linear-advection solution.
    pub fn advection(f: &SvdFactors, grid: &PhaseGrid) -> Self {
        let ones = vec![1.0; f.ncols()];
        let mass = grid.cell_area() * f.apply_left(&f.contract_right(&ones)).iter().sum::<f64>();
        Self {
            mass,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRow {
    pub t: f64,
    pub rank_cross: usize,
    pub rank_svd: usize,
    pub oracle_calls: usize,
    pub e_l2: f64,
    pub mass_rel_dev: f64,
    pub momentum_dev: f64,
    pub energy_rel_dev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PivotRecord {
    pub step: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

/// Relative deviation, falling back to absolute when the reference vanishes.
fn rel_dev(x: f64, x0: f64) -> f64 {
    if x0 == 0.0 {
        x - x0
    } else {
        (x - x0) / x0.abs()
    }
}

/// Append-only recorder of per-step diagnostics.
#[derive(Debug, Clone, Default)]
pub struct RunDiagnostics {
    rows: Vec<DiagnosticRow>,
    pivots: Vec<PivotRecord>,
    reference: Option<Invariants>,
}

impl RunDiagnostics {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one sample; the first call fixes the reference invariants.
    pub fn record(&mut self, t: f64, rank_cross: usize, rank_svd: usize, oracle_calls: usize, e_l2: f64, inv: Invariants) {
        let r = *self.reference.get_or_insert(inv);
        self.rows.push(DiagnosticRow {
            t,
            rank_cross,
            rank_svd,
            oracle_calls,
            e_l2,
            mass_rel_dev: rel_dev(inv.mass, r.mass),
            momentum_dev: inv.momentum - r.momentum,
            energy_rel_dev: rel_dev(inv.energy, r.energy),
        });
    }

    pub fn record_pivots(&mut self, step: usize, rows: &[usize], cols: &[usize]) {
        self.pivots.push(PivotRecord {
            step,
            rows: rows.to_vec(),
            cols: cols.to_vec(),
        });
    }

    pub fn rows(&self) -> &[DiagnosticRow] {
        &self.rows
    }

    pub fn pivots(&self) -> &[PivotRecord] {
        &self.pivots
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn e_l2(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.e_l2).collect()
    }

    /// Average ranks `(r_C, r_S)` over all samples after the first.
    pub fn average_ranks(&self) -> (f64, f64) {
        let steps = if self.rows.len() > 1 { &self.rows[1..] } else { &self.rows[..] };
        if steps.is_empty() {
            return (0.0, 0.0);
        }
        let n = steps.len() as f64;
        (
            steps.iter().map(|r| r.rank_cross as f64).sum::<f64>() / n,
            steps.iter().map(|r| r.rank_svd as f64).sum::<f64>() / n,
        )
    }

    pub fn max_abs_mass_dev(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.mass_rel_dev.abs()))
    }

    pub fn max_abs_momentum_dev(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.momentum_dev.abs()))
    }

    pub fn max_abs_energy_dev(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.energy_rel_dev.abs()))
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.16e},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t, r.rank_cross, r.rank_svd, r.oracle_calls, r.e_l2, r.mass_rel_dev, r.momentum_dev, r.energy_rel_dev
            )?;
        }
        Ok(())
    }
}

/// `(L1, Linf)` of `f - reference` with `L1 = dx dy sum |.|`.
pub fn error_norms<A, B>(f: &A, reference: &B, grid: &PhaseGrid) -> Result<(f64, f64)>
where
    A: MatrixAccessor + ?Sized,
    B: MatrixAccessor + ?Sized,
{
    let (nx, ny) = grid.shape();
    for (name, (r, c)) in [("solution", (f.nrows(), f.ncols())), ("reference", (reference.nrows(), reference.ncols()))] {
        if (r, c) != (nx, ny) {
            return Err(SlarError::GridMismatch(format!("{name} is {r}x{c}, grid is {nx}x{ny}")));
        }
    }
    let (mut l1, mut linf) = (0.0f64, 0.0f64);
    for i in 0..nx {
        for j in 0..ny {
            let d = (f.entry(i, j) - reference.entry(i, j)).abs();
            l1 += d;
            linf = linf.max(d);
        }
    }
    Ok((l1 * grid.cell_area(), linf))
}

/// Strict local maxima of `values`; of two maxima closer than `min_sep`
/// samples only the larger is kept.
pub fn find_peaks(values: &[f64], min_sep: usize) -> Vec<usize> {
    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..values.len().saturating_sub(1) {
        if !(values[i] > values[i - 1] && values[i] > values[i + 1]) {
            continue;
        }
        match peaks.last() {
            Some(&p) if i - p < min_sep => {
                if values[i] > values[p] {
                    *peaks.last_mut().unwrap() = i;
                }
            }
            _ => peaks.push(i),
        }
    }
    peaks
}

/// Least-squares slope of `y` against `x`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Vertex of the parabola through the three samples around `i`.
fn refine_peak(t: &[f64], y: &[f64], i: usize) -> (f64, f64) {
    if i == 0 || i + 1 >= t.len() {
        return (t[i], y[i]);
    }
    let (t0, t1, t2) = (t[i - 1], t[i], t[i + 1]);
    let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
    let d01 = (y1 - y0) / (t1 - t0);
    let d12 = (y2 - y1) / (t2 - t1);
    let c = (d12 - d01) / (t2 - t0);
    if !(c < 0.0) {
        return (t1, y1);
    }
    let b = d01 - c * (t0 + t1);
    let ts = -b / (2.0 * c);
    (ts, y1 + d01 * (ts - t1) + c * (ts - t0) * (ts - t1))
}

/// Slope of `ln e` over the samples `peaks`, each refined by a local parabola.
pub fn fit_rate(t: &[f64], e: &[f64], peaks: &[usize]) -> Result<f64> {
    if peaks.len() < 2 {
        return Err(SlarError::InsufficientPeaks { needed: 2, found: peaks.len() });
    }
    let logs: Vec<f64> = e.iter().map(|x| x.ln()).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = peaks.iter().map(|&p| refine_peak(t, &logs, p)).unzip();
    Ok(least_squares_slope(&x, &y))
}

/// Fit over peaks `first..=last` (1-based) of `ln e`.
pub fn fit_peak_range(t: &[f64], e: &[f64], first: usize, last: usize) -> Result<f64> {
    let logs: Vec<f64> = e.iter().map(|x| x.ln()).collect();
    let peaks = find_peaks(&logs, PEAK_SEPARATION);
    if first == 0 || last < first || peaks.len() < last {
        return Err(SlarError::InsufficientPeaks { needed: last.max(2), found: peaks.len() });
    }
    fit_rate(t, e, &peaks[first - 1..last])
}

/// Successive orders `log2(e_k / e_{k+1})`; NaN when a ratio is degenerate.
pub fn successive_orders(errors: &[f64], sizes: &[usize]) -> Vec<f64> {
    errors
        .windows(2)
        .zip(sizes.windows(2))
        .map(|(e, n)| {
            let r = n[1] as f64 / n[0] as f64;
            if r == 1.0 || !(e[0] > 0.0) || !(e[1] > 0.0) {
                f64::NAN
            } else {
                (e[0] / e[1]).ln() / r.ln()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowrank::DenseMatrix;
    use crate::mesh::{BoundaryRule, UniformGrid1D};
    use std::f64::consts::PI;

    fn grid(n: usize) -> PhaseGrid {
        let g = UniformGrid1D::new(n, -PI, PI).unwrap();
        PhaseGrid::new(g, g, BoundaryRule::Periodic, BoundaryRule::Periodic)
    }

    #[test]
    fn norms_of_identical_and_shifted() {
        let g = grid(16);
        let a = DenseMatrix::from_fn(16, 16, |i, j| (i * j) as f64 * 0.01);
        assert_eq!(error_norms(&a, &a, &g).unwrap(), (0.0, 0.0));
        let c = -0.25;
        let b = DenseMatrix::from_fn(16, 16, |i, j| a.get(i, j) + c);
        let (l1, linf) = error_norms(&b, &a, &g).unwrap();
        assert!((l1 - 4.0 * PI * PI * c.abs()).abs() < 1e-12);
        assert!((linf - c.abs()).abs() < 1e-15);
        assert!(matches!(error_norms(&DenseMatrix::zeros(8, 16), &a, &g), Err(SlarError::GridMismatch(_))));
    }

    #[test]
    fn synthetic_decay_rate() {
        let (gamma, omega) = (-0.1533, 1.4156);
        let t: Vec<f64> = (0..4000).map(|k| k as f64 * 0.01).collect();
        let e: Vec<f64> = t.iter().map(|s| (gamma * s).exp() * (omega * s).cos().abs()).collect();
        let logs: Vec<f64> = e.iter().map(|x| x.ln()).collect();
        let peaks = find_peaks(&logs, PEAK_SEPARATION);
        assert!(peaks.len() > 10);
        // |cos| peaks sit on multiples of pi/omega; refit on exact peak times
        let tp: Vec<f64> = (1..6).map(|m| m as f64 * PI / omega).collect();
        let ep: Vec<f64> = tp.iter().map(|s| (gamma * s).exp()).collect();
        let exact = least_squares_slope(&tp, &ep.iter().map(|x| x.ln()).collect::<Vec<f64>>());
        assert!((exact - gamma).abs() < 1e-12);
        let sampled = fit_rate(&t, &e, &peaks).unwrap();
        assert!((sampled - gamma).abs() < 1e-6);
        assert!((fit_peak_range(&t, &e, 1, 2).unwrap() - gamma).abs() < 1e-6);
    }

    #[test]
    fn peak_detection_rules() {
        assert!(find_peaks(&[1.0, 1.0, 1.0], 3).is_empty());
        assert_eq!(find_peaks(&[0.0, 2.0, 0.0, 3.0, 0.0, 0.0, 0.0, 1.0, 0.0], 3), vec![3, 7]);
        assert!(matches!(fit_rate(&[0.0], &[1.0], &[0]), Err(SlarError::InsufficientPeaks { needed: 2, found: 1 })));
        assert!(fit_peak_range(&[0.0, 1.0, 2.0], &[1.0, 2.0, 1.0], 1, 2).is_err());
    }

    #[test]
    fn recorder_deviations() {
        let mut d = RunDiagnostics::new();
        let inv0 = Invariants { mass: 2.0, momentum: 0.0, energy: 4.0 };
        d.record(0.0, 1, 1, 0, 0.5, inv0);
        d.record(0.1, 3, 2, 100, 0.4, Invariants { mass: 2.0 + 2e-9, momentum: 1e-5, energy: 3.9 });
        let r0 = d.rows()[0];
        assert_eq!((r0.mass_rel_dev, r0.momentum_dev, r0.energy_rel_dev), (0.0, 0.0, 0.0));
        assert!((d.max_abs_mass_dev() - 1e-9).abs() < 1e-15);
        assert!((d.max_abs_energy_dev() - 0.025).abs() < 1e-12);
        assert_eq!(d.average_ranks(), (3.0, 2.0));
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1.0000000000000001e-1,3,2,100,"));
    }

    #[test]
    fn orders_with_degenerate_levels() {
        let o = successive_orders(&[1.0, 0.125, 0.125], &[16, 32, 32]);
        assert!((o[0] - 3.0).abs() < 1e-14);
        assert!(o[1].is_nan());
    }

    #[test]
    fn advection_mass_of_constant() {
        let g = grid(8);
        let f = SvdFactors::rank_one(&[1.0; 8], &[0.5; 8]);
        assert!((Invariants::advection(&f, &g).mass - 0.5 * 4.0 * PI * PI).abs() < 1e-12);
    }
}
