//! Periodic Poisson solve for the electrostatic field.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Result, SlarError};
use crate::mesh::{BoundaryRule, UniformGrid1D};

#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub rho: Vec<f64>,
    pub rho0: f64,
    pub e: Vec<f64>,
    pub phi: Vec<f64>,
}

impl FieldState {
    /// Discrete `sqrt(dx * sum E^2)`.
    pub fn e_l2(&self, dx: f64) -> f64 {
        (dx * self.e.iter().map(|e| e * e).sum::<f64>()).sqrt()
    }

    pub fn e_max(&self) -> f64 {
        self.e.iter().fold(0.0, |m, e| m.max(e.abs()))
    }
}

/// Solve `-phi'' = rho - mean(rho)`, `E = -phi'` spectrally on a periodic grid.
pub fn solve_poisson(rho: &[f64], grid: &UniformGrid1D, rule: BoundaryRule) -> Result<FieldState> {
    if rule != BoundaryRule::Periodic {
        return Err(SlarError::NonPeriodicGrid);
    }
    let n = grid.n_cells();
    if rho.len() != n {
        return Err(SlarError::DimensionMismatch { expected: n, got: rho.len() });
    }
    if n < 4 {
        return Err(SlarError::config("n_cells", "Poisson solve needs at least 4 cells"));
    }
    let rho0 = rho.iter().sum::<f64>() / n as f64;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut rhat: Vec<Complex64> = rho.iter().map(|r| Complex64::new(r - rho0, 0.0)).collect();
    fwd.process(&mut rhat);

    let mut phat = vec![Complex64::new(0.0, 0.0); n];
    let mut ehat = vec![Complex64::new(0.0, 0.0); n];
    for m in 1..n {
        let mm = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
        let k = 2.0 * PI * mm / grid.length();
        phat[m] = rhat[m] / (k * k);
        if !(n % 2 == 0 && m == n / 2) {
            ehat[m] = Complex64::new(0.0, -k) * phat[m];
        }
    }
    inv.process(&mut phat);
    inv.process(&mut ehat);
    let scale = 1.0 / n as f64;
    let phi: Vec<f64> = phat.iter().map(|c| c.re * scale).collect();
    let mut e: Vec<f64> = ehat.iter().map(|c| c.re * scale).collect();
    let mean = e.iter().sum::<f64>() / n as f64;
    e.iter_mut().for_each(|x| *x -= mean);
    Ok(FieldState {
        rho: rho.to_vec(),
        rho0,
        e,
        phi,
    })
}

/// Six-point periodic Lagrange interpolation of nodal values at cell centres.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicInterpolant {
    grid: UniformGrid1D,
    values: Vec<f64>,
}

impl PeriodicInterpolant {
    pub fn new(grid: UniformGrid1D, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.n_cells());
        Self { grid, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let s = (x - self.grid.lo()) / self.grid.delta() - 0.5;
        let base = s.floor();
        let t = s - base;
        let b = base as isize;
        if t == 0.0 {
            return self.values[self.grid.wrap_index(b)];
        }
        let mut acc = 0.0;
        for a in -2..=3isize {
            let mut w = 1.0;
            for c in -2..=3isize {
                if c != a {
                    w *= (t - c as f64) / (a - c) as f64;
                }
            }
            acc += w * self.values[self.grid.wrap_index(b + a)];
        }
        acc
    }
}
