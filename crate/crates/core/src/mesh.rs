//! Uniform tensor-product grids and CFL time steps.
//!
//! Cells are 0-based in memory; `x_i = lo + (i + 1/2) * delta`. File outputs
//! convert to 1-based indices at the point of writing.

use crate::error::{Result, SlarError};

/// Relative distance (in cell widths) below which a point counts as lying on
/// a cell face.
pub const FACE_TIE: f64 = 1e-9;

/// Uniform cell-centred grid on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid1D {
    n: usize,
    lo: f64,
    hi: f64,
}

impl UniformGrid1D {
    pub fn new(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n == 0 {
            return Err(SlarError::config("n_cells", "must be positive"));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(SlarError::config("bounds", format!("need lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { n, lo, hi })
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn delta(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    /// Centre of cell `i` (0-based). Accepts indices outside the grid for
    /// ghost cells.
    #[inline]
    pub fn center(&self, i: isize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.delta()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n as isize).map(|i| self.center(i)).collect()
    }

    /// Cell containing `x`, clamped into range. A point on an interior face
    /// (within `FACE_TIE` cell widths) belongs to the lower cell. Points within
    /// `1e-12 * length` of the domain are accepted.
    pub fn locate_cell(&self, x: f64) -> Result<usize> {
        let slack = 1e-12 * self.length();
        if !(x >= self.lo - slack && x <= self.hi + slack) {
            return Err(SlarError::Domain {
                x,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(self.raw_cell(x).clamp(0, self.n as isize - 1) as usize)
    }

    /// Unclamped cell index; may be negative or `>= n` outside the domain.
    #[inline]
    pub fn raw_cell(&self, x: f64) -> isize {
        ((x - self.lo) / self.delta() - 1.0 - FACE_TIE).ceil() as isize
    }

    /// Periodic image of `x` in `[lo, hi)`.
    #[inline]
    pub fn wrap_coord(&self, x: f64) -> f64 {
        let l = self.length();
        let w = self.lo + (x - self.lo).rem_euclid(l);
        if w >= self.hi {
            self.lo
        } else {
            w
        }
    }

    /// Periodic index wrap into `0..n`.
    #[inline]
    pub fn wrap_index(&self, i: isize) -> usize {
        i.rem_euclid(self.n as isize) as usize
    }
}

/// Treatment of indices and coordinates outside the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryRule {
    Periodic,
    ZeroExtension,
}

impl BoundaryRule {
    /// Map a possibly out-of-range index; `None` means the value is zero.
    #[inline]
    pub fn resolve(self, i: isize, n: usize) -> Option<usize> {
        match self {
            BoundaryRule::Periodic => Some(i.rem_euclid(n as isize) as usize),
            BoundaryRule::ZeroExtension => {
                if i >= 0 && (i as usize) < n {
                    Some(i as usize)
                } else {
                    None
                }
            }
        }
    }
}

/// Two-dimensional tensor grid: `gx` indexes matrix rows, `gy` columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseGrid {
    pub gx: UniformGrid1D,
    pub gy: UniformGrid1D,
    pub bx: BoundaryRule,
    pub by: BoundaryRule,
}

impl PhaseGrid {
    pub fn new(gx: UniformGrid1D, gy: UniformGrid1D, bx: BoundaryRule, by: BoundaryRule) -> Self {
        Self { gx, gy, bx, by }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.gx.n_cells(), self.gy.n_cells())
    }

    pub fn cell_area(&self) -> f64 {
        self.gx.delta() * self.gy.delta()
    }
}

/// `dt = cfl / (amax/dx + bmax/dy)`.
pub fn time_step_from_cfl(cfl: f64, amax: f64, bmax: f64, dx: f64, dy: f64) -> Result<f64> {
    if !(cfl > 0.0) {
        return Err(SlarError::config("cfl", "must be positive"));
    }
    if amax < 0.0 || bmax < 0.0 {
        return Err(SlarError::config("velocity", "maxima must be non-negative"));
    }
    let rate = amax / dx + bmax / dy;
    if rate == 0.0 {
        return Err(SlarError::ZeroVelocity);
    }
    Ok(cfl / rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn locate_examples() {
        let g = UniformGrid1D::new(8, -PI, PI).unwrap();
        assert_eq!(g.locate_cell(-PI + 0.1).unwrap() + 1, 1);
        assert_eq!(g.locate_cell(PI).unwrap() + 1, 8);

        let g = UniformGrid1D::new(256, 0.0, 4.0 * PI).unwrap();
        let expected = (2.0 / (4.0 * PI / 256.0)).floor() as usize + 1;
        assert_eq!(expected, 41);
        assert_eq!(g.locate_cell(2.0).unwrap() + 1, 41);
    }

    #[test]
    fn locate_rejects_outside() {
        let g = UniformGrid1D::new(8, 0.0, 1.0).unwrap();
        assert!(g.locate_cell(1.0 + 1e-13).is_ok());
        assert!(matches!(g.locate_cell(1.1), Err(SlarError::Domain { .. })));
        assert!(g.locate_cell(-0.01).is_err());
    }

    #[test]
    fn face_ties_go_down() {
        let g = UniformGrid1D::new(8, 0.0, 1.0).unwrap();
        assert_eq!(g.locate_cell(0.25).unwrap(), 1);
        assert_eq!(g.locate_cell(0.25 + 1e-14).unwrap(), 1);
        assert_eq!(g.locate_cell(0.25 - 1e-14).unwrap(), 1);
        assert_eq!(g.locate_cell(0.26).unwrap(), 2);
        assert_eq!(g.locate_cell(0.0).unwrap(), 0);
    }

    #[test]
    fn center_offsets() {
        let g = UniformGrid1D::new(10, -1.0, 3.0).unwrap();
        assert!((g.center(0) - g.lo() - g.delta() / 2.0).abs() < 1e-15);
        assert!((g.hi() - g.center(9) - g.delta() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn cfl_examples() {
        let d = 2.0 * PI / 8.0;
        let dt = time_step_from_cfl(1.0, 1.0, 1.0, d, d).unwrap();
        assert!((dt - PI / 8.0).abs() < 1e-15);
        let dt = time_step_from_cfl(1.0, 1.0, 0.0, 0.1, 0.3).unwrap();
        assert!((dt - 0.1).abs() < 1e-15);
        // strong Landau grid: x in [0, 4pi], v in [-2pi, 2pi], 256^2
        let dx = 4.0 * PI / 256.0;
        let dv = 4.0 * PI / 256.0;
        let emax = 0.4;
        let dt = time_step_from_cfl(10.0, 2.0 * PI, emax, dx, dv).unwrap();
        assert!((dt - 10.0 / (2.0 * PI / dx + emax / dv)).abs() < 1e-15);
        assert!(matches!(
            time_step_from_cfl(1.0, 0.0, 0.0, 0.1, 0.1),
            Err(SlarError::ZeroVelocity)
        ));
    }

    #[test]
    fn boundary_rules() {
        assert_eq!(BoundaryRule::Periodic.resolve(-1, 5), Some(4));
        assert_eq!(BoundaryRule::Periodic.resolve(7, 5), Some(2));
        assert_eq!(BoundaryRule::ZeroExtension.resolve(-1, 5), None);
        assert_eq!(BoundaryRule::ZeroExtension.resolve(5, 5), None);
        assert_eq!(BoundaryRule::ZeroExtension.resolve(4, 5), Some(4));
    }

    proptest! {
        #[test]
        fn centers_locate_to_themselves(n in 1usize..300, lo in -10.0f64..10.0, len in 0.1f64..50.0) {
            let g = UniformGrid1D::new(n, lo, lo + len).unwrap();
            for i in 0..n {
                prop_assert_eq!(g.locate_cell(g.center(i as isize)).unwrap(), i);
            }
        }

        #[test]
        fn wrap_is_periodic(n in 1usize..100, i in -1000isize..1000) {
            let g = UniformGrid1D::new(n, 0.0, 1.0).unwrap();
            prop_assert_eq!(g.wrap_index(i + n as isize), g.wrap_index(i));
            prop_assert!(g.wrap_index(i) < n);
        }

        #[test]
        fn cfl_homogeneous(a in 0.01f64..10.0, b in 0.0f64..10.0, c in 0.1f64..10.0) {
            let dt1 = time_step_from_cfl(2.0, a, b, 0.1, 0.2).unwrap();
            let dt2 = time_step_from_cfl(2.0, c * a, c * b, 0.1, 0.2).unwrap();
            prop_assert!((dt2 - dt1 / c).abs() <= 1e-12 * dt1);
        }
    }
}
