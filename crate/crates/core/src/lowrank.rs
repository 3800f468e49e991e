//! Low-rank matrix representations and their construction.
//!
//! The solution lives in [`SvdFactors`] between time steps. A step samples the
//! updated matrix through an entry oracle, builds [`CrossFactors`] with
//! adaptive cross approximation (greedy pivots, rank-1 residual updates) and
//! recompresses them with [`svd_truncate`].

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Result, SlarError};

/// Pivot magnitude below which ACA stops.
pub const PIVOT_FLOOR: f64 = 1e-14;

/// Read-only entry access to any solution representation.
pub trait MatrixAccessor: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// Entry `(i, j)`; indices are assumed valid.
    fn entry(&self, i: usize, j: usize) -> f64;

    /// Checked entry access.
    fn try_entry(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.nrows() || j >= self.ncols() {
            return Err(SlarError::IndexOutOfRange {
                row: i,
                col: j,
                nrows: self.nrows(),
                ncols: self.ncols(),
            });
        }
        Ok(self.entry(i, j))
    }

    fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.nrows(), self.ncols(), |i, j| self.entry(i, j))
    }
}

/// Row-major dense matrix. Used for full-rank reference runs and oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nrows * ncols);
        for i in 0..nrows {
            for j in 0..ncols {
                data.push(f(i, j));
            }
        }
        Self { nrows, ncols, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.ncols + j] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.nrows, self.ncols, &self.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl MatrixAccessor for DenseMatrix {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    #[inline]
    fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }
}

/// Factored matrix `U diag(sigma) V^T` with orthonormal columns in `U`, `V`.
///
/// Factors are stored row-major (`u[i * rank + k]`) so one matrix entry is a
/// length-`rank` dot product of two contiguous rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    nrows: usize,
    ncols: usize,
    rank: usize,
    u: Vec<f64>,
    sigma: Vec<f64>,
    v: Vec<f64>,
    // u scaled by sigma, cached for entry access
    us: Vec<f64>,
}

impl SvdFactors {
    /// Rank-0 factors (the zero matrix).
    pub fn zero(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            rank: 0,
            u: Vec::new(),
            sigma: Vec::new(),
            v: Vec::new(),
            us: Vec::new(),
        }
    }

    /// Build from row-major factor buffers. Ordering and positivity of
    /// `sigma` are checked; orthonormality is the caller's responsibility.
    pub fn from_parts(nrows: usize, ncols: usize, u: Vec<f64>, sigma: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let rank = sigma.len();
        if u.len() != nrows * rank {
            return Err(SlarError::DimensionMismatch {
                expected: nrows * rank,
                got: u.len(),
            });
        }
        if v.len() != ncols * rank {
            return Err(SlarError::DimensionMismatch {
                expected: ncols * rank,
                got: v.len(),
            });
        }
        if sigma.iter().any(|s| !(*s > 0.0)) || sigma.windows(2).any(|w| w[1] > w[0]) {
            return Err(SlarError::config("sigma", "singular values must be positive and non-increasing"));
        }
        let mut us = u.clone();
        for row in us.chunks_mut(rank.max(1)) {
            for (x, s) in row.iter_mut().zip(&sigma) {
                *x *= s;
            }
        }
        Ok(Self {
            nrows,
            ncols,
            rank,
            u,
            sigma,
            v,
            us,
        })
    }

    /// Outer product of two vectors, normalised into a rank-1 SVD.
    pub fn rank_one(x: &[f64], y: &[f64]) -> Self {
        let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            return Self::zero(x.len(), y.len());
        }
        let u = x.iter().map(|a| a / nx).collect();
        let v = y.iter().map(|a| a / ny).collect();
        Self::from_parts(x.len(), y.len(), u, vec![nx * ny], v).expect("consistent rank-one factors")
    }

    /// Dense truncated SVD keeping singular values above `eps`.
    pub fn from_dense(m: &DenseMatrix, eps: f64) -> Self {
        let svd = m.to_nalgebra().svd(true, true);
        let u = svd.u.expect("u requested");
        let vt = svd.v_t.expect("v_t requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let keep: Vec<usize> = order.into_iter().filter(|&k| svd.singular_values[k] > eps).collect();
        Self::from_columns(m.nrows, m.ncols, &keep, &svd.singular_values.as_slice(), |i, k| u[(i, k)], |j, k| vt[(k, j)])
    }

    fn from_columns(
        nrows: usize,
        ncols: usize,
        keep: &[usize],
        sv: &[f64],
        ucol: impl Fn(usize, usize) -> f64,
        vcol: impl Fn(usize, usize) -> f64,
    ) -> Self {
        let r = keep.len();
        let mut u = vec![0.0; nrows * r];
        let mut v = vec![0.0; ncols * r];
        for (c, &k) in keep.iter().enumerate() {
            for i in 0..nrows {
                u[i * r + c] = ucol(i, k);
            }
            for j in 0..ncols {
                v[j * r + c] = vcol(j, k);
            }
        }
        let sigma = keep.iter().map(|&k| sv[k]).collect();
        Self::from_parts(nrows, ncols, u, sigma, v).expect("consistent truncated factors")
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn u(&self, i: usize, k: usize) -> f64 {
        self.u[i * self.rank + k]
    }

    pub fn v(&self, j: usize, k: usize) -> f64 {
        self.v[j * self.rank + k]
    }

    /// Row `i` of `U diag(sigma)`.
    #[inline]
    pub fn scaled_left_row(&self, i: usize) -> &[f64] {
        &self.us[i * self.rank..(i + 1) * self.rank]
    }

    /// Row `j` of `V`.
    #[inline]
    pub fn right_row(&self, j: usize) -> &[f64] {
        &self.v[j * self.rank..(j + 1) * self.rank]
    }

    /// Entries `(i, j_lo..=j_hi)`.
    pub fn row_segment(&self, i: usize, j_lo: usize, j_hi: usize) -> Result<Vec<f64>> {
        if i >= self.nrows || j_hi >= self.ncols || j_lo > j_hi {
            return Err(SlarError::IndexOutOfRange {
                row: i,
                col: j_hi,
                nrows: self.nrows,
                ncols: self.ncols,
            });
        }
        let left = self.scaled_left_row(i);
        Ok((j_lo..=j_hi).map(|j| dot(left, self.right_row(j))).collect())
    }

    /// `V^T w` for a length-`ncols` weight vector.
    pub fn contract_right(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rank];
        for (j, wj) in w.iter().enumerate() {
            for (o, vk) in out.iter_mut().zip(self.right_row(j)) {
                *o += wj * vk;
            }
        }
        out
    }

    /// `U diag(sigma) c` for a length-`rank` vector.
    pub fn apply_left(&self, c: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|i| dot(self.scaled_left_row(i), c)).collect()
    }

    /// Largest deviation of `U^T U` and `V^T V` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let r = self.rank;
        let mut worst: f64 = 0.0;
        for (buf, n) in [(&self.u, self.nrows), (&self.v, self.ncols)] {
            for a in 0..r {
                for b in a..r {
                    let g: f64 = (0..n).map(|i| buf[i * r + a] * buf[i * r + b]).sum();
                    let target = if a == b { 1.0 } else { 0.0 };
                    worst = worst.max((g - target).abs());
                }
            }
        }
        worst
    }

    pub fn svd_entry(&self, i: usize, j: usize) -> Result<f64> {
        self.try_entry(i, j)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W, seed: u64) -> Result<()> {
        writeln!(w, "kind,nrows,ncols,rank,seed")?;
        writeln!(w, "svd,{},{},{},{}", self.nrows, self.ncols, self.rank, seed)?;
        writeln!(w, "{}", join(&self.sigma))?;
        for k in 0..self.rank {
            writeln!(w, "{}", join(&(0..self.nrows).map(|i| self.u(i, k)).collect::<Vec<_>>()))?;
        }
        for k in 0..self.rank {
            writeln!(w, "{}", join(&(0..self.ncols).map(|j| self.v(j, k)).collect::<Vec<_>>()))?;
        }
        Ok(())
    }

    /// Inverse of [`SvdFactors::write_csv`]; returns the factors and seed.
    pub fn read_csv<R: BufRead>(r: R) -> Result<(Self, u64)> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| SlarError::config("csv", "unexpected end of file"))?
                .map_err(SlarError::from)
        };
        let _header = next()?;
        let meta = next()?;
        let fields: Vec<&str> = meta.split(',').collect();
        if fields.len() != 5 || fields[0] != "svd" {
            return Err(SlarError::config("csv", "not an svd factor dump"));
        }
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| SlarError::config("csv", e.to_string()));
        let nrows = parse_usize(fields[1])?;
        let ncols = parse_usize(fields[2])?;
        let rank = parse_usize(fields[3])?;
        let seed = fields[4].parse::<u64>().map_err(|e| SlarError::config("csv", e.to_string()))?;
        let sigma = parse_line(&next()?, rank)?;
        let mut u = vec![0.0; nrows * rank];
        let mut v = vec![0.0; ncols * rank];
        for k in 0..rank {
            for (i, x) in parse_line(&next()?, nrows)?.into_iter().enumerate() {
                u[i * rank + k] = x;
            }
        }
        for k in 0..rank {
            for (j, x) in parse_line(&next()?, ncols)?.into_iter().enumerate() {
                v[j * rank + k] = x;
            }
        }
        Ok((Self::from_parts(nrows, ncols, u, sigma, v)?, seed))
    }
}

impl MatrixAccessor for SvdFactors {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    #[inline]
    fn entry(&self, i: usize, j: usize) -> f64 {
        dot(self.scaled_left_row(i), self.right_row(j))
    }
}

/// Cross approximation `E_J diag(D) E_I` produced by ACA.
///
/// `ej[l]` is the residual column selected at step `l` (length `nrows`),
/// `ei[l]` the residual row (length `ncols`) and `d[l]` the reciprocal pivot.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossFactors {
    nrows: usize,
    ncols: usize,
    ej: Vec<Vec<f64>>,
    d: Vec<f64>,
    ei: Vec<Vec<f64>>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl CrossFactors {
    pub fn empty(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            ej: Vec::new(),
            d: Vec::new(),
            ei: Vec::new(),
            rows: Vec::new(),
            cols: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn row_pivots(&self) -> &[usize] {
        &self.rows
    }

    pub fn col_pivots(&self) -> &[usize] {
        &self.cols
    }

    pub fn residual_column(&self, l: usize) -> &[f64] {
        &self.ej[l]
    }

    pub fn residual_row(&self, l: usize) -> &[f64] {
        &self.ei[l]
    }

    pub fn reciprocal_pivots(&self) -> &[f64] {
        &self.d
    }

    pub fn cross_entry(&self, i: usize, j: usize) -> Result<f64> {
        self.try_entry(i, j)
    }

    pub fn cross_row(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.nrows {
            return Err(SlarError::IndexOutOfRange {
                row: i,
                col: 0,
                nrows: self.nrows,
                ncols: self.ncols,
            });
        }
        let mut out = vec![0.0; self.ncols];
        for l in 0..self.rank() {
            axpy(&mut out, self.ej[l][i] * self.d[l], &self.ei[l]);
        }
        Ok(out)
    }

    pub fn cross_col(&self, j: usize) -> Result<Vec<f64>> {
        if j >= self.ncols {
            return Err(SlarError::IndexOutOfRange {
                row: 0,
                col: j,
                nrows: self.nrows,
                ncols: self.ncols,
            });
        }
        let mut out = vec![0.0; self.nrows];
        for l in 0..self.rank() {
            axpy(&mut out, self.ei[l][j] * self.d[l], &self.ej[l]);
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W, seed: u64) -> Result<()> {
        writeln!(w, "kind,nrows,ncols,rank,seed")?;
        writeln!(w, "cross,{},{},{},{}", self.nrows, self.ncols, self.rank(), seed)?;
        writeln!(w, "{}", join(&self.d))?;
        writeln!(w, "{}", join_idx(&self.rows))?;
        writeln!(w, "{}", join_idx(&self.cols))?;
        for c in &self.ej {
            writeln!(w, "{}", join(c))?;
        }
        for r in &self.ei {
            writeln!(w, "{}", join(r))?;
        }
        Ok(())
    }
}

impl MatrixAccessor for CrossFactors {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn entry(&self, i: usize, j: usize) -> f64 {
        (0..self.rank()).map(|l| self.ej[l][i] * self.d[l] * self.ei[l][j]).sum()
    }
}

/// Inclusive 0-based index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexRange {
    pub lo: usize,
    pub hi: usize,
}

impl IndexRange {
    pub fn new(lo: usize, hi: usize) -> Self {
        assert!(lo <= hi, "empty index range {lo}..={hi}");
        Self { lo, hi }
    }

    pub fn full(n: usize) -> Self {
        Self::new(0, n - 1)
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.lo..=self.hi
    }

    pub fn contains(&self, i: usize) -> bool {
        i >= self.lo && i <= self.hi
    }
}

/// Deterministic entry function with declared search ranges.
pub struct EntryOracle<F> {
    pub eval: F,
    pub nrows: usize,
    pub ncols: usize,
    pub rows: IndexRange,
    pub cols: IndexRange,
}

impl<F: Fn(usize, usize) -> f64> EntryOracle<F> {
    pub fn new(nrows: usize, ncols: usize, eval: F) -> Self {
        Self {
            eval,
            nrows,
            ncols,
            rows: IndexRange::full(nrows),
            cols: IndexRange::full(ncols),
        }
    }

    pub fn with_ranges(mut self, rows: IndexRange, cols: IndexRange) -> Self {
        self.rows = rows;
        self.cols = cols;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToleranceMode {
    Absolute,
    /// Scaled by the magnitude of the first accepted pivot.
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcaConfig {
    pub eps_c: f64,
    pub r_max: usize,
    pub p: usize,
    pub mode: ToleranceMode,
}

impl AcaConfig {
    pub fn new(eps_c: f64, r_max: usize) -> Self {
        Self {
            eps_c,
            r_max,
            p: 5,
            mode: ToleranceMode::Absolute,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_c > 0.0) {
            return Err(SlarError::config("eps_c", "must be positive"));
        }
        if self.r_max == 0 {
            return Err(SlarError::config("r_max", "must be at least 1"));
        }
        if self.p == 0 {
            return Err(SlarError::config("p", "must be at least 1"));
        }
        Ok(())
    }
}

/// Adaptive cross approximation with lazily evaluated residuals.
///
/// Returns the cross factors and the number of oracle evaluations. Residual
/// columns and rows are zero outside the declared ranges.
pub fn aca_build<F, R>(oracle: &EntryOracle<F>, cfg: &AcaConfig, rng: &mut R) -> Result<(CrossFactors, usize)>
where
    F: Fn(usize, usize) -> f64,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let (nrows, ncols) = (oracle.nrows, oracle.ncols);
    if oracle.rows.hi >= nrows || oracle.cols.hi >= ncols {
        return Err(SlarError::config("ranges", "declared ranges exceed the matrix"));
    }
    let mut cross = CrossFactors::empty(nrows, ncols);
    let mut row_used = vec![false; nrows];
    let mut col_used = vec![false; ncols];
    let mut calls = 0usize;
    let mut eps = cfg.eps_c;

    let residual_at = |cross: &CrossFactors, i: usize, j: usize| -> f64 {
        let mut r = (oracle.eval)(i, j);
        for l in 0..cross.rank() {
            r -= cross.ej[l][i] * cross.d[l] * cross.ei[l][j];
        }
        r
    };
    let residual_col = |cross: &CrossFactors, j: usize| -> Vec<f64> {
        let mut col = vec![0.0; nrows];
        for i in oracle.rows.iter() {
            col[i] = (oracle.eval)(i, j);
        }
        for l in 0..cross.rank() {
            let c = cross.d[l] * cross.ei[l][j];
            for i in oracle.rows.iter() {
                col[i] -= c * cross.ej[l][i];
            }
        }
        col
    };
    let residual_row = |cross: &CrossFactors, i: usize| -> Vec<f64> {
        let mut row = vec![0.0; ncols];
        for j in oracle.cols.iter() {
            row[j] = (oracle.eval)(i, j);
        }
        for l in 0..cross.rank() {
            let c = cross.d[l] * cross.ej[l][i];
            for j in oracle.cols.iter() {
                row[j] -= c * cross.ei[l][j];
            }
        }
        row
    };

    while cross.rank() < cfg.r_max {
        let free_rows: Vec<usize> = oracle.rows.iter().filter(|&i| !row_used[i]).collect();
        let free_cols: Vec<usize> = oracle.cols.iter().filter(|&j| !col_used[j]).collect();
        if free_rows.is_empty() || free_cols.is_empty() {
            break;
        }

        // random candidates; one fresh redraw if all residuals vanish
        let mut start: Option<(f64, usize, usize)> = None;
        for _attempt in 0..2 {
            for _ in 0..cfg.p {
                let i = free_rows[rng.gen_range(0..free_rows.len())];
                let j = free_cols[rng.gen_range(0..free_cols.len())];
                let r = residual_at(&cross, i, j).abs();
                calls += 1;
                let better = match start {
                    None => true,
                    Some((best, bi, bj)) => r > best || (r == best && (i, j) < (bi, bj)),
                };
                if better {
                    start = Some((r, i, j));
                }
            }
            if matches!(start, Some((r, _, _)) if r > 0.0) {
                break;
            }
        }
        let (start_abs, _, j_start) = start.expect("p >= 1");
        if start_abs == 0.0 {
            break;
        }

        let col = residual_col(&cross, j_start);
        calls += oracle.rows.len();
        let i_k = argmax_abs(&col, free_rows.iter().copied());
        let mut row = residual_row(&cross, i_k);
        calls += oracle.cols.len();
        let j_k = argmax_abs(&row, free_cols.iter().copied());
        let col = if j_k == j_start {
            col
        } else {
            calls += oracle.rows.len();
            residual_col(&cross, j_k)
        };
        let pivot = col[i_k];
        row[j_k] = pivot;

        if pivot.abs() < PIVOT_FLOOR {
            break;
        }
        if cross.rank() == 0 && cfg.mode == ToleranceMode::Relative {
            eps = cfg.eps_c * pivot.abs();
        }
        let update_norm = norm2(&col) * norm2(&row) / pivot.abs();
        if update_norm < eps {
            break;
        }

        row_used[i_k] = true;
        col_used[j_k] = true;
        cross.rows.push(i_k);
        cross.cols.push(j_k);
        cross.ej.push(col);
        cross.ei.push(row);
        cross.d.push(1.0 / pivot);
    }
    Ok((cross, calls))
}

/// Recompress cross factors: thin QR of both residual factors, dense SVD of
/// the small core, and removal of every singular value `<= eps_s`.
pub fn svd_truncate(cross: &CrossFactors, eps_s: f64) -> SvdFactors {
    let k = cross.rank();
    let (nrows, ncols) = (cross.nrows, cross.ncols);
    if k == 0 {
        return SvdFactors::zero(nrows, ncols);
    }
    let ej = DMatrix::from_fn(nrows, k, |i, l| cross.ej[l][i]);
    let eit = DMatrix::from_fn(ncols, k, |j, l| cross.ei[l][j]);
    let qr1 = ej.qr();
    let qr2 = eit.qr();
    let (q1, r1) = (qr1.q(), qr1.r());
    let (q2, r2) = (qr2.q(), qr2.r());
    let mut core = r1;
    for (l, dl) in cross.d.iter().enumerate() {
        core.column_mut(l).scale_mut(*dl);
    }
    let core = core * r2.transpose();
    let (us, sv, vs) = jacobi_svd(core);
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let keep: Vec<usize> = order.into_iter().filter(|&c| sv[c] > eps_s).collect();
    let r = keep.len();
    if r == 0 {
        return SvdFactors::zero(nrows, ncols);
    }
    let us_keep = DMatrix::from_fn(us.nrows(), r, |a, c| us[(a, keep[c])]);
    let vs_keep = DMatrix::from_fn(vs.nrows(), r, |a, c| vs[(a, keep[c])]);
    let u = q1 * us_keep;
    let v = q2 * vs_keep;
    let sigma: Vec<f64> = keep.iter().map(|&c| sv[c]).collect();
    let idx: Vec<usize> = (0..r).collect();
    SvdFactors::from_columns(nrows, ncols, &idx, &sigma, |i, c| u[(i, c)], |j, c| v[(j, c)])
}

/// One-sided Jacobi SVD of a square matrix: `a = U diag(s) V^T`, unsorted.
/// Columns of `U` belonging to zero singular values are left at zero.
fn jacobi_svd(mut a: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let n = a.ncols();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = c * t;
                for m in [&mut a, &mut v] {
                    for i in 0..m.nrows() {
                        let (x, y) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * x - s * y;
                        m[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sv: Vec<f64> = (0..n).map(|k| a.column(k).norm()).collect();
    for (k, s) in sv.iter().enumerate() {
        if *s > 0.0 {
            a.column_mut(k).scale_mut(1.0 / s);
        }
    }
    (a, sv, v)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Index of the largest `|x[i]|` among `candidates`; ties go to the smallest index.
fn argmax_abs(x: &[f64], candidates: impl Iterator<Item = usize>) -> usize {
    let mut best = usize::MAX;
    let mut best_val = -1.0;
    for i in candidates {
        let a = x[i].abs();
        if a > best_val || (a == best_val && i < best) {
            best = i;
            best_val = a;
        }
    }
    best
}

fn join(xs: &[f64]) -> String {
    let mut s = String::new();
    for (k, x) in xs.iter().enumerate() {
        if k > 0 {
            s.push(',');
        }
        write!(s, "{x:e}").expect("write to string");
    }
    s
}

fn join_idx(xs: &[usize]) -> String {
    xs.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(",")
}

fn parse_line(line: &str, expected: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = if line.trim().is_empty() {
        Vec::new()
    } else {
        line.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| SlarError::config("csv", e.to_string())))
            .collect::<Result<_>>()?
    };
    if vals.len() != expected {
        return Err(SlarError::DimensionMismatch {
            expected,
            got: vals.len(),
        });
    }
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn product(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(a.nrows, b.ncols, |i, j| (0..a.ncols).map(|k| a.get(i, k) * b.get(k, j)).sum())
    }

    fn diff_frob(a: &impl MatrixAccessor, b: &impl MatrixAccessor) -> f64 {
        let mut s = 0.0;
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                s += (a.entry(i, j) - b.entry(i, j)).powi(2);
            }
        }
        s.sqrt()
    }

    /// Solve `A X = B` by Gaussian elimination with partial pivoting.
    fn dense_solve(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let n = a.nrows;
        let m = b.ncols;
        let mut aug: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| a.get(i, j)).chain((0..m).map(|j| b.get(i, j))).collect())
            .collect();
        for c in 0..n {
            let p = (c..n).max_by(|&x, &y| aug[x][c].abs().total_cmp(&aug[y][c].abs())).unwrap();
            aug.swap(c, p);
            for r in 0..n {
                if r != c {
                    let f = aug[r][c] / aug[c][c];
                    for k in c..n + m {
                        aug[r][k] -= f * aug[c][k];
                    }
                }
            }
        }
        DenseMatrix::from_fn(n, m, |i, j| aug[i][n + j] / aug[i][i])
    }

    #[test]
    fn zero_matrix_gives_rank_zero() {
        let oracle = EntryOracle::new(32, 32, |_, _| 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, _) = aca_build(&oracle, &AcaConfig::new(1e-10, 32), &mut rng).unwrap();
        assert_eq!(c.rank(), 0);
        assert_eq!(c.cross_entry(3, 4).unwrap(), 0.0);
    }

    #[test]
    fn rank_one_is_exact() {
        let u: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin() + 1.5).collect();
        let v: Vec<f64> = (0..30).map(|j| (j as f64 * 0.7).cos() - 0.2).collect();
        let oracle = EntryOracle::new(40, 30, |i, j| u[i] * v[j]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, _) = aca_build(&oracle, &AcaConfig::new(1e-12, 30), &mut rng).unwrap();
        assert_eq!(c.rank(), 1);
        for i in 0..40 {
            for j in 0..30 {
                assert!((c.cross_entry(i, j).unwrap() - u[i] * v[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn seeded_rank_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = seeded_matrix(&mut rng, 64, 3);
        let b = seeded_matrix(&mut rng, 3, 64);
        let m = product(&a, &b);
        let oracle = EntryOracle::new(64, 64, |i, j| m.get(i, j));
        let (c, calls) = aca_build(&oracle, &AcaConfig::new(1e-10, 64), &mut rng).unwrap();
        assert_eq!(c.rank(), 3);
        assert!(diff_frob(&c, &m) < 1e-9);
        // O(rows + cols) evaluations per pivot
        assert!(calls <= (c.rank() + 1) * (3 * 64 + 10));
    }

    #[test]
    fn cross_matches_dense_cur() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = seeded_matrix(&mut rng, 8, 8);
        let oracle = EntryOracle::new(8, 8, |i, j| m.get(i, j));
        let (c, _) = aca_build(&oracle, &AcaConfig::new(1e-300, 4), &mut rng).unwrap();
        assert_eq!(c.rank(), 4);
        let (rows, cols) = (c.row_pivots(), c.col_pivots());
        let k = rows.len();
        let core = DenseMatrix::from_fn(k, k, |a, b| m.get(rows[a], cols[b]));
        let r = DenseMatrix::from_fn(k, 8, |a, j| m.get(rows[a], j));
        let core_inv_r = dense_solve(&core, &r);
        let cmat = DenseMatrix::from_fn(8, k, |i, b| m.get(i, cols[b]));
        let cur = product(&cmat, &core_inv_r);
        for i in 0..8 {
            for j in 0..8 {
                let x = c.cross_entry(i, j).unwrap();
                let y = cur.get(i, j);
                assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0), "{x} vs {y}");
            }
        }
        let row = c.cross_row(2).unwrap();
        let col = c.cross_col(5).unwrap();
        assert!((row[5] - col[2]).abs() < 1e-14);
    }

    #[test]
    fn pivot_consistency_and_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = seeded_matrix(&mut rng, 50, 6);
        let b = seeded_matrix(&mut rng, 6, 45);
        let m = product(&a, &b);
        let oracle = EntryOracle::new(50, 45, |i, j| m.get(i, j));
        let (c, _) = aca_build(&oracle, &AcaConfig::new(1e-300, 6), &mut rng).unwrap();
        for l in 0..c.rank() {
            let i = c.row_pivots()[l];
            assert!((c.residual_column(l)[i] * c.reciprocal_pivots()[l] - 1.0).abs() < 1e-12);
        }
        for &i in c.row_pivots() {
            for j in 0..45 {
                assert!((c.entry(i, j) - m.get(i, j)).abs() <= 1e-10 * m.get(i, j).abs().max(1.0));
            }
        }
        for &j in c.col_pivots() {
            for i in 0..50 {
                assert!((c.entry(i, j) - m.get(i, j)).abs() <= 1e-10 * m.get(i, j).abs().max(1.0));
            }
        }
    }

    #[test]
    fn ranges_restrict_search() {
        let m = DenseMatrix::from_fn(30, 30, |i, j| if (10..20).contains(&i) && (5..15).contains(&j) { (i as f64).sin() + (j as f64).cos() + 3.0 } else { 0.0 });
        let oracle = EntryOracle::new(30, 30, |i, j| m.get(i, j)).with_ranges(IndexRange::new(8, 21), IndexRange::new(3, 16));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (c, _) = aca_build(&oracle, &AcaConfig::new(1e-12, 30), &mut rng).unwrap();
        assert!(c.row_pivots().iter().all(|i| (8..=21).contains(i)));
        assert!(c.col_pivots().iter().all(|j| (3..=16).contains(j)));
        assert!(diff_frob(&c, &m) < 1e-10);
    }

    fn orthonormal(rng: &mut ChaCha8Rng, n: usize, r: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, r, |_, _| rng.gen_range(-1.0..1.0));
        m.qr().q()
    }

    fn cross_of(m: &DenseMatrix, rng: &mut ChaCha8Rng, r_max: usize) -> CrossFactors {
        let oracle = EntryOracle::new(m.nrows, m.ncols, |i, j| m.get(i, j));
        aca_build(&oracle, &AcaConfig::new(1e-300, r_max), rng).unwrap().0
    }

    #[test]
    fn truncate_rank_one_sigma_five() {
        let x: Vec<f64> = (0..12).map(|i| 1.0 + 0.1 * i as f64).collect();
        let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let x: Vec<f64> = x.iter().map(|a| a / nx).collect();
        let y: Vec<f64> = (0..9).map(|_| 5.0 / 3.0).collect();
        let m = DenseMatrix::from_fn(12, 9, |i, j| x[i] * y[j]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = cross_of(&m, &mut rng, 9);
        let s = svd_truncate(&c, 1e-3);
        assert_eq!(s.rank(), 1);
        assert!((s.sigma()[0] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn truncate_drops_small_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = orthonormal(&mut rng, 20, 3);
        let v = orthonormal(&mut rng, 16, 3);
        let sv = [1.0, 1e-2, 1e-6];
        let m = DenseMatrix::from_fn(20, 16, |i, j| (0..3).map(|k| u[(i, k)] * sv[k] * v[(j, k)]).sum());
        let c = cross_of(&m, &mut rng, 3);
        assert_eq!(c.rank(), 3);
        let s = svd_truncate(&c, 1e-3);
        assert_eq!(s.rank(), 2);
        let dense = SvdFactors::from_dense(&m, 1e-3);
        assert_eq!(dense.rank(), 2);
        assert!(diff_frob(&s, &dense) < 1e-12);
    }

    #[test]
    fn truncate_matches_dense_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = seeded_matrix(&mut rng, 50, 8);
        let b = seeded_matrix(&mut rng, 8, 40);
        let m = product(&a, &b);
        let c = cross_of(&m, &mut rng, 8);
        let s = svd_truncate(&c, 1e-12);
        let dense = SvdFactors::from_dense(&c.to_dense(), 1e-12);
        assert_eq!(s.rank(), 8);
        assert!(diff_frob(&s, &dense) <= 1e-12 * m.frobenius_norm());
        assert!(s.orthonormality_defect() < 1e-10);
        assert!(s.sigma().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn truncate_keeps_accuracy_for_close_singular_values() {
        let (u, v) = (seeded_matrix(&mut ChaCha8Rng::seed_from_u64(4), 40, 3), seeded_matrix(&mut ChaCha8Rng::seed_from_u64(5), 3, 35));
        let qu = u.to_nalgebra().qr().q();
        let qv = v.to_nalgebra().transpose().qr().q();
        let sig = [12.852589626387841, 12.834338735054779, 9.609145323345317];
        let m = DenseMatrix::from_fn(40, 35, |i, j| (0..3).map(|k| qu[(i, k)] * sig[k] * qv[(j, k)]).sum());
        let c = cross_of(&m, &mut ChaCha8Rng::seed_from_u64(6), 3);
        let s = svd_truncate(&c, 1e-10);
        let err = DenseMatrix::from_fn(40, 35, |i, j| s.entry(i, j) - m.get(i, j)).frobenius_norm();
        assert!(err < 1e-13 * m.frobenius_norm());
        for (a, b) in s.sigma().iter().zip(sig) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn svd_entry_examples() {
        let z = SvdFactors::zero(4, 5);
        assert_eq!(z.svd_entry(1, 1).unwrap(), 0.0);
        let (nx, ny) = (6usize, 7usize);
        let u = vec![1.0 / (nx as f64).sqrt(); nx];
        let v = vec![1.0 / (ny as f64).sqrt(); ny];
        let s = SvdFactors::from_parts(nx, ny, u, vec![((nx * ny) as f64).sqrt()], v).unwrap();
        for i in 0..nx {
            for j in 0..ny {
                assert!((s.svd_entry(i, j).unwrap() - 1.0).abs() < 1e-14);
            }
        }
        assert!(s.svd_entry(nx, 0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let uo = orthonormal(&mut rng, 15, 4);
        let vo = orthonormal(&mut rng, 11, 4);
        let sig = vec![4.0, 3.0, 2.0, 0.5];
        let s = SvdFactors::from_parts(
            15,
            11,
            (0..15).flat_map(|i| (0..4).map(move |k| (i, k))).map(|(i, k)| uo[(i, k)]).collect(),
            sig.clone(),
            (0..11).flat_map(|j| (0..4).map(move |k| (j, k))).map(|(j, k)| vo[(j, k)]).collect(),
        )
        .unwrap();
        let seg = s.row_segment(3, 2, 8).unwrap();
        for (o, j) in (2..=8).enumerate() {
            let dense: f64 = (0..4).map(|k| uo[(3, k)] * sig[k] * vo[(j, k)]).sum();
            assert!((s.svd_entry(3, j).unwrap() - dense).abs() < 1e-13);
            assert!((seg[o] - dense).abs() < 1e-13);
        }
    }

    #[test]
    fn svd_csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = product(&seeded_matrix(&mut rng, 9, 3), &seeded_matrix(&mut rng, 3, 7));
        let s = SvdFactors::from_dense(&m, 1e-12);
        let mut buf = Vec::new();
        s.write_csv(&mut buf, 42).unwrap();
        let (back, seed) = SvdFactors::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(seed, 42);
        assert_eq!(back.rank(), s.rank());
        assert!(diff_frob(&back, &s) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn aca_recovers_exact_low_rank(seed in 0u64..10_000, r in 1usize..=8, n in 20usize..60, m in 20usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = seeded_matrix(&mut rng, n, r);
            let b = seeded_matrix(&mut rng, r, m);
            let mat = product(&a, &b);
            let eps = 1e-8;
            let oracle = EntryOracle::new(n, m, |i, j| mat.get(i, j));
            let (c, _) = aca_build(&oracle, &AcaConfig::new(eps, 60), &mut rng).unwrap();
            prop_assert!(c.rank() <= r + 1);
            prop_assert!(diff_frob(&c, &mat) < eps);
            let s = svd_truncate(&c, 1e-10);
            prop_assert!(s.orthonormality_defect() < 1e-10);
            prop_assert!(s.rank() <= c.rank());
        }
    }
}
