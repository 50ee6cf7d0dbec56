//! Matrix kernels shared by the models: a small CSR type, randomized
//! truncated SVD, QR orthonormalization and subspace projection.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Compressed sparse row matrix with `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= nrows || c >= ncols) {
            return Err(Error::DimensionMismatch(format!(
                "entry ({r}, {c}) outside a {nrows}x{ncols} matrix"
            )));
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            last = Some((r, c));
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    triplets.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), triplets).expect("indices in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn transpose(&self) -> Self {
        let triplets = (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (c, r, v)))
            .collect();
        Self::from_triplets(self.ncols, self.nrows, triplets).expect("indices in range")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                out[(r, c)] = v;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self * b` for a dense `b`.
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.ncols {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.nrows,
                self.ncols,
                b.nrows(),
                b.ncols()
            )));
        }
        let width = b.ncols();
        let bt = b.transpose();
        let mut out_t = DMatrix::<f64>::zeros(width, self.nrows);
        if width > 0 {
            out_t
                .as_mut_slice()
                .par_chunks_mut(width)
                .enumerate()
                .for_each(|(r, acc)| {
                    for (c, v) in self.row(r) {
                        let src = &bt.as_slice()[c * width..(c + 1) * width];
                        for (a, s) in acc.iter_mut().zip(src) {
                            *a += v * s;
                        }
                    }
                });
        }
        Ok(out_t.transpose())
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.ncols {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by a vector of length {}",
                self.nrows,
                self.ncols,
                x.len()
            )));
        }
        Ok(DVector::from_iterator(
            self.nrows,
            (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()),
        ))
    }
}

/// Rank-r factorization `A ≈ U diag(S) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    /// M×r, orthonormal columns.
    pub u: DMatrix<f64>,
    /// r singular values, descending.
    pub s: DVector<f64>,
    /// N×r, orthonormal columns.
    pub v: DMatrix<f64>,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.s) * self.v.transpose()
    }

    /// Row `i` of `U Σ Vᵀ`.
    pub fn reconstruct_row(&self, i: usize) -> DVector<f64> {
        let weighted = self.u.row(i).transpose().component_mul(&self.s);
        &self.v * weighted
    }

    /// `U Σ^½`
    pub fn p_factor(&self) -> DMatrix<f64> {
        let root = self.s.map(f64::sqrt);
        &self.u * DMatrix::from_diagonal(&root)
    }

    /// `V Σ^½`
    pub fn q_factor(&self) -> DMatrix<f64> {
        let root = self.s.map(f64::sqrt);
        &self.v * DMatrix::from_diagonal(&root)
    }
}

/// Knobs of the randomized range finder.
#[derive(Debug, Clone, Copy)]
pub struct SvdOptions {
    pub oversampling: usize,
    pub power_iterations: usize,
    /// Accept when `max_i ‖A v_i − σ_i u_i‖ ≤ tolerance · σ_1`.
    pub tolerance: f64,
    pub max_attempts: usize,
    /// When false, the last attempt is returned even if it misses the
    /// tolerance (useful for initializations that only need a rough basis).
    pub strict: bool,
    pub seed: u64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            oversampling: 10,
            power_iterations: 2,
            tolerance: 1e-12,
            max_attempts: 10,
            strict: true,
            seed: 0,
        }
    }
}

/// Rank-`rank` SVD of a sparse matrix (missing entries are zeros).
pub fn truncated_svd(a: &CsrMatrix, rank: usize) -> Result<TruncatedSvd> {
    truncated_svd_with(a, rank, &SvdOptions::default())
}

/// Randomized range finder with subspace iterations, followed by an exact
/// SVD of the projected matrix.
///
/// Each attempt is checked with the residual `‖A V − U Σ‖`; on failure the
/// oversampling and the number of power iterations are doubled. Once the
/// sketch covers `min(M, N)` columns the factorization is exact up to
/// rounding.
pub fn truncated_svd_with(a: &CsrMatrix, rank: usize, opts: &SvdOptions) -> Result<TruncatedSvd> {
    let svd = randomized_svd(a, rank, opts)?;
    if let Some(k) = (0..svd.rank()).find(|&k| svd.s[k].is_nan() || svd.s[k] <= svd.s[0] * 1e-13 || svd.s[k] <= 0.0) {
        return Err(Error::RankDeficient {
            column: k,
            norm: svd.s[k],
        });
    }
    Ok(svd)
}

/// Same as [`truncated_svd_with`] but tolerates zero singular values; the
/// corresponding singular vectors are then an arbitrary orthonormal
/// completion.
pub(crate) fn randomized_svd(a: &CsrMatrix, rank: usize, opts: &SvdOptions) -> Result<TruncatedSvd> {
    let (m, n) = (a.nrows(), a.ncols());
    let full = m.min(n);
    if rank == 0 || rank > full {
        return Err(Error::InvalidRank(format!(
            "rank {rank} outside 1..={full} for a {m}x{n} matrix"
        )));
    }

    let at = a.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut oversampling = opts.oversampling;
    let mut power_iterations = opts.power_iterations;
    let mut last_residual = f64::INFINITY;
    let attempts = opts.max_attempts.max(1);

    for attempt in 0..attempts {
        let width = (rank + oversampling).min(full);
        let omega = DMatrix::from_fn(n, width, |_, _| StandardNormal.sample(&mut rng));
        let mut q = householder_q(a.mul_dense(&omega)?);
        for _ in 0..power_iterations {
            let z = householder_q(at.mul_dense(&q)?);
            q = householder_q(a.mul_dense(&z)?);
        }

        // Bᵀ = Aᵀ Q, an N×width matrix
        let bt = at.mul_dense(&q)?;
        let small = bt.svd(true, true);
        let order = descending_order(&small.singular_values);
        let (Some(w), Some(zt)) = (small.u, small.v_t) else {
            unreachable!("requested singular vectors");
        };
        // Bᵀ = W S Zᵀ  ⇒  A ≈ Q B = (Q Z) S Wᵀ
        let z = zt.transpose();
        let mut u = DMatrix::zeros(m, rank);
        let mut v = DMatrix::zeros(n, rank);
        let mut s = DVector::zeros(rank);
        for (dst, &src) in order.iter().take(rank).enumerate() {
            s[dst] = small.singular_values[src];
            u.set_column(dst, &(&q * z.column(src)));
            v.set_column(dst, &w.column(src));
        }
        let mut svd = TruncatedSvd { u, s, v };
        fix_signs(&mut svd.u, Some(&mut svd.v));

        let residual = svd_residual(a, &svd)?;
        let scale = svd.s[0].max(f64::MIN_POSITIVE);
        last_residual = residual / scale;
        if last_residual <= opts.tolerance || width == full {
            if width == full && last_residual > 1e-8 {
                break;
            }
            return Ok(svd);
        }
        if !opts.strict && attempt + 1 == attempts {
            return Ok(svd);
        }
        log::debug!(
            "truncated_svd: residual {last_residual:e} with width {width}, q={power_iterations}; retrying"
        );
        oversampling *= 2;
        power_iterations = (power_iterations * 2).max(1);
    }
    Err(Error::SvdBreakdown {
        attempts: opts.max_attempts,
        residual: last_residual,
        tolerance: opts.tolerance,
    })
}

/// `max_i ‖A v_i − σ_i u_i‖`
fn svd_residual(a: &CsrMatrix, svd: &TruncatedSvd) -> Result<f64> {
    let av = a.mul_dense(&svd.v)?;
    let us = &svd.u * DMatrix::from_diagonal(&svd.s);
    Ok((av - us)
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max))
}

fn householder_q(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

pub(crate) fn descending_order(values: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Flip column signs so that each column's largest-magnitude entry is
/// positive (first such entry on ties), mirroring flips onto `partner`.
pub(crate) fn fix_signs(primary: &mut DMatrix<f64>, mut partner: Option<&mut DMatrix<f64>>) {
    for c in 0..primary.ncols() {
        let col = primary.column(c);
        let mut best = 0;
        for r in 1..col.len() {
            if col[r].abs() > col[best].abs() {
                best = r;
            }
        }
        if !col.is_empty() && col[best] < 0.0 {
            primary.column_mut(c).neg_mut();
            if let Some(p) = partner.as_deref_mut() {
                p.column_mut(c).neg_mut();
            }
        }
    }
}

/// Leading `rank` left singular vectors of a dense matrix, sign-normalized.
///
/// Columns beyond the numerical rank come from the SVD's orthonormal
/// completion, so the result always has orthonormal columns.
pub(crate) fn leading_left_singular_vectors(y: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let (m, c) = y.shape();
    if rank > m || rank > c {
        return Err(Error::InvalidRank(format!(
            "cannot extract {rank} singular vectors from a {m}x{c} matrix"
        )));
    }
    let svd = y.clone().svd(true, false);
    let order = descending_order(&svd.singular_values);
    let full_u = svd.u.expect("requested left singular vectors");
    let mut u = DMatrix::zeros(m, rank);
    for (dst, &src) in order.iter().take(rank).enumerate() {
        u.set_column(dst, &full_u.column(src));
    }
    fix_signs(&mut u, None);
    Ok(u)
}

/// Thin QR of a full-column-rank matrix with a positive diagonal in R.
pub fn orthonormalize(b: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, r) = b.shape();
    if r > n {
        return Err(Error::RankDeficient {
            column: n,
            norm: 0.0,
        });
    }
    let qr = b.clone().qr();
    let mut q = qr.q();
    let mut rr = qr.r();
    let scale = b
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for j in 0..r {
        let d = rr[(j, j)];
        if d.abs() <= 1e-12 * scale {
            return Err(Error::RankDeficient {
                column: j,
                norm: d.abs(),
            });
        }
        if d < 0.0 {
            q.column_mut(j).neg_mut();
            rr.row_mut(j).neg_mut();
        }
    }
    Ok((q, rr))
}

/// Orthogonal projection `V (Vᵀ p)` onto the column span of `v`.
pub fn project(v: &DMatrix<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
    if v.nrows() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} rows but the vector has length {}",
            v.nrows(),
            p.len()
        )));
    }
    Ok(v * (v.tr_mul(p)))
}
