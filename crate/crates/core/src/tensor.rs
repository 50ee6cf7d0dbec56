//! Third-order tensors and the Tucker decomposition computed by
//! higher-order orthogonal iterations (HOOI).
//!
//! Modes are numbered 1, 2, 3 (users, items, rating levels). Unfoldings use
//! the Kolda-Bader column ordering: in the mode-n unfolding, the remaining
//! indices are combined with the earlier mode varying fastest.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, CsrMatrix, SvdOptions};

fn check_mode(mode: usize) -> Result<()> {
    if (1..=3).contains(&mode) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("tensor mode must be 1, 2 or 3, got {mode}")))
    }
}

/// Dimensions of the two modes other than `mode`, in Kolda order.
fn other_modes(mode: usize) -> (usize, usize) {
    match mode {
        1 => (1, 2),
        2 => (0, 2),
        _ => (0, 1),
    }
}

/// Sparse COO tensor. Entries carry an implicit value of one unless explicit
/// values are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    shape: [usize; 3],
    entries: Vec<[usize; 3]>,
    values: Option<Vec<f64>>,
}

impl SparseTensor {
    /// Binary tensor with ones at `entries`.
    pub fn binary(shape: [usize; 3], entries: Vec<[usize; 3]>) -> Result<Self> {
        Self::build(shape, entries, None)
    }

    pub fn with_values(shape: [usize; 3], entries: Vec<[usize; 3]>, values: Vec<f64>) -> Result<Self> {
        if values.len() != entries.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} entries but {} values",
                entries.len(),
                values.len()
            )));
        }
        Self::build(shape, entries, Some(values))
    }

    fn build(shape: [usize; 3], entries: Vec<[usize; 3]>, values: Option<Vec<f64>>) -> Result<Self> {
        if let Some(e) = entries
            .iter()
            .find(|e| e.iter().zip(shape).any(|(&i, d)| i >= d))
        {
            return Err(Error::DimensionMismatch(format!(
                "entry {e:?} outside shape {shape:?}"
            )));
        }
        let mut sorted = entries.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("duplicate tensor entries".into()));
        }
        Ok(Self {
            shape,
            entries,
            values,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[[usize; 3]] {
        &self.entries
    }

    pub fn value(&self, e: usize) -> f64 {
        self.values.as_ref().map_or(1.0, |v| v[e])
    }

    pub fn norm(&self) -> f64 {
        match &self.values {
            None => (self.entries.len() as f64).sqrt(),
            Some(v) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }

    /// Mode-`mode` unfolding as a sparse matrix.
    pub fn unfold(&self, mode: usize) -> Result<CsrMatrix> {
        check_mode(mode)?;
        let [m, n, k] = self.shape;
        let (rows, cols) = match mode {
            1 => (m, n * k),
            2 => (n, m * k),
            _ => (k, m * n),
        };
        let triplets = self
            .entries
            .iter()
            .enumerate()
            .map(|(e, &[i, j, l])| {
                let (r, c) = match mode {
                    1 => (i, j + n * l),
                    2 => (j, i + m * l),
                    _ => (l, i + m * j),
                };
                (r, c, self.value(e))
            })
            .collect();
        CsrMatrix::from_triplets(rows, cols, triplets)
    }

    pub fn to_dense(&self) -> DenseTensor3 {
        let mut out = DenseTensor3::zeros(self.shape);
        for (e, &[i, j, k]) in self.entries.iter().enumerate() {
            out[[i, j, k]] += self.value(e);
        }
        out
    }

    /// Entry positions grouped by their index along `mode`.
    fn fibers(&self, mode: usize) -> Fibers {
        let axis = mode - 1;
        let dim = self.shape[axis];
        let mut offsets = vec![0usize; dim + 1];
        for e in &self.entries {
            offsets[e[axis] + 1] += 1;
        }
        for d in 0..dim {
            offsets[d + 1] += offsets[d];
        }
        let mut cursor = offsets.clone();
        let mut order = vec![0usize; self.entries.len()];
        for (pos, e) in self.entries.iter().enumerate() {
            order[cursor[e[axis]]] = pos;
            cursor[e[axis]] += 1;
        }
        Fibers { offsets, order }
    }

    /// `X ×_a Aᵀ ×_b Bᵀ` over the two modes other than `mode`, returned as
    /// its mode-`mode` unfolding (dim × ra·rb).
    ///
    /// Rows are accumulated independently in a fixed entry order, so the
    /// result does not depend on thread scheduling.
    fn project_others(&self, mode: usize, fibers: &Fibers, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let axis = mode - 1;
        let (ax, bx) = other_modes(mode);
        let (ra, rb) = (a.ncols(), b.ncols());
        let width = ra * rb;
        let dim = self.shape[axis];
        // row-major scratch, transposed views of the factors for contiguous rows
        let at = a.transpose();
        let bt = b.transpose();
        let mut out = vec![0.0; dim * width];
        if width == 0 {
            return DMatrix::zeros(dim, 0);
        }
        out.par_chunks_mut(width).enumerate().for_each(|(row, acc)| {
            for &pos in &fibers.order[fibers.offsets[row]..fibers.offsets[row + 1]] {
                let e = self.entries[pos];
                let x = self.value(pos);
                let arow = &at.as_slice()[e[ax] * ra..(e[ax] + 1) * ra];
                let brow = &bt.as_slice()[e[bx] * rb..(e[bx] + 1) * rb];
                for (q, &bv) in brow.iter().enumerate() {
                    let scaled = x * bv;
                    for (p, &av) in arow.iter().enumerate() {
                        acc[p + ra * q] += scaled * av;
                    }
                }
            }
        });
        DMatrix::from_row_slice(dim, width, &out)
    }
}

struct Fibers {
    offsets: Vec<usize>,
    order: Vec<usize>,
}

/// Dense third-order tensor, first index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl DenseTensor3 {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(shape);
        for k in 0..shape[2] {
            for j in 0..shape[1] {
                for i in 0..shape[0] {
                    out[[i, j, k]] = f(i, j, k);
                }
            }
        }
        out
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    /// Raw storage, index `i + M (j + N k)`.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn offset(&self, [i, j, k]: [usize; 3]) -> usize {
        i + self.shape[0] * (j + self.shape[1] * k)
    }

    pub fn unfold(&self, mode: usize) -> Result<DMatrix<f64>> {
        check_mode(mode)?;
        let [m, n, k] = self.shape;
        Ok(match mode {
            1 => DMatrix::from_fn(m, n * k, |i, c| self[[i, c % n, c / n]]),
            2 => DMatrix::from_fn(n, m * k, |j, c| self[[c % m, j, c / m]]),
            _ => DMatrix::from_fn(k, m * n, |l, c| self[[c % m, c / m, l]]),
        })
    }

    /// Inverse of [`DenseTensor3::unfold`].
    pub fn fold(matrix: &DMatrix<f64>, mode: usize, shape: [usize; 3]) -> Result<Self> {
        check_mode(mode)?;
        let [m, n, k] = shape;
        let expected = match mode {
            1 => (m, n * k),
            2 => (n, m * k),
            _ => (k, m * n),
        };
        if matrix.shape() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{:?} matrix cannot fold into shape {shape:?} along mode {mode}",
                matrix.shape()
            )));
        }
        Ok(match mode {
            1 => Self::from_fn(shape, |i, j, l| matrix[(i, j + n * l)]),
            2 => Self::from_fn(shape, |i, j, l| matrix[(j, i + m * l)]),
            _ => Self::from_fn(shape, |i, j, l| matrix[(l, i + m * j)]),
        })
    }

    /// n-mode product `T ×_mode A`.
    pub fn mode_multiply(&self, a: &DMatrix<f64>, mode: usize) -> Result<Self> {
        check_mode(mode)?;
        if a.ncols() != self.shape[mode - 1] {
            return Err(Error::DimensionMismatch(format!(
                "matrix with {} columns cannot multiply mode {mode} of size {}",
                a.ncols(),
                self.shape[mode - 1]
            )));
        }
        let mut shape = self.shape;
        shape[mode - 1] = a.nrows();
        Self::fold(&(a * self.unfold(mode)?), mode, shape)
    }
}

impl std::ops::Index<[usize; 3]> for DenseTensor3 {
    type Output = f64;

    fn index(&self, idx: [usize; 3]) -> &f64 {
        &self.data[self.offset(idx)]
    }
}

impl std::ops::IndexMut<[usize; 3]> for DenseTensor3 {
    fn index_mut(&mut self, idx: [usize; 3]) -> &mut f64 {
        let o = self.offset(idx);
        &mut self.data[o]
    }
}

/// `T ×_mode A` (free-function form).
pub fn mode_multiply(t: &DenseTensor3, a: &DMatrix<f64>, mode: usize) -> Result<DenseTensor3> {
    t.mode_multiply(a, mode)
}

/// Tucker decomposition `X ≈ G ×1 U ×2 V ×3 W`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerModel {
    /// Users, M×r1.
    pub u: DMatrix<f64>,
    /// Items, N×r2.
    pub v: DMatrix<f64>,
    /// Rating levels, K×r3.
    pub w: DMatrix<f64>,
    /// r1×r2×r3.
    pub core: DenseTensor3,
    /// `‖G‖ / ‖X‖` after every sweep.
    pub fit_history: Vec<f64>,
}

impl TuckerModel {
    pub fn ranks(&self) -> [usize; 3] {
        self.core.shape()
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.u.nrows(), self.v.nrows(), self.w.nrows()]
    }

    pub fn fit(&self) -> f64 {
        self.fit_history.last().copied().unwrap_or(0.0)
    }

    /// Full dense reconstruction; only sensible for small shapes.
    pub fn reconstruct(&self) -> Result<DenseTensor3> {
        self.core
            .mode_multiply(&self.u, 1)?
            .mode_multiply(&self.v, 2)?
            .mode_multiply(&self.w, 3)
    }

    /// Core contracted with one user's row of U: `Σ_a u_ia G[a, :, :]`.
    pub(crate) fn user_core(&self, user: usize) -> DMatrix<f64> {
        let [r1, r2, r3] = self.ranks();
        DMatrix::from_fn(r2, r3, |b, c| {
            (0..r1).map(|a| self.u[(user, a)] * self.core[[a, b, c]]).sum()
        })
    }
}

/// Slice of the decomposition for a known user, `V (G ×1 u_i) Wᵀ` (N×K).
pub fn reconstruct_slice(model: &TuckerModel, user: usize) -> Result<DMatrix<f64>> {
    let m = model.u.nrows();
    if user >= m {
        return Err(Error::OutOfRange {
            what: "user",
            index: user,
            size: m,
        });
    }
    Ok(&model.v * model.user_core(user) * model.w.transpose())
}

/// How HOOI picks its starting item and rating-level factors.
#[derive(Debug, Clone, Default)]
pub enum HooiInit {
    /// Leading singular vectors of each unfolding.
    #[default]
    Hosvd,
    /// Caller-supplied orthonormal V (N×r2) and W (K×r3).
    Factors { v: DMatrix<f64>, w: DMatrix<f64> },
}

#[derive(Debug, Clone)]
pub struct HooiOptions {
    pub max_iters: usize,
    /// Stop once the relative fit change drops below this value.
    pub tol: f64,
    pub init: HooiInit,
    pub seed: u64,
}

impl Default for HooiOptions {
    fn default() -> Self {
        Self {
            max_iters: 25,
            tol: 1e-5,
            init: HooiInit::Hosvd,
            seed: 0,
        }
    }
}

fn validate_ranks(shape: [usize; 3], ranks: [usize; 3]) -> Result<()> {
    for (axis, (&r, &d)) in ranks.iter().zip(&shape).enumerate() {
        if r == 0 || r > d {
            return Err(Error::InvalidRank(format!(
                "mode-{} rank {r} must lie in 1..={d}",
                axis + 1
            )));
        }
    }
    let [r1, r2, r3] = ranks;
    for (axis, r, others) in [(1, r1, r2 * r3), (2, r2, r1 * r3), (3, r3, r1 * r2)] {
        if r > others {
            return Err(Error::InvalidRank(format!(
                "mode-{axis} rank {r} exceeds the product of the other ranks ({others})"
            )));
        }
    }
    Ok(())
}

/// Tucker decomposition of a sparse tensor by HOOI.
///
/// Each sweep updates U, V and W in turn as the leading left singular
/// vectors of `X` projected onto the other two factors; the core is
/// `X ×1 Uᵀ ×2 Vᵀ ×3 Wᵀ`. The tensor is never densified. `fit_history`
/// holds one entry per sweep, the last one describing the returned model.
pub fn hooi(x: &SparseTensor, ranks: [usize; 3], opts: &HooiOptions) -> Result<TuckerModel> {
    let shape = x.shape();
    validate_ranks(shape, ranks)?;
    let norm = x.norm();
    if x.nnz() == 0 || norm == 0.0 {
        return Err(Error::ZeroTensor);
    }
    let [r1, r2, r3] = ranks;

    let (mut v, mut w) = match &opts.init {
        HooiInit::Hosvd => (
            hosvd_factor(x, 2, r2, opts.seed)?,
            hosvd_factor(x, 3, r3, opts.seed)?,
        ),
        HooiInit::Factors { v, w } => {
            if v.shape() != (shape[1], r2) || w.shape() != (shape[2], r3) {
                return Err(Error::DimensionMismatch(format!(
                    "initial factors {:?}/{:?} do not match shape {shape:?} and ranks {ranks:?}",
                    v.shape(),
                    w.shape()
                )));
            }
            (v.clone(), w.clone())
        }
    };

    let fibers = [x.fibers(1), x.fibers(2), x.fibers(3)];
    let mut history = Vec::with_capacity(opts.max_iters + 1);

    for iter in 0..opts.max_iters.max(1) {
        let y1 = x.project_others(1, &fibers[0], &v, &w);
        let u = linalg::leading_left_singular_vectors(&y1, r1)?;
        let y2 = x.project_others(2, &fibers[1], &u, &w);
        v = linalg::leading_left_singular_vectors(&y2, r2)?;
        let y3 = x.project_others(3, &fibers[2], &u, &v);
        w = linalg::leading_left_singular_vectors(&y3, r3)?;

        // ‖G‖ = ‖Wᵀ Y3‖
        let fit = (w.transpose() * &y3).norm() / norm;
        log::debug!("hooi sweep {}: fit {fit:.9}", iter + 1);

        let converged = history
            .last()
            .is_some_and(|&prev: &f64| ((fit - prev) / prev.max(f64::MIN_POSITIVE)).abs() < opts.tol);
        history.push(fit);
        if converged {
            break;
        }
    }

    // One more user update against the final V and W, so that U spans the
    // users' projected data and the core is consistent with all three factors.
    let y1 = x.project_others(1, &fibers[0], &v, &w);
    let u = linalg::leading_left_singular_vectors(&y1, r1)?;
    let core = DenseTensor3::fold(&(u.transpose() * &y1), 1, ranks)?;
    if let Some(last) = history.last_mut() {
        *last = core.norm() / norm;
    }

    Ok(TuckerModel {
        u,
        v,
        w,
        core,
        fit_history: history,
    })
}

/// Leading singular subspace of a sparse unfolding (HOSVD initialization).
fn hosvd_factor(x: &SparseTensor, mode: usize, rank: usize, seed: u64) -> Result<DMatrix<f64>> {
    let unfolded = x.unfold(mode)?;
    let opts = SvdOptions {
        tolerance: 1e-6,
        max_attempts: 3,
        strict: false,
        seed,
        ..SvdOptions::default()
    };
    Ok(linalg::randomized_svd(&unfolded, rank, &opts)?.u)
}
