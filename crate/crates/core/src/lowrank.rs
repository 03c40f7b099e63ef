//! Interpolative decompositions `Z ≈ Z[:, I] · D` from column-pivoted
//! Householder QR.
//!
//! After `k` pivoted Householder steps `Z P = Q [R11 R12; 0 R22]`, and the
//! column ID built from the first `k` pivots has residual exactly
//! `‖R22‖_F` (orthogonal invariance). The factorization stops at the first
//! `k` for which `‖R22‖_F ≤ ε ‖Z‖_F`, which also implies the spectral-norm
//! bound at the same `ε`.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Partial column norms are recomputed from scratch once the downdated value
/// drops below this fraction of the value at its last refresh.
const NORM_DRIFT_GUARD: f64 = 1e-6;

/// Column interpolative decomposition of an `ℓ × m` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpDecomp {
    index_set: Vec<usize>,
    interpolation: Array2<f64>,
    residual_rel: f64,
}

impl InterpDecomp {
    pub fn from_parts(index_set: Vec<usize>, interpolation: Array2<f64>, residual_rel: f64) -> Self {
        InterpDecomp {
            index_set,
            interpolation,
            residual_rel,
        }
    }

    /// Keeps every column: `I = 0..m`, `D = I_m`.
    pub fn identity(m: usize) -> Self {
        InterpDecomp {
            index_set: (0..m).collect(),
            interpolation: Array2::eye(m),
            residual_rel: 0.0,
        }
    }

    /// Decomposition used for an identically-zero activation matrix: keep
    /// column 0 with zero interpolation weights.
    pub fn zero_layer(m: usize) -> Self {
        InterpDecomp {
            index_set: vec![0],
            interpolation: Array2::zeros((1, m)),
            residual_rel: 0.0,
        }
    }

    pub fn index_set(&self) -> &[usize] {
        &self.index_set
    }

    /// The `k × m` interpolation matrix `D`.
    pub fn interpolation(&self) -> &Array2<f64> {
        &self.interpolation
    }

    pub fn residual_rel(&self) -> f64 {
        self.residual_rel
    }

    pub fn rank(&self) -> usize {
        self.index_set.len()
    }

    /// Number of columns of the decomposed matrix.
    pub fn width(&self) -> usize {
        self.interpolation.ncols()
    }

    pub fn is_identity(&self) -> bool {
        let m = self.width();
        self.index_set.len() == m
            && self.index_set.iter().enumerate().all(|(i, &j)| i == j)
            && self
                .interpolation
                .indexed_iter()
                .all(|((r, c), &v)| v == if r == c { 1.0 } else { 0.0 })
    }

    /// `Z[:, I] · D`.
    pub fn reconstruct(&self, z: ArrayView2<f64>) -> Array2<f64> {
        z.select(Axis(1), &self.index_set).dot(&self.interpolation)
    }
}

/// Computes an interpolative decomposition of `z` with relative Frobenius
/// tolerance `eps`.
pub fn interp_decomp(z: ArrayView2<f64>, eps: f64) -> Result<InterpDecomp> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidTolerance(eps));
    }
    let qr = PivotedQr::truncated(z, eps)?;
    let k = qr.rank;
    let m = qr.perm.len();
    let r11 = qr.r11();
    let r12 = qr.r12();
    let t = solve_interpolation(r11.view(), r12.view())?;

    let mut interpolation = Array2::zeros((k, m));
    for (j, &col) in qr.perm.iter().enumerate() {
        if j < k {
            interpolation[[j, col]] = 1.0;
        } else {
            interpolation.column_mut(col).assign(&t.column(j - k));
        }
    }
    Ok(InterpDecomp {
        index_set: qr.perm[..k].to_vec(),
        interpolation,
        residual_rel: qr.trailing_norm / qr.norm,
    })
}

/// Solves `R11 · T = R12` for upper-triangular `R11` by back-substitution.
pub fn solve_interpolation(r11: ArrayView2<f64>, r12: ArrayView2<f64>) -> Result<Array2<f64>> {
    let k = r11.nrows();
    if r11.ncols() != k || r12.nrows() != k {
        return Err(Error::ShapeMismatch(format!(
            "R11 is {}×{} and R12 is {}×{}",
            r11.nrows(),
            r11.ncols(),
            r12.nrows(),
            r12.ncols()
        )));
    }
    if let Some(i) = (0..k).find(|&i| r11[[i, i]] == 0.0) {
        return Err(Error::ZeroPivot(i));
    }
    let mut t = r12.to_owned();
    for mut col in t.columns_mut() {
        for i in (0..k).rev() {
            let mut acc = col[i];
            for j in i + 1..k {
                acc -= r11[[i, j]] * col[j];
            }
            col[i] = acc / r11[[i, i]];
        }
    }
    Ok(t)
}

/// Column-pivoted Householder QR stopped at the first rank meeting the
/// tolerance. Only `R` is kept; `Q` is never needed for the ID.
struct PivotedQr {
    /// Row `j` holds column `j` (in pivot order) of the partially reduced
    /// matrix, so `cols[[j, i]] = R[i, j]` for `i ≤ j < rank`.
    cols: Array2<f64>,
    perm: Vec<usize>,
    rank: usize,
    norm: f64,
    trailing_norm: f64,
}

impl PivotedQr {
    fn truncated(z: ArrayView2<f64>, eps: f64) -> Result<PivotedQr> {
        let (rows, m) = z.dim();
        let mut cols = Array2::from_shape_fn((m, rows), |(j, i)| z[[i, j]]);
        let norm = cols.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroMatrix);
        }
        let threshold = eps * norm;
        let mut perm: Vec<usize> = (0..m).collect();
        let mut partial: Vec<f64> = cols.outer_iter().map(|c| c.dot(&c)).collect();
        let mut reference = partial.clone();
        let steps = rows.min(m);

        let mut k = 0;
        let trailing_norm = loop {
            let trailing = trailing_frobenius(&cols, k);
            if trailing <= threshold || k == steps {
                break trailing;
            }

            let mut pivot = argmax_from(&partial, k);
            if partial[pivot] <= 0.0 {
                // Downdated estimates lost track of a nonzero trailing block.
                for j in k..m {
                    partial[j] = sq_norm_from(&cols, j, k);
                    reference[j] = partial[j];
                }
                pivot = argmax_from(&partial, k);
            }
            if pivot != k {
                swap_rows(&mut cols, k, pivot);
                partial.swap(k, pivot);
                reference.swap(k, pivot);
                perm.swap(k, pivot);
            }

            householder_step(&mut cols, k);

            for j in k + 1..m {
                let r = cols[[j, k]];
                partial[j] -= r * r;
                if partial[j] <= NORM_DRIFT_GUARD * reference[j] {
                    partial[j] = sq_norm_from(&cols, j, k + 1);
                    reference[j] = partial[j];
                }
            }
            k += 1;
        };
        Ok(PivotedQr {
            cols,
            perm,
            rank: k,
            norm,
            trailing_norm,
        })
    }

    fn r11(&self) -> Array2<f64> {
        let k = self.rank;
        Array2::from_shape_fn((k, k), |(i, j)| if i <= j { self.cols[[j, i]] } else { 0.0 })
    }

    fn r12(&self) -> Array2<f64> {
        let k = self.rank;
        let m = self.perm.len();
        Array2::from_shape_fn((k, m - k), |(i, j)| self.cols[[k + j, i]])
    }
}

fn argmax_from(values: &[f64], start: usize) -> usize {
    let mut best = start;
    for j in start + 1..values.len() {
        if values[j] > values[best] {
            best = j;
        }
    }
    best
}

fn swap_rows(a: &mut Array2<f64>, r1: usize, r2: usize) {
    let ncols = a.ncols();
    for c in 0..ncols {
        a.swap([r1, c], [r2, c]);
    }
}

/// Squared norm of column `j` restricted to rows `from..`.
fn sq_norm_from(cols: &Array2<f64>, j: usize, from: usize) -> f64 {
    cols.row(j).iter().skip(from).map(|v| v * v).sum()
}

/// Frobenius norm of the trailing block (rows and columns `k..`).
fn trailing_frobenius(cols: &Array2<f64>, k: usize) -> f64 {
    (k..cols.nrows())
        .map(|j| sq_norm_from(cols, j, k))
        .sum::<f64>()
        .sqrt()
}

/// Annihilates entries below the diagonal in column `k` and applies the
/// reflector to the trailing columns.
fn householder_step(cols: &mut Array2<f64>, k: usize) {
    let (m, rows) = cols.dim();
    let x_norm = sq_norm_from(cols, k, k).sqrt();
    if x_norm == 0.0 {
        return;
    }
    let x0 = cols[[k, k]];
    let alpha = if x0 >= 0.0 { -x_norm } else { x_norm };
    let mut v: Vec<f64> = cols.row(k).iter().skip(k).copied().collect();
    v[0] -= alpha;
    let beta: f64 = v.iter().map(|x| x * x).sum();
    if beta == 0.0 {
        return;
    }
    for j in k + 1..m {
        let mut col = cols.row_mut(j);
        let dot: f64 = (k..rows).map(|i| v[i - k] * col[i]).sum();
        let f = 2.0 * dot / beta;
        for i in k..rows {
            col[i] -= f * v[i - k];
        }
    }
    let mut pivot_col = cols.row_mut(k);
    pivot_col[k] = alpha;
    for i in k + 1..rows {
        pivot_col[i] = 0.0;
    }
}
