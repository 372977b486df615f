//! Incremental thin SVD over a sliding window of columns.
//!
//! The model keeps every numerically non-zero singular triplet of the window
//! matrix, so appending, removing and replacing columns is exact up to
//! round-off. Consumers that want a rank-`r` background read [`SubspaceModel::basis`]
//! and [`SubspaceModel::singular_values`], which expose the leading `r`
//! components only.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative cut-off below which singular values are treated as zero.
const RANK_TOL: f64 = 1e-12;

pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    super::jacobi::thin_svd(m)
}

/// Moore-Penrose inverse; singular values below `1e-10 * max` are zeroed.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let (a, s, b) = sorted_svd(m);
    let cut = 1e-10 * s.iter().cloned().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for k in 0..s.len() {
        if s[k] > cut && s[k] > 0.0 {
            out += (b.column(k) / s[k]) * a.column(k).transpose();
        }
    }
    out
}

/// Keeps components whose singular value exceeds `RANK_TOL * max`.
fn truncate(
    a: DMatrix<f64>,
    s: DVector<f64>,
    b: DMatrix<f64>,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let max = s.iter().cloned().fold(0.0, f64::max);
    let keep = s.iter().take_while(|&&x| x > RANK_TOL * max && x > 0.0).count();
    (
        a.columns(0, keep).into_owned(),
        s.rows(0, keep).into_owned(),
        b.columns(0, keep).into_owned(),
    )
}

/// Low-rank background state `(U, Σ, V)` of a sliding window of columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    /// One row per retained window column, oldest first.
    v: DMatrix<f64>,
    rank: usize,
    window_size: usize,
    /// Rows (canvas pixels) the basis carries information for.
    known: Vec<bool>,
}

impl SubspaceModel {
    /// Top-`rank` model of `matrix`, whose columns become the window.
    pub fn partial_svd(matrix: &DMatrix<f64>, rank: usize) -> Result<Self> {
        let (n, k) = matrix.shape();
        if rank == 0 || rank > n.min(k) {
            return Err(Error::Subspace(format!(
                "rank {rank} invalid for a {n}x{k} matrix"
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("partial_svd input"));
        }
        let (u, sigma, v) = truncate_model(sorted_svd(matrix));
        Ok(Self {
            u,
            sigma,
            v,
            rank,
            window_size: k.max(1),
            known: vec![true; n],
        })
    }

    /// Assembles a model from explicit factors. `u` must have orthonormal columns.
    pub fn from_parts(u: DMatrix<f64>, sigma: DVector<f64>, v: DMatrix<f64>, rank: usize) -> Result<Self> {
        if u.ncols() != sigma.len() || v.ncols() != sigma.len() {
            return Err(Error::Subspace("factor shapes disagree".into()));
        }
        if rank == 0 {
            return Err(Error::Subspace("rank must be >= 1".into()));
        }
        let n = u.nrows();
        let known = (0..n).map(|i| u.row(i).iter().any(|&x| x != 0.0)).collect();
        Ok(Self {
            window_size: v.nrows().max(1),
            u,
            sigma,
            v,
            rank,
            known,
        })
    }

    pub fn with_window(mut self, window_size: usize) -> Self {
        self.window_size = window_size.max(1);
        self
    }

    pub fn with_known(mut self, known: Vec<bool>) -> Self {
        assert_eq!(known.len(), self.u.nrows(), "known mask length");
        self.known = known;
        self
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    /// Number of window columns currently represented.
    pub fn column_count(&self) -> usize {
        self.v.nrows()
    }

    /// Number of retained singular triplets (may exceed `rank`).
    pub fn retained(&self) -> usize {
        self.sigma.len()
    }

    pub fn known(&self) -> &[bool] {
        &self.known
    }

    /// Leading `rank` left singular vectors.
    pub fn basis(&self) -> DMatrix<f64> {
        let r = self.rank.min(self.sigma.len());
        self.u.columns(0, r).into_owned()
    }

    /// Leading `rank` singular values, non-increasing.
    pub fn singular_values(&self) -> DVector<f64> {
        let r = self.rank.min(self.sigma.len());
        self.sigma.rows(0, r).into_owned()
    }

    pub fn full_u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn full_sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn full_v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// `U Σ Vᵀ`, the represented window matrix.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.sigma) * self.v.transpose()
    }

    /// `max |UᵀU - I|` over the retained basis.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.u.transpose() * &self.u;
        let q = g.nrows();
        let mut worst = 0.0f64;
        for i in 0..q {
            for j in 0..q {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Appends a column (rank-one update of the thin SVD).
    pub fn inc_svd(&mut self, column: &DVector<f64>) -> Result<()> {
        if column.len() != self.rows() {
            return Err(Error::Subspace(format!(
                "column length {} != {} rows",
                column.len(),
                self.rows()
            )));
        }
        if column.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("inc_svd column"));
        }
        let q = self.sigma.len();
        let k = self.v.nrows();

        // project twice: classical Gram-Schmidt loses orthogonality otherwise
        let mut p = self.u.tr_mul(column);
        let mut e = column - &self.u * &p;
        let p2 = self.u.tr_mul(&e);
        e -= &self.u * &p2;
        p += p2;
        let rho = e.norm();
        let scale = column.norm().max(self.sigma.iter().cloned().fold(0.0, f64::max));
        let grow = rho > 1e-10 * scale && rho > 0.0;

        let dim = if grow { q + 1 } else { q };
        let mut core = DMatrix::zeros(dim, q + 1);
        for i in 0..q {
            core[(i, i)] = self.sigma[i];
            core[(i, q)] = p[i];
        }
        if grow {
            core[(q, q)] = rho;
        }

        let mut v_ext = DMatrix::zeros(k + 1, q + 1);
        v_ext.view_mut((0, 0), (k, q)).copy_from(&self.v);
        v_ext[(k, q)] = 1.0;

        if core.is_empty() {
            // empty model and zero column: only the window grows
            self.v = DMatrix::zeros(k + 1, 0);
            return Ok(());
        }
        let (a, s, b) = truncate_model(sorted_svd(&core));
        let u_ext = if grow {
            let mut u_ext = DMatrix::zeros(self.rows(), q + 1);
            u_ext.view_mut((0, 0), (self.rows(), q)).copy_from(&self.u);
            u_ext.set_column(q, &(e / rho));
            u_ext
        } else {
            self.u.clone()
        };
        self.u = u_ext * a;
        self.sigma = s;
        self.v = v_ext * b;
        Ok(())
    }

    /// Removes window column `index` (downdate).
    pub fn dwn_svd(&mut self, index: usize) -> Result<()> {
        let k = self.v.nrows();
        if k <= 1 {
            return Err(Error::Subspace("cannot remove the only window column".into()));
        }
        if index >= k {
            return Err(Error::Subspace(format!("column index {index} out of {k}")));
        }
        let q = self.sigma.len();
        if q == 0 {
            self.v = DMatrix::zeros(k - 1, 0);
            return Ok(());
        }
        // remaining columns: U (diag(σ) V'ᵀ); re-factor the small k-1 x q block
        let v_rest = self.v.clone().remove_row(index);
        let m = v_rest * DMatrix::from_diagonal(&self.sigma);
        let (a, s, b) = sorted_svd(&m);
        let (a, s, b) = truncate(a, s, b);
        self.u = &self.u * b;
        self.sigma = s;
        self.v = a;
        Ok(())
    }

    /// Replaces window column `index` with `column`, keeping its position.
    pub fn rep_svd(&mut self, index: usize, column: &DVector<f64>) -> Result<()> {
        let k = self.v.nrows();
        if index >= k {
            return Err(Error::Subspace(format!("column index {index} out of {k}")));
        }
        if column.len() != self.rows() {
            return Err(Error::Subspace("replacement column length".into()));
        }
        if k == 1 {
            // nothing to keep: refactor the single column
            let known = self.known.clone();
            let mut fresh = Self::partial_svd(&DMatrix::from_column_slice(column.len(), 1, column.as_slice()), 1)?;
            fresh.rank = self.rank;
            fresh.window_size = self.window_size;
            fresh.known = known;
            *self = fresh;
            return Ok(());
        }
        self.dwn_svd(index)?;
        self.inc_svd(column)?;
        let last = self.v.nrows() - 1;
        if index != last {
            let row = self.v.row(last).into_owned();
            let mut v = self.v.clone().remove_row(last);
            v = v.insert_row(index, 0.0);
            v.set_row(index, &row);
            self.v = v;
        }
        Ok(())
    }

    /// Appends a column and drops the oldest while the window is over-full.
    pub fn push_window(&mut self, column: &DVector<f64>) -> Result<()> {
        self.inc_svd(column)?;
        while self.column_count() > self.window_size {
            self.dwn_svd(0)?;
        }
        Ok(())
    }

    /// Replaces `U` by an orthonormal basis of the same column space while
    /// keeping `U Σ Vᵀ` unchanged.
    pub(crate) fn reorthonormalize(&mut self) {
        let q = self.sigma.len();
        if q == 0 {
            return;
        }
        let qr = self.u.clone().qr();
        let (qm, r) = (qr.q(), qr.r());
        let core = r * DMatrix::from_diagonal(&self.sigma);
        let (a, s, b) = sorted_svd(&core);
        self.u = qm * a;
        self.sigma = s;
        self.v = &self.v * b;
    }

    pub(crate) fn u_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.u
    }

    pub(crate) fn mark_known(&mut self, rows: &[bool]) {
        for (k, &r) in self.known.iter_mut().zip(rows) {
            *k |= r;
        }
    }
}

fn truncate_model(
    (a, s, b): (DMatrix<f64>, DVector<f64>, DMatrix<f64>),
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    truncate(a, s, b)
}
