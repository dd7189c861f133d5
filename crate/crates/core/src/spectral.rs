//! Deterministic thin SVD and the subspace operations built on it.
//!
//! Every routine works in f64. Factor columns follow a fixed sign convention
//! so results do not depend on the SVD backend's arbitrary choices.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::svd::{self as faer_svd, ComputeSvdVectors};
use faer::diag::Diag;
use faer::{Mat, Par};
use nalgebra::DMatrix;
use thiserror::Error;

pub type Matrix = DMatrix<f64>;

/// Default tolerance for [`effective_rank`].
pub const DEFAULT_EPSILON: f64 = 0.05;

const ORTHONORMAL_TOL: f64 = 1e-8;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("SVD did not converge")]
    NoConvergence,
    #[error("matrix is identically zero")]
    ZeroMatrix,
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("k = {k} is outside 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("basis columns are not orthonormal (max deviation {0:.3e})")]
    BasisNotOrthonormal(f64),
    #[error("matrix is rank deficient (sigma_min / sigma_max = {0:.3e})")]
    RankDeficient(f64),
}

/// Thin SVD `M = U diag(sigma) Vᵀ` with `r = min(m, n)` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// First `k` left singular vectors as an `m × k` matrix.
    pub fn top_u(&self, k: usize) -> Matrix {
        self.u.columns(0, k).into_owned()
    }

    pub fn top_v(&self, k: usize) -> Matrix {
        self.v.columns(0, k).into_owned()
    }

    /// `U diag(values) Vᵀ` for an arbitrary replacement spectrum.
    pub fn recompose_with(&self, values: &[f64]) -> Matrix {
        debug_assert_eq!(values.len(), self.rank());
        let mut scaled = self.u.clone();
        for (j, &s) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(s);
        }
        scaled * self.v.transpose()
    }

    pub fn recompose(&self) -> Matrix {
        self.recompose_with(&self.sigma)
    }

    /// `U Vᵀ`, the isotropic reconstruction before scaling.
    pub fn polar(&self) -> Matrix {
        &self.u * self.v.transpose()
    }

    pub fn mean_sigma(&self) -> f64 {
        self.sigma.iter().sum::<f64>() / self.rank() as f64
    }
}

/// Thin SVD with non-increasing singular values (stable on ties) and the
/// sign convention: the largest-magnitude entry of each `U` column (lowest
/// index on ties) is non-negative, with `V` flipped to match.
pub fn thin_svd(m: &Matrix) -> Result<SvdFactors, SpectralError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::NonFinite);
    }
    let (rows, cols) = m.shape();
    let r = rows.min(cols);
    // faer runs sequentially here so results never depend on thread count.
    let a = Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let mut u_raw = Mat::<f64>::zeros(rows, r);
    let mut v_raw = Mat::<f64>::zeros(cols, r);
    let mut sv = Diag::<f64>::zeros(r);
    let scratch = faer_svd::svd_scratch::<f64>(
        rows,
        cols,
        ComputeSvdVectors::Thin,
        ComputeSvdVectors::Thin,
        Par::Seq,
        Default::default(),
    );
    faer_svd::svd(
        a.as_ref(),
        sv.as_mut(),
        Some(u_raw.as_mut()),
        Some(v_raw.as_mut()),
        Par::Seq,
        MemStack::new(&mut MemBuffer::new(scratch)),
        Default::default(),
    )
    .map_err(|_| SpectralError::NoConvergence)?;
    let sv: Vec<f64> = (0..r).map(|i| sv[i]).collect();

    let mut order: Vec<usize> = (0..r).collect();
    // `sort_by` is stable, so equal values keep the backend's order.
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));

    let mut u = Matrix::zeros(rows, r);
    let mut v = Matrix::zeros(cols, r);
    let mut sigma = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        let mut ucol = nalgebra::DVector::from_fn(rows, |i, _| u_raw[(i, src)]);
        let mut vcol = nalgebra::DVector::from_fn(cols, |i, _| v_raw[(i, src)]);
        let mut pivot = 0;
        for i in 1..rows {
            if ucol[i].abs() > ucol[pivot].abs() {
                pivot = i;
            }
        }
        if ucol[pivot] < 0.0 {
            ucol.neg_mut();
            vcol.neg_mut();
        }
        u.set_column(dst, &ucol);
        v.set_column(dst, &vcol);
        sigma.push(sv[src].max(0.0));
    }
    Ok(SvdFactors { u, sigma, v })
}

/// Smallest `k ≥ 1` whose tail energy satisfies
/// `sqrt(Σ_{i>k} σ_i²) ≤ ε · sqrt(Σ_i σ_i²)`.
pub fn effective_rank_from_sigma(sigma: &[f64], epsilon: f64) -> Result<usize, SpectralError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(SpectralError::InvalidEpsilon(epsilon));
    }
    // tail[k] = Σ_{i ≥ k} σ_i², accumulated from the small end.
    let mut tail = vec![0.0; sigma.len() + 1];
    for i in (0..sigma.len()).rev() {
        tail[i] = tail[i + 1] + sigma[i] * sigma[i];
    }
    let total = tail[0];
    if total == 0.0 {
        return Err(SpectralError::ZeroMatrix);
    }
    let bound = epsilon * total.sqrt();
    Ok((1..=sigma.len())
        .find(|&k| tail[k].sqrt() <= bound)
        .unwrap_or(sigma.len()))
}

pub fn effective_rank(m: &Matrix, epsilon: f64) -> Result<usize, SpectralError> {
    effective_rank_from_sigma(&thin_svd(m)?.sigma, epsilon)
}

/// `U^{1:k} (U^{1:k})ᵀ M`.
pub fn project_onto_topk(m: &Matrix, basis: &SvdFactors, k: usize) -> Result<Matrix, SpectralError> {
    if m.nrows() != basis.u.nrows() {
        return Err(SpectralError::DimensionMismatch(format!(
            "matrix has {} rows, basis has {}",
            m.nrows(),
            basis.u.nrows()
        )));
    }
    if k == 0 || k > basis.rank() {
        return Err(SpectralError::KOutOfRange {
            k,
            max: basis.rank(),
        });
    }
    let uk = basis.u.columns(0, k);
    Ok(&uk * (uk.transpose() * m))
}

fn orthonormality_defect(b: &Matrix) -> f64 {
    let gram = b.transpose() * b;
    let k = gram.nrows();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// `M − B Bᵀ M` for a basis `B` with orthonormal columns.
pub fn residual_against(m: &Matrix, basis_topk: &Matrix) -> Result<Matrix, SpectralError> {
    if m.nrows() != basis_topk.nrows() {
        return Err(SpectralError::DimensionMismatch(format!(
            "matrix has {} rows, basis has {}",
            m.nrows(),
            basis_topk.nrows()
        )));
    }
    let defect = orthonormality_defect(basis_topk);
    if defect > ORTHONORMAL_TOL {
        return Err(SpectralError::BasisNotOrthonormal(defect));
    }
    Ok(m - basis_topk * (basis_topk.transpose() * m))
}

/// Polar orthogonal factor `P Qᵀ` of `A = P S Qᵀ`: the orthonormal-column
/// matrix nearest to `A` in Frobenius norm.
pub fn whiten_columns(a: &Matrix) -> Result<Matrix, SpectralError> {
    if a.ncols() > a.nrows() {
        return Err(SpectralError::DimensionMismatch(format!(
            "cannot orthonormalize {} columns in dimension {}",
            a.ncols(),
            a.nrows()
        )));
    }
    let f = thin_svd(a)?;
    let largest = f.sigma.first().copied().unwrap_or(0.0);
    let smallest = f.sigma.last().copied().unwrap_or(0.0);
    if largest == 0.0 || smallest <= RANK_TOL * largest {
        let ratio = if largest == 0.0 { 0.0 } else { smallest / largest };
        return Err(SpectralError::RankDeficient(ratio));
    }
    Ok(f.polar())
}

/// Max `|QᵀQ − I|` entry; exposed for tests and invariants.
pub fn column_orthonormality_defect(q: &Matrix) -> f64 {
    orthonormality_defect(q)
}
