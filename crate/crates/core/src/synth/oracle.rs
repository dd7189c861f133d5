use nalgebra::SymmetricEigen;

use super::SynthError;
use crate::spectral::Matrix;

pub const ORACLE_MAX_DIM: usize = 6;

/// Iso-C of a small layer through the Gram eigendecomposition instead of an SVD.
///
/// `V` and `σ²` come from `Δᵀ Δ`; `U = Δ V diag(1/σ)` is formed on the
/// directions with `σ > tol · σ_max`. `σ̄` averages over all `min(m, n)` values.
pub fn oracle_iso_c(tasks: &[Matrix], tol: f64) -> Result<Matrix, SynthError> {
    let first = tasks
        .first()
        .ok_or_else(|| SynthError::InvalidDims("no task matrices".into()))?;
    let (m, n) = first.shape();
    if m > ORACLE_MAX_DIM || n > ORACLE_MAX_DIM {
        return Err(SynthError::TooLarge {
            rows: m,
            cols: n,
            max: ORACLE_MAX_DIM,
        });
    }
    let mut sum = Matrix::zeros(m, n);
    for t in tasks {
        if t.shape() != (m, n) {
            return Err(SynthError::InvalidDims(format!(
                "task matrix {:?} does not match {:?}",
                t.shape(),
                (m, n)
            )));
        }
        sum += t;
    }

    let eig = SymmetricEigen::new(sum.transpose() * &sum);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let r = m.min(n);
    let sigma: Vec<f64> = order[..r]
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
        .collect();
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let mut out = Matrix::zeros(m, n);
    if sigma_max == 0.0 {
        return Ok(out);
    }
    let sigma_bar = sigma.iter().sum::<f64>() / r as f64;
    for (&i, &s) in order.iter().zip(&sigma) {
        if s <= tol * sigma_max {
            continue;
        }
        let v = eig.eigenvectors.column(i);
        let u = &sum * v / s;
        out += u * v.transpose();
    }
    Ok(out * sigma_bar)
}
