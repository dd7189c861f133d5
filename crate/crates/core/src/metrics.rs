//! Alignment and performance diagnostics: subspace alignment ratio (SAR),
//! normalized accuracy improvement (NAI), task-vector cosine similarity,
//! spectrum interpolation / truncation and Pearson correlation.

use indexmap::IndexMap;
use thiserror::Error;

use crate::merge::{MergeOutcome, TaskMatrixSet};
use crate::spectral::{
    effective_rank_from_sigma, project_onto_topk, thin_svd, Matrix, SpectralError, SvdFactors,
};

/// Layer label used for the per-task average row of an alignment report.
pub const AVG_LAYER: &str = "avg";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("source matrix is zero")]
    ZeroSource,
    #[error("k = {k} is outside 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("task accuracy equals zero-shot accuracy; NAI is undefined")]
    DegenerateDenominator,
    #[error("task vector is zero")]
    ZeroVector,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("no 2-D layers to average over")]
    NoTwoDLayers,
    #[error("beta must lie in [0, 1], got {0}")]
    InvalidBeta(f64),
    #[error("task sets are not aligned: {0}")]
    Misaligned(String),
    #[error("layer `{layer}`: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<MetricError>,
    },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

impl MetricError {
    fn in_layer(self, layer: &str) -> Self {
        MetricError::Layer {
            layer: layer.to_string(),
            source: Box::new(self),
        }
    }
}

/// SAR against a precomputed target factorization.
pub fn sar_with_basis(src: &Matrix, trg: &SvdFactors, k: usize) -> Result<f64, MetricError> {
    let denom = src.norm();
    if denom == 0.0 {
        return Err(MetricError::ZeroSource);
    }
    if k == 0 || k > trg.rank() {
        return Err(MetricError::KOutOfRange { k, max: trg.rank() });
    }
    let projected = project_onto_topk(src, trg, k)?;
    Ok((projected.norm() / denom).min(1.0))
}

/// `‖Π_k(trg) Δ_src‖_F / ‖Δ_src‖_F`, with `Π_k` the projector onto the top-`k`
/// left singular vectors of `Δ_trg`.
pub fn sar(delta_src: &Matrix, delta_trg: &Matrix, k_m: usize) -> Result<f64, MetricError> {
    sar_with_basis(delta_src, &thin_svd(delta_trg)?, k_m)
}

/// A merged layer's factorization together with its effective rank `k_M`.
#[derive(Debug, Clone)]
pub struct LayerBasis {
    pub factors: SvdFactors,
    pub k_m: usize,
}

/// Factorized 2-D layers of a merged delta, reusable across many tasks.
#[derive(Debug, Clone)]
pub struct AlignmentBasis {
    pub epsilon: f64,
    pub layers: IndexMap<String, LayerBasis>,
}

impl AlignmentBasis {
    pub fn new(merged: &TaskMatrixSet, epsilon: f64) -> Result<Self, MetricError> {
        if merged.matrices.is_empty() {
            return Err(MetricError::NoTwoDLayers);
        }
        let mut layers = IndexMap::with_capacity(merged.matrices.len());
        for (name, m) in &merged.matrices {
            let factors = thin_svd(m).map_err(|e| MetricError::from(e).in_layer(name))?;
            let k_m = effective_rank_from_sigma(&factors.sigma, epsilon)
                .map_err(|e| MetricError::from(e).in_layer(name))?;
            layers.insert(name.clone(), LayerBasis { factors, k_m });
        }
        Ok(Self { epsilon, layers })
    }

    pub fn k_m(&self) -> IndexMap<String, usize> {
        self.layers
            .iter()
            .map(|(n, l)| (n.clone(), l.k_m))
            .collect()
    }

    /// Per-layer SAR of `task` against this basis, in layer order.
    pub fn layer_sar(&self, task: &TaskMatrixSet) -> Result<Vec<(String, f64)>, MetricError> {
        self.layers
            .iter()
            .map(|(name, basis)| {
                let src = task.matrices.get(name).ok_or_else(|| {
                    MetricError::Misaligned(format!(
                        "task `{}` has no layer `{name}`",
                        task.task_label
                    ))
                })?;
                let value = sar_with_basis(src, &basis.factors, basis.k_m)
                    .map_err(|e| e.in_layer(name))?;
                Ok((name.clone(), value))
            })
            .collect()
    }

    /// Unweighted mean of per-layer SAR over the 2-D layers.
    pub fn sar_avg(&self, task: &TaskMatrixSet) -> Result<f64, MetricError> {
        let rows = self.layer_sar(task)?;
        Ok(rows.iter().map(|(_, v)| v).sum::<f64>() / rows.len() as f64)
    }
}

pub fn sar_avg(task: &TaskMatrixSet, merged: &MergeOutcome, epsilon: f64) -> Result<f64, MetricError> {
    AlignmentBasis::new(&merged.deltas, epsilon)?.sar_avg(task)
}

/// `(acc_merged − acc_zero) / (acc_task − acc_zero)`; not clamped.
pub fn nai(acc_merged: f64, acc_task: f64, acc_zero: f64) -> Result<f64, MetricError> {
    let denom = acc_task - acc_zero;
    if denom.abs() < 1e-12 {
        return Err(MetricError::DegenerateDenominator);
    }
    Ok((acc_merged - acc_zero) / denom)
}

/// Cosine similarity of the flattened task vectors (all parameters, `a`'s order).
pub fn vec_cosine(delta_a: &TaskMatrixSet, delta_b: &TaskMatrixSet) -> Result<f64, MetricError> {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    if delta_a.matrices.len() != delta_b.matrices.len() || delta_a.vectors.len() != delta_b.vectors.len() {
        return Err(MetricError::Misaligned("parameter counts differ".into()));
    }
    for (name, a) in &delta_a.matrices {
        let b = delta_b
            .matrices
            .get(name)
            .filter(|b| b.shape() == a.shape())
            .ok_or_else(|| MetricError::Misaligned(format!("layer `{name}`")))?;
        dot += a.dot(b);
        na += a.norm_squared();
        nb += b.norm_squared();
    }
    for (name, a) in &delta_a.vectors {
        let b = delta_b
            .vectors
            .get(name)
            .filter(|b| b.len() == a.len())
            .ok_or_else(|| MetricError::Misaligned(format!("vector `{name}`")))?;
        for (x, y) in a.iter().zip(b) {
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
    }
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Spectrum `(1 − β)σ + β σ̄` on the singular vectors of `factors`.
pub fn interpolate_with_factors(factors: &SvdFactors, beta: f64) -> Result<Matrix, MetricError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(MetricError::InvalidBeta(beta));
    }
    let mean = factors.mean_sigma();
    let values: Vec<f64> = factors
        .sigma
        .iter()
        .map(|&s| (1.0 - beta) * s + beta * mean)
        .collect();
    Ok(factors.recompose_with(&values))
}

/// Moves a task-arithmetic layer's spectrum toward its mean: `β = 0` keeps it,
/// `β = 1` gives the Iso-C layer.
pub fn interpolate_spectrum(ta_layer: &Matrix, beta: f64) -> Result<Matrix, MetricError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(MetricError::InvalidBeta(beta));
    }
    interpolate_with_factors(&thin_svd(ta_layer)?, beta)
}

/// `σ̄ U^{1:k} (V^{1:k})ᵀ`, with `σ̄` the mean over all `r` singular values.
pub fn truncate_isotropic(ta_layer: &Matrix, k: usize) -> Result<Matrix, MetricError> {
    let f = thin_svd(ta_layer)?;
    if k == 0 || k > f.rank() {
        return Err(MetricError::KOutOfRange { k, max: f.rank() });
    }
    let mean = f.mean_sigma();
    Ok(f.top_u(k) * f.top_v(k).transpose() * mean)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricError::ZeroVariance);
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(xs) || constant(ys) {
        return Err(MetricError::ZeroVariance);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentRow {
    pub task: String,
    pub layer: String,
    pub sar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub rows: Vec<AlignmentRow>,
    pub epsilon: f64,
    pub k_m: IndexMap<String, usize>,
}

impl AlignmentReport {
    /// The `avg` row of each task, in task order.
    pub fn averages(&self) -> Vec<(&str, f64)> {
        self.rows
            .iter()
            .filter(|r| r.layer == AVG_LAYER)
            .map(|r| (r.task.as_str(), r.sar))
            .collect()
    }
}

/// Per-layer SAR of every task against `merged`, followed by each task's average.
pub fn alignment_report(
    tasks: &[TaskMatrixSet],
    merged: &TaskMatrixSet,
    epsilon: f64,
) -> Result<AlignmentReport, MetricError> {
    let basis = AlignmentBasis::new(merged, epsilon)?;
    let mut rows = Vec::new();
    for task in tasks {
        let per_layer = basis.layer_sar(task)?;
        let avg = per_layer.iter().map(|(_, v)| v).sum::<f64>() / per_layer.len() as f64;
        rows.extend(per_layer.into_iter().map(|(layer, sar)| AlignmentRow {
            task: task.task_label.clone(),
            layer,
            sar,
        }));
        rows.push(AlignmentRow {
            task: task.task_label.clone(),
            layer: AVG_LAYER.to_string(),
            sar: avg,
        });
    }
    Ok(AlignmentReport {
        rows,
        epsilon,
        k_m: basis.k_m(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRow {
    pub layer: String,
    /// 1-based position in the sorted spectrum.
    pub index: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpectrumReport {
    pub rows: Vec<SpectrumRow>,
    pub method: Option<String>,
    pub beta: Option<f64>,
}

/// Singular values of each layer, largest first.
pub fn spectrum_report<'a, I>(layers: I) -> Result<SpectrumReport, MetricError>
where
    I: IntoIterator<Item = (&'a str, &'a Matrix)>,
{
    let mut rows = Vec::new();
    for (name, m) in layers {
        let f = thin_svd(m).map_err(|e| MetricError::from(e).in_layer(name))?;
        rows.extend(f.sigma.iter().enumerate().map(|(i, &sigma)| SpectrumRow {
            layer: name.to_string(),
            index: i + 1,
            sigma,
        }));
    }
    Ok(SpectrumReport {
        rows,
        ..Default::default()
    })
}
