//! Layer-wise merging operators: weight averaging, task arithmetic, Iso-C and
//! Iso-CTS, plus validation-driven selection of the global scale `α`.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{apply_delta, BundleError, TensorBundle};
use crate::spectral::{residual_against, thin_svd, whiten_columns, Matrix, SpectralError};

/// Default fraction `k / r` of each layer's rank given to the common subspace.
pub const DEFAULT_COMMON_FRACTION: f64 = 0.8;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("no tasks to merge")]
    EmptyTaskList,
    #[error("task `{task}`: parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        task: String,
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("task `{task}`: parameter sets differ at `{name}`")]
    NameSetMismatch { task: String, name: String },
    #[error("common fraction must lie in (0, 1], got {0}")]
    InvalidCommonFraction(f64),
    #[error("layer `{layer}`: {source}")]
    Numerical {
        layer: String,
        #[source]
        source: SpectralError,
    },
}

/// Per-task deltas: 2-D task matrices and 1-D delta vectors, in parameter order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskMatrixSet {
    pub task_label: String,
    pub matrices: IndexMap<String, Matrix>,
    pub vectors: IndexMap<String, Vec<f64>>,
}

impl TaskMatrixSet {
    pub fn new(task_label: impl Into<String>) -> Self {
        Self {
            task_label: task_label.into(),
            ..Self::default()
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.task_label = label.into();
        self
    }

    /// Multiplies every entry by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            task_label: self.task_label.clone(),
            matrices: self
                .matrices
                .iter()
                .map(|(k, m)| (k.clone(), m * c))
                .collect(),
            vectors: self
                .vectors
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|x| x * c).collect()))
                .collect(),
        }
    }

    /// All entries, matrices row-major then vectors, in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for m in self.matrices.values() {
            for i in 0..m.nrows() {
                out.extend(m.row(i).iter());
            }
        }
        for v in self.vectors.values() {
            out.extend_from_slice(v);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MergeMethod {
    #[serde(rename = "AVG")]
    Average,
    #[serde(rename = "TA")]
    TaskArithmetic,
    #[serde(rename = "ISO_C")]
    IsoC,
    #[serde(rename = "ISO_CTS")]
    IsoCts,
}

impl MergeMethod {
    pub const ALL: [MergeMethod; 4] = [
        MergeMethod::Average,
        MergeMethod::TaskArithmetic,
        MergeMethod::IsoC,
        MergeMethod::IsoCts,
    ];

    /// Command-line spelling (`avg`, `ta`, `iso-c`, `iso-cts`).
    pub fn cli_name(self) -> &'static str {
        match self {
            MergeMethod::Average => "avg",
            MergeMethod::TaskArithmetic => "ta",
            MergeMethod::IsoC => "iso-c",
            MergeMethod::IsoCts => "iso-cts",
        }
    }
}

impl fmt::Display for MergeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for MergeMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "avg" | "average" => Ok(MergeMethod::Average),
            "ta" | "task-arithmetic" => Ok(MergeMethod::TaskArithmetic),
            "iso-c" | "isoc" => Ok(MergeMethod::IsoC),
            "iso-cts" | "isocts" => Ok(MergeMethod::IsoCts),
            other => Err(format!(
                "unknown merge method `{other}` (expected avg, ta, iso-c or iso-cts)"
            )),
        }
    }
}

/// What was done to one 2-D layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMeta {
    pub method: MergeMethod,
    /// Thin-SVD rank, `min(m, n)`.
    pub r: usize,
    /// Isotropic scale; absent for AVG / TA.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_bar: Option<f64>,
    /// Directions kept from the common subspace.
    pub k_common: usize,
    /// Task-specific directions kept per task.
    pub s_per_task: usize,
    /// Summed task matrices were exactly zero; the merged layer is zero.
    #[serde(default)]
    pub zero_sum: bool,
    /// The concatenated basis was rank deficient and Iso-C was used instead.
    #[serde(default)]
    pub whitening_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub deltas: TaskMatrixSet,
    pub per_layer_meta: IndexMap<String, LayerMeta>,
}

impl MergeOutcome {
    pub fn method(&self) -> Option<MergeMethod> {
        self.per_layer_meta.values().next().map(|m| m.method)
    }
}

fn check_aligned(tasks: &[TaskMatrixSet]) -> Result<&TaskMatrixSet, MergeError> {
    let first = tasks.first().ok_or(MergeError::EmptyTaskList)?;
    for task in &tasks[1..] {
        let mismatch = |name: &str| MergeError::NameSetMismatch {
            task: task.task_label.clone(),
            name: name.to_string(),
        };
        if task.matrices.len() != first.matrices.len() || task.vectors.len() != first.vectors.len() {
            let name = first
                .matrices
                .keys()
                .chain(first.vectors.keys())
                .find(|n| !task.matrices.contains_key(*n) && !task.vectors.contains_key(*n))
                .or_else(|| {
                    task.matrices
                        .keys()
                        .chain(task.vectors.keys())
                        .find(|n| !first.matrices.contains_key(*n) && !first.vectors.contains_key(*n))
                })
                .map(String::as_str)
                .unwrap_or("?");
            return Err(mismatch(name));
        }
        for (name, m) in &first.matrices {
            let other = task.matrices.get(name).ok_or_else(|| mismatch(name))?;
            if other.shape() != m.shape() {
                return Err(MergeError::ShapeMismatch {
                    task: task.task_label.clone(),
                    name: name.clone(),
                    expected: vec![m.nrows(), m.ncols()],
                    found: vec![other.nrows(), other.ncols()],
                });
            }
        }
        for (name, v) in &first.vectors {
            let other = task.vectors.get(name).ok_or_else(|| mismatch(name))?;
            if other.len() != v.len() {
                return Err(MergeError::ShapeMismatch {
                    task: task.task_label.clone(),
                    name: name.clone(),
                    expected: vec![v.len()],
                    found: vec![other.len()],
                });
            }
        }
    }
    Ok(first)
}

fn merged_label(tasks: &[TaskMatrixSet], method: MergeMethod) -> String {
    let labels: Vec<&str> = tasks.iter().map(|t| t.task_label.as_str()).collect();
    format!("{}({})", method.cli_name(), labels.join("+"))
}

/// Sum of one layer over all tasks, accumulated in input order.
fn layer_sum(tasks: &[TaskMatrixSet], name: &str) -> Matrix {
    let mut acc = tasks[0].matrices[name].clone();
    for t in &tasks[1..] {
        acc += &t.matrices[name];
    }
    acc
}

fn vector_mean(tasks: &[TaskMatrixSet], name: &str) -> Vec<f64> {
    let mut acc = tasks[0].vectors[name].clone();
    for t in &tasks[1..] {
        for (a, b) in acc.iter_mut().zip(&t.vectors[name]) {
            *a += b;
        }
    }
    let n = tasks.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Runs `layer_fn` over every 2-D layer (in parallel, results kept in layer
/// order) and averages the 1-D parameters.
fn merge_layers<F>(
    tasks: &[TaskMatrixSet],
    method: MergeMethod,
    layer_fn: F,
) -> Result<MergeOutcome, MergeError>
where
    F: Fn(&str) -> Result<(Matrix, LayerMeta), SpectralError> + Sync,
{
    let first = check_aligned(tasks)?;
    let names: Vec<&String> = first.matrices.keys().collect();
    let results: Vec<Result<(Matrix, LayerMeta), SpectralError>> =
        names.par_iter().map(|name| layer_fn(name)).collect();

    let mut deltas = TaskMatrixSet::new(merged_label(tasks, method));
    let mut per_layer_meta = IndexMap::with_capacity(names.len());
    for (name, res) in names.into_iter().zip(results) {
        let (m, meta) = res.map_err(|source| MergeError::Numerical {
            layer: name.clone(),
            source,
        })?;
        deltas.matrices.insert(name.clone(), m);
        per_layer_meta.insert(name.clone(), meta);
    }
    for name in first.vectors.keys() {
        deltas.vectors.insert(name.clone(), vector_mean(tasks, name));
    }
    Ok(MergeOutcome {
        deltas,
        per_layer_meta,
    })
}

fn plain_meta(method: MergeMethod, m: &Matrix) -> LayerMeta {
    let r = m.nrows().min(m.ncols());
    LayerMeta {
        method,
        r,
        sigma_bar: None,
        k_common: r,
        s_per_task: 0,
        zero_sum: false,
        whitening_fallback: false,
    }
}

/// Elementwise mean of the task deltas.
pub fn merge_average(tasks: &[TaskMatrixSet]) -> Result<MergeOutcome, MergeError> {
    let n = tasks.len() as f64;
    merge_layers(tasks, MergeMethod::Average, |name| {
        let m = layer_sum(tasks, name) / n;
        let meta = plain_meta(MergeMethod::Average, &m);
        Ok((m, meta))
    })
}

/// `Δ_TA = Σ_t Δ_t` per 2-D layer; 1-D deltas are averaged.
pub fn merge_task_arithmetic(tasks: &[TaskMatrixSet]) -> Result<MergeOutcome, MergeError> {
    merge_layers(tasks, MergeMethod::TaskArithmetic, |name| {
        let m = layer_sum(tasks, name);
        let meta = plain_meta(MergeMethod::TaskArithmetic, &m);
        Ok((m, meta))
    })
}

/// Isotropic merge of one summed layer: `σ̄ U Vᵀ` with `σ̄` the mean of all
/// `r = min(m, n)` singular values of the sum.
fn iso_c_layer(sum: &Matrix, method: MergeMethod) -> Result<(Matrix, LayerMeta), SpectralError> {
    let r = sum.nrows().min(sum.ncols());
    let mut meta = LayerMeta {
        method,
        r,
        sigma_bar: Some(0.0),
        k_common: r,
        s_per_task: 0,
        zero_sum: false,
        whitening_fallback: false,
    };
    if sum.iter().all(|&v| v == 0.0) {
        meta.zero_sum = true;
        return Ok((Matrix::zeros(sum.nrows(), sum.ncols()), meta));
    }
    let f = thin_svd(sum)?;
    let sigma_bar = f.mean_sigma();
    meta.sigma_bar = Some(sigma_bar);
    Ok((f.polar() * sigma_bar, meta))
}

pub fn merge_iso_c(tasks: &[TaskMatrixSet]) -> Result<MergeOutcome, MergeError> {
    merge_layers(tasks, MergeMethod::IsoC, |name| {
        iso_c_layer(&layer_sum(tasks, name), MergeMethod::IsoC)
    })
}

/// Sizes of the common and per-task blocks for a layer of rank `r`.
///
/// `k₀ = round(fraction · r)`, `s = ⌊(r − k₀) / T⌋`, and the remainder goes
/// to the common block so that `k + T·s = r`.
pub fn subspace_split(r: usize, num_tasks: usize, common_fraction: f64) -> (usize, usize) {
    let k0 = ((common_fraction * r as f64).round() as usize).min(r);
    let s = (r - k0) / num_tasks.max(1);
    (r - num_tasks * s, s)
}

fn iso_cts_layer(
    layers: &[&Matrix],
    common_fraction: f64,
) -> Result<(Matrix, LayerMeta), SpectralError> {
    let mut sum = layers[0].clone();
    for l in &layers[1..] {
        sum += *l;
    }
    let (m, n) = sum.shape();
    let r = m.min(n);
    let (k, s) = subspace_split(r, layers.len(), common_fraction);
    if s == 0 || sum.iter().all(|&v| v == 0.0) {
        return iso_c_layer(&sum, MergeMethod::IsoCts);
    }

    let common = thin_svd(&sum)?;
    let uk = common.top_u(k);
    let mut u_star = Matrix::zeros(m, r);
    let mut v_star = Matrix::zeros(n, r);
    u_star.columns_mut(0, k).copy_from(&uk);
    v_star.columns_mut(0, k).copy_from(&common.v.columns(0, k));
    let mut total: f64 = common.sigma[..k].iter().sum();

    for (t, delta) in layers.iter().enumerate() {
        let residual = residual_against(delta, &uk)?;
        let f = thin_svd(&residual)?;
        let col = k + t * s;
        u_star.columns_mut(col, s).copy_from(&f.u.columns(0, s));
        v_star.columns_mut(col, s).copy_from(&f.v.columns(0, s));
        total += f.sigma[..s].iter().sum::<f64>();
    }

    let whitened = whiten_columns(&u_star).and_then(|u| Ok((u, whiten_columns(&v_star)?)));
    let (u_w, v_w) = match whitened {
        Ok(pair) => pair,
        Err(SpectralError::RankDeficient(_)) => {
            let (out, mut meta) = iso_c_layer(&sum, MergeMethod::IsoCts)?;
            meta.whitening_fallback = true;
            return Ok((out, meta));
        }
        Err(e) => return Err(e),
    };
    let sigma_bar = total / r as f64;
    let meta = LayerMeta {
        method: MergeMethod::IsoCts,
        r,
        sigma_bar: Some(sigma_bar),
        k_common: k,
        s_per_task: s,
        zero_sum: false,
        whitening_fallback: false,
    };
    Ok((u_w * v_w.transpose() * sigma_bar, meta))
}

/// Iso-CTS: the top-`k` common directions of `Δ_TA` plus each task's top-`s`
/// directions outside that subspace, orthogonalized and isotropically scaled.
/// Layers with `s = 0` reduce to Iso-C.
pub fn merge_iso_cts(
    tasks: &[TaskMatrixSet],
    common_fraction: f64,
) -> Result<MergeOutcome, MergeError> {
    if !(common_fraction > 0.0 && common_fraction <= 1.0) {
        return Err(MergeError::InvalidCommonFraction(common_fraction));
    }
    merge_layers(tasks, MergeMethod::IsoCts, |name| {
        let layers: Vec<&Matrix> = tasks.iter().map(|t| &t.matrices[name]).collect();
        iso_cts_layer(&layers, common_fraction)
    })
}

/// Dispatches to one of the four operators. `common_fraction` only affects Iso-CTS.
pub fn merge(
    method: MergeMethod,
    tasks: &[TaskMatrixSet],
    common_fraction: f64,
) -> Result<MergeOutcome, MergeError> {
    match method {
        MergeMethod::Average => merge_average(tasks),
        MergeMethod::TaskArithmetic => merge_task_arithmetic(tasks),
        MergeMethod::IsoC => merge_iso_c(tasks),
        MergeMethod::IsoCts => merge_iso_cts(tasks, common_fraction),
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("alpha grid is empty")]
    EmptyGrid,
    #[error("evaluator failed at alpha = {alpha}: {message}")]
    EvaluatorFailure { alpha: f64, message: String },
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaScore {
    pub alpha: f64,
    pub mean_accuracy: f64,
    pub per_task: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSweep {
    pub best_alpha: f64,
    pub best_mean_accuracy: f64,
    pub table: Vec<AlphaScore>,
}

/// `0.5, 0.6, …, 2.0`.
pub fn default_alpha_grid() -> Vec<f64> {
    (5..=20).map(|i| f64::from(i) / 10.0).collect()
}

/// Scores `θ_0 + α·Δ` for each `α` in `grid` and keeps the best mean
/// validation accuracy; ties go to the smaller `α`.
pub fn sweep_alpha<F, E>(
    base: &TensorBundle,
    outcome: &MergeOutcome,
    grid: &[f64],
    mut evaluator: F,
) -> Result<AlphaSweep, SweepError>
where
    F: FnMut(&TensorBundle) -> Result<Vec<f64>, E>,
    E: fmt::Display,
{
    if grid.is_empty() {
        return Err(SweepError::EmptyGrid);
    }
    let mut table = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let model = apply_delta(base, outcome, alpha)?;
        let per_task = evaluator(&model).map_err(|e| SweepError::EvaluatorFailure {
            alpha,
            message: e.to_string(),
        })?;
        if per_task.is_empty() || per_task.iter().any(|a| !a.is_finite()) {
            return Err(SweepError::EvaluatorFailure {
                alpha,
                message: "evaluator returned no scores or non-finite scores".into(),
            });
        }
        let mean_accuracy = per_task.iter().sum::<f64>() / per_task.len() as f64;
        table.push(AlphaScore {
            alpha,
            mean_accuracy,
            per_task,
        });
    }
    let best = table
        .iter()
        .reduce(|best, cand| {
            if cand.mean_accuracy > best.mean_accuracy
                || (cand.mean_accuracy == best.mean_accuracy && cand.alpha < best.alpha)
            {
                cand
            } else {
                best
            }
        })
        .expect("grid is non-empty");
    Ok(AlphaSweep {
        best_alpha: best.alpha,
        best_mean_accuracy: best.mean_accuracy,
        table,
    })
}
