//! Synthetic multi-task suites for desk-scale merging experiments.
//!
//! A suite is a random two-layer linear-softmax network `θ_0` plus one
//! fine-tuned copy per task. Every task is a Gaussian class-cluster problem
//! whose class means live in a low-dimensional input subspace; a tunable
//! share of that subspace (and of the class prototypes along it) is drawn
//! from a pool common to all tasks, which controls how aligned the task
//! updates end up.
//!
//! Parameters are stored input-major (`x · W`), so the left singular space
//! of a first-layer task matrix is a subspace of the input space.

mod benchmark;
mod oracle;

pub use benchmark::{run_benchmark, BenchmarkTable, MethodResult, TaskResult};
pub use oracle::{oracle_iso_c, ORACLE_MAX_DIM};

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{BundleError, Tensor, TensorBundle};
use crate::isot::{load_bundle, save_bundle};
use crate::merge::{MergeError, SweepError};
use crate::metrics::MetricError;
use crate::report::{csv_writer, format_sig, ReportError};
use crate::spectral::Matrix;

pub const W1: &str = "layer1.weight";
pub const B1: &str = "layer1.bias";
pub const W2: &str = "layer2.weight";
pub const B2: &str = "layer2.bias";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid suite configuration: {0}")]
    InvalidDims(String),
    #[error("model parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("model is missing parameter `{0}`")]
    MissingParameter(String),
    #[error("split is empty")]
    EmptySplit,
    #[error("oracle supports matrices up to {max}×{max}, got {rows}×{cols}")]
    TooLarge { rows: usize, cols: usize, max: usize },
    #[error("suite file: {0}")]
    SuiteFormat(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

/// How the overlap knob is distributed over tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapProfile {
    /// Every task uses `overlap`.
    Uniform,
    /// Task `t` uses `overlap · (1 − t / (T − 1))`: from fully pooled down to private.
    Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub num_tasks: usize,
    pub dims: Dims,
    pub activation: Activation,
    /// Standard deviation of `θ_0` weights times `sqrt(fan_in)`.
    pub init_scale: f64,
    /// Fraction of each task's input subspace taken from the shared pool.
    pub overlap: f64,
    pub profile: OverlapProfile,
    /// Within-class spread inside the task subspace, relative to the class-mean norm.
    pub noise: f64,
    /// Isotropic spread over the whole input space, relative to the class-mean norm.
    pub ambient_noise: f64,
    /// Dimension of each task's class-mean subspace.
    pub subspace_dim: usize,
    /// Norm of each class mean.
    pub separation: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub train_steps: usize,
    pub learning_rate: f64,
}

impl SuiteConfig {
    /// Defaults sized so Iso-CTS keeps task-specific directions for up to 20 tasks.
    pub fn new(seed: u64, num_tasks: usize) -> Self {
        Self {
            seed,
            num_tasks,
            dims: Dims {
                input: 128,
                hidden: 128,
                classes: 8,
            },
            activation: Activation::Relu,
            init_scale: 1.0,
            overlap: 0.5,
            profile: OverlapProfile::Uniform,
            noise: 0.5,
            ambient_noise: 0.1,
            subspace_dim: 8,
            separation: 2.0,
            train_per_class: 32,
            val_per_class: 16,
            test_per_class: 32,
            train_steps: 200,
            learning_rate: 0.1,
        }
    }

    pub fn with_overlap(mut self, overlap: f64) -> Self {
        self.overlap = overlap;
        self
    }

    pub fn with_profile(mut self, profile: OverlapProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_dims(mut self, dims: Dims) -> Self {
        self.dims = dims;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            dims: self.dims,
            activation: self.activation,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidDims(msg));
        if self.num_tasks == 0 {
            return bad("at least one task is required".into());
        }
        let Dims {
            input,
            hidden,
            classes,
        } = self.dims;
        if input == 0 || hidden == 0 {
            return bad(format!("dims must be positive, got input={input} hidden={hidden}"));
        }
        if classes < 2 {
            return bad(format!("need at least 2 classes, got {classes}"));
        }
        if self.subspace_dim == 0 || self.subspace_dim > input {
            return bad(format!(
                "subspace_dim must lie in 1..={input}, got {}",
                self.subspace_dim
            ));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad(format!("overlap must lie in [0, 1], got {}", self.overlap));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise must lie in [0, 1], got {}", self.noise));
        }
        if !(self.ambient_noise >= 0.0 && self.ambient_noise.is_finite()) {
            return bad(format!("ambient noise must be non-negative, got {}", self.ambient_noise));
        }
        if self.train_per_class == 0 || self.val_per_class == 0 || self.test_per_class == 0 {
            return bad("every split needs at least one sample per class".into());
        }
        if !(self.separation > 0.0 && self.learning_rate > 0.0 && self.init_scale > 0.0) {
            return bad("separation, learning rate and init scale must be positive".into());
        }
        Ok(())
    }

    pub fn task_overlap(&self, task: usize) -> f64 {
        match self.profile {
            OverlapProfile::Uniform => self.overlap,
            OverlapProfile::Spread if self.num_tasks == 1 => self.overlap,
            OverlapProfile::Spread => {
                self.overlap * (1.0 - task as f64 / (self.num_tasks - 1) as f64)
            }
        }
    }
}

/// Labeled points, features stored at f32 precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Split::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub label: String,
    pub overlap: f64,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl TaskData {
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSuite {
    pub config: SuiteConfig,
    pub base: TensorBundle,
    pub fine_tuned: Vec<TensorBundle>,
    pub tasks: Vec<TaskData>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
}

/// Modified Gram–Schmidt on the columns of `m`, in place.
fn orthonormalize(m: &mut Matrix) {
    for j in 0..m.ncols() {
        for i in 0..j {
            let proj = m.column(i).dot(&m.column(j));
            let ci = m.column(i).into_owned();
            m.column_mut(j).axpy(-proj, &ci, 1.0);
        }
        let norm = m.column(j).norm();
        m.column_mut(j).unscale_mut(norm);
    }
}

fn round_f32(m: Matrix) -> Matrix {
    m.map(|v| f64::from(v as f32))
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub dims: Dims,
    pub activation: Activation,
}

/// Dense view of the four network parameters, in f64.
#[derive(Debug, Clone)]
pub struct TwoLayerNet {
    pub activation: Activation,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

fn add_row_bias(m: &mut Matrix, bias: &[f64]) {
    for (j, &b) in bias.iter().enumerate() {
        m.column_mut(j).add_scalar_mut(b);
    }
}

impl TwoLayerNet {
    pub fn from_bundle(bundle: &TensorBundle, arch: Architecture) -> Result<Self, SynthError> {
        let fetch = |name: &str, shape: &[usize]| -> Result<&Tensor, SynthError> {
            let t = bundle
                .get(name)
                .ok_or_else(|| SynthError::MissingParameter(name.to_string()))?;
            if t.shape() != shape {
                return Err(SynthError::ShapeMismatch {
                    name: name.to_string(),
                    expected: shape.to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            Ok(t)
        };
        let Dims {
            input,
            hidden,
            classes,
        } = arch.dims;
        Ok(Self {
            activation: arch.activation,
            w1: fetch(W1, &[input, hidden])?.to_dmatrix().expect("rank 2"),
            b1: fetch(B1, &[hidden])?.to_f64_vec(),
            w2: fetch(W2, &[hidden, classes])?.to_dmatrix().expect("rank 2"),
            b2: fetch(B2, &[classes])?.to_f64_vec(),
        })
    }

    pub fn to_bundle(&self) -> Result<TensorBundle, BundleError> {
        let mut b = TensorBundle::new();
        b.insert(W1, Tensor::from_dmatrix(&self.w1)?)?;
        b.insert(B1, Tensor::vector(self.b1.iter().map(|&v| v as f32).collect())?)?;
        b.insert(W2, Tensor::from_dmatrix(&self.w2)?)?;
        b.insert(B2, Tensor::vector(self.b2.iter().map(|&v| v as f32).collect())?)?;
        Ok(b)
    }

    /// Pre-activations and activations of the hidden layer.
    fn hidden(&self, x: &Matrix) -> (Matrix, Matrix) {
        let mut z = x * &self.w1;
        add_row_bias(&mut z, &self.b1);
        let h = match self.activation {
            Activation::Identity => z.clone(),
            Activation::Relu => z.map(|v| v.max(0.0)),
        };
        (z, h)
    }

    pub fn logits(&self, x: &Matrix) -> Matrix {
        let (_, h) = self.hidden(x);
        let mut out = h * &self.w2;
        add_row_bias(&mut out, &self.b2);
        out
    }

    /// One full-batch gradient step on mean cross-entropy.
    fn gradient_step(&mut self, x: &Matrix, labels: &[usize], lr: f64) {
        let n = x.nrows() as f64;
        let (z, h) = self.hidden(x);
        let mut g = &h * &self.w2;
        add_row_bias(&mut g, &self.b2);
        for (i, &y) in labels.iter().enumerate() {
            let mut row = g.row_mut(i);
            let max = row.max();
            row.apply(|v| *v = (*v - max).exp());
            let total = row.sum();
            row.unscale_mut(total);
            row[y] -= 1.0;
        }
        g /= n;

        let d_w2 = h.transpose() * &g;
        let d_b2: Vec<f64> = g.column_iter().map(|c| c.sum()).collect();
        let mut d_z = &g * self.w2.transpose();
        if self.activation == Activation::Relu {
            d_z.zip_apply(&z, |d, zv| {
                if zv <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        let d_w1 = x.transpose() * &d_z;
        let d_b1: Vec<f64> = d_z.column_iter().map(|c| c.sum()).collect();

        self.w1 -= d_w1 * lr;
        self.w2 -= d_w2 * lr;
        for (b, d) in self.b1.iter_mut().zip(&d_b1) {
            *b -= lr * d;
        }
        for (b, d) in self.b2.iter_mut().zip(&d_b2) {
            *b -= lr * d;
        }
    }
}

/// Index of the largest entry, lowest index on ties.
fn argmax(row: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in row.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Fraction of points whose argmax logit matches the label.
pub fn evaluate_accuracy(
    model: &TensorBundle,
    data: &Dataset,
    arch: Architecture,
) -> Result<f64, SynthError> {
    let net = TwoLayerNet::from_bundle(model, arch)?;
    accuracy_of(&net, data)
}

pub fn accuracy_of(net: &TwoLayerNet, data: &Dataset) -> Result<f64, SynthError> {
    if data.is_empty() {
        return Err(SynthError::EmptySplit);
    }
    if data.features.ncols() != net.w1.nrows() {
        return Err(SynthError::ShapeMismatch {
            name: "features".into(),
            expected: vec![data.len(), net.w1.nrows()],
            found: vec![data.features.nrows(), data.features.ncols()],
        });
    }
    let logits = net.logits(&data.features);
    let correct = data
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(logits.row(i).iter().copied()) == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Class-cluster samples: `μ_y + B ξ_q + ξ_d` with in-subspace spread
/// `spread` per direction and isotropic ambient spread `ambient`.
fn sample_split(
    rng: &mut ChaCha8Rng,
    basis: &Matrix,
    means: &[nalgebra::DVector<f64>],
    per_class: usize,
    spread: f64,
    ambient: f64,
) -> Dataset {
    let (d, q) = basis.shape();
    let n = means.len() * per_class;
    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        // interleave classes so every prefix stays balanced
        let class = i % means.len();
        let xi = nalgebra::DVector::<f64>::from_fn(q, |_, _| rng.sample(StandardNormal));
        let mut x = &means[class] + basis * xi * spread;
        for v in x.iter_mut() {
            *v += ambient * rng.sample::<f64, _>(StandardNormal);
        }
        features.row_mut(i).copy_from(&x.transpose());
        labels.push(class);
    }
    Dataset {
        features: round_f32(features),
        labels,
    }
}

/// Builds a suite; identical configs give bit-identical suites.
pub fn generate_suite(config: &SuiteConfig) -> Result<SyntheticSuite, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let Dims {
        input: d,
        hidden: h,
        classes: c,
    } = config.dims;
    let q = config.subspace_dim;

    let base_net = TwoLayerNet {
        activation: config.activation,
        w1: round_f32(gaussian(&mut rng, d, h, config.init_scale / (d as f64).sqrt())),
        b1: vec![0.0; h],
        w2: round_f32(gaussian(&mut rng, h, c, config.init_scale / (h as f64).sqrt())),
        b2: vec![0.0; c],
    };

    let mut pool = gaussian(&mut rng, d, q, 1.0);
    orthonormalize(&mut pool);
    let pool_prototypes = gaussian(&mut rng, q, c, 1.0);

    // Per-dimension noise, scaled so the expected within-class distance is
    // `noise` times the mean separation along the task subspace.
    let spread = config.noise * config.separation / (q as f64).sqrt();
    let ambient = config.ambient_noise * config.separation / (d as f64).sqrt();

    let mut tasks = Vec::with_capacity(config.num_tasks);
    let mut fine_tuned = Vec::with_capacity(config.num_tasks);
    for t in 0..config.num_tasks {
        let overlap = config.task_overlap(t);
        let shared = ((overlap * q as f64).round() as usize).min(q);

        let mut basis = Matrix::zeros(d, q);
        basis.columns_mut(0, shared).copy_from(&pool.columns(0, shared));
        let private = gaussian(&mut rng, d, q - shared, 1.0);
        basis.columns_mut(shared, q - shared).copy_from(&private);
        orthonormalize(&mut basis);

        let mut coeffs = gaussian(&mut rng, q, c, 1.0);
        coeffs.rows_mut(0, shared).copy_from(&pool_prototypes.rows(0, shared));
        let means: Vec<nalgebra::DVector<f64>> = (0..c)
            .map(|j| {
                let a = coeffs.column(j);
                let mu = &basis * a;
                let norm = a.norm().max(f64::MIN_POSITIVE);
                mu * (config.separation / norm)
            })
            .collect();

        let train = sample_split(&mut rng, &basis, &means, config.train_per_class, spread, ambient);
        let val = sample_split(&mut rng, &basis, &means, config.val_per_class, spread, ambient);
        let test = sample_split(&mut rng, &basis, &means, config.test_per_class, spread, ambient);

        let mut net = base_net.clone();
        for _ in 0..config.train_steps {
            net.gradient_step(&train.features, &train.labels, config.learning_rate);
        }
        let label = task_label(t);
        fine_tuned.push(net.to_bundle()?.with_meta("task", label.clone()));
        tasks.push(TaskData {
            label,
            overlap,
            train,
            val,
            test,
        });
    }

    let mut base = base_net.to_bundle()?.with_meta("task", "base");
    for (k, v) in recipe_meta(config) {
        base.meta_mut().insert(k, v);
    }
    for ft in &mut fine_tuned {
        for (k, v) in recipe_meta(config) {
            ft.meta_mut().insert(k, v);
        }
    }
    Ok(SyntheticSuite {
        config: config.clone(),
        base,
        fine_tuned,
        tasks,
    })
}

pub fn task_label(t: usize) -> String {
    format!("task_{t:02}")
}

fn recipe_meta(config: &SuiteConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("seed".to_string(), config.seed.to_string()),
        ("train_steps".to_string(), config.train_steps.to_string()),
        ("learning_rate".to_string(), config.learning_rate.to_string()),
        ("optimizer".to_string(), "full_batch_gd".to_string()),
        (
            "activation".to_string(),
            serde_json::to_value(config.activation)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
        ),
    ])
}

const SUITE_FILE: &str = "suite.json";
const DATASETS_FILE: &str = "datasets.csv";
const BASE_FILE: &str = "base.isot";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl SyntheticSuite {
    /// Writes `suite.json`, `base.isot`, one `task_XX.isot` per task and `datasets.csv`.
    pub fn export(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let cfg_path = dir.join(SUITE_FILE);
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        std::fs::write(&cfg_path, json + "\n").map_err(io_err(&cfg_path))?;
        save_bundle(&self.base, dir.join(BASE_FILE))?;
        for (task, bundle) in self.tasks.iter().zip(&self.fine_tuned) {
            save_bundle(bundle, dir.join(format!("{}.isot", task.label)))?;
        }
        let ds_path = dir.join(DATASETS_FILE);
        let file = std::fs::File::create(&ds_path).map_err(io_err(&ds_path))?;
        self.write_datasets_csv(std::io::BufWriter::new(file))
    }

    /// `task,split,x0..x{d-1},label`.
    pub fn write_datasets_csv<W: std::io::Write>(&self, w: W) -> Result<(), SynthError> {
        let mut out = csv_writer(w);
        let d = self.config.dims.input;
        let mut header = vec!["task".to_string(), "split".to_string()];
        header.extend((0..d).map(|j| format!("x{j}")));
        header.push("label".into());
        out.write_record(&header).map_err(ReportError::from)?;
        for task in &self.tasks {
            for split in Split::ALL {
                let data = task.split(split);
                for (i, &y) in data.labels.iter().enumerate() {
                    let mut rec = Vec::with_capacity(d + 3);
                    rec.push(task.label.clone());
                    rec.push(split.as_str().to_string());
                    rec.extend(data.features.row(i).iter().map(|&v| format_sig(v)));
                    rec.push(y.to_string());
                    out.write_record(&rec).map_err(ReportError::from)?;
                }
            }
        }
        out.flush().map_err(ReportError::from)?;
        Ok(())
    }

    /// Reads a suite previously written by [`SyntheticSuite::export`].
    pub fn import(dir: &Path) -> Result<Self, SynthError> {
        let cfg_path = dir.join(SUITE_FILE);
        let text = std::fs::read_to_string(&cfg_path).map_err(io_err(&cfg_path))?;
        let config: SuiteConfig =
            serde_json::from_str(&text).map_err(|e| SynthError::SuiteFormat(e.to_string()))?;
        config.validate()?;
        let base = load_bundle(dir.join(BASE_FILE))?;
        let labels: Vec<String> = (0..config.num_tasks).map(task_label).collect();
        let fine_tuned = labels
            .iter()
            .map(|l| load_bundle(dir.join(format!("{l}.isot"))))
            .collect::<Result<Vec<_>, _>>()?;

        let ds_path = dir.join(DATASETS_FILE);
        let mut reader = csv::Reader::from_path(&ds_path).map_err(ReportError::from)?;
        let d = config.dims.input;
        let mut rows: BTreeMap<(String, &'static str), (Vec<f64>, Vec<usize>)> = BTreeMap::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(ReportError::from)?;
            let bad = |m: &str| SynthError::SuiteFormat(format!("datasets.csv line {}: {m}", line + 2));
            if rec.len() != d + 3 {
                return Err(bad("wrong number of fields"));
            }
            let split = Split::parse(&rec[1]).ok_or_else(|| bad("unknown split"))?;
            let entry = rows.entry((rec[0].to_string(), split.as_str())).or_default();
            for j in 0..d {
                let v: f32 = rec[2 + j].parse().map_err(|_| bad("bad feature"))?;
                entry.0.push(f64::from(v));
            }
            let y: usize = rec[d + 2].parse().map_err(|_| bad("bad label"))?;
            if y >= config.dims.classes {
                return Err(bad("label out of range"));
            }
            entry.1.push(y);
        }
        let mut take = |label: &str, split: Split| -> Result<Dataset, SynthError> {
            let (feat, labels) = rows
                .remove(&(label.to_string(), split.as_str()))
                .ok_or_else(|| SynthError::SuiteFormat(format!("no {} split for {label}", split.as_str())))?;
            Ok(Dataset {
                features: Matrix::from_row_slice(labels.len(), d, &feat),
                labels,
            })
        };
        let mut tasks = Vec::with_capacity(labels.len());
        for (t, label) in labels.iter().enumerate() {
            tasks.push(TaskData {
                label: label.clone(),
                overlap: config.task_overlap(t),
                train: take(label, Split::Train)?,
                val: take(label, Split::Val)?,
                test: take(label, Split::Test)?,
            });
        }
        Ok(Self {
            config,
            base,
            fine_tuned,
            tasks,
        })
    }
}
