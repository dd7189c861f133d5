use std::io::Write;

use rayon::prelude::*;

use super::{accuracy_of, TwoLayerNet, Split, SynthError, SyntheticSuite};
use crate::bundle::{apply_delta, bundle_delta};
use crate::merge::{merge, sweep_alpha, AlphaSweep, MergeMethod, TaskMatrixSet};
use crate::metrics::{nai, AlignmentBasis};
use crate::report::{write_benchmark_csv, BenchmarkRow, ReportError};
use crate::spectral::DEFAULT_EPSILON;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub task: String,
    pub acc: f64,
    pub acc_task: f64,
    pub acc_zero: f64,
    /// `None` when the fine-tuned model does not beat zero-shot.
    pub nai: Option<f64>,
    /// `acc / acc_task`; `None` when `acc_task` is 0.
    pub normalized: Option<f64>,
    pub sar_avg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: MergeMethod,
    pub alpha: f64,
    pub sweep: AlphaSweep,
    pub tasks: Vec<TaskResult>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl MethodResult {
    pub fn mean_acc(&self) -> f64 {
        mean(self.tasks.iter().map(|t| t.acc))
    }

    pub fn mean_normalized(&self) -> f64 {
        mean(self.tasks.iter().filter_map(|t| t.normalized))
    }

    pub fn mean_nai(&self) -> f64 {
        mean(self.tasks.iter().filter_map(|t| t.nai))
    }

    pub fn mean_sar_avg(&self) -> f64 {
        mean(self.tasks.iter().map(|t| t.sar_avg))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    pub methods: Vec<MethodResult>,
}

impl BenchmarkTable {
    pub fn get(&self, method: MergeMethod) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn rows(&self) -> Vec<BenchmarkRow> {
        self.methods
            .iter()
            .flat_map(|m| {
                m.tasks.iter().map(move |t| BenchmarkRow {
                    method: m.method.to_string(),
                    alpha: m.alpha,
                    task: t.task.clone(),
                    acc: t.acc,
                    nai: t.nai,
                    sar_avg: t.sar_avg,
                })
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ReportError> {
        write_benchmark_csv(w, &self.rows())
    }
}

/// Merges the suite with each method, picks `α` on the validation splits,
/// then scores every task on its test split.
pub fn run_benchmark(
    suite: &SyntheticSuite,
    methods: &[MergeMethod],
    alpha_grid: &[f64],
    common_fraction: f64,
) -> Result<BenchmarkTable, SynthError> {
    let arch = suite.config.architecture();
    let deltas: Vec<TaskMatrixSet> = suite
        .fine_tuned
        .iter()
        .map(|ft| bundle_delta(ft, &suite.base))
        .collect::<Result<_, _>>()?;
    let base_net = TwoLayerNet::from_bundle(&suite.base, arch)?;
    let mut reference = Vec::with_capacity(suite.tasks.len());
    for (task, ft) in suite.tasks.iter().zip(&suite.fine_tuned) {
        let tuned = TwoLayerNet::from_bundle(ft, arch)?;
        reference.push((
            accuracy_of(&tuned, &task.test)?,
            accuracy_of(&base_net, &task.test)?,
        ));
    }

    let results: Vec<Result<MethodResult, SynthError>> = methods
        .par_iter()
        .map(|&method| {
            let outcome = merge(method, &deltas, common_fraction)?;
            let sweep = sweep_alpha(&suite.base, &outcome, alpha_grid, |model| {
                let net = TwoLayerNet::from_bundle(model, arch)?;
                suite
                    .tasks
                    .iter()
                    .map(|t| accuracy_of(&net, t.split(Split::Val)))
                    .collect::<Result<Vec<f64>, SynthError>>()
            })?;
            let merged = apply_delta(&suite.base, &outcome, sweep.best_alpha)?;
            let net = TwoLayerNet::from_bundle(&merged, arch)?;
            let basis = AlignmentBasis::new(&outcome.deltas, DEFAULT_EPSILON)?;
            let mut tasks = Vec::with_capacity(suite.tasks.len());
            for ((task, delta), &(acc_task, acc_zero)) in
                suite.tasks.iter().zip(&deltas).zip(&reference)
            {
                let acc = accuracy_of(&net, &task.test)?;
                tasks.push(TaskResult {
                    task: task.label.clone(),
                    acc,
                    acc_task,
                    acc_zero,
                    nai: nai(acc, acc_task, acc_zero).ok(),
                    normalized: (acc_task > 0.0).then(|| acc / acc_task),
                    sar_avg: basis.sar_avg(delta)?,
                });
            }
            Ok(MethodResult {
                method,
                alpha: sweep.best_alpha,
                sweep,
                tasks,
            })
        })
        .collect();
    Ok(BenchmarkTable {
        methods: results.into_iter().collect::<Result<_, _>>()?,
    })
}
