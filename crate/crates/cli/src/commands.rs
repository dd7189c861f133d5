use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use isomerge_core::merge::{default_alpha_grid, merge as merge_tasks, sweep_alpha as sweep};
use isomerge_core::metrics::{alignment_report, interpolate_spectrum, nai, pearson, spectrum_report, truncate_isotropic};
use isomerge_core::report::{
    csv_writer, format_sig, read_accuracy_csv, write_alignment_csv, write_correlation_csv,
    write_nai_csv, write_spectrum_csv, CorrelationRow, NaiRow,
};
use isomerge_core::synth::{
    accuracy_of, generate_suite, run_benchmark, Activation, OverlapProfile, Split, SuiteConfig,
    SyntheticSuite, TwoLayerNet,
};
use isomerge_core::{
    apply_delta, bundle_as_delta, bundle_delta, load_bundle, save_bundle, Matrix, TaskMatrixSet,
    TensorBundle,
};
use regex::Regex;

use crate::error::{CliError, CliResult};
use crate::{ActivationArg, AnalyzeArgs, MergeArgs, ProfileArg, SpectrumArgs, SweepArgs, SynthArgs};

fn load(flag: &str, path: &Path) -> CliResult<TensorBundle> {
    load_bundle(path).map_err(|e| CliError::from(e).context(format!("--{flag} {}", path.display())))
}

/// Task label: the bundle's `task` meta entry, else the file stem.
fn label_of(bundle: &TensorBundle, path: &Path) -> String {
    bundle
        .meta()
        .get("task")
        .filter(|t| !t.is_empty())
        .cloned()
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string())
        })
}

fn as_delta(bundle: &TensorBundle, base: Option<&TensorBundle>, flag: &str, path: &Path) -> CliResult<TaskMatrixSet> {
    let set = match base {
        Some(b) => bundle_delta(bundle, b)
            .map_err(|e| CliError::from(e).context(format!("--{flag} {}", path.display())))?,
        None => bundle_as_delta(bundle),
    };
    Ok(set.with_label(label_of(bundle, path)))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::input(format!("cannot create directory {}: {e}", path.display())))
}

fn check_common_frac(cf: f64) -> CliResult<()> {
    if cf > 0.0 && cf <= 1.0 {
        Ok(())
    } else {
        Err(CliError::input(format!("--common-frac must lie in (0, 1], got {cf}")))
    }
}

fn check_epsilon(eps: f64) -> CliResult<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(CliError::input(format!("--epsilon must lie in (0, 1), got {eps}")))
    }
}

/// `0.5,1,1.5` or `start:stop:step` (inclusive of `stop`).
pub fn parse_alpha_grid(spec: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::input(format!("--alpha-grid: cannot parse `{spec}`"));
    let grid: Vec<f64> = if let Some((start, rest)) = spec.split_once(':') {
        let (stop, step) = rest.split_once(':').ok_or_else(bad)?;
        let (start, stop, step): (f64, f64, f64) = (
            start.trim().parse().map_err(|_| bad())?,
            stop.trim().parse().map_err(|_| bad())?,
            step.trim().parse().map_err(|_| bad())?,
        );
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // Snap to 12 decimals so e.g. 0.5 + 3·0.1 prints as 0.8.
        (0..count)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .collect()
    } else {
        spec.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<CliResult<_>>()?
    };
    if grid.is_empty() || grid.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(CliError::input(format!(
            "--alpha-grid: values must be positive, got `{spec}`"
        )));
    }
    Ok(grid)
}

fn alpha_grid(spec: Option<&str>) -> CliResult<Vec<f64>> {
    spec.map_or_else(|| Ok(default_alpha_grid()), parse_alpha_grid)
}

pub fn merge(args: MergeArgs) -> CliResult<()> {
    if !(args.alpha.is_finite() && args.alpha > 0.0) {
        return Err(CliError::input(format!("--alpha must be positive, got {}", args.alpha)));
    }
    check_common_frac(args.common_frac)?;
    let base = load("base", &args.base)?;
    let mut deltas = Vec::with_capacity(args.tasks.len());
    for path in &args.tasks {
        let task = load("tasks", path)?;
        deltas.push(as_delta(&task, Some(&base), "tasks", path)?);
    }
    let outcome = merge_tasks(args.method, &deltas, args.common_frac)?;
    let mut merged = apply_delta(&base, &outcome, args.alpha)?;
    merged.meta_mut().insert("task".into(), "merged".into());
    merged.meta_mut().insert("method".into(), args.method.to_string());
    merged.meta_mut().insert("alpha".into(), format_sig(args.alpha));
    save_bundle(&merged, &args.out)?;

    let meta_path = args.meta_out.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".meta.json");
        p.into()
    });
    let layers = serde_json::to_value(&outcome.per_layer_meta).expect("layer metadata serializes");
    let sidecar = serde_json::json!({
        "method": args.method.to_string(),
        "alpha": args.alpha,
        "common_fraction": args.common_frac,
        "tasks": deltas.iter().map(|d| d.task_label.clone()).collect::<Vec<_>>(),
        "layers": layers,
    });
    let mut out = create(&meta_path)?;
    serde_json::to_writer_pretty(&mut out, &sidecar)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", meta_path.display())))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| CliError::input(e.to_string()))?;
    Ok(())
}

pub fn analyze(args: AnalyzeArgs) -> CliResult<()> {
    check_epsilon(args.epsilon)?;
    let base = args.base.as_deref().map(|p| load("base", p)).transpose()?;
    let merged_bundle = load("merged", &args.merged)?;
    let merged = as_delta(&merged_bundle, base.as_ref(), "merged", &args.merged)?;
    let mut tasks = Vec::with_capacity(args.tasks.len());
    for path in &args.tasks {
        let t = load("tasks", path)?;
        tasks.push(as_delta(&t, base.as_ref(), "tasks", path)?);
    }
    let report = alignment_report(&tasks, &merged, args.epsilon)?;
    create_dir(&args.out_dir)?;
    write_alignment_csv(create(&args.out_dir.join("alignment.csv"))?, &report)?;

    let Some(acc_path) = args.accuracy.as_deref() else {
        return Ok(());
    };
    let file = File::open(acc_path)
        .map_err(|e| CliError::input(format!("--accuracy {}: {e}", acc_path.display())))?;
    let acc_rows = read_accuracy_csv(file)
        .map_err(|e| CliError::from(e).context(format!("--accuracy {}", acc_path.display())))?;
    let nai_rows: Vec<NaiRow> = acc_rows
        .iter()
        .map(|r| NaiRow {
            task: r.task.clone(),
            acc_merged: r.acc_merged,
            acc_task: r.acc_task,
            acc_zero: r.acc_zero,
            nai: nai(r.acc_merged, r.acc_task, r.acc_zero).ok(),
        })
        .collect();
    write_nai_csv(create(&args.out_dir.join("nai.csv"))?, &nai_rows)?;

    let averages = report.averages();
    let (xs, ys): (Vec<f64>, Vec<f64>) = nai_rows
        .iter()
        .filter_map(|row| {
            let sar = averages.iter().find(|(t, _)| *t == row.task)?.1;
            Some((sar, row.nai?))
        })
        .unzip();
    match pearson(&xs, &ys) {
        Ok(r) => write_correlation_csv(
            create(&args.out_dir.join("correlation.csv"))?,
            &[CorrelationRow {
                metric_x: "sar_avg".into(),
                metric_y: "nai".into(),
                pearson: r,
            }],
        )?,
        Err(e) => eprintln!("warning: correlation skipped ({} paired tasks): {e}", xs.len()),
    }
    Ok(())
}

pub fn spectrum(args: SpectrumArgs) -> CliResult<()> {
    let selector = Regex::new(&args.layers)
        .map_err(|e| CliError::input(format!("--layers: invalid pattern: {e}")))?;
    if let Some(beta) = args.beta {
        if !(0.0..=1.0).contains(&beta) {
            return Err(CliError::input(format!("--beta must lie in [0, 1], got {beta}")));
        }
    }
    if args.k == Some(0) {
        return Err(CliError::input("--k must be at least 1"));
    }
    let base = args.base.as_deref().map(|p| load("base", p)).transpose()?;
    let input = load("input", &args.input)?;
    let set = as_delta(&input, base.as_ref(), "input", &args.input)?;
    let selected: Vec<(&str, &Matrix)> = set
        .matrices
        .iter()
        .filter(|(name, _)| selector.is_match(name))
        .map(|(n, m)| (n.as_str(), m))
        .collect();
    if selected.is_empty() {
        return Err(CliError::input(format!(
            "--layers: `{}` matches no 2-D layer",
            args.layers
        )));
    }
    let mut transformed = Vec::with_capacity(selected.len());
    for (name, m) in selected {
        let layer = match (args.beta, args.k) {
            (Some(beta), _) => interpolate_spectrum(m, beta),
            (None, Some(k)) => truncate_isotropic(m, k),
            (None, None) => Ok(m.clone()),
        }
        .map_err(|e| CliError::from(e).context(format!("layer `{name}`")))?;
        transformed.push((name, layer));
    }
    let mut report = spectrum_report(transformed.iter().map(|(n, m)| (*n, m)))?;
    report.beta = args.beta;
    write_spectrum_csv(create(&args.out)?, &report)?;
    Ok(())
}

pub fn synth(args: SynthArgs) -> CliResult<()> {
    check_common_frac(args.common_frac)?;
    if args.methods.is_empty() {
        return Err(CliError::input("--methods: at least one method is required"));
    }
    let grid = alpha_grid(args.alpha_grid.as_deref())?;
    let mut config = SuiteConfig::new(args.seed, args.tasks);
    if let Some(v) = args.input_dim {
        config.dims.input = v;
    }
    if let Some(v) = args.hidden_dim {
        config.dims.hidden = v;
    }
    if let Some(v) = args.classes {
        config.dims.classes = v;
    }
    if let Some(v) = args.overlap {
        config.overlap = v;
    }
    if let Some(v) = args.noise {
        config.noise = v;
    }
    if let Some(p) = args.profile {
        config.profile = match p {
            ProfileArg::Uniform => OverlapProfile::Uniform,
            ProfileArg::Spread => OverlapProfile::Spread,
        };
    }
    if let Some(a) = args.activation {
        config.activation = match a {
            ActivationArg::Identity => Activation::Identity,
            ActivationArg::Relu => Activation::Relu,
        };
    }
    let suite = generate_suite(&config)?;
    suite.export(&args.out_dir)?;
    let table = run_benchmark(&suite, &args.methods, &grid, args.common_frac)?;
    table.write_csv(create(&args.out_dir.join("benchmark.csv"))?)?;
    for m in &table.methods {
        println!(
            "{}: alpha={} mean_acc={} mean_normalized_acc={} mean_nai={} mean_sar_avg={}",
            m.method,
            format_sig(m.alpha),
            format_sig(m.mean_acc()),
            format_sig(m.mean_normalized()),
            format_sig(m.mean_nai()),
            format_sig(m.mean_sar_avg()),
        );
    }
    Ok(())
}

pub fn sweep_alpha(args: SweepArgs) -> CliResult<()> {
    check_common_frac(args.common_frac)?;
    let grid = alpha_grid(args.alpha_grid.as_deref())?;
    let suite = SyntheticSuite::import(&args.suite)
        .map_err(|e| CliError::from(e).context(format!("--suite {}", args.suite.display())))?;
    let deltas = suite
        .fine_tuned
        .iter()
        .map(|ft| bundle_delta(ft, &suite.base))
        .collect::<Result<Vec<_>, _>>()?;
    let outcome = merge_tasks(args.method, &deltas, args.common_frac)?;
    let arch = suite.config.architecture();
    let result = sweep(&suite.base, &outcome, &grid, |model| {
        let net = TwoLayerNet::from_bundle(model, arch)?;
        suite
            .tasks
            .iter()
            .map(|t| accuracy_of(&net, t.split(Split::Val)))
            .collect::<Result<Vec<f64>, _>>()
    })?;

    let mut out = csv_writer(create(&args.out)?);
    let mut header = vec!["alpha".to_string(), "mean_accuracy".to_string()];
    header.extend(suite.tasks.iter().map(|t| t.label.clone()));
    out.write_record(&header).map_err(|e| CliError::input(e.to_string()))?;
    for score in &result.table {
        let mut rec = vec![format_sig(score.alpha), format_sig(score.mean_accuracy)];
        rec.extend(score.per_task.iter().map(|&a| format_sig(a)));
        out.write_record(&rec).map_err(|e| CliError::input(e.to_string()))?;
    }
    out.flush().map_err(|e| CliError::input(e.to_string()))?;
    println!(
        "best alpha={} mean_val_acc={}",
        format_sig(result.best_alpha),
        format_sig(result.best_mean_accuracy)
    );
    Ok(())
}
