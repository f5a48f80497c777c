use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use saner_core::harness::compare::{self, best_test_acc, final_noisy_acc, late_phase_pr};
use saner_core::harness::{
    compare_runs, read_metrics, train_on, write_metrics, Assertion, ConfigMap, ExperimentConfig, MetricsRow,
    RunGroup, Threshold, Tracking,
};
use saner_core::noise::{self, parse_pair_map, NoiseKind, NoiseSpec};
use saner_core::Error as CoreError;

use crate::plot::{self, Series};
use crate::{ConfigArgs, DiagnoseArgs, MakeDataArgs, PlotArgs, RunArgs, SweepArgs};

const DIAGNOSTIC_COLUMNS: [&str; 6] = ["frac_a", "frac_b", "frac_c", "p_clean", "p_noise", "pr"];

/// Marks an error caused by the invocation rather than by the computation.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn is_usage_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.is::<Usage>()
            || matches!(
                cause.downcast_ref::<CoreError>(),
                Some(
                    CoreError::Config(_)
                        | CoreError::InvalidSpec(_)
                        | CoreError::InvalidRate(_)
                        | CoreError::InvalidNoise(_)
                )
            )
    })
}

// ---------------------------------------------------------------- make-data

pub fn make_data(args: MakeDataArgs) -> Result<()> {
    let kind: NoiseKind = args.kind.parse().map_err(|e: CoreError| usage(format!("--kind: {e}")))?;
    let noise_seed = args.noise_seed.unwrap_or(args.seed);
    let spec = match kind {
        NoiseKind::AsymmetricPairmap => {
            let pairs = args
                .pairs
                .as_deref()
                .ok_or_else(|| usage("--pairs is required for asymmetric_pairmap"))?;
            let map = parse_pair_map(pairs).map_err(|e| usage(format!("--pairs: {e}")))?;
            NoiseSpec::pairmap(args.rate, noise_seed, map)
        }
        _ => {
            if args.pairs.is_some() {
                return Err(usage(format!("--pairs only applies to asymmetric_pairmap, not {kind}")));
            }
            NoiseSpec::new(kind, args.rate, noise_seed)
        }
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    if args.test_n > 0 && args.test_out.is_none() {
        return Err(usage("--test-n requires --test-out"));
    }

    let all = noise::make_gaussian_blobs(args.n + args.test_n, args.classes, args.dim, args.separation, args.seed)?;
    let (clean, test) = all.split_at(args.n);
    let noisy = noise::apply_noise(&clean, &spec)?;

    noise::save_dataset(&noisy, &args.out)?;
    let summary_path = sidecar(&args.out, "summary");
    fs::write(&summary_path, noise_summary(&noisy, &spec))
        .with_context(|| format!("writing {}", summary_path.display()))?;
    if let Some(test_out) = &args.test_out {
        noise::save_dataset(&test, test_out)?;
    }
    eprintln!(
        "wrote {} ({} samples, realized noise rate {:.4})",
        args.out.display(),
        noisy.len(),
        noisy.noise_rate()
    );
    Ok(())
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}

/// Human-readable summary with a binomial sanity check of the flip count.
fn noise_summary(ds: &noise::LabeledDataset, spec: &NoiseSpec) -> String {
    let n = ds.len();
    let flips = ds.noisy_count();
    let eligible = match &spec.pair_map {
        Some(map) => ds.true_labels().iter().filter(|y| map.contains_key(y)).count(),
        None => n,
    };
    let p = spec.rate;
    let expected = p * eligible as f64;
    let sd = (eligible as f64 * p * (1.0 - p)).sqrt();
    let z = if sd > 0.0 { (flips as f64 - expected) / sd } else { 0.0 };

    let mut out = String::new();
    let _ = writeln!(out, "n={n}");
    let _ = writeln!(out, "classes={}", ds.num_classes());
    let _ = writeln!(out, "dim={}", ds.dim());
    let _ = writeln!(out, "kind={}", spec.kind);
    let _ = writeln!(out, "rate={p}");
    let _ = writeln!(out, "seed={}", spec.seed);
    if let Some(map) = &spec.pair_map {
        let _ = writeln!(out, "pairs={}", noise::format_pair_map(map));
    }
    let _ = writeln!(out, "eligible={eligible}");
    let _ = writeln!(out, "flips={flips}");
    let _ = writeln!(out, "realized_rate={:.6}", ds.noise_rate());
    let _ = writeln!(out, "expected_flips={expected:.1}");
    let _ = writeln!(out, "binomial_sd={sd:.3}");
    let _ = writeln!(out, "z={z:.3}");
    if spec.kind == NoiseKind::InstanceProxy {
        // Per-sample probabilities are clipped at 1, so the binomial check is approximate.
        let _ = writeln!(out, "note=instance_proxy is a feature-dependent proxy, not a learned noise model");
    }
    out
}

// ---------------------------------------------------------------- config

/// Builds the configuration map: file first, then named flags, then `--set`.
fn config_map(args: &ConfigArgs, named: &[(&str, Option<String>)]) -> Result<ConfigMap> {
    let mut map = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            ConfigMap::parse(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => ConfigMap::default(),
    };
    let shared = [
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("eta", args.eta.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("output_dir", args.output_dir.as_ref().map(|p| p.display().to_string())),
    ];
    for (key, value) in shared.iter().chain(named) {
        if let Some(value) = value {
            map.set(key, value)?;
        }
    }
    map.apply_overrides(args.overrides.iter().map(String::as_str))?;
    Ok(map)
}

fn output_dir(config: &ExperimentConfig, fallback: &str) -> PathBuf {
    config.output_dir.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_resolved(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    let path = dir.join("resolved.cfg");
    fs::write(&path, config.to_kv_text()).with_context(|| format!("writing {}", path.display()))
}

/// Trains, writing metrics even when the run diverges part-way.
fn train_and_write(config: &ExperimentConfig, dir: &Path, tracking: Tracking) -> Result<Vec<MetricsRow>> {
    create_dir(dir)?;
    write_resolved(config, dir)?;
    let (train, test) = saner_core::harness::prepare_data(config)?;
    let metrics_path = dir.join("metrics.csv");
    match train_on(config, &train, test.as_ref(), tracking) {
        Ok(record) => {
            write_metrics(&record.rows, &metrics_path)?;
            Ok(record.rows)
        }
        Err(CoreError::Diverged { epoch, partial }) => {
            write_metrics(&partial.rows, &metrics_path)?;
            Err(anyhow!(
                "training diverged at epoch {epoch}; {} completed epochs written to {}",
                partial.rows.len(),
                metrics_path.display()
            ))
        }
        Err(e) => Err(e.into()),
    }
}

// ---------------------------------------------------------------- run

pub fn run(args: RunArgs) -> Result<()> {
    let map = config_map(
        &args.config,
        &[
            ("mode", args.mode.clone()),
            ("alpha", args.alpha.map(|v| v.to_string())),
            ("rho", args.rho.map(|v| v.to_string())),
            ("k", args.k.map(|v| v.to_string())),
            ("seed", args.seed.map(|v| v.to_string())),
        ],
    )?;
    let config = map.resolve()?;
    let dir = output_dir(&config, "saner-run");
    let rows = train_and_write(
        &config,
        &dir,
        Tracking {
            accuracy: true,
            diagnostics: config.diagnostics_enabled,
        },
    )?;
    if let Some(last) = rows.last() {
        eprintln!(
            "{}: {} epochs, final train acc {}, noisy acc {}, test acc {}",
            dir.display(),
            rows.len(),
            fmt_opt(last.train_acc_overall),
            fmt_opt(last.noisy_train_acc),
            fmt_opt(last.test_acc)
        );
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

// ---------------------------------------------------------------- sweep

struct Cell {
    /// Settings other than the seed; runs sharing them form one group.
    setting: Vec<(&'static str, String)>,
    seed: Option<u64>,
}

impl Cell {
    fn label(&self) -> String {
        if self.setting.is_empty() {
            "base".to_string()
        } else {
            self.setting.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",")
        }
    }

    fn dir_name(&self) -> String {
        let mut parts: Vec<String> = self.setting.iter().map(|(k, v)| format!("{k}-{v}")).collect();
        if let Some(seed) = self.seed {
            parts.push(format!("seed-{seed}"));
        }
        if parts.is_empty() {
            "base".to_string()
        } else {
            parts.join("_")
        }
    }
}

fn grid(args: &SweepArgs) -> Vec<Cell> {
    let axes: [(&'static str, Vec<String>); 4] = [
        ("mode", args.mode.clone()),
        ("alpha", args.alpha.iter().map(f64::to_string).collect()),
        ("rho", args.rho.iter().map(f64::to_string).collect()),
        ("k", args.k.iter().map(usize::to_string).collect()),
    ];
    let mut settings: Vec<Vec<(&'static str, String)>> = vec![Vec::new()];
    for (key, values) in axes.iter().filter(|(_, v)| !v.is_empty()) {
        settings = settings
            .into_iter()
            .flat_map(|s| {
                values.iter().map(move |v| {
                    let mut s = s.clone();
                    s.push((*key, v.clone()));
                    s
                })
            })
            .collect();
    }
    let seeds: Vec<Option<u64>> = if args.seed.is_empty() {
        vec![None]
    } else {
        args.seed.iter().copied().map(Some).collect()
    };
    settings
        .into_iter()
        .flat_map(|setting| seeds.iter().map(move |&seed| Cell { setting: setting.clone(), seed }))
        .collect()
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let cells = grid(&args);
    if cells.is_empty() {
        return Err(usage("empty sweep grid"));
    }
    let base = config_map(&args.config, &[])?;
    let root = base.resolve()?.output_dir.unwrap_or_else(|| PathBuf::from("saner-sweep"));

    let mut configs = Vec::with_capacity(cells.len());
    for cell in &cells {
        let mut map = base.clone();
        for (key, value) in &cell.setting {
            map.set(key, value)?;
        }
        if let Some(seed) = cell.seed {
            map.set("seed", &seed.to_string())?;
        }
        let dir = root.join(cell.dir_name());
        map.set("output_dir", &dir.display().to_string())?;
        configs.push((map.resolve().with_context(|| format!("cell {}", cell.dir_name()))?, dir));
    }

    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
        .clamp(1, configs.len());
    let results = run_cells(&configs, jobs);

    let mut groups: BTreeMap<usize, (String, Vec<Vec<MetricsRow>>)> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut failures = Vec::new();
    for (cell, result) in cells.iter().zip(results) {
        let label = cell.label();
        let slot = match order.iter().position(|l| *l == label) {
            Some(i) => i,
            None => {
                order.push(label.clone());
                order.len() - 1
            }
        };
        match result {
            Ok(rows) => groups.entry(slot).or_insert_with(|| (label, Vec::new())).1.push(rows),
            Err(e) => failures.push(format!("{}: {e:#}", cell.dir_name())),
        }
    }

    let report = sweep_report(&groups.into_values().collect::<Vec<_>>(), &failures)?;
    create_dir(&root)?;
    let report_path = root.join("report.txt");
    fs::write(&report_path, &report).with_context(|| format!("writing {}", report_path.display()))?;
    print!("{report}");
    if failures.is_empty() {
        Ok(())
    } else {
        bail!("{} of {} sweep cells failed", failures.len(), cells.len())
    }
}

fn run_cells(configs: &[(ExperimentConfig, PathBuf)], jobs: usize) -> Vec<Result<Vec<MetricsRow>>> {
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<Vec<MetricsRow>>>>> =
        configs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some((config, dir)) = configs.get(i) else { break };
                let tracking = Tracking {
                    accuracy: true,
                    diagnostics: config.diagnostics_enabled,
                };
                let result = train_and_write(config, dir, tracking);
                eprintln!("finished {}", dir.display());
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every cell is visited"))
        .collect()
}

/// Mean final noisy accuracy, label and runs of one sweep setting.
type Ranked<'a> = (Option<f64>, &'a str, &'a [Vec<MetricsRow>]);

fn sweep_report(groups: &[(String, Vec<Vec<MetricsRow>>)], failures: &[String]) -> Result<String> {
    let stat = |runs: &[Vec<MetricsRow>], f: fn(&[MetricsRow]) -> Option<f64>| -> Option<(f64, f64)> {
        let values: Option<Vec<f64>> = runs.iter().map(|r| f(r)).collect();
        values.filter(|v| !v.is_empty()).map(|v| compare::mean_std(&v))
    };
    let cell = |s: Option<(f64, f64)>| s.map_or_else(|| "undefined".to_string(), |(m, s)| format!("{m:.4} ± {s:.4}"));

    let mut ranked: Vec<Ranked<'_>> = groups
        .iter()
        .map(|(label, runs)| (stat(runs, final_noisy_acc).map(|s| s.0), label.as_str(), runs.as_slice()))
        .collect();
    // Highest noisy-label fit first; undefined values sink to the bottom.
    ranked.sort_by(|a, b| match (a.0, b.0) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });

    let mut out = String::new();
    writeln!(out, "ranking by final noisy_train_acc (mean ± std over seeds)")?;
    writeln!(out, "{:<4} {:<36} {:>5} {:>20} {:>20} {:>20}", "rank", "setting", "runs", "final noisy_acc", "best test_acc", "late pr")?;
    for (i, (_, label, runs)) in ranked.iter().enumerate() {
        writeln!(
            out,
            "{:<4} {:<36} {:>5} {:>20} {:>20} {:>20}",
            i + 1,
            label,
            runs.len(),
            cell(stat(runs, final_noisy_acc)),
            cell(stat(runs, best_test_acc)),
            cell(stat(runs, late_phase_pr)),
        )?;
    }

    if groups.len() >= 2 && groups.iter().all(|(_, runs)| !runs.is_empty()) {
        let run_groups: Vec<RunGroup<'_>> = groups
            .iter()
            .map(|(label, runs)| RunGroup::new(label.clone(), runs.iter().map(Vec::as_slice).collect()))
            .collect();
        writeln!(out, "\ncomparisons in grid order")?;
        for assertion in [Assertion::NoisyAccOrdering, Assertion::TestAccOrdering, Assertion::PrLatePhase] {
            match compare_runs(&run_groups, assertion, Threshold::Positive) {
                Ok(report) => write!(out, "{report}")?,
                Err(e) => writeln!(out, "{assertion}: not comparable ({e})")?,
            }
        }
    }
    if !failures.is_empty() {
        writeln!(out, "\nfailed cells")?;
        for f in failures {
            writeln!(out, "  {f}")?;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- diagnose

pub fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let mut named = vec![
        ("mode", args.mode.clone()),
        ("rho", args.rho.map(|v| v.to_string())),
        ("alpha", args.alpha.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
    ];
    if let Some(data) = &args.data {
        named.push(("train_path", Some(data.display().to_string())));
    }
    let map = config_map(&args.config, &named)?;
    let config = map.resolve()?;
    let dir = output_dir(&config, "saner-diagnose");

    let (train, _) = saner_core::harness::prepare_data(&config)?;
    if !train.truth_known() {
        eprintln!("warning: dataset has no clean labels; p_clean, p_noise and pr will be empty");
    }
    create_dir(&dir)?;
    write_resolved(&config, &dir)?;
    let tracking = Tracking {
        accuracy: false,
        diagnostics: true,
    };
    let path = dir.join("diagnostics.csv");
    let (rows, failure) = match train_on(&config, &train, None, tracking) {
        Ok(record) => (record.rows, None),
        Err(CoreError::Diverged { epoch, partial }) => (partial.rows, Some(epoch)),
        Err(e) => return Err(e.into()),
    };
    fs::write(&path, encode_diagnostics(&rows)).with_context(|| format!("writing {}", path.display()))?;
    match failure {
        None => Ok(()),
        Some(epoch) => bail!("training diverged at epoch {epoch}; partial diagnostics in {}", path.display()),
    }
}

fn encode_diagnostics(rows: &[MetricsRow]) -> String {
    let mut out = String::from("epoch");
    for c in DIAGNOSTIC_COLUMNS {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for row in rows {
        out.push_str(&row.epoch.to_string());
        for c in DIAGNOSTIC_COLUMNS {
            out.push(',');
            if let Some(Some(v)) = row.column(c) {
                out.push_str(&saner_core::harness::metrics::format_decimal(v));
            }
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------- plot

pub fn plot(args: PlotArgs) -> Result<()> {
    let available: Vec<&str> = saner_core::harness::metrics::column_names().collect();
    for column in &args.columns {
        if column == "epoch" || !available.contains(&column.as_str()) {
            return Err(usage(format!(
                "unknown column {column:?}; available: {}",
                available.iter().filter(|c| **c != "epoch").copied().collect::<Vec<_>>().join(", ")
            )));
        }
    }
    if !args.names.is_empty() && args.names.len() != args.inputs.len() {
        return Err(usage(format!(
            "--names has {} entries for {} inputs",
            args.names.len(),
            args.inputs.len()
        )));
    }

    let mut runs = Vec::with_capacity(args.inputs.len());
    for (i, path) in args.inputs.iter().enumerate() {
        let rows = read_metrics(path).with_context(|| format!("reading {}", path.display()))?;
        if rows.is_empty() {
            bail!("{} contains no metrics rows", path.display());
        }
        let name = args.names.get(i).cloned().unwrap_or_else(|| default_name(path));
        runs.push((name, rows));
    }

    create_dir(&args.out_dir)?;
    for column in &args.columns {
        let series: Vec<Series> = runs
            .iter()
            .map(|(name, rows)| Series {
                name: name.clone(),
                points: rows
                    .iter()
                    .map(|r| (r.epoch as f64, r.column(column).flatten()))
                    .collect(),
            })
            .collect();
        let svg = plot::render(column, "epoch", column, &series);
        let path = args.out_dir.join(format!("{column}.svg"));
        fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

/// Run directories hold `metrics.csv`, so the directory name is the useful one.
fn default_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "metrics" {
        if let Some(parent) = path.parent().and_then(Path::file_name) {
            return parent.to_string_lossy().into_owned();
        }
    }
    stem
}
