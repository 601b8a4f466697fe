//! `ikern`: command-line driver for interaction-kernel learning studies.
//!
//! Subcommands cover the pipeline end to end: `generate` simulates training
//! trajectories to CSV, `learn` fits estimators (a full configured study,
//! or a single estimator from a trajectory file), `evaluate` scores a
//! stored estimator against the configured truth, `coercivity` estimates
//! the learnability constant on a ladder of partition counts, `rate` fits
//! log-log convergence slopes from results tables, and `noise-sweep`
//! repeats a study across observation-noise levels.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
//! Identical configuration and seed give byte-identical outputs, whatever
//! the thread count.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use interaction_kernels::benchmark::{
    reference_measure, resolve_radius, run_benchmark, run_benchmark_with_reference,
    simulate_training, write_bundle, BenchmarkOptions, BenchmarkOutcome, CellResult,
    DEFAULT_WAVE, TRIAL_STRIDE,
};
use interaction_kernels::coercivity::{estimate_coercivity, CoercivityRun};
use interaction_kernels::config::{ExperimentConfig, NoiseBlock, Profile};
use interaction_kernels::dynamics::SystemSpec;
use interaction_kernels::evaluation::{
    add_noise, fit_rate, prediction_experiment, IcClass, NoiseKind, PredictionSetup,
};
use interaction_kernels::hypothesis::{
    choose_dimension, partitions_for, Estimator, HypothesisSpace,
};
use interaction_kernels::io::{
    read_estimator_json, read_results_csv, read_trajectories, write_coercivity_report,
    write_estimator_json, write_json, write_trajectories, CoercivityRecord, TrajectoryMeta,
};
use interaction_kernels::kernels::Kernel;
use interaction_kernels::measure::{max_pairwise_distance, relative_kernel_error};
use interaction_kernels::regression::{DistancePolicy, NormalAccumulator, DEFAULT_SV_CUTOFF};

#[derive(Parser)]
#[command(
    name = "ikern",
    version,
    about = "Learn pairwise interaction kernels of first-order agent systems"
)]
struct Cli {
    /// Worker threads; 0 or absent picks one per CPU.
    #[arg(long, global = true, env = "IKERN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate training trajectories and write them to CSV.
    Generate(GenerateArgs),
    /// Run the configured study, or fit one estimator from a trajectory CSV.
    Learn(LearnArgs),
    /// Score a stored estimator against the configured truth.
    Evaluate(EvaluateArgs),
    /// Estimate the learnability constant on a ladder of partition counts.
    Coercivity(CoercivityArgs),
    /// Fit log-log convergence rates from a results table.
    Rate(RateArgs),
    /// Repeat a study across observation-noise levels.
    NoiseSweep(NoiseSweepArgs),
}

/// Options shared by every configuration-driven subcommand.
#[derive(Args)]
struct ConfigOpts {
    /// Configuration JSON, or a built-in name: opinion, predator_swarm,
    /// lennard_jones.
    #[arg(long)]
    config: String,
    /// Override the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// `ci` caps sample counts for quick runs; `full` runs as configured.
    #[arg(long, value_enum, default_value_t = ProfileArg::Full)]
    profile: ProfileArg,
}

impl ConfigOpts {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match self.config.as_str() {
            "opinion" => ExperimentConfig::opinion(),
            "predator_swarm" => ExperimentConfig::predator_swarm(),
            "lennard_jones" => ExperimentConfig::lennard_jones(),
            path => ExperimentConfig::load(path)
                .with_context(|| format!("cannot load configuration {path}"))?,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg.with_profile(self.profile.into()))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    Ci,
    Full,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Profile {
        match p {
            ProfileArg::Ci => Profile::Ci,
            ProfileArg::Full => Profile::Full,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Additive,
    Multiplicative,
}

impl From<KindArg> for NoiseKind {
    fn from(k: KindArg) -> NoiseKind {
        match k {
            KindArg::Additive => NoiseKind::Additive,
            KindArg::Multiplicative => NoiseKind::Multiplicative,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StatArg {
    Mean,
    Median,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Trajectory CSV to write; a `.meta.json` sidecar lands next to it.
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
    /// Trajectories to simulate; defaults to the smallest configured
    /// sample size.
    #[arg(long)]
    m: Option<usize>,
    /// Trial index selecting the independent stream block.
    #[arg(long, default_value_t = 0)]
    trial: usize,
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Run the full configured study and write its bundle here.
    #[arg(
        long,
        value_name = "DIR",
        conflicts_with_all = ["traj", "meta", "out"],
        required_unless_present = "traj"
    )]
    out_dir: Option<PathBuf>,
    /// Fit a single estimator from this trajectory CSV instead.
    #[arg(long, value_name = "CSV", requires = "out")]
    traj: Option<PathBuf>,
    /// Sidecar metadata (defaults to the CSV path with extension
    /// `meta.json`).
    #[arg(long, value_name = "JSON", requires = "traj")]
    meta: Option<PathBuf>,
    /// Estimator destination for `--traj` mode.
    #[arg(long, value_name = "JSON", requires = "traj")]
    out: Option<PathBuf>,
    /// Evaluation initial conditions per class and cell; 0 skips the
    /// trajectory-prediction stage.
    #[arg(long, default_value_t = 1)]
    prediction_ics: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Estimator JSON produced by `learn`.
    #[arg(long, value_name = "JSON")]
    estimator: PathBuf,
    /// Optional JSON report destination.
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
    /// Prediction initial conditions per class; 0 skips trajectory
    /// prediction.
    #[arg(long, default_value_t = 0)]
    predict: usize,
}

#[derive(Args)]
struct CoercivityArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Comma-separated partition counts, e.g. 10,20,40.
    #[arg(long, value_delimiter = ',', required = true)]
    partitions: Vec<usize>,
    /// Polynomial degree of the probe space.
    #[arg(long, default_value_t = 0)]
    degree: usize,
    /// Trajectories to estimate from; defaults to the configured
    /// measure-batch size.
    #[arg(long)]
    m: Option<usize>,
    /// Optional JSON report destination.
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RateArgs {
    /// Results CSV, as written into study bundles.
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    /// Metric name or prefix; every matching metric gets its own fit.
    #[arg(long)]
    metric: String,
    /// Restrict to one window column value (e.g. train, future).
    #[arg(long)]
    window: Option<String>,
    /// Aggregate trials per sample size with the mean or the median.
    #[arg(long, value_enum, default_value_t = StatArg::Mean)]
    stat: StatArg,
}

#[derive(Args)]
struct NoiseSweepArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Comma-separated noise half-widths; 0 runs the clean system.
    #[arg(long, value_delimiter = ',', required = true)]
    sigmas: Vec<f64>,
    /// Noise model; defaults to the configuration's, else additive.
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    /// Directory receiving one bundle per noise level plus the sweep
    /// summary.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Evaluation initial conditions per cell; 0 skips prediction.
    #[arg(long, default_value_t = 0)]
    prediction_ics: usize,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests print to stdout and succeed; real
            // usage errors print to stderr and exit 1.
            let code = i32::from(err.use_stderr());
            let _ = err.print();
            process::exit(code);
        }
    };
    if let Some(threads) = cli.threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
        if let Err(err) = pool {
            eprintln!("error: cannot size the worker pool: {err}");
            process::exit(2);
        }
    }
    let result = match cli.command {
        Command::Generate(args) => generate(&args),
        Command::Learn(args) => learn(&args),
        Command::Evaluate(args) => evaluate(&args),
        Command::Coercivity(args) => coercivity(&args),
        Command::Rate(args) => rate(&args),
        Command::NoiseSweep(args) => noise_sweep(&args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        process::exit(2);
    }
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

fn bench_options(prediction_ics: usize) -> BenchmarkOptions {
    BenchmarkOptions {
        prediction_ics,
        ..BenchmarkOptions::default()
    }
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let m = args.m.unwrap_or(cfg.learning.m_values[0]);
    let opts = BenchmarkOptions::default();
    let mut batch = simulate_training(&cfg, args.trial, m, &opts)?;
    if let Some(noise) = &cfg.learning.noise {
        if noise.sigma > 0.0 {
            let first = args.trial as u64 * TRIAL_STRIDE;
            batch = add_noise(&batch, noise.kind, noise.sigma, cfg.seed, first)?;
        }
    }
    let meta = TrajectoryMeta {
        d: cfg.system.d,
        type_sizes: cfg.system.type_sizes(),
        kernels: cfg.system.kernels.clone(),
        seed: cfg.seed,
        times: batch.times.clone(),
        has_velocities: batch.velocities.is_some(),
    };
    let meta_path = sidecar_path(&args.out);
    write_trajectories(&args.out, &meta_path, &batch, &meta)?;
    println!(
        "wrote {} trajectories ({} nodes, {} agents, d={}) to {} and {}",
        batch.n_trajectories,
        batch.n_times(),
        batch.n_agents,
        batch.d,
        args.out.display(),
        meta_path.display(),
    );
    Ok(())
}

fn learn(args: &LearnArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    match (&args.out_dir, &args.traj) {
        (Some(dir), None) => learn_bundle(&cfg, args, dir),
        (None, Some(traj)) => learn_from_file(&cfg, args, traj),
        _ => unreachable!("argument parsing enforces exactly one mode"),
    }
}

fn learn_bundle(cfg: &ExperimentConfig, args: &LearnArgs, dir: &Path) -> Result<()> {
    let opts = bench_options(args.prediction_ics);
    let outcome = run_benchmark(cfg, &opts)?;
    write_bundle(&outcome, dir)?;
    print_outcome(&outcome);
    println!("bundle written to {}", dir.display());
    Ok(())
}

fn print_outcome(outcome: &BenchmarkOutcome) {
    let failed = outcome.cells.iter().filter(|c| c.error.is_some()).count();
    println!(
        "{}: {} cells ({} failed), radius {:.6}",
        outcome.config.name,
        outcome.cells.len(),
        failed,
        outcome.r_max,
    );
    for s in &outcome.summaries {
        match s.rate {
            Some(rate) => println!("  {:<28} rate {rate:.4}", s.metric),
            None => println!("  {:<28} rate n/a", s.metric),
        }
        for p in &s.points {
            println!("    M={:<7} mean {:.6e}  std {:.3e}", p.m, p.mean, p.std);
        }
    }
    for cell in outcome.cells.iter().filter(|c| c.error.is_some()) {
        println!(
            "  failed cell M={} trial={}: {}",
            cell.m,
            cell.trial,
            cell.error.as_deref().unwrap_or(""),
        );
    }
}

fn learn_from_file(cfg: &ExperimentConfig, args: &LearnArgs, traj: &Path) -> Result<()> {
    let meta_path = args.meta.clone().unwrap_or_else(|| sidecar_path(traj));
    let (batch, meta) = read_trajectories(traj, &meta_path)?;
    if batch.velocities.is_none() {
        bail!(
            "trajectory file {} carries no velocities; learning needs them",
            traj.display(),
        );
    }
    let kernels = meta
        .kernels
        .iter()
        .map(|k| k.build())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let sys = SystemSpec::new(meta.d, meta.type_sizes.clone(), kernels)?;
    let r_max = match cfg.learning.r_max {
        Some(r) => r,
        None => {
            let r = max_pairwise_distance(&sys, &batch);
            if r <= 0.0 {
                bail!("all agents coincide; set an explicit radius in the configuration");
            }
            r
        }
    };
    let dimension = choose_dimension(
        batch.n_trajectories,
        cfg.learning.smoothness,
        cfg.learning.multiplier,
    )?;
    let partitions = partitions_for(dimension, cfg.learning.degree);
    let space = HypothesisSpace::new(0.0, r_max, sys.n_types(), cfg.learning.degree, partitions)?;
    let mut acc = NormalAccumulator::new(space.clone(), DistancePolicy::ClampToInterval);
    acc.add_batch(&sys, &batch)?;
    let fit = acc.finalize()?.solve(DEFAULT_SV_CUTOFF)?;
    let est = Estimator::new(space, fit.coeffs)?.with_default_smoothing()?;
    let out = args.out.as_ref().expect("argument parsing requires --out");
    write_estimator_json(out, &est)?;
    println!(
        "learned {dimension} coefficients per pair ({partitions} partitions, degree {}) from M={}",
        cfg.learning.degree, batch.n_trajectories,
    );
    println!(
        "  normal matrix: rank {}, eigenvalues in [{:.3e}, {:.3e}]",
        fit.rank, fit.lambda_min, fit.lambda_max,
    );
    println!("estimator written to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct PairErrorOut {
    observer: usize,
    neighbour: usize,
    value: f64,
    /// Set when the pair's truth has zero norm and `value` is therefore an
    /// absolute rather than relative error.
    absolute: bool,
}

#[derive(Serialize)]
struct ErrorReportOut {
    aggregate: f64,
    aggregate_absolute: bool,
    pairs: Vec<PairErrorOut>,
}

#[derive(Serialize)]
struct PredictionOut {
    class: String,
    train_mean: f64,
    train_std: f64,
    future_mean: f64,
    future_std: f64,
    failures: usize,
}

#[derive(Serialize)]
struct EvaluationReport {
    experiment: String,
    estimator_radius: f64,
    measure_radius: f64,
    raw: ErrorReportOut,
    smoothed: Option<ErrorReportOut>,
    prediction: Vec<PredictionOut>,
}

fn class_label(class: IcClass) -> &'static str {
    match class {
        IcClass::Training => "training_ic",
        IcClass::Random => "random_ic",
        IcClass::LargeN => "large_n",
    }
}

fn error_report_out(
    estimated: &[Kernel],
    truth: &[Kernel],
    reference: &interaction_kernels::measure::PairwiseMeasure,
) -> Result<ErrorReportOut> {
    let report = relative_kernel_error(estimated, truth, reference)?;
    let k = reference.k_count();
    let pairs = report
        .per_pair
        .iter()
        .enumerate()
        .map(|(i, p)| PairErrorOut {
            observer: i / k,
            neighbour: i % k,
            value: p.value,
            absolute: p.absolute,
        })
        .collect();
    Ok(ErrorReportOut {
        aggregate: report.aggregate,
        aggregate_absolute: report.aggregate_absolute,
        pairs,
    })
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let est = read_estimator_json(&args.estimator)?;
    let sys = cfg.system.build_system()?;
    let k = cfg.system.k_count();
    if est.space().k_count() != k {
        bail!(
            "estimator covers {} agent types, configuration has {k}",
            est.space().k_count(),
        );
    }
    let opts = BenchmarkOptions::default();
    let (reference, r_max) = reference_measure(&cfg, &opts)?;
    let truth: Vec<Kernel> = (0..k * k)
        .map(|i| sys.kernel(i / k, i % k).clone())
        .collect();

    let raw = error_report_out(&est.to_kernels()?, &truth, &reference)?;
    let smoothed = match est.smoothed_kernels() {
        Some(kernels) => Some(error_report_out(&kernels, &truth, &reference)?),
        None => None,
    };

    println!(
        "{}: measure radius {:.6}, estimator radius {:.6}",
        cfg.name,
        r_max,
        est.space().hi(),
    );
    println!("aggregate kernel error (raw):      {:.6e}", raw.aggregate);
    if let Some(s) = &smoothed {
        println!("aggregate kernel error (smoothed): {:.6e}", s.aggregate);
    }
    for p in &raw.pairs {
        println!(
            "  pair ({}, {}): raw {:.6e}",
            p.observer, p.neighbour, p.value,
        );
    }

    let mut prediction = Vec::new();
    if args.predict > 0 {
        let estimated = match est.smoothed_kernels() {
            Some(kernels) => kernels,
            None => est.to_kernels()?,
        };
        let samplers = cfg.system.samplers();
        let setup = PredictionSetup {
            spec: &sys,
            estimated: &estimated,
            samplers: &samplers,
            training_initials: &[],
            n_random: args.predict,
            n_large: args.predict,
            large_factor: opts.large_factor,
            t_start: cfg.system.t_start,
            t_split: cfg.system.t_split,
            t_end: cfg.system.t_end,
            nodes_per_window: opts.nodes_per_window,
            seed: cfg.seed,
            ode: &opts.ode,
        };
        let report = prediction_experiment(&setup)?;
        for oc in report.outcomes {
            // The training class is empty here: no training batch around.
            if oc.train_window.values.is_empty() && oc.failures == 0 {
                continue;
            }
            println!(
                "  prediction {:<12} train {:.6e}  future {:.6e}  (failures {})",
                class_label(oc.class),
                oc.train_window.mean,
                oc.future_window.mean,
                oc.failures,
            );
            prediction.push(PredictionOut {
                class: class_label(oc.class).into(),
                train_mean: oc.train_window.mean,
                train_std: oc.train_window.std,
                future_mean: oc.future_window.mean,
                future_std: oc.future_window.std,
                failures: oc.failures,
            });
        }
    }

    if let Some(out) = &args.out {
        let report = EvaluationReport {
            experiment: cfg.name.clone(),
            estimator_radius: est.space().hi(),
            measure_radius: r_max,
            raw,
            smoothed,
            prediction,
        };
        write_json(out, &report)?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn coercivity(args: &CoercivityArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let sys = cfg.system.build_system()?;
    let samplers = cfg.system.samplers();
    let times = cfg.system.training_times();
    let opts = BenchmarkOptions::default();
    let r_max = resolve_radius(&cfg, &opts)?;
    let m_count = args.m.unwrap_or(cfg.measure.m_rho);

    println!(
        "{}: coercivity from M={m_count} trajectories, radius {r_max:.6}, degree {}",
        cfg.name, args.degree,
    );
    println!("{:>10} {:>12}  per-type blocks", "partitions", "lambda_min");
    let mut records = Vec::new();
    for &p in &args.partitions {
        let space = HypothesisSpace::new(0.0, r_max, cfg.system.k_count(), args.degree, p)?;
        let run = CoercivityRun {
            spec: &sys,
            space: &space,
            samplers: &samplers,
            times: &times,
            m_count,
            n_bins: cfg.measure.bins,
            seed: cfg.seed,
            wave: DEFAULT_WAVE,
            ode: &opts.ode,
        };
        let est = estimate_coercivity(&run)?;
        let blocks: Vec<String> = est
            .block_lambda_min
            .iter()
            .map(|b| match b {
                Some(v) => format!("{v:.6}"),
                None => "pruned".into(),
            })
            .collect();
        println!("{p:>10} {:>12.6}  {}", est.lambda_min, blocks.join(" "));
        records.push(CoercivityRecord::new(p, &est));
    }
    if let Some(out) = &args.out {
        write_coercivity_report(out, &records)?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn rate(args: &RateArgs) -> Result<()> {
    let rows = read_results_csv(&args.input)?;
    let mut keys: Vec<(String, String)> = Vec::new();
    for row in &rows {
        if !row.metric.starts_with(&args.metric) {
            continue;
        }
        if let Some(w) = &args.window {
            if &row.window != w {
                continue;
            }
        }
        let key = (row.metric.clone(), row.window.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    if keys.is_empty() {
        bail!(
            "no rows in {} match metric {:?}",
            args.input.display(),
            args.metric,
        );
    }

    let mut fitted = 0;
    for (metric, window) in &keys {
        let mut by_m: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for row in rows
            .iter()
            .filter(|r| &r.metric == metric && &r.window == window)
        {
            by_m.entry(row.m).or_default().push(row.value);
        }
        let points: Vec<(f64, f64)> = by_m
            .iter()
            .map(|(&m, values)| {
                let v = match args.stat {
                    StatArg::Mean => mean(values),
                    StatArg::Median => median(values),
                };
                (m as f64, v)
            })
            .filter(|&(_, v)| v > 0.0 && v.is_finite())
            .collect();
        let label = if window.is_empty() {
            metric.clone()
        } else {
            format!("{metric}[{window}]")
        };
        if points.len() < 3 {
            println!(
                "{label}: need at least 3 sample sizes with positive values, have {}",
                points.len(),
            );
            continue;
        }
        let fit = fit_rate(&points)?;
        println!(
            "{label}: rate {:.4} (intercept {:.4}, residual {:.3e}, {} sizes)",
            fit.rate,
            fit.intercept,
            fit.residual,
            points.len(),
        );
        fitted += 1;
    }
    if fitted == 0 {
        bail!("no matched metric had enough sample sizes for a fit");
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepPoint {
    m: usize,
    mean: f64,
    median: f64,
    std: f64,
    trials: usize,
}

#[derive(Serialize)]
struct SweepMetric {
    metric: String,
    rate: Option<f64>,
    points: Vec<SweepPoint>,
}

#[derive(Serialize)]
struct SweepLevel {
    sigma: f64,
    kind: NoiseKind,
    metrics: Vec<SweepMetric>,
}

fn sweep_points(cells: &[CellResult], m_values: &[usize], raw: bool) -> Vec<SweepPoint> {
    let mut points = Vec::new();
    for &m in m_values {
        let values: Vec<f64> = cells
            .iter()
            .filter(|c| c.m == m)
            .filter_map(|c| if raw { c.raw_error } else { c.smoothed_error })
            .filter(|v| v.is_finite())
            .collect();
        if values.is_empty() {
            continue;
        }
        let mu = mean(&values);
        let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64;
        points.push(SweepPoint {
            m,
            mean: mu,
            median: median(&values),
            std: var.sqrt(),
            trials: values.len(),
        });
    }
    points
}

fn noise_sweep(args: &NoiseSweepArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let kind: NoiseKind = args
        .kind
        .map(NoiseKind::from)
        .or(cfg.learning.noise.as_ref().map(|n| n.kind))
        .unwrap_or(NoiseKind::Additive);
    for &sigma in &args.sigmas {
        if !sigma.is_finite() || sigma < 0.0 {
            bail!("noise level must be finite and nonnegative, got {sigma}");
        }
    }

    let opts = bench_options(args.prediction_ics);
    fs::create_dir_all(&args.out_dir)?;
    let (reference, r_max) = reference_measure(&cfg, &opts)?;

    let mut levels = Vec::new();
    for &sigma in &args.sigmas {
        let mut run_cfg = cfg.clone();
        run_cfg.learning.noise = (sigma > 0.0).then_some(NoiseBlock { kind, sigma });
        let outcome = run_benchmark_with_reference(&run_cfg, &opts, reference.clone(), r_max)?;
        let dir = args.out_dir.join(format!("sigma_{sigma:.3}"));
        write_bundle(&outcome, &dir)?;

        let rate_of = |name: &str| {
            outcome
                .summaries
                .iter()
                .find(|s| s.metric == name)
                .and_then(|s| s.rate)
        };
        let metrics = vec![
            SweepMetric {
                metric: "kernel_error_raw".into(),
                rate: rate_of("kernel_error_raw"),
                points: sweep_points(&outcome.cells, &run_cfg.learning.m_values, true),
            },
            SweepMetric {
                metric: "kernel_error_smoothed".into(),
                rate: rate_of("kernel_error_smoothed"),
                points: sweep_points(&outcome.cells, &run_cfg.learning.m_values, false),
            },
        ];
        levels.push(SweepLevel {
            sigma,
            kind,
            metrics,
        });
    }

    write_json(&args.out_dir.join("sweep.json"), &levels)?;
    let mut csv = fs::File::create(args.out_dir.join("sweep.csv"))?;
    writeln!(csv, "sigma,metric,M,mean,median,std,trials")?;
    for level in &levels {
        for metric in &level.metrics {
            for p in &metric.points {
                writeln!(
                    csv,
                    "{},{},{},{:.16e},{:.16e},{:.16e},{}",
                    level.sigma, metric.metric, p.m, p.mean, p.median, p.std, p.trials,
                )?;
            }
        }
    }

    println!("noise sweep of {} ({} levels):", cfg.name, levels.len());
    println!(
        "{:>8} {:>22} {:>22}",
        "sigma", "raw rate", "smoothed rate",
    );
    for level in &levels {
        let fmt = |r: Option<f64>| match r {
            Some(r) => format!("{r:.4}"),
            None => "n/a".into(),
        };
        println!(
            "{:>8.3} {:>22} {:>22}",
            level.sigma,
            fmt(level.metrics[0].rate),
            fmt(level.metrics[1].rate),
        );
    }
    println!("bundles and summary written to {}", args.out_dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_paths_swap_the_extension() {
        assert_eq!(
            sidecar_path(Path::new("runs/traj.csv")),
            PathBuf::from("runs/traj.meta.json"),
        );
        assert_eq!(
            sidecar_path(Path::new("plain")),
            PathBuf::from("plain.meta.json"),
        );
    }

    #[test]
    fn median_handles_even_and_odd_lengths() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
