//! Command-line pipeline for twin-cohort spatial variance components:
//! simulate cohorts, fit estimators, evaluate against truth, and export
//! seed maps and bandwidth-selection traces.
//!
//! All subcommands are deterministic: identical configuration and inputs
//! produce byte-identical output files. Progress and wall time per
//! pipeline step go to stderr; on failure the last stderr line is a
//! machine-readable JSON object and the exit code is nonzero.

use clap::{Args, Parser, Subcommand};
use log::info;
use ndarray::{Array1, Array2};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use twinspan::cohort::{self, CohortPaths, TwinCohort};
use twinspan::covfun::{partition_fit_combine, InverseThreshold, PartitionInputs};
use twinspan::domain::{Hemisphere, VertexSet};
use twinspan::error::{Error, Result, Severity};
use twinspan::estimators::{
    EstimateSet, EstimatorKind, EstimatorRegistry, FitConfig, FitContext, RankChoice,
};
use twinspan::mat1;
use twinspan::metrics::{
    bias_variance_field, bias_variance_matrix, ise_field, ise_matrix, normalized_ise_matrix,
    write_replicate_table, write_summary_table, ReplicateRow, SummaryRow,
};
use twinspan::simulate::{build_truth, simulate_cohort, SimConfig, SimTruth};

#[derive(Parser)]
#[command(
    name = "twinspan",
    version,
    about = "Spatial variance-component estimation for twin cohorts"
)]
struct Cli {
    /// Worker thread count (default: TWINSPAN_THREADS env var, then all
    /// cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic twin cohort and its ground truth.
    Simulate(SimulateArgs),
    /// Fit one estimator to a cohort directory.
    Fit(FitArgs),
    /// Score fitted estimates against simulation truth.
    Evaluate(EvaluateArgs),
    /// Export one row of a covariance matrix as a seed map.
    Seedmap(SeedmapArgs),
    /// Export every bandwidth-selection trace for a cohort.
    GcvTrace(GcvTraceArgs),
}

/// Top-level configuration file contents; every command flag overrides the
/// matching key.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
struct RunConfig {
    sim: SimConfig,
    fit: FitConfig,
    /// Default estimator for `fit` when the flag is absent.
    estimator: Option<String>,
    /// Vertex partition count for the factorized estimator.
    partitions: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sim: SimConfig::default(),
            fit: FitConfig::default(),
            estimator: None,
            partitions: 1,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON configuration file (see `RunConfig`); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; receives `cohort/` and `truth/` subdirectories.
    #[arg(long)]
    out: PathBuf,
    /// Number of sphere vertices.
    #[arg(long)]
    v: Option<usize>,
    #[arg(long)]
    n_mz: Option<usize>,
    #[arg(long)]
    n_dz: Option<usize>,
    #[arg(long)]
    n_singletons: Option<usize>,
    /// Master RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replicate index; distinct streams under one seed are independent.
    #[arg(long, default_value_t = 0)]
    stream: u64,
}

#[derive(Args)]
struct FitArgs {
    /// JSON configuration file (see `RunConfig`); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort directory (phenotype.mat1, design.csv, family.csv,
    /// vertices.csv).
    #[arg(long)]
    cohort: PathBuf,
    /// Output directory for estimates and the metadata sidecar.
    #[arg(long)]
    out: PathBuf,
    /// One of: mle, mwle, smle, s-fsem, psd-fsem, s-sw, psd-sw, psd-ace.
    #[arg(long)]
    estimator: Option<String>,
    /// Vertex partition count (psd-ace only; 1 fits the whole domain at
    /// once).
    #[arg(long)]
    partitions: Option<usize>,
    /// Descent convergence threshold relative to the initial gradient.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Initial descent learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Maximum accepted descent iterations.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Factor ranks as "RA,RC,RE", or "auto".
    #[arg(long)]
    ranks: Option<String>,
    /// Folds for the weighted-likelihood bandwidth cross-validation.
    #[arg(long)]
    cv_folds: Option<usize>,
    /// Seed for the cross-validation fold assignment.
    #[arg(long)]
    cv_seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Truth directory written by `simulate` (the `truth/` subdirectory).
    #[arg(long)]
    truth: PathBuf,
    /// Fit output directory; repeat once per fitted replicate.
    #[arg(long = "fit", required = true)]
    fits: Vec<PathBuf>,
    /// Output directory for replicates.csv and summary.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SeedmapArgs {
    /// Covariance matrix file (.mat1).
    #[arg(long)]
    cov: PathBuf,
    /// Focal vertex (0-based row index).
    #[arg(long)]
    vertex: usize,
    /// Rescale covariances to correlations.
    #[arg(long)]
    normalize: bool,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GcvTraceArgs {
    /// JSON configuration file (see `RunConfig`); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort directory.
    #[arg(long)]
    cohort: PathBuf,
    /// Output CSV path (`stage,h,score` rows).
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    init_threads(cli.threads);
    if let Err(err) = run(cli.command) {
        eprintln!(
            "{}",
            serde_json::json!({
                "error": { "kind": error_kind(&err), "message": err.to_string() }
            })
        );
        std::process::exit(1);
    }
}

fn init_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("TWINSPAN_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(n) = n.filter(|&n| n > 0) {
        // Ignore failure: the global pool can only be set once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Io { .. } => "io",
        Error::Format { .. } => "format",
        Error::Invalid(_) => "invalid",
        Error::Identifiability(_) => "identifiability",
        Error::Numerical(_) => "numerical",
        Error::Linalg(_) => "linalg",
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Seedmap(args) => cmd_seedmap(args),
        Command::GcvTrace(args) => cmd_gcv_trace(args),
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Sidecar describing a simulated data set.
#[derive(serde::Serialize)]
struct TruthSidecar<'a> {
    v: usize,
    n_mz: usize,
    n_dz: usize,
    n_singletons: usize,
    seed: u64,
    stream: u64,
    targets: &'a twinspan::simulate::ComponentTargets,
    /// Scale factors applied to the four basis blocks.
    alphas: [f64; 4],
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(v) = args.v {
        config.sim.v = v;
    }
    if let Some(n) = args.n_mz {
        config.sim.n_mz = n;
    }
    if let Some(n) = args.n_dz {
        config.sim.n_dz = n;
    }
    if let Some(n) = args.n_singletons {
        config.sim.n_singletons = n;
    }
    if let Some(seed) = args.seed {
        config.sim.seed = seed;
    }
    let sim = &config.sim;

    let t0 = Instant::now();
    let vertices = VertexSet::fibonacci_lattice(sim.v, Hemisphere::Left)?;
    let truth = build_truth(&vertices, &sim.targets)?;
    info!("truth construction: {:.3}s", t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    let cohort = simulate_cohort(
        &truth,
        sim.n_mz,
        sim.n_dz,
        sim.n_singletons,
        sim.seed,
        args.stream,
    )?;
    info!("cohort sampling: {:.3}s", t1.elapsed().as_secs_f64());

    let t2 = Instant::now();
    cohort::save_cohort(&args.out.join("cohort"), &cohort)?;
    save_truth(&args.out.join("truth"), &truth, sim, args.stream)?;
    mat1::atomic_write_text(&args.out.join("config.json"), |out| {
        writeln!(out, "{}", serde_json::to_string_pretty(&config).unwrap())
    })?;
    info!("artifact writing: {:.3}s", t2.elapsed().as_secs_f64());
    info!(
        "simulated cohort: V={} individuals={} -> {}",
        sim.v,
        cohort.n(),
        args.out.display()
    );
    Ok(())
}

fn save_truth(dir: &Path, truth: &SimTruth, sim: &SimConfig, stream: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    mat1::write_matrix(&dir.join("sigma_a.mat1"), &truth.sigma_a.view())?;
    mat1::write_matrix(&dir.join("sigma_c.mat1"), &truth.sigma_c.view())?;
    mat1::write_matrix(&dir.join("sigma_eg.mat1"), &truth.sigma_eg.view())?;
    mat1::write_vector(&dir.join("sigma2_el.mat1"), &truth.sigma2_el)?;
    mat1::write_vector(&dir.join("h2.mat1"), &truth.h2)?;
    let sidecar = TruthSidecar {
        v: truth.v(),
        n_mz: sim.n_mz,
        n_dz: sim.n_dz,
        n_singletons: sim.n_singletons,
        seed: sim.seed,
        stream,
        targets: &sim.targets,
        alphas: truth.alphas,
    };
    mat1::atomic_write_text(&dir.join("truth.json"), |out| {
        writeln!(out, "{}", serde_json::to_string_pretty(&sidecar).unwrap())
    })
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
struct PartitionSidecar {
    partitions: usize,
    unsupported_pairs: usize,
    /// Positive eigenvalues kept by the final projection per component.
    clip_counts: [usize; 3],
    /// Per-partition descent convergence flags.
    converged: Vec<bool>,
}

/// Fit metadata sidecar. Wall times are logged to stderr instead so that
/// reruns stay byte-identical.
#[derive(serde::Serialize)]
struct FitSidecar<'a> {
    estimator: &'a str,
    kind: &'a str,
    n_individuals: usize,
    n_vertices: usize,
    bandwidths: &'a BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ranks: Option<[usize; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kept_eigenvalues: Option<[usize; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_clipped: Option<usize>,
    h2_zero_denominators: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    partitioned: Option<PartitionSidecar>,
    config: &'a FitConfig,
}

fn parse_ranks(text: &str) -> Result<RankChoice> {
    if text.trim() == "auto" {
        return Ok(RankChoice::Auto);
    }
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Invalid(format!(
            "ranks must be \"auto\" or three comma-separated integers, got {text:?}"
        )));
    }
    let mut out = [0usize; 3];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = part.trim().parse().map_err(|_| {
            Error::Invalid(format!("rank {part:?} is not a nonnegative integer"))
        })?;
    }
    Ok(RankChoice::Fixed(out))
}

fn load_validated_cohort(dir: &Path) -> Result<TwinCohort> {
    let (cohort, mut diagnostics) = cohort::load_cohort(&CohortPaths::in_dir(dir))?;
    diagnostics.extend(cohort::validate_cohort(&cohort));
    for d in &diagnostics {
        match d.severity {
            Severity::Warning => log::warn!("{}", d.message),
            Severity::Error => log::error!("{}", d.message),
        }
    }
    if cohort::has_errors(&diagnostics) {
        return Err(Error::Invalid(format!(
            "cohort failed validation with {} error(s)",
            diagnostics
                .iter()
                .filter(|d| d.severity == Severity::Error)
                .count()
        )));
    }
    // The variance decomposition needs both zygosities.
    if cohort.families.n_mz() == 0 || cohort.families.n_dz() == 0 {
        return Err(Error::Identifiability(
            "variance components need both monozygotic and dizygotic pairs".into(),
        ));
    }
    Ok(cohort)
}

/// Splits `0..v` into `n` contiguous chunks with sizes differing by at most
/// one.
fn contiguous_partitions(v: usize, n: usize) -> Result<Vec<Vec<usize>>> {
    if n == 0 || n > v {
        return Err(Error::Invalid(format!(
            "cannot split {v} vertices into {n} partitions"
        )));
    }
    let base = v / n;
    let extra = v % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0usize;
    for i in 0..n {
        let size = base + usize::from(i < extra);
        out.push((start..start + size).collect());
        start += size;
    }
    Ok(out)
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(e) = args.epsilon {
        config.fit.descent.epsilon = e;
    }
    if let Some(lr) = args.learning_rate {
        config.fit.descent.learning_rate = lr;
    }
    if let Some(n) = args.max_iterations {
        config.fit.descent.max_iterations = n;
    }
    if let Some(text) = args.ranks.as_deref() {
        config.fit.ranks = parse_ranks(text)?;
    }
    if let Some(n) = args.cv_folds {
        config.fit.cv_folds = n;
    }
    if let Some(seed) = args.cv_seed {
        config.fit.cv_seed = seed;
    }
    if let Some(n) = args.partitions {
        config.partitions = n;
    }
    let estimator = args
        .estimator
        .or(config.estimator.clone())
        .ok_or_else(|| Error::Invalid("no estimator given (flag --estimator or config key)".into()))?;

    let t0 = Instant::now();
    let cohort = load_validated_cohort(&args.cohort)?;
    info!(
        "cohort loading: {:.3}s (V={} individuals={})",
        t0.elapsed().as_secs_f64(),
        cohort.v(),
        cohort.n()
    );

    let registry = EstimatorRegistry::builtin();
    let spec = registry.get(&estimator).ok_or_else(|| {
        Error::Invalid(format!(
            "unknown estimator {estimator:?}; available: {}",
            registry.names().join(", ")
        ))
    })?;
    if config.partitions != 1 && spec.name() != "psd-ace" {
        return Err(Error::Invalid(format!(
            "partitioned fitting applies to psd-ace only, not {estimator:?}"
        )));
    }

    let mut ctx = FitContext::new(&cohort, &config.fit);

    // Walk the shared stages explicitly so each gets its own timing line;
    // the estimator call afterwards hits the caches.
    let t = Instant::now();
    ctx.mle()?;
    info!("pointwise fit: {:.3}s", t.elapsed().as_secs_f64());
    if spec.name() == "mwle" {
        let t = Instant::now();
        ctx.mwle()?;
        info!(
            "weighted-likelihood bandwidth search: {:.3}s",
            t.elapsed().as_secs_f64()
        );
    } else if spec.name() != "mle" {
        let t = Instant::now();
        ctx.smoothed()?;
        info!("field smoothing: {:.3}s", t.elapsed().as_secs_f64());
    }
    if spec.kind() == EstimatorKind::Covariances {
        let t = Instant::now();
        ctx.noise()?;
        info!(
            "measurement-error estimation: {:.3}s",
            t.elapsed().as_secs_f64()
        );
        let t = Instant::now();
        ctx.cov_kernel()?;
        info!(
            "covariance bandwidth selection: {:.3}s",
            t.elapsed().as_secs_f64()
        );
    }

    let t = Instant::now();
    let (set, partitioned) = if config.partitions == 1 {
        (spec.fit(&mut ctx)?, None)
    } else {
        fit_partitioned(&mut ctx, &cohort, &config)?
    };
    info!(
        "{} estimation: {:.3}s",
        spec.name(),
        t.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    write_fit_outputs(&args.out, &cohort, &config.fit, &set, partitioned)?;
    info!("artifact writing: {:.3}s", t.elapsed().as_secs_f64());
    info!(
        "fit complete: {} -> {} (total {:.3}s)",
        set.meta.estimator,
        args.out.display(),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Partitioned variant of the factorized estimator: fits each vertex chunk
/// separately and recombines through covariance-function interpolation.
fn fit_partitioned(
    ctx: &mut FitContext<'_>,
    cohort: &TwinCohort,
    config: &RunConfig,
) -> Result<(EstimateSet, Option<PartitionSidecar>)> {
    let partitions = contiguous_partitions(cohort.v(), config.partitions)?;
    let ranks = ctx.resolve_ranks()?;
    let h = ctx.cov_kernel()?.h();
    let noise = ctx.noise()?.clone();
    let residuals = ctx.residuals()?.clone();
    let inputs = PartitionInputs {
        residuals: &residuals,
        families: &cohort.families,
        sigma2_el: &noise.sigma2_el,
        vertices: &cohort.vertices,
        h,
        ranks,
        descent: ctx.config().descent,
        threshold: InverseThreshold::default(),
    };
    let (triple, report) = partition_fit_combine(&inputs, &partitions)?;

    let sigma2_a = triple.sigma_a.diag().to_owned();
    let sigma2_c = triple.sigma_c.diag().to_owned();
    let sigma2_e = triple.sigma_eg.diag().to_owned();
    let (h2, zeros) =
        twinspan::pointwise::ComponentFields::heritability(&sigma2_a, &sigma2_c, &sigma2_e);
    let mut meta = twinspan::estimators::FitMeta {
        estimator: "psd-ace".into(),
        kind: EstimatorKind::Covariances.label().into(),
        bandwidths: BTreeMap::new(),
        ranks: Some(ranks),
        kept_eigenvalues: Some(report.clip_counts),
        noise_clipped: Some(noise.n_clipped),
        h2_zero_denominators: zeros,
        converged: Some(report.converged.iter().all(|&c| c)),
        iterations: None,
        wall_seconds: 0.0,
    };
    meta.bandwidths.insert("noise".into(), noise.h);
    meta.bandwidths.insert("covariance".into(), h);
    let sidecar = PartitionSidecar {
        partitions: partitions.len(),
        unsupported_pairs: report.unsupported_pairs,
        clip_counts: report.clip_counts,
        converged: report.converged,
    };
    let beta = ctx.smoothed()?.fields.beta.clone();
    let set = EstimateSet {
        sigma2_a,
        sigma2_c,
        sigma2_e,
        h2,
        cov: Some(triple),
        sigma2_el: Some(noise.sigma2_el),
        beta: Some(beta),
        descent: None,
        meta,
    };
    Ok((set, Some(sidecar)))
}

fn write_fit_outputs(
    dir: &Path,
    cohort: &TwinCohort,
    config: &FitConfig,
    set: &EstimateSet,
    partitioned: Option<PartitionSidecar>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    mat1::write_vector(&dir.join("sigma2_a.mat1"), &set.sigma2_a)?;
    mat1::write_vector(&dir.join("sigma2_c.mat1"), &set.sigma2_c)?;
    mat1::write_vector(&dir.join("sigma2_e.mat1"), &set.sigma2_e)?;
    mat1::write_vector(&dir.join("h2.mat1"), &set.h2)?;
    if let Some(beta) = &set.beta {
        mat1::write_matrix(&dir.join("beta.mat1"), &beta.view())?;
    }
    if let Some(cov) = &set.cov {
        mat1::write_matrix(&dir.join("sigma_a.mat1"), &cov.sigma_a.view())?;
        mat1::write_matrix(&dir.join("sigma_c.mat1"), &cov.sigma_c.view())?;
        mat1::write_matrix(&dir.join("sigma_eg.mat1"), &cov.sigma_eg.view())?;
    }
    if let Some(sigma2_el) = &set.sigma2_el {
        mat1::write_vector(&dir.join("sigma2_el.mat1"), sigma2_el)?;
    }
    if let Some(report) = &set.descent {
        mat1::atomic_write_text(&dir.join("convergence.csv"), |out| {
            writeln!(out, "iter,grad_norm,lambda,objective")?;
            for s in &report.steps {
                writeln!(out, "{},{},{},{}", s.iter, s.grad_norm, s.lambda, s.objective)?;
            }
            Ok(())
        })?;
    }
    let sidecar = FitSidecar {
        estimator: &set.meta.estimator,
        kind: &set.meta.kind,
        n_individuals: cohort.n(),
        n_vertices: cohort.v(),
        bandwidths: &set.meta.bandwidths,
        ranks: set.meta.ranks,
        kept_eigenvalues: set.meta.kept_eigenvalues,
        noise_clipped: set.meta.noise_clipped,
        h2_zero_denominators: set.meta.h2_zero_denominators,
        converged: set.meta.converged,
        iterations: set.meta.iterations,
        partitioned,
        config,
    };
    mat1::atomic_write_text(&dir.join("meta.json"), |out| {
        writeln!(out, "{}", serde_json::to_string_pretty(&sidecar).unwrap())
    })
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct TruthFiles {
    sigma_a: Array2<f64>,
    sigma_c: Array2<f64>,
    sigma_eg: Array2<f64>,
    sigma2_el: Array1<f64>,
    h2: Array1<f64>,
}

impl TruthFiles {
    fn load(dir: &Path) -> Result<Self> {
        Ok(TruthFiles {
            sigma_a: mat1::read_matrix(&dir.join("sigma_a.mat1"))?,
            sigma_c: mat1::read_matrix(&dir.join("sigma_c.mat1"))?,
            sigma_eg: mat1::read_matrix(&dir.join("sigma_eg.mat1"))?,
            sigma2_el: mat1::read_vector(&dir.join("sigma2_el.mat1"))?,
            h2: mat1::read_vector(&dir.join("h2.mat1"))?,
        })
    }
}

fn normalized_ise_field(estimate: &Array1<f64>, truth: &Array1<f64>) -> Result<f64> {
    let denom: f64 = truth.iter().map(|t| t * t).sum();
    if denom <= 0.0 {
        return Err(Error::Invalid(
            "normalized error undefined for an all-zero truth field".into(),
        ));
    }
    let num: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t) * (e - t))
        .sum();
    Ok(num / denom)
}

fn read_meta_field(dir: &Path, key: &str) -> Result<String> {
    let path = dir.join("meta.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    value
        .get(key)
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Format {
            path,
            reason: format!("missing string field {key:?}"),
        })
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let t0 = Instant::now();
    let truth = TruthFiles::load(&args.truth)?;
    let sigma2_e_total = &truth.sigma_eg.diag().to_owned() + &truth.sigma2_el;
    let diag_a = truth.sigma_a.diag().to_owned();
    let diag_c = truth.sigma_c.diag().to_owned();

    let mut rows: Vec<ReplicateRow> = Vec::new();
    let mut mat_groups: BTreeMap<(String, String), Vec<Array2<f64>>> = BTreeMap::new();
    let mut field_groups: BTreeMap<(String, String), Vec<Array1<f64>>> = BTreeMap::new();
    let mut replicate_counter: BTreeMap<String, usize> = BTreeMap::new();

    for dir in &args.fits {
        let estimator = read_meta_field(dir, "estimator")?;
        let kind = read_meta_field(dir, "kind")?;
        let replicate = {
            let slot = replicate_counter.entry(estimator.clone()).or_insert(0);
            let r = *slot;
            *slot += 1;
            r
        };

        let mut push_matrix = |component: &str,
                               estimate: Array2<f64>,
                               truth_m: &Array2<f64>,
                               rows: &mut Vec<ReplicateRow>|
         -> Result<()> {
            rows.push(ReplicateRow {
                replicate,
                estimator: estimator.clone(),
                component: component.to_string(),
                ise: ise_matrix(&estimate.view(), &truth_m.view())?,
                ise_normalized: normalized_ise_matrix(&estimate.view(), &truth_m.view())?,
            });
            mat_groups
                .entry((estimator.clone(), component.to_string()))
                .or_default()
                .push(estimate);
            Ok(())
        };

        if kind == "covariances" {
            push_matrix(
                "sigma_a",
                mat1::read_matrix(&dir.join("sigma_a.mat1"))?,
                &truth.sigma_a,
                &mut rows,
            )?;
            push_matrix(
                "sigma_c",
                mat1::read_matrix(&dir.join("sigma_c.mat1"))?,
                &truth.sigma_c,
                &mut rows,
            )?;
            push_matrix(
                "sigma_eg",
                mat1::read_matrix(&dir.join("sigma_eg.mat1"))?,
                &truth.sigma_eg,
                &mut rows,
            )?;
        } else {
            // Field estimators carry the unique and measurement components
            // as one total, so the comparison target includes both.
            for (component, file, truth_f) in [
                ("sigma2_a", "sigma2_a.mat1", &diag_a),
                ("sigma2_c", "sigma2_c.mat1", &diag_c),
                ("sigma2_e_total", "sigma2_e.mat1", &sigma2_e_total),
            ] {
                let estimate = mat1::read_vector(&dir.join(file))?;
                rows.push(ReplicateRow {
                    replicate,
                    estimator: estimator.clone(),
                    component: component.to_string(),
                    ise: ise_field(&estimate.view(), &truth_f.view())?,
                    ise_normalized: normalized_ise_field(&estimate, truth_f)?,
                });
                field_groups
                    .entry((estimator.clone(), component.to_string()))
                    .or_default()
                    .push(estimate);
            }
        }

        let h2 = mat1::read_vector(&dir.join("h2.mat1"))?;
        rows.push(ReplicateRow {
            replicate,
            estimator: estimator.clone(),
            component: "h2".to_string(),
            ise: ise_field(&h2.view(), &truth.h2.view())?,
            ise_normalized: normalized_ise_field(&h2, &truth.h2)?,
        });
        field_groups
            .entry((estimator.clone(), "h2".to_string()))
            .or_default()
            .push(h2);
    }

    let mut summary: Vec<SummaryRow> = Vec::new();
    for ((estimator, component), estimates) in &mat_groups {
        let truth_m = match component.as_str() {
            "sigma_a" => &truth.sigma_a,
            "sigma_c" => &truth.sigma_c,
            _ => &truth.sigma_eg,
        };
        let bv = bias_variance_matrix(estimates, &truth_m.view())?;
        summary.push(SummaryRow {
            estimator: estimator.clone(),
            component: component.clone(),
            bias2: bv.bias2,
            variance: bv.variance,
            mise: bv.mise,
        });
    }
    for ((estimator, component), estimates) in &field_groups {
        let truth_f = match component.as_str() {
            "sigma2_a" => &diag_a,
            "sigma2_c" => &diag_c,
            "sigma2_e_total" => &sigma2_e_total,
            _ => &truth.h2,
        };
        let bv = bias_variance_field(estimates, &truth_f.view())?;
        summary.push(SummaryRow {
            estimator: estimator.clone(),
            component: component.clone(),
            bias2: bv.bias2,
            variance: bv.variance,
            mise: bv.mise,
        });
    }
    summary.sort_by(|a, b| (&a.estimator, &a.component).cmp(&(&b.estimator, &b.component)));

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_replicate_table(&args.out.join("replicates.csv"), &rows)?;
    write_summary_table(&args.out.join("summary.csv"), &summary)?;
    info!(
        "evaluated {} fit(s) -> {} ({:.3}s)",
        args.fits.len(),
        args.out.display(),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// seedmap
// ---------------------------------------------------------------------------

fn cmd_seedmap(args: SeedmapArgs) -> Result<()> {
    let m = mat1::read_matrix(&args.cov)?;
    if m.nrows() != m.ncols() {
        return Err(Error::Invalid(format!(
            "seed maps need a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if args.vertex >= m.nrows() {
        return Err(Error::Invalid(format!(
            "vertex {} out of range for a {}-vertex matrix",
            args.vertex,
            m.nrows()
        )));
    }
    let row = m.row(args.vertex);
    let values: Array1<f64> = if args.normalize {
        let dv = m[(args.vertex, args.vertex)].max(0.0);
        Array1::from_shape_fn(m.ncols(), |j| {
            let denom = (dv * m[(j, j)].max(0.0)).sqrt();
            if denom > 0.0 {
                m[(args.vertex, j)] / denom
            } else {
                0.0
            }
        })
    } else {
        row.to_owned()
    };
    twinspan::covfun::write_seed_map(&args.out, &values.view())?;
    info!(
        "seed map for vertex {}{} -> {}",
        args.vertex,
        if args.normalize { " (correlation)" } else { "" },
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// gcv-trace
// ---------------------------------------------------------------------------

fn cmd_gcv_trace(args: GcvTraceArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let cohort = load_validated_cohort(&args.cohort)?;
    let mut ctx = FitContext::new(&cohort, &config.fit);

    let mut lines: Vec<(String, f64, f64)> = Vec::new();
    {
        let smoothed = ctx.smoothed()?;
        for (row, trace) in smoothed.beta_traces.iter().enumerate() {
            for p in trace {
                lines.push((format!("beta_{row}"), p.h, p.gcv));
            }
        }
        for (label, trace) in ["sigma2_a", "sigma2_c", "sigma2_e"]
            .iter()
            .zip(&smoothed.sigma_traces)
        {
            for p in trace {
                lines.push(((*label).to_string(), p.h, p.gcv));
            }
        }
    }
    {
        let (_, _, trace) = ctx.mwle()?;
        for p in trace {
            lines.push(("mwle_cv".to_string(), p.h, p.score));
        }
    }
    {
        let noise = ctx.noise()?;
        for p in &noise.trace {
            lines.push(("noise".to_string(), p.h, p.gcv));
        }
    }
    for p in ctx.cov_gcv_trace()? {
        lines.push(("covariance".to_string(), p.h, p.gcv));
    }

    mat1::atomic_write_text(&args.out, |out| {
        writeln!(out, "stage,h,score")?;
        for (stage, h, score) in &lines {
            writeln!(out, "{stage},{h},{score}")?;
        }
        Ok(())
    })?;
    info!("bandwidth traces -> {}", args.out.display());
    Ok(())
}
