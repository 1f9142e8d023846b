//! Command-line front end. Every subcommand writes its outputs plus a
//! `manifest.json` recording inputs (with SHA-256), settings, thread count
//! and per-stage wall-clock timings.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::baseline::ms_screen;
use crate::evaluation::{
    association_precision_curve, classify_calls, detect_hotspots, load_known_pairs, overlap_with_known,
    ranking_pr_curve, save_calls, save_precision_at_k, write_calls, Hotspot, DEFAULT_HOTSPOT_FRACTION,
};
use crate::hc::{baseline_rank, hc_rank_all, hc_rank_from_beta, BaselineMethod, HcGrid, ScoreTable, StandardizeOptions, ZscoreMatrix};
use crate::lors::{
    association_list, load_associations, log_grid, lambda_null, lors_cv, lors_fit, rho_null, save_associations,
    Association, CvConfig, CvResult, LorsFit, LorsOptions,
};
use crate::marginal::{fit_all_snps, screen_lambda, MarginalOptions, DEFAULT_RANK_CAP};
use crate::matrix_io::{
    create_writer, format_value, load_annotations, open_reader, save_matrix, AnnotationTable, CoefficientMatrix,
    ExpressionMatrix, GenotypeMatrix,
};
use crate::simulate::{simulate, synthetic_genotypes, GroundTruth, SimConfig};

pub const THREADS_ENV: &str = "HC_EQTL_THREADS";
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(
    name = "hc-eqtl",
    version,
    about = "eQTL mapping: marginal screening, higher-criticism SNP ranking and sparse + low-rank joint regression",
    args_override_self = true
)]
struct Cli {
    /// Worker threads. Defaults to $HC_EQTL_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key = value` file supplying defaults for any flag of the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate expression over real or synthetic genotypes.
    Simulate(SimulateArgs),
    /// Per-SNP marginal regressions with a low-rank confounder term.
    Screen(ScreenArgs),
    /// Score SNPs from a marginal effect matrix.
    Rank(RankArgs),
    /// Joint sparse + low-rank fit on a SNP subset.
    Fit(FitArgs),
    /// Compare rankings and calls with a planted truth or known pairs.
    Evaluate(EvaluateArgs),
    /// Label calls as cis, semi_cis or trans and find hotspots.
    Classify(ClassifyArgs),
    /// screen -> rank -> fit -> evaluate.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// Genotype matrix; synthetic genotypes are generated when absent.
    #[arg(long)]
    genotypes: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    n_samples: usize,
    #[arg(long, default_value_t = 3000)]
    n_snps: usize,
    /// Number of simulated genes.
    #[arg(long, default_value_t = 100)]
    genes: usize,
    #[arg(long, default_value_t = 20)]
    n_active: usize,
    #[arg(long, default_value_t = 10)]
    genes_per_snp: usize,
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    #[arg(long, default_value_t = 10)]
    k_hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    hidden_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize, Clone)]
struct ScreenOpts {
    /// Nuclear-norm penalty; defaults to the singular value just past the rank cap.
    #[arg(long = "screen-lambda")]
    screen_lambda: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_RANK_CAP)]
    rank_cap: usize,
    #[arg(long, default_value_t = crate::marginal::DEFAULT_TOL)]
    screen_tol: f64,
    #[arg(long, default_value_t = crate::marginal::DEFAULT_MAX_ITER)]
    screen_max_iter: usize,
}

#[derive(Args, Debug, Serialize)]
struct ScreenArgs {
    #[arg(long)]
    genotypes: PathBuf,
    #[arg(long)]
    expression: PathBuf,
    #[command(flatten)]
    screen: ScreenOpts,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum RankMethod {
    Hc,
    Rowmeans,
    RowmeansAbs,
    Extremeval,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
enum GridArg {
    #[default]
    Restricted,
    Unrestricted,
}

impl From<GridArg> for HcGrid {
    fn from(g: GridArg) -> Self {
        match g {
            GridArg::Restricted => HcGrid::Restricted,
            GridArg::Unrestricted => HcGrid::Unrestricted,
        }
    }
}

#[derive(Args, Debug, Serialize, Clone)]
struct HcOpts {
    #[arg(long, value_enum, default_value_t = GridArg::Restricted)]
    hc_grid: GridArg,
    /// Do not centre genotypes when standardising effects.
    #[arg(long)]
    no_center_x: bool,
}

#[derive(Args, Debug, Serialize)]
struct RankArgs {
    #[arg(long)]
    beta_hat: PathBuf,
    #[arg(long, value_enum, default_value_t = RankMethod::Hc)]
    method: RankMethod,
    /// Needed with the genotypes to standardise effects for HC.
    #[arg(long)]
    expression: Option<PathBuf>,
    #[arg(long)]
    genotypes: Option<PathBuf>,
    #[command(flatten)]
    hc: HcOpts,
    /// Also write the standardised effects here.
    #[arg(long)]
    z_out: Option<PathBuf>,
    /// Score table path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize, Clone)]
struct JointOpts {
    /// Sparsity penalty; selected by cross-validation together with lambda when either is absent.
    #[arg(long)]
    rho: Option<f64>,
    /// Nuclear-norm penalty.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 8)]
    grid_points: usize,
    #[arg(long, default_value_t = 5)]
    cv_repeats: usize,
    #[arg(long, default_value_t = 0.25)]
    holdout: f64,
    #[arg(long, default_value_t = crate::lors::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = crate::lors::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Number of associations to report.
    #[arg(long, default_value_t = 1000)]
    top_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[arg(long)]
    genotypes: PathBuf,
    #[arg(long)]
    expression: PathBuf,
    /// SNP id list (one per line, optional `snp_id` header).
    #[arg(long, conflicts_with = "scores")]
    snps: Option<PathBuf>,
    /// Score table; the top `--n-keep` SNPs are fitted.
    #[arg(long, requires = "n_keep")]
    scores: Option<PathBuf>,
    #[arg(long)]
    n_keep: Option<usize>,
    #[command(flatten)]
    joint: JointOpts,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    /// True coefficient matrix.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Score table to evaluate as a SNP ranking.
    #[arg(long, requires = "truth")]
    scores: Option<PathBuf>,
    /// Association list to evaluate by precision at k.
    #[arg(long)]
    associations: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    top_k: usize,
    /// Known (snp_id, probe_id) pairs.
    #[arg(long, requires = "associations")]
    known: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ClassifyArgs {
    /// Association list.
    #[arg(long)]
    calls: PathBuf,
    /// Position files (id, chromosome, bp); may be repeated.
    #[arg(long, required = true)]
    annotations: Vec<PathBuf>,
    /// Number of genes analysed, for the hotspot threshold.
    #[arg(long)]
    q_total: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_HOTSPOT_FRACTION)]
    hotspot_fraction: f64,
    /// Classified calls; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, requires = "q_total")]
    hotspots_out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum ScreenMethod {
    /// Keep the `n_keep` SNPs with the largest HC scores.
    Hc,
    /// Keep the union of the per-gene top `n_keep` SNPs by |effect|.
    Ms,
}

#[derive(Args, Debug, Serialize)]
struct PipelineArgs {
    #[arg(long)]
    genotypes: PathBuf,
    #[arg(long)]
    expression: PathBuf,
    #[arg(long, default_value_t = 160)]
    n_keep: usize,
    #[arg(long, value_enum, default_value_t = ScreenMethod::Hc)]
    method: ScreenMethod,
    #[command(flatten)]
    screen: ScreenOpts,
    #[command(flatten)]
    hc: HcOpts,
    #[command(flatten)]
    joint: JointOpts,
    /// True coefficient matrix; enables the evaluation stage.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    known: Option<PathBuf>,
    #[arg(long)]
    annotations: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_HOTSPOT_FRACTION)]
    hotspot_fraction: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub threads: usize,
    pub seed: Option<u64>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    pub config: serde_json::Value,
    pub timings: Vec<StageTiming>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct Run {
    manifest: RunManifest,
}

impl Run {
    fn new(subcommand: &str, threads: usize, seed: Option<u64>, config: &impl Serialize) -> anyhow::Result<Self> {
        Ok(Self {
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                threads,
                seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
                config: serde_json::to_value(config)?,
                timings: Vec::new(),
            },
        })
    }

    fn input(&mut self, role: &str, path: &Path) -> anyhow::Result<()> {
        self.manifest.inputs.push(InputRecord {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> anyhow::Result<T>) -> anyhow::Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.manifest.timings.push(StageTiming {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    fn finish(self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Parses `key = value` lines into `--key=value` arguments. `true` turns a
/// key into a bare switch and `false` drops it.
fn config_args(path: &Path) -> anyhow::Result<Vec<OsString>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut args = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), i + 1);
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key == "config" {
            bail!("{}:{}: config files cannot include other config files", path.display(), i + 1);
        }
        match v.trim() {
            "true" => args.push(format!("--{key}").into()),
            "false" => {}
            v => args.push(format!("--{key}={v}").into()),
        }
    }
    Ok(args)
}

const SUBCOMMANDS: [&str; 7] = ["simulate", "screen", "rank", "fit", "evaluate", "classify", "pipeline"];

fn find_config(argv: &[OsString]) -> Option<PathBuf> {
    let mut found = None;
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            found = it.next().map(PathBuf::from);
        } else if let Some(v) = s.strip_prefix("--config=") {
            found = Some(PathBuf::from(v));
        }
    }
    found
}

/// Places config-derived flags right after the subcommand so that explicit
/// flags, which come later, override them.
fn expand_config(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let Some(path) = find_config(&argv) else {
        return Ok(argv);
    };
    let extra = config_args(&path)?;
    let Some(pos) = argv.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(argv);
    };
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

fn resolve_threads(flag: Option<usize>) -> anyhow::Result<usize> {
    if let Some(n) = flag {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        return Ok(n);
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().with_context(|| format!("{THREADS_ENV}={v} is not a count"))?;
        if n > 0 {
            return Ok(n);
        }
    }
    Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Entry point for the binary. Returns the process exit code: 0 on success,
/// 2 for usage errors and 1 for failures while running.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = match resolve_threads(cli.threads) {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e:#}");
            return 2;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(cli.command, threads)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(command: Command, threads: usize) -> anyhow::Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(a, threads),
        Command::Screen(a) => cmd_screen(a, threads),
        Command::Rank(a) => cmd_rank(a, threads),
        Command::Fit(a) => cmd_fit(a, threads),
        Command::Evaluate(a) => cmd_evaluate(a, threads),
        Command::Classify(a) => cmd_classify(a, threads),
        Command::Pipeline(a) => cmd_pipeline(a, threads),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn cmd_simulate(a: SimulateArgs, threads: usize) -> anyhow::Result<()> {
    create_dir(&a.out)?;
    let mut run = Run::new("simulate", threads, Some(a.seed), &a)?;
    let cfg = SimConfig {
        n_active_snps: a.n_active,
        genes_per_snp: a.genes_per_snp,
        beta: a.beta,
        k_hidden: a.k_hidden,
        hidden_scale: a.hidden_scale,
        noise_sd: a.noise_sd,
        seed: a.seed,
    };
    let x = match &a.genotypes {
        Some(p) => {
            run.input("genotypes", p)?;
            GenotypeMatrix::load(p)?
        }
        None => {
            // Genotypes use a seed stream distinct from the phenotype draws.
            let x = synthetic_genotypes(a.n_samples, a.n_snps, a.seed ^ 0x9E37_79B9_7F4A_7C15)?;
            let p = a.out.join("genotypes.tsv");
            save_matrix(&x, &p)?;
            run.output(&p);
            x
        }
    };
    let sim = run.stage("simulate", || Ok(simulate(&x, a.genes, &cfg)?))?;
    let y_path = a.out.join("expression.tsv");
    let b_path = a.out.join("b_true.tsv");
    let u_path = a.out.join("hidden.tsv");
    let t_path = a.out.join("truth.tsv");
    save_matrix(&sim.expression, &y_path)?;
    save_matrix(&sim.truth.b_true, &b_path)?;
    let hidden = ExpressionMatrix::new(sim.hidden, sim.expression.probe_ids.clone(), sim.expression.sample_ids.clone())?;
    save_matrix(&hidden, &u_path)?;
    save_truth(&sim.truth, &t_path)?;
    for p in [&y_path, &b_path, &u_path, &t_path] {
        run.output(p);
    }
    run.finish(&a.out)
}

fn save_truth(truth: &GroundTruth, path: &Path) -> anyhow::Result<()> {
    let mut out = create_writer(path)?;
    writeln!(out, "snp_id\tgenes")?;
    for id in &truth.active_snp_ids {
        writeln!(out, "{id}\t{}", truth.influenced_genes[id].join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn load_pair(genotypes: &Path, expression: &Path, run: &mut Run) -> anyhow::Result<(GenotypeMatrix, ExpressionMatrix)> {
    run.input("genotypes", genotypes)?;
    run.input("expression", expression)?;
    let x = GenotypeMatrix::load(genotypes)?;
    let y = ExpressionMatrix::load(expression)?;
    if x.sample_ids != y.sample_ids {
        bail!("genotype and expression files list different samples or orders");
    }
    Ok((x, y))
}

fn marginal_screen(
    x: &GenotypeMatrix,
    y: &ExpressionMatrix,
    o: &ScreenOpts,
) -> anyhow::Result<CoefficientMatrix> {
    let lambda = match o.screen_lambda {
        Some(l) => l,
        None => screen_lambda(&y.values, o.rank_cap)?,
    };
    let opts = MarginalOptions {
        lambda,
        tol: o.screen_tol,
        max_iter: o.screen_max_iter,
    };
    let fit = fit_all_snps(y, x, opts)?;
    let flagged = fit.degenerate.iter().filter(|d| **d).count();
    if flagged > 0 {
        eprintln!("warning: {flagged} SNPs have constant genotypes; their effects are set to 0");
    }
    let stalled = fit.converged.iter().zip(&fit.degenerate).filter(|(c, d)| !**c && !**d).count();
    if stalled > 0 {
        eprintln!("warning: {stalled} SNP fits stopped at the iteration limit");
    }
    Ok(fit.beta_hat)
}

fn cmd_screen(a: ScreenArgs, threads: usize) -> anyhow::Result<()> {
    create_dir(&a.out)?;
    let mut run = Run::new("screen", threads, None, &a)?;
    let (x, y) = load_pair(&a.genotypes, &a.expression, &mut run)?;
    let beta = run.stage("screen", || marginal_screen(&x, &y, &a.screen))?;
    let p = a.out.join("beta_hat.tsv");
    save_matrix(&beta, &p)?;
    run.output(&p);
    run.finish(&a.out)
}

fn warn_zero_variance(z: &ZscoreMatrix) {
    let n = z.zero_variance.len();
    if n > 0 {
        eprintln!("warning: {n} effects had zero residual variance and were given Z = 0");
    }
}

fn cmd_rank(a: RankArgs, threads: usize) -> anyhow::Result<()> {
    let dir = parent_dir(&a.out);
    create_dir(&dir)?;
    let mut run = Run::new("rank", threads, None, &a)?;
    run.input("beta_hat", &a.beta_hat)?;
    let beta = CoefficientMatrix::load(&a.beta_hat)?;
    let data = match (a.method, &a.expression, &a.genotypes) {
        (RankMethod::Hc, Some(yp), Some(xp)) => {
            let (x, y) = load_pair(xp, yp, &mut run)?;
            Some((x.select_snps(&beta.row_ids)?, y))
        }
        (RankMethod::Hc, None, None) => {
            eprintln!("warning: no --expression/--genotypes given; the input is scored as already standardised");
            None
        }
        (RankMethod::Hc, _, _) => bail!("--expression and --genotypes must be given together"),
        _ => None,
    };
    let grid: HcGrid = a.hc.hc_grid.into();
    let (table, z) = run.stage("rank", || {
        Ok(match a.method {
            RankMethod::Hc => match &data {
                Some((x, y)) => {
                    let opts = StandardizeOptions { center_x: !a.hc.no_center_x };
                    let (z, t) = hc_rank_from_beta(&beta, &y.values, &x.values, opts, grid)?;
                    warn_zero_variance(&z);
                    (t, Some(z))
                }
                None => {
                    let z = ZscoreMatrix {
                        values: beta.values.clone(),
                        zero_variance: Vec::new(),
                    };
                    (hc_rank_all(&z, &beta.row_ids, grid)?, None)
                }
            },
            RankMethod::Rowmeans => (baseline_rank(&beta, BaselineMethod::RowMeans)?, None),
            RankMethod::RowmeansAbs => (baseline_rank(&beta, BaselineMethod::RowMeansAbs)?, None),
            RankMethod::Extremeval => (baseline_rank(&beta, BaselineMethod::ExtremeVal)?, None),
        })
    })?;
    if let (Some(zp), Some(z)) = (&a.z_out, z) {
        let zm = CoefficientMatrix::new(z.values, beta.row_ids.clone(), beta.col_ids.clone())?;
        save_matrix(&zm, zp)?;
        run.output(zp);
    }
    table.save(&a.out)?;
    run.output(&a.out);
    run.finish(&dir)
}

/// Reads SNP ids, one per line; a leading `snp_id` header is skipped.
fn load_id_list(path: &Path) -> anyhow::Result<Vec<String>> {
    use std::io::BufRead;
    let mut ids = Vec::new();
    for (i, line) in open_reader(path)?.lines().enumerate() {
        let line = line?;
        let id = line.split('\t').next().unwrap_or("").trim();
        if id.is_empty() || (i == 0 && id == "snp_id") {
            continue;
        }
        ids.push(id.to_string());
    }
    if ids.is_empty() {
        bail!("{} lists no SNPs", path.display());
    }
    Ok(ids)
}

fn save_id_list(ids: &[String], path: &Path) -> anyhow::Result<()> {
    let mut out = create_writer(path)?;
    writeln!(out, "snp_id")?;
    for id in ids {
        writeln!(out, "{id}")?;
    }
    out.flush()?;
    Ok(())
}

fn save_cv(cv: &CvResult, path: &Path) -> anyhow::Result<()> {
    let mut out = create_writer(path)?;
    writeln!(out, "rho\tlambda\tmean_error")?;
    for e in &cv.table {
        writeln!(out, "{}\t{}\t{}", format_value(e.rho), format_value(e.lambda), format_value(e.mean_error))?;
    }
    out.flush()?;
    Ok(())
}

struct JointOutputs {
    fit: LorsFit,
    calls: Vec<Association>,
}

/// Tunes (ρ, λ) when needed, fits, and writes the fit files into `dir`.
fn joint_stage(
    x: &GenotypeMatrix,
    y: &ExpressionMatrix,
    o: &JointOpts,
    dir: &Path,
    run: &mut Run,
) -> anyhow::Result<JointOutputs> {
    let opts = LorsOptions {
        tol: o.tol,
        max_iter: o.max_iter,
    };
    let (rho, lambda) = match (o.rho, o.lambda) {
        (Some(r), Some(l)) => (r, l),
        (r, l) => {
            let cfg = CvConfig {
                rho_grid: match r {
                    Some(r) => vec![r],
                    None => log_grid(rho_null(&y.values, &x.values), o.grid_points),
                },
                lambda_grid: match l {
                    Some(l) => vec![l],
                    None => log_grid(lambda_null(&y.values)?, o.grid_points),
                },
                holdout_fraction: o.holdout,
                repeats: o.cv_repeats,
                seed: o.seed,
            };
            let cv = run.stage("cv", || Ok(lors_cv(&y.values, &x.values, &cfg, opts)?))?;
            if cv.redraws > 0 {
                eprintln!("warning: {} cross-validation splits were redrawn", cv.redraws);
            }
            let p = dir.join("cv.tsv");
            save_cv(&cv, &p)?;
            run.output(&p);
            (cv.best_rho, cv.best_lambda)
        }
    };
    let fit = run.stage("fit", || Ok(lors_fit(y, x, rho, lambda, opts)?))?;
    if !fit.converged {
        eprintln!("warning: joint fit stopped after {} iterations without converging", fit.iterations);
    }
    let b_path = dir.join("b_hat.tsv");
    let m_path = dir.join("fit_meta.tsv");
    let a_path = dir.join("associations.tsv");
    fit.save(&b_path, &m_path)?;
    let calls = association_list(&fit.b, o.top_k)?;
    save_associations(&calls, &a_path)?;
    for p in [&b_path, &m_path, &a_path] {
        run.output(p);
    }
    Ok(JointOutputs { fit, calls })
}

fn cmd_fit(a: FitArgs, threads: usize) -> anyhow::Result<()> {
    create_dir(&a.out)?;
    let mut run = Run::new("fit", threads, Some(a.joint.seed), &a)?;
    let (x, y) = load_pair(&a.genotypes, &a.expression, &mut run)?;
    let x = if let Some(p) = &a.snps {
        run.input("snps", p)?;
        x.select_snps(&load_id_list(p)?)?
    } else if let Some(p) = &a.scores {
        run.input("scores", p)?;
        let mut ids = ScoreTable::load(p)?.order();
        ids.truncate(a.n_keep.unwrap_or(ids.len()));
        x.select_snps(&ids)?
    } else {
        x
    };
    joint_stage(&x, &y, &a.joint, &a.out, &mut run)?;
    run.finish(&a.out)
}

fn evaluate_outputs(
    truth: Option<&GroundTruth>,
    ranking: Option<&[String]>,
    calls: Option<&[Association]>,
    known: Option<&Path>,
    top_k: usize,
    dir: &Path,
    run: &mut Run,
) -> anyhow::Result<()> {
    if let (Some(t), Some(order)) = (truth, ranking) {
        let p = dir.join("pr_curve.tsv");
        ranking_pr_curve(order, t)?.save(&p)?;
        run.output(&p);
    }
    if let (Some(t), Some(calls)) = (truth, calls) {
        let k = top_k.min(calls.len());
        if k < top_k {
            eprintln!("warning: only {} associations; precision reported up to k = {k}", calls.len());
        }
        let p = dir.join("precision_at_k.tsv");
        save_precision_at_k(&association_precision_curve(calls, &t.b_true, k)?, &p)?;
        run.output(&p);
    }
    if let (Some(kp), Some(calls)) = (known, calls) {
        run.input("known", kp)?;
        let overlap = overlap_with_known(calls, &load_known_pairs(kp)?);
        let p = dir.join("overlap.tsv");
        overlap.save(&p)?;
        run.output(&p);
        eprintln!("{} of {} calls are known pairs", overlap.count, calls.len());
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, threads: usize) -> anyhow::Result<()> {
    if a.truth.is_none() && a.known.is_none() {
        bail!("nothing to evaluate: give --truth and/or --known");
    }
    create_dir(&a.out)?;
    let mut run = Run::new("evaluate", threads, None, &a)?;
    let truth = match &a.truth {
        Some(p) => {
            run.input("truth", p)?;
            Some(GroundTruth::from_coefficients(CoefficientMatrix::load(p)?))
        }
        None => None,
    };
    let ranking = match &a.scores {
        Some(p) => {
            run.input("scores", p)?;
            Some(ScoreTable::load(p)?.order())
        }
        None => None,
    };
    let calls = match &a.associations {
        Some(p) => {
            run.input("associations", p)?;
            Some(load_associations(p)?)
        }
        None => None,
    };
    let start = Instant::now();
    evaluate_outputs(
        truth.as_ref(),
        ranking.as_deref(),
        calls.as_deref(),
        a.known.as_deref(),
        a.top_k,
        &a.out,
        &mut run,
    )?;
    run.manifest.timings.push(StageTiming {
        stage: "evaluate".into(),
        seconds: start.elapsed().as_secs_f64(),
    });
    run.finish(&a.out)
}

fn load_annotation_files(paths: &[PathBuf], run: &mut Run) -> anyhow::Result<AnnotationTable> {
    let mut table = AnnotationTable::default();
    for p in paths {
        run.input("annotations", p)?;
        table.merge(load_annotations(p)?, p)?;
    }
    Ok(table)
}

fn save_hotspots(hot: &[Hotspot], path: &Path) -> anyhow::Result<()> {
    let mut out = create_writer(path)?;
    writeln!(out, "snp_id\tn_genes\tgenes")?;
    for h in hot {
        writeln!(out, "{}\t{}\t{}", h.snp_id, h.genes.len(), h.genes.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_classify(a: ClassifyArgs, threads: usize) -> anyhow::Result<()> {
    let mut run = Run::new("classify", threads, None, &a)?;
    run.input("calls", &a.calls)?;
    let calls = load_associations(&a.calls)?;
    let ann = load_annotation_files(&a.annotations, &mut run)?;
    let classified = run.stage("classify", || Ok(classify_calls(&calls, &ann)))?;
    let unknown = classified
        .iter()
        .filter(|c| c.classification == crate::evaluation::Classification::Unknown)
        .count();
    if unknown > 0 {
        eprintln!("warning: {unknown} calls lack a position for the SNP or the probe");
    }
    match &a.out {
        Some(p) => {
            create_dir(&parent_dir(p))?;
            save_calls(&classified, p)?;
            run.output(p);
        }
        None => {
            let mut out = std::io::stdout().lock();
            write_calls(&mut out, &classified)?;
            out.flush()?;
        }
    }
    if let (Some(p), Some(q)) = (&a.hotspots_out, a.q_total) {
        create_dir(&parent_dir(p))?;
        save_hotspots(&detect_hotspots(&classified, q, a.hotspot_fraction)?, p)?;
        run.output(p);
    }
    match &a.out {
        Some(p) => run.finish(&parent_dir(p)),
        None => Ok(()),
    }
}

fn cmd_pipeline(a: PipelineArgs, threads: usize) -> anyhow::Result<()> {
    create_dir(&a.out)?;
    let mut run = Run::new("pipeline", threads, Some(a.joint.seed), &a)?;
    let (x, y) = load_pair(&a.genotypes, &a.expression, &mut run)?;
    if a.n_keep == 0 {
        bail!("--n-keep must be at least 1");
    }

    let beta = run.stage("screen", || marginal_screen(&x, &y, &a.screen))?;
    let b_path = a.out.join("beta_hat.tsv");
    save_matrix(&beta, &b_path)?;
    run.output(&b_path);

    let (kept, ranking) = run.stage("rank", || {
        Ok(match a.method {
            ScreenMethod::Hc => {
                let opts = StandardizeOptions { center_x: !a.hc.no_center_x };
                let (z, table) = hc_rank_from_beta(&beta, &y.values, &x.values, opts, a.hc.hc_grid.into())?;
                warn_zero_variance(&z);
                let mut kept = table.order();
                kept.truncate(a.n_keep);
                (kept, Some(table))
            }
            ScreenMethod::Ms => (ms_screen(&beta, a.n_keep)?.kept_snp_ids, None),
        })
    })?;
    if let Some(t) = &ranking {
        let p = a.out.join("scores.tsv");
        t.save(&p)?;
        run.output(&p);
    }
    let k_path = a.out.join("kept_snps.tsv");
    save_id_list(&kept, &k_path)?;
    run.output(&k_path);

    let x_kept = x.select_snps(&kept)?;
    let joint = joint_stage(&x_kept, &y, &a.joint, &a.out, &mut run)?;
    eprintln!(
        "kept {} SNPs; fit has {} non-zero effects, low-rank term of rank {}",
        kept.len(),
        joint.fit.nnz_b,
        joint.fit.rank_l
    );

    let truth = match &a.truth {
        Some(p) => {
            run.input("truth", p)?;
            Some(GroundTruth::from_coefficients(CoefficientMatrix::load(p)?))
        }
        None => None,
    };
    let order = ranking.as_ref().map(|t| t.order());
    let ann = load_annotation_files(&a.annotations, &mut run)?;
    let start = Instant::now();
    evaluate_outputs(
        truth.as_ref(),
        order.as_deref(),
        Some(&joint.calls),
        a.known.as_deref(),
        a.joint.top_k,
        &a.out,
        &mut run,
    )?;
    if !ann.is_empty() {
        let classified = classify_calls(&joint.calls, &ann);
        let p = a.out.join("calls.tsv");
        save_calls(&classified, &p)?;
        run.output(&p);
        let h = a.out.join("hotspots.tsv");
        save_hotspots(&detect_hotspots(&classified, y.n_probes(), a.hotspot_fraction)?, &h)?;
        run.output(&h);
    }
    run.manifest.timings.push(StageTiming {
        stage: "evaluate".into(),
        seconds: start.elapsed().as_secs_f64(),
    });
    run.finish(&a.out)
}
