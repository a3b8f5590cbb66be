//! Command-line front end. Every command writes into a fresh run directory
//! and returns a process exit code: 0 success, 2 usage or configuration
//! error, 3 runtime failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::Rng as _;
use serde::Serialize;

use crate::analysis::{self, AnalysisError};
use crate::envkit::{build_pool, export_scenes, SceneDescriptor};
use crate::netcore::{checkpoint, NetSpec, ParamVector};
use crate::trainer::{self, CriticMode, LogRow, TrainConfig, TrainError};
use crate::rng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const BUILD_ID: &str = concat!("dve-lab ", env!("CARGO_PKG_VERSION"), " (", env!("DVE_LAB_BUILD_ID"), ")");

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::InvalidInput(_) | AnalysisError::TooFewSamples { .. } => CliError::Usage(e.to_string()),
            AnalysisError::Train(t) => t.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<crate::netcore::NetError> for CliError {
    fn from(e: crate::netcore::NetError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<crate::envkit::EnvError> for CliError {
    fn from(e: crate::envkit::EnvError) -> Self {
        match e {
            crate::envkit::EnvError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "dve-lab", version = BUILD_ID, about = "Multi-scene RL experiments with dynamic value estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one configuration.
    Train(TrainArgs),
    /// Train every mode over several seeds and tabulate final scores.
    Bench(BenchArgs),
    /// Oracles and statistics.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Inspect or export the scene pool.
    #[command(subcommand)]
    Env(EnvCmd),
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set n_b=1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub mode: Option<CriticMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory; defaults to `$DVE_LAB_OUT/train-<mode>-s<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print a progress line every this many updates (0 disables).
    #[arg(long, default_value_t = 50)]
    pub progress: usize,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub progress: usize,
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCmd {
    /// Exact per-state values of a policy on the configured pool.
    Values(ValuesArgs),
    /// Fit mixtures over a range of component counts.
    Gmm(GmmArgs),
    /// AIC curve and the selected component count.
    Aic(GmmArgs),
    /// Variance decomposition on the enumerable toy pool.
    Varstudy(ToyArgs),
    /// Baseline invariance and minimality checks on the enumerable toy pool.
    LemmaCheck(ToyArgs),
    /// Per-state attention cluster assignments of a dynamic-head snapshot.
    Clusters(ClustersArgs),
}

#[derive(Args, Debug)]
pub struct ValuesArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Checkpoint whose policy is evaluated; required for `--policy net`.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value = "net", value_parser = ["net", "uniform", "always-right"])]
    pub policy: String,
    /// Restrict to these scene ids. Repeatable.
    #[arg(long)]
    pub scene: Vec<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GmmArgs {
    /// CSV of samples; the `value` column is used, or the first column.
    #[arg(long, conflicts_with = "synthetic")]
    pub samples: Option<PathBuf>,
    /// Draw a well-separated synthetic mixture with this many modes.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub cmin: usize,
    #[arg(long, default_value_t = 8)]
    pub cmax: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ToyArgs {
    #[arg(long, default_value_t = analysis::STOCK_TOY_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    /// Random baselines (lemma-check) or perturbation directions.
    #[arg(long, default_value_t = 20)]
    pub n_baselines: usize,
    /// Constant offset of the shifted predictor (varstudy).
    #[arg(long, default_value_t = 0.5)]
    pub offset: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ClustersArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = analysis::DELTA_AMBIGUOUS)]
    pub delta_ambiguous: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum EnvCmd {
    /// Print one scene as text.
    Show {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        scene: usize,
    },
    /// Write every scene of the pool as JSON.
    Export {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Env(a) => cmd_env(a),
    }
}

pub fn out_root() -> PathBuf {
    std::env::var_os("DVE_LAB_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Creates a run directory, refusing to reuse a non-empty one.
fn fresh_dir(out: Option<PathBuf>, default_name: &str) -> CliResult<PathBuf> {
    let dir = out.unwrap_or_else(|| out_root().join(default_name));
    if dir.exists() && std::fs::read_dir(&dir).map_err(|e| io_err(&dir, e))?.next().is_some() {
        return Err(CliError::Usage(format!("refusing to write into non-empty directory {}", dir.display())));
    }
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_atomic(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    let tmp = path.with_extension("tmp");
    write(&tmp, contents)?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, v: &impl Serialize) -> CliResult {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))?;
    s.push('\n');
    write(path, s)
}

pub fn load_config(args: &ConfigArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            TrainConfig::from_text(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    for kv in &args.sets {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub build_id: String,
    pub seed: u64,
    pub status: String,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub config: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    fn start(dir: &Path, command: &str, cfg: &TrainConfig) -> CliResult<Self> {
        let m = RunManifest {
            run_id: dir.file_name().map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned()),
            command: command.into(),
            build_id: BUILD_ID.into(),
            seed: cfg.seed,
            status: "running".into(),
            started_at: unix_now(),
            finished_at: None,
            config: config_map(cfg),
            artifacts: vec![],
        };
        m.save(dir)?;
        Ok(m)
    }

    fn save(&self, dir: &Path) -> CliResult {
        let s = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
        write_atomic(&dir.join("manifest.json"), s)
    }

    fn finish(mut self, dir: &Path, status: &str, artifacts: Vec<String>) -> CliResult {
        self.status = status.into();
        self.finished_at = Some(unix_now());
        self.artifacts = artifacts;
        self.save(dir)
    }
}

fn config_map(cfg: &TrainConfig) -> BTreeMap<String, String> {
    cfg.to_text()
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
        .collect()
}

fn progress_printer(label: String, every: usize) -> impl FnMut(&LogRow) {
    move |r: &LogRow| {
        if every > 0 && r.update % every == 0 {
            eprintln!(
                "[{label}] update {:>5} steps {:>8} reward {:>8.3} len {:>6.1} delta {:.3}",
                r.update, r.env_steps, r.mean_reward, r.mean_ep_len, r.mean_delta
            );
        }
    }
}

/// Trains one configuration into `dir`: manifest, log, checkpoint and the
/// resolved config.
fn train_into(dir: &Path, cfg: &TrainConfig, pool: &[SceneDescriptor], progress: usize) -> CliResult<Vec<LogRow>> {
    let manifest = RunManifest::start(dir, "train", cfg)?;
    write(&dir.join("config.resolved"), cfg.to_text())?;
    let mut show = progress_printer(format!("{} s{}", cfg.critic_mode.name(), cfg.seed), progress);
    let report = match trainer::train_with(cfg, pool, None, &mut show) {
        Ok(r) => r,
        Err(e) => {
            if let TrainError::NonFiniteLoss { .. } = e {
                let _ = std::fs::write(dir.join("failure.txt"), format!("{e}\n"));
            }
            manifest.finish(dir, "failed", vec!["config.resolved".into()])?;
            return Err(e.into());
        }
    };
    let n_b = report.spec.critic.n_b();
    write(&dir.join("train_log.csv"), trainer::log_csv(&report.rows, n_b))?;
    checkpoint::save(&dir.join("final.ckpt"), &report.spec, &report.params)?;
    let artifacts = ["config.resolved", "train_log.csv", "final.ckpt", "final.ckpt.json"];
    manifest.finish(dir, "ok", artifacts.iter().map(|s| s.to_string()).collect())?;
    Ok(report.rows)
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let mut cfg = load_config(&a.cfg)?;
    if let Some(m) = a.mode {
        cfg.critic_mode = m;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let pool = build_pool(&cfg.env)?;
    let dir = fresh_dir(a.out, &format!("train-{}-s{}", cfg.critic_mode.name(), cfg.seed))?;
    let rows = train_into(&dir, &cfg, &pool, a.progress)?;
    let last = rows.last().expect("at least one update");
    println!("{}: {} updates, {} env steps, final mean reward {:.4}", dir.display(), rows.len(), last.env_steps, last.mean_reward);
    Ok(())
}

/// Final-window scores of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunScore {
    pub reward: f64,
    pub nav_efficiency: f64,
    pub ep_len: f64,
}

pub fn run_score(rows: &[LogRow], window: usize) -> CliResult<RunScore> {
    let tail = &rows[rows.len().saturating_sub(window.max(1))..];
    let n = tail.len() as f64;
    Ok(RunScore {
        reward: tail.iter().map(|r| r.mean_reward).sum::<f64>() / n,
        nav_efficiency: analysis::navigation_efficiency(tail)?,
        ep_len: tail.iter().map(|r| r.mean_ep_len).sum::<f64>() / n,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    (m, (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn cmd_bench(a: BenchArgs) -> CliResult {
    let cfg = load_config(&a.cfg)?;
    cfg.validate()?;
    if cfg.suite.trim().is_empty() {
        return Err(CliError::Usage("bench needs a named suite (key `suite`)".into()));
    }
    if cfg.bench_seeds == 0 || cfg.bench_modes.is_empty() {
        return Err(CliError::Usage("bench needs at least one seed and one mode".into()));
    }
    let pool = build_pool(&cfg.env)?;
    let dir = fresh_dir(a.out, &format!("bench-{}", cfg.suite))?;
    let manifest = RunManifest::start(&dir, "bench", &cfg)?;
    write(&dir.join("config.resolved"), cfg.to_text())?;
    let mut runs_csv = String::from("mode,seed,final_reward,final_nav_efficiency,final_ep_len\r\n");
    let mut per_mode: Vec<(CriticMode, Vec<RunScore>)> = Vec::new();
    let mut artifacts = vec!["config.resolved".to_string()];
    for &mode in &cfg.bench_modes {
        let mut scores = Vec::new();
        for seed in 0..cfg.bench_seeds as u64 {
            let run_cfg = TrainConfig { critic_mode: mode, seed, ..cfg.clone() };
            let name = format!("{}-s{seed}", mode.name());
            let run_dir = dir.join(&name);
            std::fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;
            let rows = train_into(&run_dir, &run_cfg, &pool, a.progress)?;
            let s = run_score(&rows, cfg.final_window)?;
            let _ = write!(
                runs_csv,
                "{},{seed},{},{},{}\r\n",
                mode.name(),
                fmt_f64(s.reward),
                fmt_f64(s.nav_efficiency),
                fmt_f64(s.ep_len)
            );
            artifacts.push(format!("{name}/train_log.csv"));
            scores.push(s);
        }
        per_mode.push((mode, scores));
    }
    let mut table = String::from(
        "suite,mode,n_seeds,reward_mean,reward_std,nav_efficiency_mean,nav_efficiency_std,ep_len_mean\r\n",
    );
    let mut text = format!(
        "{:<12} {:>6} {:>20} {:>24} {:>10}\n",
        "mode", "seeds", "reward", "nav_efficiency", "ep_len"
    );
    for (mode, scores) in &per_mode {
        let (rm, rs) = mean_std(&scores.iter().map(|s| s.reward).collect::<Vec<_>>());
        let (em, es) = mean_std(&scores.iter().map(|s| s.nav_efficiency).collect::<Vec<_>>());
        let (lm, _) = mean_std(&scores.iter().map(|s| s.ep_len).collect::<Vec<_>>());
        let _ = write!(
            table,
            "{},{},{},{},{},{},{},{}\r\n",
            cfg.suite,
            mode.name(),
            scores.len(),
            fmt_f64(rm),
            fmt_f64(rs),
            fmt_f64(em),
            fmt_f64(es),
            fmt_f64(lm)
        );
        let _ = writeln!(
            text,
            "{:<12} {:>6} {:>20} {:>24} {:>10.2}",
            mode.name(),
            scores.len(),
            format!("{rm:.3} ± {rs:.3}"),
            format!("{:.3} ± {:.3} e-2", em * 100.0, es * 100.0),
            lm
        );
    }
    write(&dir.join("runs.csv"), runs_csv)?;
    write(&dir.join("table.csv"), table)?;
    write(&dir.join("table.txt"), &text)?;
    artifacts.extend(["runs.csv", "table.csv", "table.txt"].map(String::from));
    manifest.finish(&dir, "ok", artifacts)?;
    print!("{text}");
    Ok(())
}

fn load_ckpt(path: &Path) -> CliResult<(NetSpec, ParamVector)> {
    if !path.exists() {
        return Err(CliError::Usage(format!("checkpoint {} not found", path.display())));
    }
    Ok(checkpoint::load(path)?)
}

/// Reads the `value` column (or the first column) of a CSV file.
pub fn read_samples(path: &Path) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| CliError::Usage(format!("{} is empty", path.display())))?;
    let col = header.split(',').position(|h| h.trim() == "value").unwrap_or(0);
    lines
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .nth(col)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| CliError::Usage(format!("{}: bad value on data row {}", path.display(), i + 1)))
        })
        .collect()
}

/// Means spaced 8 apart with unit spread and equal weights.
pub fn synthetic_samples(modes: usize, n: usize, seed: u64) -> Vec<f64> {
    let means: Vec<f64> = (0..modes).map(|i| 8.0 * i as f64).collect();
    analysis::sample_mixture(&vec![1.0; modes], &means, &vec![1.0; modes], n, seed)
}

fn gmm_inputs(a: &GmmArgs) -> CliResult<Vec<f64>> {
    match (&a.samples, a.synthetic) {
        (Some(p), _) => read_samples(p),
        (None, Some(m)) if m >= 1 => Ok(synthetic_samples(m, a.n, a.seed)),
        _ => Err(CliError::Usage("give --samples <csv> or --synthetic <modes>".into())),
    }
}

fn aic_curve_csv(curve: &[analysis::AicPoint]) -> String {
    let mut s = String::from("c,aic,aic_per_sample,log_likelihood\r\n");
    for p in curve {
        let _ = write!(s, "{},{},{},{}\r\n", p.c, fmt_f64(p.aic), fmt_f64(p.aic_per_sample), fmt_f64(p.log_likelihood));
    }
    s
}

fn samples_csv(xs: &[f64]) -> String {
    let mut s = String::from("value\r\n");
    for x in xs {
        s.push_str(&fmt_f64(*x));
        s.push_str("\r\n");
    }
    s
}

fn cmd_analyze(cmd: AnalyzeCmd) -> CliResult {
    match cmd {
        AnalyzeCmd::Values(a) => analyze_values(a),
        AnalyzeCmd::Gmm(a) => analyze_gmm(a, false),
        AnalyzeCmd::Aic(a) => analyze_gmm(a, true),
        AnalyzeCmd::Varstudy(a) => analyze_varstudy(a),
        AnalyzeCmd::LemmaCheck(a) => analyze_lemma(a),
        AnalyzeCmd::Clusters(a) => analyze_clusters(a),
    }
}

fn analyze_values(a: ValuesArgs) -> CliResult {
    let cfg = load_config(&a.cfg)?;
    let pool = build_pool(&cfg.env)?;
    let net = match (&a.ckpt, a.policy.as_str()) {
        (Some(p), "net") => Some(load_ckpt(p)?),
        (None, "net") => return Err(CliError::Usage("--policy net needs --ckpt".into())),
        _ => None,
    };
    let scenes: Vec<&SceneDescriptor> = if a.scene.is_empty() {
        pool.iter().collect()
    } else {
        a.scene
            .iter()
            .map(|&i| pool.get(i).ok_or_else(|| CliError::Usage(format!("scene {i} not in pool of {}", pool.len()))))
            .collect::<CliResult<_>>()?
    };
    let dir = fresh_dir(a.out, &format!("values-{}", a.policy))?;
    let mut csv = String::from("scene_id,family,x,y,claimed,t,value\r\n");
    let mut starts = Vec::new();
    let mut worst: f64 = 0.0;
    for s in scenes {
        let v = match (&net, a.policy.as_str()) {
            (Some((spec, params)), _) => analysis::exact_state_values(s, &analysis::NetPolicy { params, spec }, cfg.gamma)?,
            (None, "uniform") => analysis::exact_state_values(s, &analysis::UniformPolicy, cfg.gamma)?,
            _ => analysis::exact_state_values(s, &analysis::AlwaysRight, cfg.gamma)?,
        };
        worst = worst.max(v.bellman_residual());
        starts.push((s.scene_id, v.start_value()));
        for (k, val) in v.graph.keys.iter().zip(&v.values) {
            let _ = write!(csv, "{},{},{},{},{},{},{}\r\n", s.scene_id, s.family.name(), k.x, k.y, k.claimed, k.t, fmt_f64(*val));
        }
    }
    write(&dir.join("values.csv"), csv)?;
    let summary = serde_json::json!({
        "policy": a.policy,
        "gamma": cfg.gamma,
        "scenes": starts.len(),
        "max_bellman_residual": worst,
        "start_values": starts.iter().map(|(i, v)| serde_json::json!({"scene_id": i, "value": v})).collect::<Vec<_>>(),
    });
    write_json(&dir.join("summary.json"), &summary)?;
    println!("{}: {} scenes, max Bellman residual {worst:.3e}", dir.display(), starts.len());
    Ok(())
}

fn analyze_gmm(a: GmmArgs, select: bool) -> CliResult {
    let xs = gmm_inputs(&a)?;
    let name = if select { "aic" } else { "gmm" };
    let dir = fresh_dir(a.out.clone(), &format!("{name}-s{}", a.seed))?;
    if a.synthetic.is_some() {
        write(&dir.join("samples.csv"), samples_csv(&xs))?;
    }
    let (c_star, curve) = analysis::select_clusters(&xs, a.cmin, a.cmax, a.seed)?;
    write(&dir.join("aic_curve.csv"), aic_curve_csv(&curve))?;
    if select {
        write_json(&dir.join("summary.json"), &serde_json::json!({ "c_star": c_star, "n_samples": xs.len(), "curve": curve }))?;
        println!("{}: C* = {c_star}", dir.display());
    } else {
        let models = (a.cmin..=a.cmax).map(|c| analysis::fit_gmm(&xs, c, a.seed)).collect::<Result<Vec<_>, _>>()?;
        write_json(&dir.join("models.json"), &models)?;
        let mut csv = String::from("c,component,weight,mean,variance\r\n");
        for m in &models {
            for k in 0..m.n_components() {
                let _ = write!(
                    csv,
                    "{},{k},{},{},{}\r\n",
                    m.n_components(),
                    fmt_f64(m.weights[k]),
                    fmt_f64(m.means[k]),
                    fmt_f64(m.variances[k])
                );
            }
        }
        write(&dir.join("components.csv"), csv)?;
        println!("{}: fitted C = {}..={}, AIC minimum at C = {c_star}", dir.display(), a.cmin, a.cmax);
    }
    Ok(())
}

fn toy_setup(a: &ToyArgs) -> CliResult<(analysis::EnumTree, NetSpec, ParamVector, analysis::TreeEval)> {
    let tree = analysis::EnumTree::build(&analysis::stock_toy_scenes(), analysis::ENUMERATION_BUDGET)?;
    let (spec, params) = analysis::toy_policy(a.seed);
    let eval = analysis::TreeEval::from_net(&tree, &params, &spec, a.gamma)?;
    Ok((tree, spec, params, eval))
}

fn analyze_varstudy(a: ToyArgs) -> CliResult {
    let (tree, spec, params, eval) = toy_setup(&a)?;
    let dir = fresh_dir(a.out.clone(), &format!("varstudy-s{}", a.seed))?;
    let samples = analysis::tree_samples(&tree, &eval, &params, &spec)?;
    let oracle = analysis::tree_oracle(&eval);
    let generic = eval.scene_generic_values(&tree);
    let c = a.offset;
    let reports = [
        ("oracle", analysis::variance_decomposition(&samples, |k| oracle[k], &oracle)?),
        ("oracle_plus_offset", analysis::variance_decomposition(&samples, |k| oracle[k] + c, &oracle)?),
        ("scene_generic", analysis::variance_decomposition(&samples, |k| generic[*k], &oracle)?),
        ("zero", analysis::variance_decomposition(&samples, |_| 0.0, &oracle)?),
    ];
    let mut csv = String::from("predictor,total_variance,minimal_variance,prediction_error,cross_term,direct_total,kappa\r\n");
    for (name, r) in &reports {
        let _ = write!(
            csv,
            "{name},{},{},{},{},{},{}\r\n",
            fmt_f64(r.total_variance),
            fmt_f64(r.minimal_variance),
            fmt_f64(r.prediction_error),
            fmt_f64(r.cross_term),
            fmt_f64(r.direct_total),
            fmt_f64(r.score_sq_mean)
        );
        println!(
            "{name:<20} total {:>12.6} minimal {:>12.6} prediction {:>12.6} cross {:>10.2e}",
            r.total_variance, r.minimal_variance, r.prediction_error, r.cross_term
        );
    }
    write(&dir.join("varstudy.csv"), csv)?;
    let summary = serde_json::json!({
        "seed": a.seed,
        "gamma": a.gamma,
        "offset": c,
        "nodes": tree.nodes.len(),
        "trajectories": tree.n_trajectories,
        "reports": reports.iter().map(|(n, r)| serde_json::json!({"predictor": n, "report": r})).collect::<Vec<_>>(),
    });
    write_json(&dir.join("summary.json"), &summary)
}

/// Result of the enumeration checks on the toy pool.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaSummary {
    pub seed: u64,
    pub trajectories: usize,
    pub lemma1_max_deviation: f64,
    pub lemma1_gradient_norm: f64,
    pub lemma2_at_oracle: f64,
    pub lemma2_min_margin: f64,
    pub lemma2_scene_generic: f64,
    pub passed: bool,
}

pub const LEMMA1_TOL: f64 = 1e-10;
pub const LEMMA2_MARGIN: f64 = 1e-6;

pub fn lemma_check(seed: u64, gamma: f64, n_baselines: usize) -> Result<(LemmaSummary, Vec<f64>, analysis::BaselineScan), AnalysisError> {
    let tree = analysis::EnumTree::build(&analysis::stock_toy_scenes(), analysis::ENUMERATION_BUDGET)?;
    let (spec, params) = analysis::toy_policy(seed);
    let eval = analysis::TreeEval::from_net(&tree, &params, &spec, gamma)?;
    let zeros = vec![0.0; tree.nodes.len()];
    let g0 = analysis::policy_gradient_enumerate(&tree, &eval, &params, &spec, &zeros)?;
    let mut devs = Vec::with_capacity(n_baselines);
    for b in 0..n_baselines {
        let mut r = rng::stream(seed, &format!("lemma1/baseline{b}"));
        let f: Vec<f64> = (0..tree.nodes.len()).map(|_| r.gen_range(-10.0..10.0)).collect();
        let g = analysis::policy_gradient_enumerate(&tree, &eval, &params, &spec, &f)?;
        devs.push(g0.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let scan = analysis::baseline_variance_scan(&tree, &eval, &[0.1, -0.1, 0.01, -0.01], n_baselines, seed);
    let max_dev = devs.iter().copied().fold(0.0, f64::max);
    let summary = LemmaSummary {
        seed,
        trajectories: tree.n_trajectories,
        lemma1_max_deviation: max_dev,
        lemma1_gradient_norm: g0.iter().map(|x| x * x).sum::<f64>().sqrt(),
        lemma2_at_oracle: scan.at_oracle,
        lemma2_min_margin: scan.min_margin(),
        lemma2_scene_generic: scan.scene_generic,
        passed: max_dev < LEMMA1_TOL && scan.min_margin() > LEMMA2_MARGIN,
    };
    Ok((summary, devs, scan))
}

fn analyze_lemma(a: ToyArgs) -> CliResult {
    let (summary, devs, scan) = lemma_check(a.seed, a.gamma, a.n_baselines)?;
    let dir = fresh_dir(a.out.clone(), &format!("lemma-s{}", a.seed))?;
    let mut csv = String::from("baseline,max_abs_deviation\r\n");
    for (i, d) in devs.iter().enumerate() {
        let _ = write!(csv, "{i},{}\r\n", fmt_f64(*d));
    }
    write(&dir.join("lemma1.csv"), csv)?;
    let mut csv = String::from("eta,direction,sq_error\r\n");
    for (eta, d, v) in &scan.perturbed {
        let _ = write!(csv, "{},{d},{}\r\n", fmt_f64(*eta), fmt_f64(*v));
    }
    write(&dir.join("lemma2.csv"), csv)?;
    write_json(&dir.join("summary.json"), &summary)?;
    println!("lemma1 max deviation: {:.3e} (gradient norm {:.3e})", summary.lemma1_max_deviation, summary.lemma1_gradient_norm);
    println!(
        "lemma2 E[(Q-V)^2] = {:.6}, min margin {:.3e}, scene-generic {:.6}",
        summary.lemma2_at_oracle, summary.lemma2_min_margin, summary.lemma2_scene_generic
    );
    if summary.passed {
        Ok(())
    } else {
        Err(CliError::Runtime("enumeration checks failed".into()))
    }
}

fn analyze_clusters(a: ClustersArgs) -> CliResult {
    let cfg = load_config(&a.cfg)?;
    let pool = build_pool(&cfg.env)?;
    let (spec, params) = load_ckpt(&a.ckpt)?;
    let rows = analysis::export_cluster_assignments(&params, &spec, &pool, a.episodes, a.delta_ambiguous, a.seed)?;
    let dir = fresh_dir(a.out, &format!("clusters-s{}", a.seed))?;
    write(&dir.join("clusters.csv"), analysis::cluster_csv(&rows))?;
    let n_b = spec.critic.n_b();
    let majority: BTreeMap<String, usize> =
        analysis::family_majority(&rows, n_b).into_iter().map(|(f, c)| (f.name().to_string(), c)).collect();
    let summary = serde_json::json!({
        "rows": rows.len(),
        "shares": analysis::cluster_shares(&rows, n_b),
        "ambiguous_fraction": rows.iter().filter(|r| r.ambiguous).count() as f64 / rows.len().max(1) as f64,
        "family_majority": majority,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    println!("{}: {} rows", dir.display(), rows.len());
    Ok(())
}

fn cmd_env(cmd: EnvCmd) -> CliResult {
    match cmd {
        EnvCmd::Show { cfg, scene } => {
            let cfg = load_config(&cfg)?;
            let pool = build_pool(&cfg.env)?;
            let s = pool.get(scene).ok_or_else(|| CliError::Usage(format!("scene {scene} not in pool of {}", pool.len())))?;
            println!("scene {} ({}) seed {}", s.scene_id, s.family.name(), s.seed);
            print!("{}", s.ascii());
            Ok(())
        }
        EnvCmd::Export { cfg, out } => {
            let cfg = load_config(&cfg)?;
            let pool = build_pool(&cfg.env)?;
            let dir = fresh_dir(out, "scenes")?;
            export_scenes(&dir, &pool)?;
            println!("{}: {} scenes", dir.display(), pool.len());
            Ok(())
        }
    }
}
