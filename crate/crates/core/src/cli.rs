//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 input data error, 3 infeasible
//! constraint, 4 endpoint failure without fallback.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::allocator::{allocate, AllocationRequest};
use crate::baselines::run_baselines;
use crate::dsl::{compute_layer_stats, evaluate, load_stats, parse, LayerStats};
use crate::error::{Error, Result};
use crate::evolve::{run, GeneratorMode, LogRecord, RunConfig, RunResult};
use crate::fitness::{EvaluatedCandidate, FitnessConfig, FitnessContext, ScoreOutcome};
use crate::fixtures::{resolve_dataset, resolve_model};
use crate::quantsim::{
    calibrate_activation_ranges, compression_ratio, cost, quantized_accuracy, BitAssignment, BitMenus,
};
use crate::smallnet::{decode, read, LayerClass, LayerMeta};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_ENDPOINT: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "mpq-proxy",
    version,
    about = "Search and evaluate layer-sensitivity proxies for mixed-precision quantization"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory for `discover` output and `report` input.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Suppress progress and decoration in text output.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Evaluation worker threads (default: logical CPU count).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    /// One JSON record per line.
    Machine,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the proxy search described by a config file.
    Discover(DiscoverArgs),
    /// Print per-layer proxy scores.
    Score(ScoreArgs),
    /// Allocate per-layer bit-widths from scores.
    Allocate(AllocateArgs),
    /// Evaluate a model under a bit assignment.
    Quantize(QuantizeArgs),
    /// Evaluate one proxy expression end to end.
    EvalProxy(EvalProxyArgs),
    /// Compare the built-in and trivial proxies.
    Baselines(BaselinesArgs),
    /// Summarize a run directory.
    Report,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
pub struct ModeFlags {
    /// Use the offline generator.
    #[arg(long)]
    pub offline: bool,
    /// Use the configured LLM endpoint, failing if it is unavailable.
    #[arg(long)]
    pub llm: bool,
    /// Use the LLM endpoint, falling back to offline generation.
    #[arg(long)]
    pub llm_with_fallback: bool,
}

impl ModeFlags {
    fn mode(&self) -> Option<GeneratorMode> {
        if self.offline {
            Some(GeneratorMode::Offline)
        } else if self.llm {
            Some(GeneratorMode::Llm)
        } else if self.llm_with_fallback {
            Some(GeneratorMode::LlmWithFallback)
        } else {
            None
        }
    }
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub mode: ModeFlags,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub population: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Model file or bundled fixture name (`fixture`, `fixture-mlp`).
    #[arg(long)]
    pub model: String,
    /// Calibration set file or bundled name (`fixture16`).
    #[arg(long)]
    pub calib: String,
    /// Evaluation set; defaults to the calibration set.
    #[arg(long)]
    pub data: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitnessArgs {
    #[arg(long, default_value_t = 0.8)]
    pub target_compression: f64,
    #[arg(long, default_value_t = crate::fitness::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = crate::fitness::DEFAULT_PROBE_BITS)]
    pub probe_bits: u32,
    #[arg(long, default_value_t = 8)]
    pub activation_bits: u32,
}

impl FitnessArgs {
    fn config(&self) -> FitnessConfig {
        FitnessConfig {
            target_compression: self.target_compression,
            alpha: self.alpha,
            probe_bits: self.probe_bits,
            activation_bits: self.activation_bits,
            menus: BitMenus::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Proxy expression.
    #[arg(long)]
    pub proxy: String,
    #[arg(
        long,
        required_unless_present = "stats",
        conflicts_with = "stats",
        requires = "calib"
    )]
    pub model: Option<String>,
    #[arg(long)]
    pub calib: Option<String>,
    /// Per-layer statistics file, instead of a model.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    /// JSON file of `{"layers": [{"layer_class", "param_count", "score"}]}`.
    #[arg(long, required_unless_present = "stats", conflicts_with = "stats")]
    pub scores: Option<PathBuf>,
    #[arg(long, requires = "proxy")]
    pub stats: Option<PathBuf>,
    #[arg(long, requires = "stats")]
    pub proxy: Option<String>,
    #[arg(long)]
    pub target_compression: f64,
    #[arg(long, default_value_t = 8)]
    pub activation_bits: u32,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: String,
    /// Assignment file, or a single bit-width applied to every layer.
    #[arg(long)]
    pub bits: String,
    #[arg(long)]
    pub data: String,
    /// Calibration set for activation ranges; defaults to `--data`.
    #[arg(long)]
    pub calib: Option<String>,
    /// Activation bits when `--bits` is a single number.
    #[arg(long, default_value_t = 8)]
    pub activation_bits: u32,
}

#[derive(Debug, Args)]
pub struct EvalProxyArgs {
    #[arg(long)]
    pub proxy: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fitness: FitnessArgs,
}

#[derive(Debug, Args)]
pub struct BaselinesArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fitness: FitnessArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoresFile {
    pub layers: Vec<ScoredLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredLayer {
    pub layer_class: LayerClass,
    pub param_count: usize,
    pub score: f64,
    #[serde(default)]
    pub mac_count: usize,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible { .. } => EXIT_INFEASIBLE,
        Error::Endpoint(_) => EXIT_ENDPOINT,
        _ => EXIT_DATA,
    }
}

struct Out<'a> {
    format: Format,
    quiet: bool,
    w: &'a mut dyn Write,
}

impl Out<'_> {
    fn text(&mut self, line: impl AsRef<str>) -> Result<()> {
        if self.format == Format::Text {
            writeln!(self.w, "{}", line.as_ref()).map_err(|e| Error::io("<stdout>", e))?;
        }
        Ok(())
    }

    fn note(&mut self, line: impl AsRef<str>) -> Result<()> {
        if self.quiet {
            return Ok(());
        }
        self.text(line)
    }

    fn record(&mut self, value: serde_json::Value) -> Result<()> {
        if self.format == Format::Machine {
            writeln!(self.w, "{value}").map_err(|e| Error::io("<stdout>", e))?;
        }
        Ok(())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    let mut o = Out {
        format: cli.global.format,
        quiet: cli.global.quiet,
        w: out,
    };
    match dispatch(&cli, &mut o) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli, o: &mut Out<'_>) -> Result<()> {
    match &cli.command {
        Command::Discover(a) => cmd_discover(&cli.global, a, o),
        Command::Score(a) => cmd_score(a, o),
        Command::Allocate(a) => cmd_allocate(a, o),
        Command::Quantize(a) => cmd_quantize(a, o),
        Command::EvalProxy(a) => cmd_eval_proxy(a, o),
        Command::Baselines(a) => cmd_baselines(&cli.global, a, o),
        Command::Report => cmd_report(&cli.global, o),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn fmt_phi(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "-inf".into()
    }
}

fn phi_json(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!("-inf")
    }
}

fn fmt_bits(a: &BitAssignment) -> String {
    let layers: Vec<String> = a
        .weight_bits
        .iter()
        .enumerate()
        .map(|(i, b)| format!("L{}={b}", i + 1))
        .collect();
    format!("{} (activations {})", layers.join(" "), a.activation_bits)
}

fn candidate_json(e: &EvaluatedCandidate) -> serde_json::Value {
    json!({
        "id": e.candidate.id,
        "expr": e.candidate.expr,
        "origin": e.candidate.origin,
        "rho_sens": e.rho_sens,
        "acc_quant": e.acc_quant,
        "phi": phi_json(e.phi),
        "violation": e.violation,
    })
}

fn cmd_discover(global: &GlobalArgs, a: &DiscoverArgs, o: &mut Out<'_>) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &global.run_dir {
        cfg.run_dir = Some(dir.clone());
    }
    if let Some(jobs) = global.jobs {
        cfg.jobs = Some(jobs);
    }
    if let Some(mode) = a.mode.mode() {
        cfg.mode = mode;
    }
    if let Some(g) = a.generations {
        cfg.generations = g;
    }
    if let Some(n) = a.population {
        cfg.population_size = n;
    }
    o.note(format!(
        "searching: {} generations, population {}, seed {}",
        cfg.generations, cfg.population_size, cfg.seed
    ))?;
    let result = run(&cfg)?;
    print_result(&result, o)?;
    if let Some(dir) = &cfg.run_dir {
        o.note(format!("run directory: {}", dir.display()))?;
    }
    Ok(())
}

fn print_result(r: &RunResult, o: &mut Out<'_>) -> Result<()> {
    let b = &r.best;
    o.text(format!("best {}  {}", b.candidate.id, b.candidate.expr))?;
    o.text(format!(
        "  rho_sens {}  acc_quant {}  phi {}",
        fmt_opt(b.rho_sens),
        fmt_opt(b.acc_quant),
        fmt_phi(b.phi)
    ))?;
    if let Some(assignment) = &b.assignment {
        o.text(format!("  bits {}", fmt_bits(assignment)))?;
    }
    let series: Vec<String> = r.best_phi_series.iter().map(|v| fmt_phi(*v)).collect();
    o.text(format!("best phi by generation: {}", series.join(" ")))?;
    if !r.fallback_generations.is_empty() {
        o.text(format!("offline fallback in generations {:?}", r.fallback_generations))?;
    }
    let mut best = candidate_json(b);
    best["record"] = json!("best");
    o.record(best)?;
    o.record(json!({"record": "assignment", "assignment": b.assignment}))?;
    o.record(json!({
        "record": "series",
        "best_phi": r.best_phi_series.iter().map(|v| phi_json(*v)).collect::<Vec<_>>(),
        "fallback_generations": r.fallback_generations,
        "candidates_evaluated": r.candidates_evaluated,
    }))
}

fn stats_for(a: &ScoreArgs) -> Result<Vec<LayerStats>> {
    match (&a.stats, &a.model, &a.calib) {
        (Some(path), _, _) => Ok(load_stats(path)?.layers),
        (None, Some(model), Some(calib)) => compute_layer_stats(&resolve_model(model)?, &resolve_dataset(calib)?),
        _ => Err(Error::Precondition(
            "score needs --stats or --model with --calib".into(),
        )),
    }
}

fn cmd_score(a: &ScoreArgs, o: &mut Out<'_>) -> Result<()> {
    let expr = parse(&a.proxy)?;
    let stats = stats_for(a)?;
    let eval = evaluate(&expr, &stats);
    o.note(format!("proxy {expr}"))?;
    for (i, (score, warned)) in eval.scores.iter().zip(&eval.warnings).enumerate() {
        let mark = if *warned { "  (guarded)" } else { "" };
        o.text(format!("layer {:>2}  {score:.6e}{mark}", i + 1))?;
        o.record(json!({"record": "score", "layer": i + 1, "score": score, "guarded": warned}))?;
    }
    Ok(())
}

fn inventory_from_stats(stats: &[LayerStats]) -> Vec<LayerMeta> {
    stats
        .iter()
        .map(|s| LayerMeta {
            depth: s.depth,
            position: s.depth - 1,
            layer_class: s.layer_class,
            param_count: s.n_params,
            mac_count: 0,
        })
        .collect()
}

fn cmd_allocate(a: &AllocateArgs, o: &mut Out<'_>) -> Result<()> {
    let (inventory, scores) = match (&a.scores, &a.stats, &a.proxy) {
        (Some(path), _, _) => {
            let file: ScoresFile = decode(&path.display().to_string(), &read(path)?)?;
            let inventory = file
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| LayerMeta {
                    depth: i + 1,
                    position: i,
                    layer_class: l.layer_class,
                    param_count: l.param_count,
                    mac_count: l.mac_count,
                })
                .collect::<Vec<_>>();
            (inventory, file.layers.iter().map(|l| l.score).collect::<Vec<_>>())
        }
        (None, Some(stats), Some(proxy)) => {
            let stats = load_stats(stats)?.layers;
            let scores = evaluate(&parse(proxy)?, &stats).scores;
            (inventory_from_stats(&stats), scores)
        }
        _ => {
            return Err(Error::Precondition(
                "allocate needs --scores or --stats with --proxy".into(),
            ))
        }
    };
    let mut req = AllocationRequest::new(scores, a.target_compression);
    req.activation_bits = a.activation_bits;
    let assignment = allocate(&req, &inventory)?;
    let ratio = compression_ratio(&inventory, &assignment.weight_bits);
    o.text(format!("bits {}", fmt_bits(&assignment)))?;
    o.text(format!("compression {ratio:.6} (target {:.6})", a.target_compression))?;
    o.record(json!({"record": "assignment", "assignment": assignment, "compression_ratio": ratio}))
}

fn load_assignment(arg: &str, layers: usize, activation_bits: u32) -> Result<BitAssignment> {
    if let Ok(bits) = arg.parse::<u32>() {
        return Ok(BitAssignment::uniform(layers, bits, activation_bits));
    }
    let path = Path::new(arg);
    decode(arg, &read(path)?)
}

fn cmd_quantize(a: &QuantizeArgs, o: &mut Out<'_>) -> Result<()> {
    let model = resolve_model(&a.model)?;
    let data = resolve_dataset(&a.data)?;
    let calib = match &a.calib {
        Some(c) => resolve_dataset(c)?,
        None => data.clone(),
    };
    let inventory = model.layer_inventory();
    let assignment = load_assignment(&a.bits, inventory.len(), a.activation_bits)?;
    let ranges = calibrate_activation_ranges(&model, &calib)?;
    let acc = quantized_accuracy(&model, &assignment, &ranges, &data)?;
    let report = cost(&inventory, &assignment)?;
    o.text(format!("bits {}", fmt_bits(&assignment)))?;
    o.text(format!("accuracy {acc:.4}"))?;
    o.text(format!(
        "param bits {}  BOPs {}  compression {:.6}",
        report.param_bits, report.bops, report.compression_ratio
    ))?;
    o.record(json!({"record": "quantize", "accuracy": acc, "cost": report, "assignment": assignment}))
}

fn fitness_context(data: &DataArgs, fitness: &FitnessArgs) -> Result<FitnessContext> {
    let model = resolve_model(&data.model)?;
    let calib = resolve_dataset(&data.calib)?;
    let eval = match &data.data {
        Some(d) => resolve_dataset(d)?,
        None => calib.clone(),
    };
    FitnessContext::new(model, calib, eval, fitness.config())
}

fn cmd_eval_proxy(a: &EvalProxyArgs, o: &mut Out<'_>) -> Result<()> {
    let expr = parse(&a.proxy)?;
    let ctx = fitness_context(&a.data, &a.fitness)?;
    let eval = ctx.score(&expr);
    let outcome = ctx.evaluate_scores(&eval.scores)?;
    print_outcome(&expr.to_canonical(), &outcome, o)?;
    let mut record = serde_json::to_value(&outcome)?;
    record["record"] = json!("eval");
    record["expr"] = json!(expr.to_canonical());
    o.record(record)
}

fn print_outcome(expr: &str, outcome: &ScoreOutcome, o: &mut Out<'_>) -> Result<()> {
    o.text(format!("proxy {expr}"))?;
    o.text(format!(
        "  rho_sens {:.4}  acc_quant {}  phi {}",
        outcome.rho_sens,
        fmt_opt(outcome.acc_quant),
        fmt_phi(outcome.phi)
    ))?;
    if let Some(assignment) = &outcome.assignment {
        o.text(format!("  bits {}", fmt_bits(assignment)))?;
    }
    if let Some(v) = &outcome.violation {
        o.text(format!("  violation: {v}"))?;
    }
    Ok(())
}

fn cmd_baselines(global: &GlobalArgs, a: &BaselinesArgs, o: &mut Out<'_>) -> Result<()> {
    let ctx = fitness_context(&a.data, &a.fitness)?;
    let rows = run_baselines(&ctx, global.seed.unwrap_or(0))?;
    o.text(format!(
        "{:<8} {:>9} {:>10} {:>8}  bits",
        "proxy", "rho_sens", "acc_quant", "phi"
    ))?;
    for r in &rows {
        let bits = r.outcome.assignment.as_ref().map(fmt_bits).unwrap_or_default();
        o.text(format!(
            "{:<8} {:>9.4} {:>10} {:>8}  {bits}",
            r.name,
            r.outcome.rho_sens,
            fmt_opt(r.outcome.acc_quant),
            fmt_phi(r.outcome.phi)
        ))?;
        o.record(json!({
            "record": "baseline",
            "name": r.name,
            "expr": r.expr,
            "rho_sens": r.outcome.rho_sens,
            "acc_quant": r.outcome.acc_quant,
            "phi": phi_json(r.outcome.phi),
            "assignment": r.outcome.assignment,
        }))?;
    }
    Ok(())
}

/// Summary of a run directory, read back from its files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub completed: bool,
    pub generations_logged: usize,
    pub candidates_logged: usize,
    pub sentinels: usize,
    pub fallback_generations: Vec<usize>,
    pub best: Option<EvaluatedCandidate>,
    #[serde(with = "crate::fitness::phi_seq")]
    pub best_phi_series: Vec<f64>,
}

pub fn read_run_dir(dir: &Path) -> Result<RunReport> {
    let gen_dir = dir.join("generations");
    let mut logs: Vec<(usize, PathBuf)> = fs::read_dir(&gen_dir)
        .map_err(|e| Error::io(&gen_dir, e))?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            let t = path.file_stem()?.to_str()?.parse().ok()?;
            (path.extension()? == "log").then_some((t, path))
        })
        .collect();
    logs.sort();
    let mut report = RunReport {
        completed: !dir.join("PARTIAL").exists(),
        generations_logged: logs.len(),
        candidates_logged: 0,
        sentinels: 0,
        fallback_generations: Vec::new(),
        best: None,
        best_phi_series: Vec::new(),
    };
    for (t, path) in &logs {
        let text = read(path)?;
        for (n, line) in text.lines().enumerate() {
            let record: LogRecord = decode(&format!("{}:{}", path.display(), n + 1), line)?;
            match record {
                LogRecord::Candidate(c) => {
                    report.candidates_logged += 1;
                    report.sentinels += usize::from(c.is_sentinel());
                    let better = report
                        .best
                        .as_ref()
                        .is_none_or(|b| crate::fitness::rank_order(&c, b).is_lt());
                    if better {
                        report.best = Some(c);
                    }
                }
                LogRecord::Generation(g) => {
                    if g.fallback {
                        report.fallback_generations.push(*t);
                    }
                }
                LogRecord::Event { .. } => {}
            }
        }
    }
    if let Ok(text) = read(&dir.join("result.json")) {
        let result: RunResult = decode(&dir.join("result.json").display().to_string(), &text)?;
        report.best_phi_series = result.best_phi_series;
    }
    Ok(report)
}

fn cmd_report(global: &GlobalArgs, o: &mut Out<'_>) -> Result<()> {
    let dir = global
        .run_dir
        .as_deref()
        .ok_or_else(|| Error::Precondition("report needs --run-dir".into()))?;
    let r = read_run_dir(dir)?;
    o.text(format!(
        "run {}: {}",
        dir.display(),
        if r.completed { "completed" } else { "partial" }
    ))?;
    o.text(format!(
        "generations {}  candidates {}  sentinels {}",
        r.generations_logged, r.candidates_logged, r.sentinels
    ))?;
    if let Some(b) = &r.best {
        o.text(format!(
            "best {}  {}  phi {}",
            b.candidate.id,
            b.candidate.expr,
            fmt_phi(b.phi)
        ))?;
    }
    if !r.best_phi_series.is_empty() {
        let series: Vec<String> = r.best_phi_series.iter().map(|v| fmt_phi(*v)).collect();
        o.text(format!("best phi by generation: {}", series.join(" ")))?;
    }
    if !r.fallback_generations.is_empty() {
        o.text(format!("offline fallback in generations {:?}", r.fallback_generations))?;
    }
    let mut record = serde_json::to_value(&r)?;
    record["record"] = json!("report");
    o.record(record)
}
