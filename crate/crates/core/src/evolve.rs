//! The search loop: initial population, policy-driven generations,
//! preference learning, context library and survivor selection.
//!
//! Run directory layout:
//!
//! ```text
//! <run_dir>/config.json          resolved RunConfig
//! <run_dir>/generations/<t>.log  one JSON record per line
//! <run_dir>/policy/<t>.json      policy snapshot after generation t
//! <run_dir>/result.json          RunResult
//! <run_dir>/PARTIAL              present until the run completes
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpo::{
    build_preference_pairs, dpo_loss, dpo_update, sample_action, Action, ActionOp, PolicyParams, DEFAULT_ETA,
    DEFAULT_LAMBDA, DEFAULT_STEPS,
};
use crate::dsl::ProxyCandidate;
use crate::error::{Error, Result};
use crate::fitness::{phi_seq, rank_order, EvaluatedCandidate, FitnessConfig, FitnessContext};
use crate::fixtures::{dataset_source, model_source, resolve_dataset, resolve_model};
use crate::generator::{
    generate_llm, generate_offline, ContextEntry, GenerationEvent, GenerationOp, GenerationRequest, LlmEndpointConfig,
};
use crate::quantsim::BitMenus;
use crate::smallnet::{decode, read};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorMode {
    #[default]
    Offline,
    Llm,
    LlmWithFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpoConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn default_eta() -> f64 {
    DEFAULT_ETA
}
fn default_steps() -> usize {
    DEFAULT_STEPS
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            lambda: DEFAULT_LAMBDA,
            eta: DEFAULT_ETA,
            steps: DEFAULT_STEPS,
        }
    }
}

/// Search configuration. Data paths may name bundled fixtures; relative
/// paths in a config file resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: PathBuf,
    pub calib: PathBuf,
    pub eval_data: PathBuf,
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    #[serde(default = "default_population")]
    pub population_size: usize,
    #[serde(default = "default_generations")]
    pub generations: usize,
    /// Candidates per generation; defaults to the population size.
    #[serde(default)]
    pub candidates_per_generation: Option<usize>,
    #[serde(default = "default_target")]
    pub target_compression: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_probe_bits")]
    pub probe_bits: u32,
    #[serde(default = "default_activation_bits")]
    pub activation_bits: u32,
    #[serde(default)]
    pub menus: BitMenus,
    #[serde(default)]
    pub mode: GeneratorMode,
    #[serde(default)]
    pub endpoint: Option<LlmEndpointConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_library_capacity")]
    pub library_capacity: usize,
    #[serde(default = "default_max_pairs")]
    pub max_pairs: usize,
    #[serde(default)]
    pub dpo: DpoConfig,
    /// Evaluation worker threads; `None` uses every logical CPU.
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_population() -> usize {
    8
}
fn default_generations() -> usize {
    5
}
fn default_target() -> f64 {
    0.8
}
fn default_alpha() -> f64 {
    crate::fitness::DEFAULT_ALPHA
}
fn default_probe_bits() -> u32 {
    crate::fitness::DEFAULT_PROBE_BITS
}
fn default_activation_bits() -> u32 {
    8
}
fn default_library_capacity() -> usize {
    32
}
fn default_max_pairs() -> usize {
    64
}

impl RunConfig {
    pub fn new(model: impl Into<PathBuf>, calib: impl Into<PathBuf>, eval_data: impl Into<PathBuf>) -> Self {
        RunConfig {
            model: model.into(),
            calib: calib.into(),
            eval_data: eval_data.into(),
            run_dir: None,
            population_size: default_population(),
            generations: default_generations(),
            candidates_per_generation: None,
            target_compression: default_target(),
            alpha: default_alpha(),
            probe_bits: default_probe_bits(),
            activation_bits: default_activation_bits(),
            menus: BitMenus::default(),
            mode: GeneratorMode::Offline,
            endpoint: None,
            seed: 0,
            library_capacity: default_library_capacity(),
            max_pairs: default_max_pairs(),
            dpo: DpoConfig::default(),
            jobs: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: RunConfig = decode(&path.display().to_string(), &read(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let bundled = |p: &Path| {
            let name = p.to_string_lossy();
            model_source(&name).or_else(|| dataset_source(&name)).is_some() && !base.join(p).exists()
        };
        for p in [&mut cfg.model, &mut cfg.calib, &mut cfg.eval_data] {
            if p.is_relative() && !bundled(p) {
                *p = base.join(&*p);
            }
        }
        if let Some(dir) = cfg.run_dir.as_mut().filter(|d| d.is_relative()) {
            *dir = base.join(&*dir);
        }
        Ok(cfg)
    }

    pub fn candidates_per_generation(&self) -> usize {
        self.candidates_per_generation.unwrap_or(self.population_size)
    }

    pub fn fitness_config(&self) -> FitnessConfig {
        FitnessConfig {
            target_compression: self.target_compression,
            alpha: self.alpha,
            probe_bits: self.probe_bits,
            activation_bits: self.activation_bits,
            menus: self.menus.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Precondition(format!(
                "population size {} must be at least 2",
                self.population_size
            )));
        }
        if self.generations < 1 {
            return Err(Error::Precondition("at least one generation is required".into()));
        }
        if self.library_capacity < 1 {
            return Err(Error::Precondition(
                "context library capacity must be at least 1".into(),
            ));
        }
        if self.dpo.steps < 1 || !(self.dpo.lambda > 0.0) || !(self.dpo.eta > 0.0) {
            return Err(Error::Precondition(
                "dpo needs steps >= 1, lambda > 0 and eta > 0".into(),
            ));
        }
        if self.jobs == Some(0) {
            return Err(Error::Precondition("jobs must be at least 1".into()));
        }
        match (&self.mode, &self.endpoint) {
            (GeneratorMode::Offline, _) => Ok(()),
            (_, None) => Err(Error::Precondition("llm modes need an endpoint".into())),
            (_, Some(e)) => e.validate(),
        }
    }
}

/// Top-ranked finite-φ candidates seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextLibrary {
    pub entries: Vec<EvaluatedCandidate>,
    pub capacity: usize,
    /// Number of finite-φ candidates merged so far.
    pub seen: usize,
}

impl ContextLibrary {
    pub fn new(capacity: usize) -> Self {
        ContextLibrary {
            entries: Vec::new(),
            capacity,
            seen: 0,
        }
    }

    /// Library size after `seen` finite candidates: ⌈0.1·seen⌉, at least 1.
    pub fn target_size(seen: usize) -> usize {
        seen.div_ceil(10).max(1)
    }
}

/// Merges `newly` into `lib`, re-ranks and truncates to the top 10% of all
/// finite-φ candidates seen (at least one), then applies the capacity.
/// Duplicate ids keep the record merged first.
pub fn update_context_library(lib: &ContextLibrary, newly: &[EvaluatedCandidate]) -> ContextLibrary {
    let mut ids: HashSet<String> = lib.entries.iter().map(|e| e.candidate.id.clone()).collect();
    let mut entries = lib.entries.clone();
    let mut seen = lib.seen;
    for e in newly.iter().filter(|e| e.phi.is_finite()) {
        if ids.insert(e.candidate.id.clone()) {
            seen += 1;
            entries.push(e.clone());
        }
    }
    entries.sort_by(rank_order);
    entries.truncate(ContextLibrary::target_size(seen).min(lib.capacity));
    ContextLibrary {
        entries,
        capacity: lib.capacity,
        seen,
    }
}

/// Top `n` of `pool` by [`rank_order`]; sentinels only fill slots that
/// finite candidates cannot.
pub fn select_survivors(pool: &[EvaluatedCandidate], n: usize) -> Vec<EvaluatedCandidate> {
    let mut ranked = pool.to_vec();
    ranked.sort_by(rank_order);
    ranked.truncate(n);
    ranked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
    pub generation_ms: f64,
    pub evaluation_ms: f64,
    pub dpo_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub best: EvaluatedCandidate,
    /// Best φ among survivors after generation 0, 1, …, T_max.
    #[serde(with = "phi_seq")]
    pub best_phi_series: Vec<f64>,
    pub final_population: Vec<EvaluatedCandidate>,
    pub policy: PolicyParams,
    pub candidates_evaluated: usize,
    pub fallback_generations: Vec<usize>,
    pub timings: Timings,
}

/// One line of a generation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Candidate(EvaluatedCandidate),
    Event {
        generation: usize,
        #[serde(flatten)]
        event: GenerationEvent,
    },
    Generation(GenerationSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub generation: usize,
    pub fallback: bool,
    pub candidates: usize,
    pub pairs: usize,
    pub dpo_loss_before: Option<f64>,
    pub dpo_loss_after: Option<f64>,
    pub survivors: Vec<String>,
    pub library: Vec<String>,
}

struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn create(root: &Path, config: &RunConfig) -> Result<Self> {
        for sub in ["generations", "policy"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let dir = RunDir {
            root: root.to_path_buf(),
        };
        dir.write("PARTIAL", "")?;
        dir.write("config.json", &serde_json::to_string_pretty(config)?)?;
        Ok(dir)
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn write_log(&self, generation: usize, records: &[LogRecord]) -> Result<()> {
        let path = self.root.join("generations").join(format!("{generation}.log"));
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for r in records {
            writeln!(file, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn finish(&self, result: &RunResult) -> Result<()> {
        self.write("result.json", &serde_json::to_string_pretty(result)?)?;
        let marker = self.root.join("PARTIAL");
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))
    }
}

/// Loads the fixtures named in `config` and runs the search.
pub fn run(config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    let model = resolve_model(&config.model.to_string_lossy())?;
    let calib = resolve_dataset(&config.calib.to_string_lossy())?;
    let eval_data = resolve_dataset(&config.eval_data.to_string_lossy())?;
    let ctx = FitnessContext::new(model, calib, eval_data, config.fitness_config())?;
    run_with_context(config, &ctx)
}

/// Runs the search against a prepared fitness context. `config`'s data
/// paths are not read; its fitness settings must match `ctx`.
pub fn run_with_context(config: &RunConfig, ctx: &FitnessContext) -> Result<RunResult> {
    config.validate()?;
    if ctx.config != config.fitness_config() {
        return Err(Error::Precondition(
            "fitness context does not match the run configuration".into(),
        ));
    }
    let pool = match config.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    }
    .map_err(|e| Error::Precondition(format!("worker pool: {e}")))?;
    let dir = config
        .run_dir
        .as_deref()
        .map(|d| RunDir::create(d, config))
        .transpose()?;
    pool.install(|| Search::new(config, ctx, dir.as_ref()).run())
}

struct Search<'a> {
    config: &'a RunConfig,
    ctx: &'a FitnessContext,
    dir: Option<&'a RunDir>,
    rng: ChaCha8Rng,
    next_seq: u64,
    cache: HashMap<String, EvaluatedCandidate>,
    policy: PolicyParams,
    library: ContextLibrary,
    population: Vec<EvaluatedCandidate>,
    best: Option<EvaluatedCandidate>,
    evaluated: usize,
    timings: Timings,
}

struct Generated {
    candidates: Vec<ProxyCandidate>,
    events: Vec<GenerationEvent>,
    fallback: bool,
}

impl<'a> Search<'a> {
    fn new(config: &'a RunConfig, ctx: &'a FitnessContext, dir: Option<&'a RunDir>) -> Self {
        Search {
            config,
            ctx,
            dir,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            next_seq: 0,
            cache: HashMap::new(),
            policy: PolicyParams::uniform(config.dpo.lambda, config.dpo.eta),
            library: ContextLibrary::new(config.library_capacity),
            population: Vec::new(),
            best: None,
            evaluated: 0,
            timings: Timings {
                total_ms: 0.0,
                generation_ms: 0.0,
                evaluation_ms: 0.0,
                dpo_ms: 0.0,
            },
        }
    }

    fn run(mut self) -> Result<RunResult> {
        let start = Instant::now();
        let mut series = Vec::with_capacity(self.config.generations + 1);
        let mut fallback_generations = Vec::new();
        for t in 0..=self.config.generations {
            let fallback = self.generation(t)?;
            if fallback {
                fallback_generations.push(t);
            }
            series.push(self.population.first().map_or(f64::NEG_INFINITY, |e| e.phi));
        }
        self.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
        let result = RunResult {
            best: self.best.ok_or(Error::Empty("candidate pool"))?,
            best_phi_series: series,
            final_population: self.population,
            policy: self.policy,
            candidates_evaluated: self.evaluated,
            fallback_generations,
            timings: self.timings,
        };
        if let Some(dir) = self.dir {
            dir.finish(&result)?;
        }
        Ok(result)
    }

    fn generation(&mut self, t: usize) -> Result<bool> {
        let gen_start = Instant::now();
        let generated = if t == 0 {
            let mut req = GenerationRequest::init(self.config.population_size, self.rng.random());
            req.first_seq = self.next_seq;
            self.generate(&req)?
        } else {
            self.offspring(t)?
        };
        self.next_seq += generated.candidates.len() as u64;
        self.timings.generation_ms += gen_start.elapsed().as_secs_f64() * 1e3;

        let eval_start = Instant::now();
        let offspring = self.evaluate(generated.candidates)?;
        self.timings.evaluation_ms += eval_start.elapsed().as_secs_f64() * 1e3;
        self.evaluated += offspring.len();
        for e in &offspring {
            let better = self.best.as_ref().is_none_or(|b| rank_order(e, b).is_lt());
            if better {
                self.best = Some(e.clone());
            }
        }

        let mut pool = self.population.clone();
        pool.extend(offspring.iter().cloned());

        let dpo_start = Instant::now();
        let pairs = build_preference_pairs(&pool, self.config.max_pairs);
        let (mut before, mut after) = (None, None);
        if !pairs.is_empty() {
            before = Some(dpo_loss(&self.policy, &pairs)?);
            self.policy = dpo_update(&self.policy, &pairs, self.config.dpo.steps)?;
            after = Some(dpo_loss(&self.policy, &pairs)?);
        }
        self.timings.dpo_ms += dpo_start.elapsed().as_secs_f64() * 1e3;

        self.library = update_context_library(&self.library, &offspring);
        self.population = select_survivors(&pool, self.config.population_size);

        if let Some(dir) = self.dir {
            let mut records: Vec<LogRecord> = generated
                .events
                .into_iter()
                .map(|event| LogRecord::Event { generation: t, event })
                .collect();
            records.extend(offspring.into_iter().map(LogRecord::Candidate));
            records.push(LogRecord::Generation(GenerationSummary {
                generation: t,
                fallback: generated.fallback,
                candidates: records.iter().filter(|r| matches!(r, LogRecord::Candidate(_))).count(),
                pairs: pairs.len(),
                dpo_loss_before: before,
                dpo_loss_after: after,
                survivors: self.population.iter().map(|e| e.candidate.id.clone()).collect(),
                library: self.library.entries.iter().map(|e| e.candidate.id.clone()).collect(),
            }));
            dir.write_log(t, &records)?;
            let path = format!("policy/{t}.json");
            dir.write(&path, &serde_json::to_string_pretty(&self.policy)?)?;
        }
        Ok(generated.fallback)
    }

    /// Context of size `k`: library entries first, topped up from the
    /// population.
    fn context(&self, k: usize) -> Vec<ContextEntry> {
        let mut out: Vec<ContextEntry> = Vec::with_capacity(k);
        let finite = |e: &&EvaluatedCandidate| e.phi.is_finite();
        for e in self.library.entries.iter().chain(self.population.iter().filter(finite)) {
            if out.len() == k {
                break;
            }
            if !out.iter().any(|c| c.id == e.candidate.id) {
                out.push(ContextEntry::from_evaluated(e));
            }
        }
        out
    }

    fn offspring(&mut self, t: usize) -> Result<Generated> {
        let m = self.config.candidates_per_generation();
        let mut groups: Vec<(Action, usize)> = Vec::new();
        for _ in 0..m {
            let mut action = sample_action(&self.policy, &mut self.rng);
            if action.op == ActionOp::Crossover && self.context(action.context_size).len() < 2 {
                action.op = ActionOp::Mutation;
            }
            match groups.iter_mut().find(|(a, _)| *a == action) {
                Some((_, n)) => *n += 1,
                None => groups.push((action, 1)),
            }
        }
        let mut all = Generated {
            candidates: Vec::new(),
            events: Vec::new(),
            fallback: false,
        };
        for (action, count) in groups {
            let context = self.context(action.context_size);
            if context.is_empty() {
                continue;
            }
            let req = GenerationRequest {
                op: match action.op {
                    ActionOp::Mutation => GenerationOp::Mutation,
                    ActionOp::Crossover => GenerationOp::Crossover,
                },
                context,
                count,
                action: Some(action),
                seed: self.rng.random(),
                generation: t,
                first_seq: self.next_seq + all.candidates.len() as u64,
            };
            let g = self.generate(&req)?;
            all.candidates.extend(g.candidates);
            all.events.extend(g.events);
            all.fallback |= g.fallback;
        }
        Ok(all)
    }

    fn generate(&self, req: &GenerationRequest) -> Result<Generated> {
        let offline = || -> Result<Generated> {
            Ok(Generated {
                candidates: generate_offline(req)?,
                events: Vec::new(),
                fallback: false,
            })
        };
        let endpoint = match (self.config.mode, &self.config.endpoint) {
            (GeneratorMode::Offline, _) | (_, None) => return offline(),
            (_, Some(e)) => e,
        };
        let outcome = generate_llm(req, endpoint)?;
        if !outcome.endpoint_failed {
            return Ok(Generated {
                candidates: outcome.candidates,
                events: outcome.events,
                fallback: false,
            });
        }
        if self.config.mode == GeneratorMode::Llm {
            let detail = outcome
                .events
                .iter()
                .rev()
                .find_map(|e| match e {
                    GenerationEvent::EndpointError { message, .. } => Some(message.clone()),
                    _ => None,
                })
                .unwrap_or_else(|| "no response".into());
            return Err(Error::Endpoint(detail));
        }
        let mut g = offline()?;
        g.events = outcome.events;
        g.events.push(GenerationEvent::Fallback {
            reason: "endpoint unavailable; used offline generation".into(),
        });
        g.fallback = true;
        Ok(g)
    }

    fn evaluate(&mut self, candidates: Vec<ProxyCandidate>) -> Result<Vec<EvaluatedCandidate>> {
        let mut fresh: Vec<ProxyCandidate> = Vec::new();
        for c in &candidates {
            if !self.cache.contains_key(&c.expr) && !fresh.iter().any(|f| f.expr == c.expr) {
                fresh.push(c.clone());
            }
        }
        let results: Vec<EvaluatedCandidate> = fresh
            .into_par_iter()
            .map(|c| self.ctx.evaluate_candidate(c))
            .collect::<Result<_>>()?;
        for r in results {
            self.cache.insert(r.candidate.expr.clone(), r);
        }
        Ok(candidates
            .into_iter()
            .map(|c| {
                let hit = &self.cache[&c.expr];
                if hit.candidate.id == c.id {
                    hit.clone()
                } else {
                    EvaluatedCandidate {
                        candidate: c,
                        eval_wall_time_ms: 0.0,
                        ..hit.clone()
                    }
                }
            })
            .collect())
    }
}
