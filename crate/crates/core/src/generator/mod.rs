//! Candidate generation: prompt rendering, response parsing, an LLM client
//! and a deterministic offline generator.
//!
//! The prompt templates are reconstructions: they describe the task, the
//! expression language, the output contract and the context window, but are
//! not copies of any published prompt.

mod llm;
mod mock;
mod offline;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dpo::Action;
use crate::dsl::{parse, CandidateOrigin, Feature, ParseError, ProxyCandidate};
use crate::error::{Error, Result};
use crate::fitness::{phi_serde, EvaluatedCandidate};

pub use llm::{generate_llm, GenerationEvent, LlmEndpointConfig, LlmOutcome};
pub use mock::{MockChatServer, MockReply};
pub use offline::{crossover, generate_offline, mutate, random_tree, MutationKind};

pub const REASONING_EXCERPT_CHARS: usize = 200;
pub const DEFAULT_TOKEN_BUDGET: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationOp {
    Init,
    Mutation,
    Crossover,
}

impl GenerationOp {
    pub fn origin(self) -> CandidateOrigin {
        match self {
            GenerationOp::Init => CandidateOrigin::Init,
            GenerationOp::Mutation => CandidateOrigin::Mutation,
            GenerationOp::Crossover => CandidateOrigin::Crossover,
        }
    }

    pub fn min_context(self) -> usize {
        match self {
            GenerationOp::Init => 0,
            GenerationOp::Mutation => 1,
            GenerationOp::Crossover => 2,
        }
    }
}

/// Summary of an evaluated candidate as shown to a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub id: String,
    pub expr: String,
    pub rho_sens: Option<f64>,
    #[serde(with = "phi_serde")]
    pub phi: f64,
    pub reasoning: String,
    pub birth_generation: usize,
}

impl ContextEntry {
    pub fn new(id: impl Into<String>, expr: impl Into<String>, phi: f64) -> Self {
        ContextEntry {
            id: id.into(),
            expr: expr.into(),
            rho_sens: None,
            phi,
            reasoning: String::new(),
            birth_generation: 0,
        }
    }

    pub fn from_evaluated(e: &EvaluatedCandidate) -> Self {
        let expr = e
            .candidate
            .parse_expr()
            .map(|x| x.to_canonical())
            .unwrap_or_else(|_| e.candidate.expr.clone());
        ContextEntry {
            id: e.candidate.id.clone(),
            expr,
            rho_sens: e.rho_sens,
            phi: e.phi,
            reasoning: e.candidate.reasoning.chars().take(REASONING_EXCERPT_CHARS).collect(),
            birth_generation: e.candidate.birth_generation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub op: GenerationOp,
    pub context: Vec<ContextEntry>,
    pub count: usize,
    pub action: Option<Action>,
    pub seed: u64,
    /// Generation the produced candidates are born in.
    pub generation: usize,
    /// Sequence number of the first emitted candidate.
    pub first_seq: u64,
}

impl GenerationRequest {
    pub fn init(count: usize, seed: u64) -> Self {
        GenerationRequest {
            op: GenerationOp::Init,
            context: Vec::new(),
            count,
            action: None,
            seed,
            generation: 0,
            first_seq: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let needed = self.op.min_context();
        if self.context.len() < needed {
            return Err(Error::TooShort {
                needed,
                got: self.context.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn stamp(&self, candidate: &mut ProxyCandidate, parents: Vec<String>) {
        candidate.parent_ids = parents;
        candidate.birth_generation = self.generation;
        candidate.action = self.action.map(|a| a.id());
    }
}

/// Rough token count used for prompt budgeting: one token per four chars.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

const TASK: &str = "\
You are designing a training-free sensitivity proxy for mixed-precision quantization. \
A proxy is a formula that gives every parameterized layer of a network a score from \
per-layer statistics. Layers with higher scores receive more bits from a fixed allocator.

Prior knowledge: a useful proxy scores a layer higher when quantizing that layer damages \
the network output more. Scores should therefore rise with the layer's quantization error.";

const GRAMMAR: &str = "\
expr    = term { (\"+\" | \"-\") term } ;
term    = power { (\"*\" | \"/\") power } ;
power   = unary { \"^\" unary } ;
unary   = \"-\" unary | primary ;
primary = number | feature | func \"(\" expr \")\" | \"(\" expr \")\" ;
func    = \"exp\" | \"log\" | \"sqrt\" | \"abs\" | \"neg\" ;";

const CONTRACT: &str = "\
Answer with one short paragraph of reasoning, then exactly one fenced code block that \
contains only the expression. Do not write anything after the code block.";

fn label(op: GenerationOp, index: usize) -> String {
    match (op, index) {
        (GenerationOp::Crossover, 0) => "Parent A".into(),
        (GenerationOp::Crossover, 1) => "Parent B".into(),
        (GenerationOp::Mutation, 0) => "Parent".into(),
        _ => format!("Reference {}", index + 1),
    }
}

fn render_entry(out: &mut String, op: GenerationOp, index: usize, e: &ContextEntry) {
    let rho = e.rho_sens.map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}"));
    let phi = if e.phi.is_finite() {
        format!("{:.4}", e.phi)
    } else {
        "-inf".into()
    };
    let _ = writeln!(out, "{} ({}): {}", label(op, index), e.id, e.expr);
    let _ = writeln!(out, "  rho_sens = {rho}, fitness = {phi}");
    if !e.reasoning.is_empty() {
        let _ = writeln!(out, "  reasoning: {}", e.reasoning.replace('\n', " "));
    }
}

fn render_with(req: &GenerationRequest, entries: &[&ContextEntry]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{TASK}\n");
    let _ = writeln!(out, "Expression language (all binary operators are left-associative):");
    let _ = writeln!(out, "```\n{GRAMMAR}\n```\n");
    let _ = writeln!(out, "Features, each evaluated per layer:");
    for f in Feature::ALL {
        let _ = writeln!(out, "- {}: {}", f.name(), f.description());
    }
    out.push('\n');
    if !entries.is_empty() {
        let _ = writeln!(out, "Context (best first):");
        for (i, e) in entries.iter().enumerate() {
            render_entry(&mut out, req.op, i, e);
        }
        out.push('\n');
    }
    let task = match req.op {
        GenerationOp::Init => "Task: propose a new proxy expression.",
        GenerationOp::Mutation => {
            "Task: improve the parent proxy. Keep the parts that rank layers well and change the scoring logic where it is weak."
        }
        GenerationOp::Crossover => "Task: combine complementary components of Parent A and Parent B into one new proxy.",
    };
    let _ = writeln!(out, "{task}");
    if let Some(action) = req.action {
        let _ = writeln!(out, "{}", action.feature_hint.guidance());
    }
    let _ = write!(out, "\n{CONTRACT}\n");
    out
}

/// Renders the prompt for `req`. Context entries are listed by fitness,
/// best first; when the prompt would exceed `token_budget` the oldest entries
/// are dropped first. Fails only if the prompt without any context is
/// already over budget.
pub fn render_prompt(req: &GenerationRequest, token_budget: usize) -> Result<String> {
    let mut entries: Vec<&ContextEntry> = req.context.iter().collect();
    entries.sort_by(|a, b| b.phi.partial_cmp(&a.phi).unwrap_or(std::cmp::Ordering::Equal));
    loop {
        let text = render_with(req, &entries);
        if estimate_tokens(&text) <= token_budget {
            return Ok(text);
        }
        let oldest = entries
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| (a.birth_generation, &a.id).cmp(&(b.birth_generation, &b.id)))
            .map(|(i, _)| i);
        match oldest {
            Some(i) => {
                entries.remove(i);
            }
            None => {
                return Err(Error::Precondition(format!(
                    "prompt needs {} tokens, budget is {token_budget}",
                    estimate_tokens(&text)
                )))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Rejection {
    #[error("missing expression block")]
    MissingBlock,
    #[error("empty expression block")]
    EmptyBlock,
    #[error("invalid expression: {0}")]
    Parse(#[from] ParseError),
    #[error("expression references no feature")]
    NoFeature,
}

/// Source of the last fenced block, without its info string.
fn last_fenced_block(text: &str) -> Option<(std::ops::Range<usize>, String)> {
    let fences: Vec<usize> = text.match_indices("```").map(|(i, _)| i).collect();
    let (open, close) = fences.chunks_exact(2).last().map(|p| (p[0], p[1]))?;
    let inner = &text[open + 3..close];
    let source = match inner.find('\n') {
        Some(nl) => &inner[nl + 1..],
        None => inner,
    };
    Some((open..close + 3, source.trim().to_string()))
}

/// Splits a generator response into reasoning and expression. The last
/// fenced block is the expression; everything else is the reasoning.
pub fn parse_llm_response(
    text: &str,
    origin: CandidateOrigin,
    seq: u64,
) -> std::result::Result<ProxyCandidate, Rejection> {
    let (span, source) = last_fenced_block(text).ok_or(Rejection::MissingBlock)?;
    if source.is_empty() {
        return Err(Rejection::EmptyBlock);
    }
    let expr = parse(&source)?;
    if !expr.references_feature() {
        return Err(Rejection::NoFeature);
    }
    let reasoning = format!("{}{}", &text[..span.start], &text[span.end..]);
    Ok(ProxyCandidate::new(seq, reasoning.trim(), &expr, origin))
}
