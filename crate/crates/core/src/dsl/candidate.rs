use serde::{Deserialize, Serialize};

use super::{parse, Expr, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateOrigin {
    Init,
    Mutation,
    Crossover,
    Builtin,
}

/// A proxy: free-text reasoning plus an executable expression.
///
/// `expr` holds source text rather than a tree so that candidates coming back
/// from an external generator can be carried (and rejected) as-is; generators
/// in this crate always store canonical text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyCandidate {
    pub id: String,
    /// Monotonic sequence number backing `id`; later candidates are larger.
    pub seq: u64,
    pub reasoning: String,
    pub expr: String,
    pub origin: CandidateOrigin,
    pub parent_ids: Vec<String>,
    pub birth_generation: usize,
    /// Generation action id under which this candidate was produced.
    pub action: Option<usize>,
}

impl ProxyCandidate {
    pub fn new(seq: u64, reasoning: impl Into<String>, expr: &Expr, origin: CandidateOrigin) -> Self {
        ProxyCandidate {
            id: Self::id_for(seq),
            seq,
            reasoning: reasoning.into(),
            expr: expr.to_canonical(),
            origin,
            parent_ids: Vec::new(),
            birth_generation: 0,
            action: None,
        }
    }

    pub fn id_for(seq: u64) -> String {
        format!("c{seq:06}")
    }

    pub fn parse_expr(&self) -> Result<Expr, ParseError> {
        parse(&self.expr)
    }
}
