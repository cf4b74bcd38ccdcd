//! Rule proposal: prompt construction, backends, response parsing and the
//! refinement pipeline that turns raw responses into classified rules.

mod miner;
mod remote;
mod templates;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase, RelationId};
use crate::rules::{self, filter_stage1, map_relations, parse_rule, Rule, RuleCase};
use crate::similarity::SimilarityProvider;
use crate::subgraph::{extract_subgraph, ExtractorConfig, Subgraph};

pub use miner::{mine_rules, MAX_PATH_LEN};
pub use remote::HttpTransport;
pub use templates::{build_inference_prompt, build_rule_prompt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    RemoteChat,
    OfflineMiner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposerBackend {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model_name: String,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub temperature: f64,
}

impl Default for ProposerBackend {
    fn default() -> Self {
        Self {
            kind: BackendKind::OfflineMiner,
            endpoint: None,
            model_name: "offline".into(),
            request_timeout_secs: 60.0,
            max_retries: 2,
            api_key_env: "SYMKBC_API_KEY".into(),
            max_in_flight: 4,
            temperature: 0.0,
        }
    }
}

impl ProposerBackend {
    pub fn validate(&self) -> Result<()> {
        if self.kind == BackendKind::RemoteChat {
            if self.endpoint.as_deref().is_none_or(str::is_empty) {
                return Err(Error::UnsupportedBackend("remote-chat backend needs an endpoint".into()));
            }
            if !(self.request_timeout_secs > 0.0) || self.max_in_flight == 0 {
                return Err(Error::UnsupportedBackend("timeout and max_in_flight must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Sends one prompt and returns the response text.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Calls `transport` up to `max_retries + 1` times. Returns the last
/// outcome and the number of attempts made.
pub fn complete_with_retries(transport: &dyn ChatTransport, prompt: &str, max_retries: u32) -> (Result<String>, u32) {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match transport.complete(prompt) {
            Ok(text) => return (Ok(text), attempts),
            Err(e) if attempts > max_retries => return (Err(e), attempts),
            Err(e) => log::warn!("attempt {attempts} failed: {e}"),
        }
    }
}

pub enum Backend {
    Remote {
        transport: Box<dyn ChatTransport>,
        max_retries: u32,
        max_in_flight: usize,
    },
    Offline,
}

impl Backend {
    pub fn from_config(cfg: &ProposerBackend) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.kind {
            BackendKind::OfflineMiner => Backend::Offline,
            BackendKind::RemoteChat => Backend::Remote {
                transport: Box::new(HttpTransport::new(cfg)?),
                max_retries: cfg.max_retries,
                max_in_flight: cfg.max_in_flight,
            },
        })
    }

    pub fn remote(transport: Box<dyn ChatTransport>, max_retries: u32, max_in_flight: usize) -> Self {
        Backend::Remote {
            transport,
            max_retries,
            max_in_flight: max_in_flight.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLine {
    pub line: String,
    pub reason: String,
}

/// Everything exchanged with the backend for one subgraph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub relation: String,
    pub subgraph_id: String,
    pub target: String,
    pub prompt: String,
    pub raw_response: String,
    /// Rule texts that parsed.
    pub parsed_rules: Vec<String>,
    pub rejected: Vec<RejectedLine>,
    pub error: Option<String>,
    pub attempts: u32,
}

/// Non-empty trimmed lines of a response.
pub fn candidate_lines(response: &str) -> impl Iterator<Item = &str> {
    response.lines().map(str::trim).filter(|l| !l.is_empty())
}

fn record_for(kb: &KnowledgeBase, relation: RelationId, k: usize, sg: &Subgraph, prompt: String, outcome: Result<String>, attempts: u32) -> ProposalRecord {
    let mut rec = ProposalRecord {
        relation: kb.relation_name(relation).to_owned(),
        subgraph_id: format!("{}#{k}", kb.relation_name(relation)),
        target: kb.display(&sg.target),
        prompt,
        raw_response: String::new(),
        parsed_rules: Vec::new(),
        rejected: Vec::new(),
        error: None,
        attempts,
    };
    match outcome {
        Ok(text) => {
            for line in candidate_lines(&text) {
                match parse_rule(line) {
                    Ok(rule) => rec.parsed_rules.push(rule.to_string()),
                    Err(e) => rec.rejected.push(RejectedLine {
                        line: line.to_owned(),
                        reason: e.to_string(),
                    }),
                }
            }
            rec.raw_response = text;
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// One record per subgraph, in subgraph order. Backend failures end up in
/// the record's `error` field.
pub fn propose(backend: &Backend, kb: &KnowledgeBase, relation: RelationId, subgraphs: &[Subgraph]) -> Vec<ProposalRecord> {
    match backend {
        Backend::Offline => subgraphs
            .iter()
            .enumerate()
            .map(|(k, sg)| {
                let prompt = build_rule_prompt(kb, sg, &sg.target);
                record_for(kb, relation, k, sg, prompt, Ok(mine_rules(kb, sg)), 1)
            })
            .collect(),
        Backend::Remote {
            transport,
            max_retries,
            max_in_flight,
        } => {
            let run = || {
                subgraphs
                    .par_iter()
                    .enumerate()
                    .map(|(k, sg)| {
                        let prompt = build_rule_prompt(kb, sg, &sg.target);
                        let (outcome, attempts) = complete_with_retries(transport.as_ref(), &prompt, *max_retries);
                        record_for(kb, relation, k, sg, prompt, outcome, attempts)
                    })
                    .collect()
            };
            match rayon::ThreadPoolBuilder::new().num_threads(*max_in_flight).build() {
                Ok(pool) => pool.install(run),
                Err(_) => run(),
            }
        }
    }
}

pub const MAX_CANDIDATES: usize = 10;

/// Splits a candidate list response into at most ten names. A single line
/// of comma-separated names is accepted as well.
pub fn parse_candidates(response: &str) -> Vec<String> {
    let lines: Vec<&str> = candidate_lines(response).collect();
    let items: Vec<&str> = if lines.len() == 1 && lines[0].contains(',') {
        lines[0].split(',').collect()
    } else {
        lines
    };
    items
        .into_iter()
        .map(clean_candidate)
        .filter(|s| !s.is_empty())
        .take(MAX_CANDIDATES)
        .collect()
}

fn clean_candidate(s: &str) -> String {
    let s = s.trim();
    let s = s.trim_start_matches(|c: char| c.is_ascii_digit());
    let s = s.strip_prefix('.').or_else(|| s.strip_prefix(')')).unwrap_or(s);
    let s = s.trim_start_matches(['-', '*', '•']).trim();
    s.trim_matches(|c| c == '"' || c == '\'' || c == '`').trim().to_owned()
}

/// Asks the backend for up to ten tails of `(head, relation, ?)`, showing
/// it the neighbourhood of `head`.
pub fn direct_infer_candidates(
    backend: &Backend,
    kb: &KnowledgeBase,
    head: EntityId,
    relation: RelationId,
    extractor: &ExtractorConfig,
) -> Result<Vec<String>> {
    let Backend::Remote { transport, max_retries, .. } = backend else {
        return Err(Error::UnsupportedBackend("direct inference needs a remote-chat backend".into()));
    };
    let sg = neighbourhood(kb, head, relation, extractor);
    let prompt = build_inference_prompt(kb, &sg, head, relation);
    let (outcome, _) = complete_with_retries(transport.as_ref(), &prompt, *max_retries);
    Ok(parse_candidates(&outcome?))
}

/// Subgraph grown from `head` alone.
pub fn neighbourhood(kb: &KnowledgeBase, head: EntityId, relation: RelationId, cfg: &ExtractorConfig) -> Subgraph {
    // a target whose two ends coincide seeds the search with `head` only
    extract_subgraph(kb, crate::kb::Triple::new(head, relation, head), cfg)
}

/// Counts for one refinement stage. `input == accepted + rejected`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub input: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub reasons: BTreeMap<String, usize>,
}

impl StageStats {
    fn new(stage: &str) -> Self {
        Self { stage: stage.into(), ..Default::default() }
    }

    fn accept(&mut self) {
        self.input += 1;
        self.accepted += 1;
    }

    fn reject(&mut self, reason: &str) {
        self.input += 1;
        self.rejected += 1;
        *self.reasons.entry(reason.to_owned()).or_default() += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub stages: Vec<StageStats>,
    /// Records whose backend call failed after all retries.
    pub backend_errors: usize,
}

fn reason_key(s: &str) -> String {
    s.split([':', '`']).next().unwrap_or(s).trim().to_owned()
}

/// Parses, filters, maps, classifies and deduplicates the rules of every
/// record. Rules keep the subgraph id as provenance.
pub fn refine(records: &[ProposalRecord], kb: &KnowledgeBase, sim: &dyn SimilarityProvider) -> (Vec<Rule>, RefineReport) {
    let mut parse = StageStats::new("parse");
    let mut filter = StageStats::new("filter");
    let mut map = StageStats::new("map");
    let mut classify = StageStats::new("classify");
    let mut dedup = StageStats::new("dedup");
    let mut kept = Vec::new();
    let mut backend_errors = 0;

    for rec in records {
        if rec.error.is_some() {
            backend_errors += 1;
        }
        for _ in &rec.rejected {
            parse.reject("unparseable");
        }
        for text in &rec.parsed_rules {
            let Ok(rule) = parse_rule(text) else {
                parse.reject("unparseable");
                continue;
            };
            parse.accept();
            if let Err(e) = filter_stage1(&rule, &rec.relation) {
                filter.reject(&reason_key(&e.to_string()));
                continue;
            }
            filter.accept();
            let mapped = match map_relations(&rule, kb, sim) {
                Ok(m) => m,
                Err(e) => {
                    map.reject(&reason_key(&e.to_string()));
                    continue;
                }
            };
            map.accept();
            let mut rule = mapped.classified();
            if rule.case == RuleCase::Unclassified {
                classify.reject("unclassified");
                continue;
            }
            classify.accept();
            rule.target_relation = Some(rec.relation.clone());
            rule.provenance = vec![rec.subgraph_id.clone()];
            kept.push(rule);
        }
    }
    let before = kept.len();
    let unique = rules::dedup(kept);
    dedup.input = before;
    dedup.accepted = unique.len();
    dedup.rejected = before - unique.len();
    if dedup.rejected > 0 {
        dedup.reasons.insert("duplicate".into(), dedup.rejected);
    }
    (
        unique,
        RefineReport {
            stages: vec![parse, filter, map, classify, dedup],
            backend_errors,
        },
    )
}

pub fn write_records(records: &[ProposalRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("proposal record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_records(text: &str) -> Result<Vec<ProposalRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format("proposal file", format!("line {}: {e}", i + 1))))
        .collect()
}
