//! Link-prediction metrics, rule-quality metrics and report rendering.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Split};
use crate::proposer::{direct_infer_candidates, Backend};
use crate::subgraph::ExtractorConfig;
use crate::trainer::Reasoner;

pub const HITS_AT: [usize; 3] = [1, 3, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Absent for candidate-list baselines, which produce no full ranking.
    pub mr: Option<f64>,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub query_count: usize,
}

impl MetricsReport {
    pub fn hits_at(&self, k: usize) -> f64 {
        self.hits.get(&k).copied().unwrap_or(0.0)
    }
}

pub fn compute_metrics(ranks: &[f64]) -> Result<MetricsReport> {
    if ranks.is_empty() {
        return Err(Error::EmptyRanks);
    }
    let n = ranks.len() as f64;
    let mr = ranks.iter().sum::<f64>() / n;
    let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n;
    let hits = HITS_AT
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / n))
        .collect();
    Ok(MetricsReport {
        mr: Some(mr),
        mrr,
        hits,
        query_count: ranks.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleQualityReport {
    pub learned_count: usize,
    pub high_conf_count: usize,
    /// Percentage of learned rules with at least one annotated path.
    pub hcr: f64,
    /// Mean path score over high-confidence rules, in `[0, 1]`.
    pub rcs: f64,
    /// Harmonic combination of HCR and RCS, as a percentage.
    pub rqi: f64,
}

impl RuleQualityReport {
    pub fn from_counts(learned_count: usize, high_conf_count: usize, rcs: f64) -> Self {
        let hcr_frac = if learned_count == 0 { 0.0 } else { high_conf_count as f64 / learned_count as f64 };
        Self::from_ratio(learned_count, high_conf_count, hcr_frac * 100.0, rcs)
    }

    /// Builds a report from an already rounded HCR percentage.
    pub fn from_ratio(learned_count: usize, high_conf_count: usize, hcr: f64, rcs: f64) -> Self {
        let h = hcr / 100.0;
        let rqi = if h + rcs == 0.0 { 0.0 } else { 2.0 * h * rcs / (h + rcs) * 100.0 };
        Self {
            learned_count,
            high_conf_count,
            hcr,
            rcs,
            rqi,
        }
    }
}

/// Path annotations keyed by canonical rule form.
pub type Annotations = HashMap<String, Vec<f64>>;

/// Reads `rule<TAB>score` lines; a rule may appear on several lines, one
/// per annotated path. Blank lines and `#` comments are skipped.
pub fn read_annotations(text: &str) -> Result<Annotations> {
    let mut out: Annotations = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (rule, score) = line
            .rsplit_once('\t')
            .ok_or_else(|| Error::format("annotation file", format!("line {}: expected rule<TAB>score", i + 1)))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| Error::format("annotation file", format!("line {}: bad score `{score}`", i + 1)))?;
        out.entry(rule.trim().to_owned()).or_default().push(score);
    }
    Ok(out)
}

pub fn compute_rule_quality(rules: &[String], annotations: &Annotations) -> Result<RuleQualityReport> {
    for scores in annotations.values() {
        if let Some(&bad) = scores.iter().find(|s| ![0.0, 0.5, 1.0].contains(*s)) {
            return Err(Error::InvalidAnnotation(bad));
        }
    }
    let per_rule: Vec<f64> = rules
        .iter()
        .filter_map(|r| annotations.get(r).filter(|s| !s.is_empty()))
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    let rcs = if per_rule.is_empty() { 0.0 } else { per_rule.iter().sum::<f64>() / per_rule.len() as f64 };
    Ok(RuleQualityReport::from_counts(rules.len(), per_rule.len(), rcs))
}

pub fn evaluate_model(reasoner: &Reasoner<'_>, split: Split) -> Result<MetricsReport> {
    compute_metrics(&reasoner.split_ranks(split)?)
}

/// Lowercase, trimmed, inner whitespace collapsed to single spaces.
pub fn normalize_name(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Hits@K of candidate lists produced directly by a chat backend. Queries
/// whose call fails count as misses.
pub fn evaluate_inference_baseline(
    backend: &Backend,
    kb: &KnowledgeBase,
    split: Split,
    extractor: &ExtractorConfig,
) -> Result<(MetricsReport, usize)> {
    let queries = kb.split(split);
    if queries.is_empty() {
        return Err(Error::EmptyRanks);
    }
    let mut positions = Vec::with_capacity(queries.len());
    let mut failures = 0;
    for t in queries {
        match direct_infer_candidates(backend, kb, t.head, t.relation, extractor) {
            Ok(cands) => positions.push(candidate_position(&cands, kb.entity_name(t.tail))),
            Err(e @ Error::UnsupportedBackend(_)) => return Err(e),
            Err(e) => {
                log::warn!("{}: {e}", kb.display(t));
                failures += 1;
                positions.push(None);
            }
        }
    }
    Ok((hits_from_positions(&positions), failures))
}

/// 1-based position of `gold` among `candidates`, after normalisation.
pub fn candidate_position(candidates: &[String], gold: &str) -> Option<usize> {
    let g = normalize_name(gold);
    candidates.iter().position(|c| normalize_name(c) == g).map(|p| p + 1)
}

pub fn hits_from_positions(positions: &[Option<usize>]) -> MetricsReport {
    let n = positions.len().max(1) as f64;
    let hits = HITS_AT
        .iter()
        .map(|&k| (k, positions.iter().filter(|p| matches!(p, Some(q) if *q <= k)).count() as f64 / n))
        .collect();
    MetricsReport {
        mr: None,
        mrr: f64::NAN,
        hits,
        query_count: positions.len(),
    }
}

/// A named row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub metrics: MetricsReport,
}

fn cell(x: Option<f64>, digits: usize) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.digits$}"),
        _ => "-".into(),
    }
}

pub fn render_table(rows: &[ReportRow]) -> String {
    let header = ["model", "queries", "MR", "MRR", "Hits@1", "Hits@3", "Hits@10"];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let m = &r.metrics;
            vec![
                r.name.clone(),
                m.query_count.to_string(),
                cell(m.mr, 2),
                cell(Some(m.mrr), 4),
                cell(Some(m.hits_at(1)), 4),
                cell(Some(m.hits_at(3)), 4),
                cell(Some(m.hits_at(10)), 4),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cells: Vec<String>| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.iter().map(|s| s.to_string()).collect());
    line(widths.iter().map(|w| "-".repeat(*w)).collect());
    for r in body {
        line(r);
    }
    out
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("model,queries,mr,mrr,hits1,hits3,hits10\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.name.replace(',', " "),
            m.query_count,
            m.mr.map_or(String::new(), |v| v.to_string()),
            if m.mrr.is_finite() { m.mrr.to_string() } else { String::new() },
            m.hits_at(1),
            m.hits_at(3),
            m.hits_at(10)
        );
    }
    out
}

pub fn render_rule_quality(r: &RuleQualityReport) -> String {
    format!(
        "learned rules      {}\nhigh-confidence    {}\nHCR                {:.2}%\nRCS                {:.3}\nRQI                {:.2}%\n",
        r.learned_count, r.high_conf_count, r.hcr, r.rcs, r.rqi
    )
}
