//! Pipeline stages and their on-disk artifacts.
//!
//! Every stage writes into `<output_dir>/<stage>-<hash>/`, where the hash
//! covers the training graph, the stage's own settings and the hashes of the
//! stages it reads from. A stage whose directory already holds a `complete`
//! marker is reused.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use symkbc::eval::{
    compute_rule_quality, evaluate_inference_baseline, evaluate_model, read_annotations, render_csv, render_rule_quality,
    render_table, ReportRow, RuleQualityReport,
};
use symkbc::grounding::{ground_all, instantiate_paths, Grounding, GroundingCache};
use symkbc::proposer::{propose, refine, write_records, Backend, RefineReport};
use symkbc::rotate::{rotate_train, RotatEModel};
use symkbc::rules::{read_rule_records, write_rule_records, RuleRecord};
use symkbc::similarity::{SimilarityProvider, TrigramCosine};
use symkbc::subgraph::{extract_subgraph, read_dump, sample_targets, write_dump, ExtractorConfig, Subgraph};
use symkbc::trainer::{train, train_from, Reasoner, ReasonerParams, TrainerConfig};
use symkbc::{seed, KnowledgeBase, RelationId, Rule};

use crate::config::{parse_split, PipelineConfig};

const COMPLETE: &str = "complete";

fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    hex::encode(&h.finalize()[..8])
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config serializes")
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn is_complete(dir: &Path) -> bool {
    dir.join(COMPLETE).is_file()
}

fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn mark_complete(dir: &Path) -> Result<()> {
    write(&dir.join(COMPLETE), "")
}

fn relation_file(r: RelationId) -> String {
    format!("r{:04}.sg", r.0)
}

/// Options of the `eval` subcommand.
#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub split: Option<String>,
    pub rules_report: bool,
    pub emit_csv: bool,
    pub inference_baseline: bool,
}

/// What `eval` produced.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub text: String,
    pub report_path: PathBuf,
}

#[derive(Serialize)]
struct EvalJson<'a> {
    split: String,
    rows: &'a [ReportRow],
    #[serde(skip_serializing_if = "Option::is_none")]
    rule_quality: Option<&'a RuleQualityReport>,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub kb: KnowledgeBase,
    kb_hash: String,
}

impl Pipeline {
    pub fn open(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let kb = KnowledgeBase::load(&cfg.data.train, &cfg.data.valid, &cfg.data.test)?;
        let kb_hash = kb.content_hash();
        Ok(Self { cfg, kb, kb_hash })
    }

    fn extractor(&self) -> ExtractorConfig {
        ExtractorConfig { rng_seed: seed::derive(self.cfg.seed, "extract", &[]), ..self.cfg.extract.clone() }
    }

    fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig { seed: seed::derive(self.cfg.seed, "trainer", &[]), ..self.cfg.trainer.clone() }
    }

    fn extract_hash(&self) -> String {
        digest(&["extract", &self.kb_hash, &json(&self.cfg.extract), &self.cfg.seed.to_string()])
    }

    fn propose_hash(&self) -> String {
        digest(&["propose", &self.extract_hash(), &json(&self.cfg.proposer), &json(&self.cfg.similarity)])
    }

    fn rotate_hash(&self) -> Option<String> {
        self.cfg
            .rotate
            .enabled
            .then(|| digest(&["rotate", &self.kb_hash, &json(&self.cfg.rotate), &self.cfg.seed.to_string()]))
    }

    fn train_hash(&self) -> String {
        digest(&[
            "train",
            &self.propose_hash(),
            self.rotate_hash().as_deref().unwrap_or("none"),
            &json(&self.cfg.grounding),
            &json(&self.cfg.trainer),
            &self.cfg.seed.to_string(),
        ])
    }

    pub fn extract_dir(&self) -> PathBuf {
        self.cfg.output_dir.join(format!("extract-{}", self.extract_hash()))
    }

    pub fn propose_dir(&self) -> PathBuf {
        self.cfg.output_dir.join(format!("propose-{}", self.propose_hash()))
    }

    pub fn rotate_dir(&self) -> Option<PathBuf> {
        self.rotate_hash().map(|h| self.cfg.output_dir.join(format!("rotate-{h}")))
    }

    pub fn train_dir(&self) -> PathBuf {
        self.cfg.output_dir.join(format!("train-{}", self.train_hash()))
    }

    fn grounding_cache(&self) -> Result<GroundingCache> {
        Ok(GroundingCache::new(self.cfg.output_dir.join("groundings"), &self.kb)?.with_saturation(self.cfg.grounding.saturation))
    }

    fn relations(&self) -> impl Iterator<Item = RelationId> {
        (0..self.kb.num_relations() as u32).map(RelationId)
    }

    /// Samples subgraphs for every relation and writes one dump per relation.
    pub fn extract(&self) -> Result<String> {
        let dir = self.extract_dir();
        if is_complete(&dir) {
            return Ok(format!("reusing {}\n", dir.display()));
        }
        fresh_dir(&dir)?;
        let cfg = self.extractor();
        let mut index = String::from("file\trelation\tsubgraphs\tmean_triples\n");
        let mut out = String::from("relation\tsubgraphs\tmean_triples\n");
        for r in self.relations() {
            let targets = sample_targets(&self.kb, r, cfg.max_subgraphs_per_relation, cfg.rng_seed);
            let sgs: Vec<Subgraph> = targets.into_iter().map(|t| extract_subgraph(&self.kb, t, &cfg)).collect();
            let mean = if sgs.is_empty() { 0.0 } else { sgs.iter().map(Subgraph::len).sum::<usize>() as f64 / sgs.len() as f64 };
            let file = relation_file(r);
            write(&dir.join(&file), &write_dump(&self.kb, &sgs))?;
            let name = self.kb.relation_name(r);
            let _ = writeln!(index, "{file}\t{name}\t{}\t{mean:.2}", sgs.len());
            let _ = writeln!(out, "{name}\t{}\t{mean:.2}", sgs.len());
        }
        write(&dir.join("relations.tsv"), &index)?;
        mark_complete(&dir)?;
        let _ = writeln!(out, "wrote {}", dir.display());
        Ok(out)
    }

    fn load_subgraphs(&self, r: RelationId) -> Result<Vec<Subgraph>> {
        let path = self.extract_dir().join(relation_file(r));
        read_dump(&self.kb, &read(&path)?).with_context(|| format!("parsing {}", path.display()))
    }

    fn similarity(&self) -> Box<dyn SimilarityProvider> {
        Box::new(TrigramCosine)
    }

    /// Asks the backend for rules on every subgraph and refines the answers.
    pub fn propose(&self) -> Result<String> {
        let mut out = self.ensure_extract()?;
        let dir = self.propose_dir();
        if is_complete(&dir) {
            let _ = writeln!(out, "reusing {}", dir.display());
            return Ok(out);
        }
        fresh_dir(&dir)?;
        let backend = Backend::from_config(&self.cfg.proposer)?;
        let mut records = Vec::new();
        for r in self.relations() {
            let sgs = self.load_subgraphs(r)?;
            records.extend(propose(&backend, &self.kb, r, &sgs));
        }
        let (rules, report) = refine(&records, &self.kb, self.similarity().as_ref());
        write(&dir.join("proposals.jsonl"), &write_records(&records))?;
        let rule_records: Vec<RuleRecord> = rules.iter().map(Rule::to_record).collect();
        write(&dir.join("rules.jsonl"), &write_rule_records(&rule_records))?;
        write(&dir.join("stats.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
        mark_complete(&dir)?;
        out.push_str(&render_stats(&report));
        let _ = writeln!(out, "{} rules from {} proposals; wrote {}", rules.len(), records.len(), dir.display());
        Ok(out)
    }

    /// Trains the embedding model, when enabled.
    pub fn rotate_train(&self) -> Result<String> {
        let Some(dir) = self.rotate_dir() else {
            return Ok("embedding model disabled in config\n".into());
        };
        if is_complete(&dir) {
            return Ok(format!("reusing {}\n", dir.display()));
        }
        fresh_dir(&dir)?;
        let cfg = self.cfg.rotate.rotate_config(seed::derive(self.cfg.seed, "rotate", &[]));
        let (model, losses) = rotate_train(&self.kb, &cfg)?;
        model.save(&dir.join("model.bin"))?;
        let mut trace = String::from("epoch\tloss\n");
        for (i, l) in losses.iter().enumerate() {
            let _ = writeln!(trace, "{}\t{l:.6}", i + 1);
        }
        write(&dir.join("loss.tsv"), &trace)?;
        mark_complete(&dir)?;
        Ok(format!(
            "{} epochs, final loss {:.4}; wrote {}\n",
            losses.len(),
            losses.last().copied().unwrap_or(f64::NAN),
            dir.display()
        ))
    }

    fn ensure_extract(&self) -> Result<String> {
        if is_complete(&self.extract_dir()) {
            Ok(String::new())
        } else {
            self.extract()
        }
    }

    fn ensure_propose(&self) -> Result<String> {
        if is_complete(&self.propose_dir()) {
            Ok(String::new())
        } else {
            self.propose()
        }
    }

    fn ensure_rotate(&self) -> Result<String> {
        match self.rotate_dir() {
            Some(d) if !is_complete(&d) => self.rotate_train(),
            _ => Ok(String::new()),
        }
    }

    fn load_rules(&self) -> Result<Vec<Rule>> {
        let path = self.propose_dir().join("rules.jsonl");
        let records = read_rule_records(&read(&path)?).with_context(|| format!("parsing {}", path.display()))?;
        records
            .iter()
            .map(|r| Rule::from_record(r, &self.kb).map_err(anyhow::Error::from))
            .collect::<Result<_>>()
            .with_context(|| format!("parsing {}", path.display()))
    }

    fn load_rotate(&self) -> Result<Option<RotatEModel>> {
        match self.rotate_dir() {
            Some(d) => Ok(Some(RotatEModel::load(&d.join("model.bin"))?)),
            None => Ok(None),
        }
    }

    fn groundings(&self) -> Result<Vec<Grounding>> {
        let rules = self.load_rules()?;
        let cache = self.grounding_cache()?;
        let gs = ground_all(&self.kb, &rules, Some(&cache))?;
        let saturated = gs.iter().filter(|g| g.saturated).count();
        if saturated > 0 {
            log::warn!("{saturated} grounding(s) hit the saturation cap");
        }
        Ok(gs)
    }

    /// Fits rule, embedding and mixing weights. With `resume`, continues
    /// from the checkpoint in the stage directory.
    pub fn train(&self, resume: bool) -> Result<String> {
        let mut out = self.ensure_propose()?;
        out.push_str(&self.ensure_rotate()?);
        let dir = self.train_dir();
        let params_path = dir.join("params.json");
        if is_complete(&dir) && !resume {
            let _ = writeln!(out, "reusing {}", dir.display());
            return Ok(out);
        }
        let groundings = self.groundings()?;
        let rotate = self.load_rotate()?;
        let cfg = self.trainer_config();
        let outcome = if resume && params_path.is_file() {
            let start = ReasonerParams::load(&params_path)?;
            let _ = writeln!(out, "resuming from epoch {}", start.epoch);
            train_from(&self.kb, &groundings, rotate.as_ref(), &cfg, start)?
        } else {
            fresh_dir(&dir)?;
            train(&self.kb, &groundings, rotate.as_ref(), &cfg)?
        };
        outcome.params.save(&params_path)?;
        let mut trace = String::new();
        if !(resume && dir.join("trace.tsv").is_file()) {
            trace.push_str("epoch\tlr\tloss\tvalid_mrr\n");
        } else {
            trace = read(&dir.join("trace.tsv"))?;
        }
        for e in &outcome.trace {
            let mrr = e.valid_mrr.map_or("-".to_owned(), |m| format!("{m:.6}"));
            let _ = writeln!(trace, "{}\t{:e}\t{:.6}\t{mrr}", e.epoch, e.lr, e.loss);
        }
        write(&dir.join("trace.tsv"), &trace)?;
        mark_complete(&dir)?;
        let n_rules: usize = outcome.params.relations.iter().map(|p| p.rules.len()).sum();
        let _ = writeln!(
            out,
            "{} rules over {} relations; best epoch {} of {}{}; wrote {}",
            n_rules,
            self.kb.num_relations(),
            outcome.params.best_epoch,
            outcome.params.epoch,
            if outcome.stopped_early { " (stopped early)" } else { "" },
            dir.display()
        );
        Ok(out)
    }

    fn ensure_train(&self) -> Result<String> {
        if is_complete(&self.train_dir()) {
            Ok(String::new())
        } else {
            self.train(false)
        }
    }

    fn model_name(&self) -> String {
        let mut name = String::from("rules");
        if self.cfg.rotate.enabled {
            name.push_str("+rotate");
        }
        if self.cfg.trainer.uniform_weights {
            name.push_str(" (uniform)");
        }
        name
    }

    /// Ranks every query of the split and writes `eval-<split>.{txt,json}`
    /// (and `.csv` on request) into the training directory.
    pub fn eval(&self, opts: &EvalOptions) -> Result<EvalOutput> {
        let mut notes = self.ensure_train()?;
        let split_name = opts.split.clone().unwrap_or_else(|| self.cfg.eval.split.clone());
        let split = parse_split(&split_name)?;
        let dir = self.train_dir();
        let params = ReasonerParams::load(&dir.join("params.json"))?;
        let groundings = self.groundings()?;
        let rotate = self.load_rotate()?;
        let reasoner = Reasoner::new(&self.kb, &params, &groundings, rotate.as_ref())?;
        let mut rows = vec![ReportRow { name: self.model_name(), metrics: evaluate_model(&reasoner, split)? }];
        if opts.inference_baseline {
            let backend = Backend::from_config(&self.cfg.proposer)?;
            let (metrics, failures) = evaluate_inference_baseline(&backend, &self.kb, split, &self.extractor())?;
            if failures > 0 {
                let _ = writeln!(notes, "inference baseline: {failures} quer(ies) failed and count as misses");
            }
            rows.push(ReportRow { name: format!("direct inference ({})", self.cfg.proposer.model_name), metrics });
        }
        let quality = if opts.rules_report {
            let path = self
                .cfg
                .eval
                .annotations
                .as_ref()
                .ok_or_else(|| anyhow!("--rules-report needs eval.annotations in the config"))?;
            let ann = read_annotations(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
            let learned: Vec<String> = params.relations.iter().flat_map(|p| p.rules.iter().map(|w| w.rule.clone())).collect();
            Some(compute_rule_quality(&learned, &ann)?)
        } else {
            None
        };

        let mut text = format!("split: {split}\n\n");
        text.push_str(&render_table(&rows));
        if let Some(q) = &quality {
            text.push('\n');
            text.push_str(&render_rule_quality(q));
        }
        let report_path = dir.join(format!("eval-{split}.txt"));
        write(&report_path, &text)?;
        let js = EvalJson { split: split.to_string(), rows: &rows, rule_quality: quality.as_ref() };
        write(&dir.join(format!("eval-{split}.json")), &(serde_json::to_string_pretty(&js)? + "\n"))?;
        if opts.emit_csv {
            write(&dir.join(format!("eval-{split}.csv")), &render_csv(&rows))?;
        }
        notes.push_str(&text);
        Ok(EvalOutput { text: notes, report_path })
    }

    /// Top tails for `(head, relation, ?)` with per-rule contributions and
    /// the body paths that produce them.
    pub fn explain(&self, head: &str, relation: &str, top_k: Option<usize>) -> Result<String> {
        let h = self.kb.entity_id(head).map_err(|_| unknown("entity", head, self.kb.entities().names()))?;
        let r = self.kb.relation_id(relation).map_err(|_| unknown("relation", relation, self.kb.relations().names()))?;
        let mut out = self.ensure_train()?;
        let params = ReasonerParams::load(&self.train_dir().join("params.json"))?;
        let groundings = self.groundings()?;
        let rotate = self.load_rotate()?;
        let reasoner = Reasoner::new(&self.kb, &params, &groundings, rotate.as_ref())?;
        let result = reasoner.explain(h, r, top_k.unwrap_or(self.cfg.eval.top_k))?;
        let rel = params.relation(relation).expect("every relation has params");
        let _ = writeln!(out, "({head}, {relation}, ?)  alpha {:.4}", rel.alpha());
        for (i, cand) in result.top.iter().enumerate() {
            let tail = self.kb.entity_name(cand.tail);
            let known = if self.kb.known_tails(h, r).contains(&cand.tail) { "  [known]" } else { "" };
            let _ = writeln!(out, "{:>3}. {tail}  score {:.6}{known}", i + 1, cand.score);
            for c in &cand.contributions {
                match &c.rule {
                    Some(rule) => {
                        let _ = writeln!(out, "       {:+.6} = {:.6} x {}  {rule}", c.value, c.weight, c.signal);
                        if let Some(g) = groundings.iter().find(|g| &g.rule.canonical_form() == rule) {
                            for path in instantiate_paths(&self.kb, &g.rule, h, cand.tail, 3) {
                                let names: Vec<&str> = path.iter().map(|&e| self.kb.entity_name(e)).collect();
                                let _ = writeln!(out, "           via {}", names.join(" -> "));
                            }
                        }
                    }
                    None => {
                        let _ = writeln!(out, "       {:+.6} = {:.6} x {:.6}  embedding", c.value, c.weight, c.signal);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn unknown(kind: &str, name: &str, vocab: &[String]) -> anyhow::Error {
    let sim = TrigramCosine;
    let mut scored: Vec<(f64, &String)> = vocab.iter().map(|v| (sim.score(name, v), v)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let near: Vec<&str> = scored.iter().take(5).map(|(_, v)| v.as_str()).collect();
    anyhow!("unknown {kind} `{name}`; closest: {}", near.join(", "))
}

pub fn render_stats(report: &RefineReport) -> String {
    let mut out = format!("{:<10} {:>7} {:>9} {:>9}  reasons\n", "stage", "input", "accepted", "rejected");
    for s in &report.stages {
        let reasons: Vec<String> = s.reasons.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        let _ = writeln!(out, "{:<10} {:>7} {:>9} {:>9}  {}", s.stage, s.input, s.accepted, s.rejected, reasons.join("; "));
    }
    if report.backend_errors > 0 {
        let _ = writeln!(out, "backend errors: {}", report.backend_errors);
    }
    out
}
