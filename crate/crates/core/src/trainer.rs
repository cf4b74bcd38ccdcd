//! Learned mixture of rule scores and embedding scores.
//!
//! For a query `(h, r, ?)` every rule of `r` whose row is non-zero takes part
//! in a softmax together with the embedding logit, and the tail scores are
//!
//! ```text
//! score(t) = α Σ_i w_i s_i(t) + (1 - α) w_emb f(t)
//! ```
//!
//! where `f` is the RotatE row min-max scaled to `[0, 1]`. Training
//! minimises the cross-entropy of the gold tail under a softmax over
//! candidate tails.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::compute_metrics;
use crate::grounding::Grounding;
use crate::kb::{EntityId, KnowledgeBase, RelationId, Split, Triple};
use crate::optim::{AdamW, StepDecay};
use crate::rotate::RotatEModel;
use crate::seed;

/// Sparse tail scores of one rule for one query head.
pub type RuleRow = Vec<(EntityId, f64)>;

/// Which grounding matrix feeds the rule rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleSignal {
    /// Body counts `C(h, t)`, for training and ranking.
    Body,
    /// `+A / -C` during training; ranking still uses body counts.
    Signed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    #[serde(skip)]
    pub seed: u64,
    pub uniform_weights: bool,
    pub rule_signal: RuleSignal,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.1,
            step_size: 100,
            gamma: 0.01,
            patience: 30,
            max_epochs: 300,
            batch_size: 512,
            seed: 0,
            uniform_weights: false,
            rule_signal: RuleSignal::Body,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleWeight {
    /// Canonical form of the rule.
    pub rule: String,
    pub logit: f64,
    /// Share of this rule when every rule of the relation fires.
    #[serde(default)]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationParams {
    pub relation: String,
    pub rules: Vec<RuleWeight>,
    pub embedding_logit: f64,
    #[serde(default)]
    pub embedding_weight: f64,
    pub alpha_logit: f64,
    #[serde(default)]
    pub alpha: f64,
}

impl RelationParams {
    fn new(relation: &str, rules: Vec<String>) -> Self {
        let mut p = Self {
            relation: relation.to_owned(),
            rules: rules.into_iter().map(|rule| RuleWeight { rule, logit: 0.0, weight: 0.0 }).collect(),
            embedding_logit: 0.0,
            embedding_weight: 0.0,
            alpha_logit: 0.0,
            alpha: 0.0,
        };
        p.refresh();
        p
    }

    pub fn alpha(&self) -> f64 {
        sigmoid(self.alpha_logit)
    }

    /// Recomputes the derived `weight`, `embedding_weight` and `alpha` fields.
    pub fn refresh(&mut self) {
        let logits: Vec<f64> = self.rules.iter().map(|r| r.logit).chain([self.embedding_logit]).collect();
        let w = softmax(&logits);
        for (r, wi) in self.rules.iter_mut().zip(&w) {
            r.weight = *wi;
        }
        self.embedding_weight = w[w.len() - 1];
        self.alpha = self.alpha(); // keep the serialized copy in sync
    }

    fn n_params(&self) -> usize {
        self.rules.len() + 2
    }

    fn read_flat(&mut self, flat: &[f64]) {
        let n = self.rules.len();
        for (r, x) in self.rules.iter_mut().zip(flat) {
            r.logit = *x;
        }
        self.embedding_logit = flat[n];
        self.alpha_logit = flat[n + 1];
    }

    fn write_flat(&self, flat: &mut [f64]) {
        let n = self.rules.len();
        for (x, r) in flat.iter_mut().zip(&self.rules) {
            *x = r.logit;
        }
        flat[n] = self.embedding_logit;
        flat[n + 1] = self.alpha_logit;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerParams {
    pub relations: Vec<RelationParams>,
    pub epoch: usize,
    pub best_epoch: usize,
    pub uniform_weights: bool,
}

impl ReasonerParams {
    /// Zero logits for every relation of `kb`, with the rules of `groundings`
    /// attached to their head relation in the given order.
    pub fn init(kb: &KnowledgeBase, groundings: &[Grounding], uniform_weights: bool) -> Self {
        let mut per_rel: Vec<Vec<String>> = vec![Vec::new(); kb.num_relations()];
        for g in groundings {
            if let Some(r) = g.rule.head.relation_id() {
                let form = g.rule.canonical_form();
                if !per_rel[r.index()].contains(&form) {
                    per_rel[r.index()].push(form);
                }
            }
        }
        Self {
            relations: per_rel
                .into_iter()
                .enumerate()
                .map(|(r, rules)| RelationParams::new(kb.relation_name(RelationId(r as u32)), rules))
                .collect(),
            epoch: 0,
            best_epoch: 0,
            uniform_weights,
        }
    }

    pub fn relation(&self, name: &str) -> Option<&RelationParams> {
        self.relations.iter().find(|p| p.relation == name)
    }

    pub fn refresh(&mut self) {
        self.relations.iter_mut().for_each(RelationParams::refresh);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut copy = self.clone();
        copy.refresh();
        let text = serde_json::to_string_pretty(&copy).expect("params serialize");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut p: Self = serde_json::from_str(&text).map_err(|e| Error::format("params checkpoint", e.to_string()))?;
        p.refresh();
        Ok(p)
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.relations.len() + 1);
        let mut acc = 0;
        for p in &self.relations {
            off.push(acc);
            acc += p.n_params();
        }
        off.push(acc);
        off
    }

    fn to_flat(&self) -> Vec<f64> {
        let off = self.offsets();
        let mut flat = vec![0.0; off[off.len() - 1]];
        for (k, p) in self.relations.iter().enumerate() {
            p.write_flat(&mut flat[off[k]..off[k + 1]]);
        }
        flat
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let off = self.offsets();
        for (k, p) in self.relations.iter_mut().enumerate() {
            p.read_flat(&flat[off[k]..off[k + 1]]);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn active(rule_rows: &[RuleRow]) -> Vec<usize> {
    (0..rule_rows.len())
        .filter(|&i| rule_rows[i].iter().any(|&(_, s)| s != 0.0))
        .collect()
}

/// Softmax weights of the active rules followed by the embedding weight.
fn mixture_weights(p: &RelationParams, active: &[usize]) -> Vec<f64> {
    let logits: Vec<f64> = active.iter().map(|&i| p.rules[i].logit).chain([p.embedding_logit]).collect();
    softmax(&logits)
}

/// Scores every tail. `rule_rows` holds one row per rule of `p`; rows that
/// are entirely zero take no part in the weighting.
pub fn combined_score(p: &RelationParams, rule_rows: &[RuleRow], emb_row: &[f64]) -> Vec<f64> {
    let act = active(rule_rows);
    let w = mixture_weights(p, &act);
    let alpha = p.alpha();
    let w_emb = w[act.len()];
    let mut out: Vec<f64> = emb_row.iter().map(|f| (1.0 - alpha) * w_emb * f).collect();
    for (k, &i) in act.iter().enumerate() {
        for &(t, s) in &rule_rows[i] {
            out[t.index()] += alpha * w[k] * s;
        }
    }
    out
}

/// Loss of one query and its gradient with respect to
/// `[rule logits..., embedding logit, alpha logit]` of the relation.
/// `candidate[t]` is false for tails excluded from the softmax.
pub fn query_loss_and_gradient(
    p: &RelationParams,
    rule_rows: &[RuleRow],
    emb_row: &[f64],
    gold: EntityId,
    candidate: &[bool],
) -> (f64, Vec<f64>) {
    let act = active(rule_rows);
    let w = mixture_weights(p, &act);
    let alpha = p.alpha();
    let n = act.len();
    let w_emb = w[n];
    let z = combined_score(p, rule_rows, emb_row);

    let m = z
        .iter()
        .zip(candidate)
        .filter(|(_, &c)| c)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = z.iter().zip(candidate).filter(|(_, &c)| c).map(|(v, _)| (v - m).exp()).sum();
    let lse = m + denom.ln();
    let loss = lse - z[gold.index()];

    // g_t = p_t - [t = gold] over candidates
    let g: Vec<f64> = z
        .iter()
        .zip(candidate)
        .enumerate()
        .map(|(t, (v, &c))| {
            let pt = if c { (v - lse).exp() } else { 0.0 };
            pt - if t == gold.index() { 1.0 } else { 0.0 }
        })
        .collect();

    let g_rules: Vec<f64> = act
        .iter()
        .map(|&i| rule_rows[i].iter().map(|&(t, s)| g[t.index()] * s).sum())
        .collect();
    let g_emb: f64 = g.iter().zip(emb_row).map(|(a, b)| a * b).sum();

    // dL/dw for every mixture component
    let mut dw: Vec<f64> = g_rules.iter().map(|x| alpha * x).collect();
    dw.push((1.0 - alpha) * g_emb);
    let inner: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();

    let mut grad = vec![0.0; p.n_params()];
    for (k, &i) in act.iter().enumerate() {
        grad[i] = w[k] * (dw[k] - inner);
    }
    grad[p.rules.len()] = w_emb * (dw[n] - inner);
    let d_alpha: f64 = act.iter().enumerate().map(|(k, _)| w[k] * g_rules[k]).sum::<f64>() - w_emb * g_emb;
    grad[p.rules.len() + 1] = d_alpha * alpha * (1.0 - alpha);
    (loss, grad)
}

/// Rank of `gold` among `scores` restricted to `candidate`; tied tails
/// share the mean of the ranks they span.
pub fn tie_aware_rank(scores: &[f64], gold: EntityId, candidate: &[bool]) -> f64 {
    let sg = scores[gold.index()];
    let mut higher = 0usize;
    let mut tied = 0usize;
    for (t, (&s, &c)) in scores.iter().zip(candidate).enumerate() {
        if !c || t == gold.index() {
            continue;
        }
        if s > sg {
            higher += 1;
        } else if s == sg {
            tied += 1;
        }
    }
    higher as f64 + 1.0 + tied as f64 / 2.0
}

/// One contributing term of a tail's score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contribution {
    /// Canonical rule form, or `None` for the embedding term.
    pub rule: Option<String>,
    pub weight: f64,
    pub signal: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedTail {
    pub tail: EntityId,
    pub score: f64,
    pub contributions: Vec<Contribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingResult {
    pub head: EntityId,
    pub relation: RelationId,
    pub gold: Option<EntityId>,
    pub rank: Option<f64>,
    /// Highest-scoring candidate tails, best first, ties by entity id.
    pub top: Vec<RankedTail>,
}

/// Trained parameters bound to the groundings and the embedding model
/// they score with.
pub struct Reasoner<'a> {
    kb: &'a KnowledgeBase,
    params: &'a ReasonerParams,
    rotate: Option<&'a RotatEModel>,
    /// Per relation, the grounding of each rule slot.
    slots: Vec<Vec<Option<&'a Grounding>>>,
}

impl<'a> Reasoner<'a> {
    pub fn new(
        kb: &'a KnowledgeBase,
        params: &'a ReasonerParams,
        groundings: &'a [Grounding],
        rotate: Option<&'a RotatEModel>,
    ) -> Result<Self> {
        if params.relations.len() != kb.num_relations() {
            return Err(Error::format(
                "params checkpoint",
                format!("{} relations, knowledge base has {}", params.relations.len(), kb.num_relations()),
            ));
        }
        if let Some(m) = rotate {
            if m.num_entities() != kb.num_entities() || m.num_relations() != kb.num_relations() {
                return Err(Error::format("rotate checkpoint", "vocabulary size does not match the knowledge base"));
            }
        }
        let mut index: HashMap<(usize, String), &Grounding> = HashMap::new();
        for g in groundings {
            if let Some(r) = g.rule.head.relation_id() {
                index.entry((r.index(), g.rule.canonical_form())).or_insert(g);
            }
        }
        let slots = params
            .relations
            .iter()
            .enumerate()
            .map(|(r, p)| {
                p.rules
                    .iter()
                    .map(|rw| {
                        let g = index.get(&(r, rw.rule.clone())).copied();
                        if g.is_none() {
                            log::warn!("no grounding for `{}`; it will never fire", rw.rule);
                        }
                        g
                    })
                    .collect()
            })
            .collect();
        Ok(Self { kb, params, rotate, slots })
    }

    pub fn params(&self) -> &ReasonerParams {
        self.params
    }

    fn check(&self, h: EntityId, r: RelationId) -> Result<()> {
        if h.index() >= self.kb.num_entities() {
            return Err(Error::UnknownEntity(h.0.to_string()));
        }
        if r.index() >= self.kb.num_relations() {
            return Err(Error::UnknownRelation(r.0.to_string()));
        }
        Ok(())
    }

    pub fn rule_rows(&self, h: EntityId, r: RelationId, signal: RuleSignal) -> Vec<RuleRow> {
        self.slots[r.index()]
            .iter()
            .map(|g| match g {
                None => Vec::new(),
                Some(g) => {
                    let row = match signal {
                        RuleSignal::Body => g.hypothesis_row(h),
                        RuleSignal::Signed => g.score_row(h),
                    };
                    row.into_iter().map(|(t, s)| (t, s as f64)).collect()
                }
            })
            .collect()
    }

    /// Min-max scaled embedding scores, or zeros without an embedding model.
    pub fn embedding_row(&self, h: EntityId, r: RelationId) -> Vec<f64> {
        let n = self.kb.num_entities();
        let Some(m) = self.rotate else {
            return vec![0.0; n];
        };
        let raw = m.score_tails(h, r).expect("ids checked against the model size");
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return vec![0.0; n];
        }
        raw.into_iter().map(|x| (x - lo) / (hi - lo)).collect()
    }

    pub fn scores(&self, h: EntityId, r: RelationId) -> Result<Vec<f64>> {
        self.check(h, r)?;
        let rows = self.rule_rows(h, r, RuleSignal::Body);
        Ok(combined_score(&self.params.relations[r.index()], &rows, &self.embedding_row(h, r)))
    }

    /// Filtered ranking of `(h, r, ?)`: every known tail other than `gold`
    /// is removed before ranking. `top_k` tails are returned with their
    /// score breakdown.
    pub fn rank(&self, h: EntityId, r: RelationId, gold: Option<EntityId>, top_k: usize) -> Result<RankingResult> {
        self.rank_impl(h, r, gold, top_k, true)
    }

    /// Like [`rank`](Self::rank) without a gold tail and without removing
    /// known tails.
    pub fn explain(&self, h: EntityId, r: RelationId, top_k: usize) -> Result<RankingResult> {
        self.rank_impl(h, r, None, top_k, false)
    }

    fn rank_impl(&self, h: EntityId, r: RelationId, gold: Option<EntityId>, top_k: usize, filtered: bool) -> Result<RankingResult> {
        self.check(h, r)?;
        let p = &self.params.relations[r.index()];
        let rows = self.rule_rows(h, r, RuleSignal::Body);
        let emb = self.embedding_row(h, r);
        let scores = combined_score(p, &rows, &emb);
        let mut candidate = vec![true; scores.len()];
        if filtered {
            for t in self.kb.known_tails(h, r) {
                if Some(*t) != gold {
                    candidate[t.index()] = false;
                }
            }
        }
        let rank = gold.map(|g| tie_aware_rank(&scores, g, &candidate));

        let mut order: Vec<usize> = (0..scores.len()).filter(|&t| candidate[t]).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let act = active(&rows);
        let w = mixture_weights(p, &act);
        let alpha = p.alpha();
        let top = order
            .into_iter()
            .take(top_k)
            .map(|t| {
                let mut contributions = Vec::new();
                for (k, &i) in act.iter().enumerate() {
                    let s = rows[i].iter().find(|(e, _)| e.index() == t).map_or(0.0, |x| x.1);
                    if s != 0.0 {
                        contributions.push(Contribution {
                            rule: Some(p.rules[i].rule.clone()),
                            weight: alpha * w[k],
                            signal: s,
                            value: alpha * w[k] * s,
                        });
                    }
                }
                if self.rotate.is_some() {
                    let weight = (1.0 - alpha) * w[act.len()];
                    contributions.push(Contribution {
                        rule: None,
                        weight,
                        signal: emb[t],
                        value: weight * emb[t],
                    });
                }
                RankedTail {
                    tail: EntityId(t as u32),
                    score: scores[t],
                    contributions,
                }
            })
            .collect();
        Ok(RankingResult { head: h, relation: r, gold, rank, top })
    }

    /// Filtered ranks of every triple of `split`, in split order.
    pub fn split_ranks(&self, split: Split) -> Result<Vec<f64>> {
        self.kb
            .split(split)
            .par_iter()
            .map(|t| self.rank(t.head, t.relation, Some(t.tail), 0).map(|r| r.rank.expect("gold given")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub valid_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ReasonerParams,
    pub trace: Vec<EpochStats>,
    pub stopped_early: bool,
}

fn relations_to_train(kb: &KnowledgeBase, params: &ReasonerParams, has_embedding: bool) -> Vec<bool> {
    (0..kb.num_relations())
        .map(|r| has_embedding || !params.relations[r].rules.is_empty())
        .collect()
}

/// Fits the mixture parameters on the training split, starting from zero
/// logits.
pub fn train(kb: &KnowledgeBase, groundings: &[Grounding], rotate: Option<&RotatEModel>, cfg: &TrainerConfig) -> Result<TrainOutcome> {
    let start = ReasonerParams::init(kb, groundings, cfg.uniform_weights);
    train_from(kb, groundings, rotate, cfg, start)
}

/// Continues training from `start`; the epoch counter carries on from
/// `start.epoch`.
pub fn train_from(
    kb: &KnowledgeBase,
    groundings: &[Grounding],
    rotate: Option<&RotatEModel>,
    cfg: &TrainerConfig,
    start: ReasonerParams,
) -> Result<TrainOutcome> {
    if kb.train().is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let has_rules = start.relations.iter().any(|p| !p.rules.is_empty());
    if !has_rules && rotate.is_none() {
        return Err(Error::NothingToLearn("no classifiable rules and no embedding model".into()));
    }
    let trainable = relations_to_train(kb, &start, rotate.is_some());
    let queries: Vec<Triple> = kb.train().iter().copied().filter(|t| trainable[t.relation.index()]).collect();

    let mut params = start;
    params.uniform_weights = cfg.uniform_weights;
    let offsets = params.offsets();
    let mut flat = params.to_flat();
    // in uniform mode only the mixing logits move
    let frozen: Vec<bool> = {
        let mut f = vec![false; flat.len()];
        if cfg.uniform_weights {
            for (k, p) in params.relations.iter().enumerate() {
                for x in &mut f[offsets[k]..offsets[k] + p.rules.len() + 1] {
                    *x = true;
                }
            }
        }
        f
    };
    if cfg.uniform_weights {
        for (x, &fz) in flat.iter_mut().zip(&frozen) {
            if fz {
                *x = 0.0;
            }
        }
        params.set_flat(&flat);
    }

    let mut opt = AdamW::new(flat.len(), cfg.lr, cfg.weight_decay);
    let schedule = StepDecay { base_lr: cfg.lr, step_size: cfg.step_size, gamma: cfg.gamma };
    let mut rng = seed::rng(cfg.seed, "trainer", &[params.epoch as u64]);
    let mut order: Vec<usize> = (0..queries.len()).collect();
    let has_valid = !kb.split(Split::Valid).is_empty();

    let valid_mrr = |p: &ReasonerParams| -> Result<Option<f64>> {
        if !has_valid {
            return Ok(None);
        }
        let reasoner = Reasoner::new(kb, p, groundings, rotate)?;
        Ok(Some(compute_metrics(&reasoner.split_ranks(Split::Valid)?)?.mrr))
    };

    let mut best = params.clone();
    let mut best_mrr = valid_mrr(&params)?;
    let mut since_best = 0usize;
    let mut trace = Vec::new();
    let mut stopped_early = false;
    let first_epoch = params.epoch;

    for epoch in first_epoch..first_epoch + cfg.max_epochs {
        let lr = schedule.lr_at(epoch);
        opt.lr = lr;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let reasoner = Reasoner::new(kb, &params, groundings, rotate)?;
            let parts: Vec<(usize, f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&q| {
                    let t = queries[q];
                    let p = &params.relations[t.relation.index()];
                    let rows = reasoner.rule_rows(t.head, t.relation, cfg.rule_signal);
                    let emb = reasoner.embedding_row(t.head, t.relation);
                    let mut candidate = vec![true; kb.num_entities()];
                    for o in kb.train_tails(t.head, t.relation) {
                        if *o != t.tail {
                            candidate[o.index()] = false;
                        }
                    }
                    let (l, g) = query_loss_and_gradient(p, &rows, &emb, t.tail, &candidate);
                    (t.relation.index(), l, g)
                })
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; flat.len()];
            for (r, l, g) in parts {
                epoch_loss += l;
                for (dst, src) in grad[offsets[r]..offsets[r + 1]].iter_mut().zip(&g) {
                    *dst += src * scale;
                }
            }
            let before = flat.clone();
            opt.step(&mut flat, &grad);
            for ((x, b), &fz) in flat.iter_mut().zip(&before).zip(&frozen) {
                if fz {
                    *x = *b;
                }
            }
            params.set_flat(&flat);
        }
        params.epoch = epoch + 1;
        let mrr = valid_mrr(&params)?;
        trace.push(EpochStats {
            epoch: epoch + 1,
            lr,
            loss: epoch_loss / queries.len().max(1) as f64,
            valid_mrr: mrr,
        });
        match (mrr, best_mrr) {
            (Some(m), Some(b)) if m <= b => {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
            _ => {
                best_mrr = mrr;
                best = params.clone();
                best.best_epoch = epoch + 1;
                since_best = 0;
            }
        }
    }
    let final_epoch = params.epoch;
    let mut out = if has_valid { best } else { params };
    out.epoch = final_epoch;
    out.refresh();
    Ok(TrainOutcome { params: out, trace, stopped_early })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(logits: &[f64], emb: f64, a: f64) -> RelationParams {
        let mut p = RelationParams::new("r", (0..logits.len()).map(|i| format!("rule{i}")).collect());
        for (r, l) in p.rules.iter_mut().zip(logits) {
            r.logit = *l;
        }
        p.embedding_logit = emb;
        p.alpha_logit = a;
        p
    }

    #[test]
    fn single_firing_rule_with_full_alpha_picks_its_tail() {
        let p = params(&[0.3, -1.0], 0.0, 40.0);
        let rows = vec![vec![(EntityId(2), 1.0)], vec![]];
        let s = combined_score(&p, &rows, &[0.0; 4]);
        let best = (0..4).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        assert_eq!(best, 2);
    }

    #[test]
    fn zero_alpha_follows_embedding() {
        let p = params(&[2.0], 0.0, -60.0);
        let rows = vec![vec![(EntityId(0), 5.0)]];
        let emb = [0.1, 0.9, 0.4];
        let s = combined_score(&p, &rows, &emb);
        let mut by_score: Vec<usize> = (0..3).collect();
        by_score.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        assert_eq!(by_score, vec![1, 2, 0]);
    }

    #[test]
    fn tie_ranks() {
        let all = [true; 4];
        assert_eq!(tie_aware_rank(&[0.1, 0.9, 0.3, 0.2], EntityId(1), &all), 1.0);
        assert_eq!(tie_aware_rank(&[0.9, 0.9, 0.3, 0.2], EntityId(1), &all), 1.5);
        assert_eq!(tie_aware_rank(&[0.9, 0.9, 0.9, 0.2], EntityId(3), &all), 4.0);
        assert_eq!(tie_aware_rank(&[0.9, 0.5, 0.9, 0.2], EntityId(1), &[false, true, true, true]), 2.0);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let w = softmax(&[0.0; 4]);
        assert!(w.iter().all(|x| (x - 0.25).abs() < 1e-15));
        let w = softmax(&[1000.0, 0.0]);
        assert!((w[0] - 1.0).abs() < 1e-12 && w[1] >= 0.0);
    }

    #[test]
    fn flat_round_trip() {
        let mut rp = ReasonerParams {
            relations: vec![params(&[1.0, 2.0], 3.0, 4.0), params(&[], 5.0, 6.0)],
            epoch: 0,
            best_epoch: 0,
            uniform_weights: false,
        };
        let flat = rp.to_flat();
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        rp.set_flat(&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(rp.relations[1].alpha_logit, 1.0);
        assert_eq!(rp.relations[0].rules[1].logit, 5.0);
    }
}
