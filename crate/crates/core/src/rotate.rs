//! RotatE embeddings: entities are complex vectors and each relation is an
//! elementwise rotation, scored as `γ - Σ_k |h_k · e^{iθ_k} - t_k|`.
//!
//! Rotations are stored as phase angles, so every relation embedding has
//! unit modulus by construction.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase, RelationId, Triple};
use crate::optim::AdamW;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotatEConfig {
    pub dim: usize,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub gamma: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for RotatEConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            negatives_per_positive: 64,
            epochs: 100,
            batch_size: 128,
            lr: 1e-3,
            gamma: 6.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotatEModel {
    dim: usize,
    gamma: f64,
    num_entities: usize,
    num_relations: usize,
    /// Per entity: `dim` real parts followed by `dim` imaginary parts.
    entity: Vec<f64>,
    /// Per relation: `dim` phases in `(-π, π]`.
    phase: Vec<f64>,
}

/// Gradients laid out like the model parameters.
#[derive(Debug, Clone)]
pub struct RotatEGradient {
    pub entity: Vec<f64>,
    pub phase: Vec<f64>,
}

/// A positive triple with its corrupted tails.
#[derive(Debug, Clone)]
pub struct Sample {
    pub positive: Triple,
    pub negative_tails: Vec<EntityId>,
}

fn wrap_phase(x: f64) -> f64 {
    let mut y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
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

impl RotatEModel {
    /// Seeded initialisation: entity coordinates uniform in
    /// `±(γ + 2) / dim`, phases uniform in `(-π, π]`.
    pub fn init(num_entities: usize, num_relations: usize, dim: usize, gamma: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed, "rotate-init", &[]);
        let range = (gamma + 2.0) / dim as f64;
        let entity = (0..num_entities * 2 * dim).map(|_| rng.gen_range(-range..range)).collect();
        let phase = (0..num_relations * dim).map(|_| wrap_phase(rng.gen_range(-PI..PI))).collect();
        Self {
            dim,
            gamma,
            num_entities,
            num_relations,
            entity,
            phase,
        }
    }

    /// Builds a model from raw parameter arrays.
    pub fn from_parts(dim: usize, gamma: f64, entity: Vec<f64>, phase: Vec<f64>) -> Result<Self> {
        if dim == 0 || entity.len() % (2 * dim) != 0 || phase.len() % dim != 0 {
            return Err(Error::format("rotate parameters", "array lengths do not match the dimension"));
        }
        Ok(Self {
            dim,
            gamma,
            num_entities: entity.len() / (2 * dim),
            num_relations: phase.len() / dim,
            entity,
            phase: phase.into_iter().map(wrap_phase).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn entity(&self, e: EntityId) -> (&[f64], &[f64]) {
        let base = e.index() * 2 * self.dim;
        let row = &self.entity[base..base + 2 * self.dim];
        row.split_at(self.dim)
    }

    pub fn phases(&self, r: RelationId) -> &[f64] {
        &self.phase[r.index() * self.dim..(r.index() + 1) * self.dim]
    }

    pub fn entity_params(&self) -> &[f64] {
        &self.entity
    }

    pub fn phase_params(&self) -> &[f64] {
        &self.phase
    }

    fn check(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<()> {
        for (kind, id, len) in [
            ("entity", h.index(), self.num_entities),
            ("relation", r.index(), self.num_relations),
            ("entity", t.index(), self.num_entities),
        ] {
            if id >= len {
                return Err(Error::IdOutOfRange { kind, id, len });
            }
        }
        Ok(())
    }

    pub fn score(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
        self.check(h, r, t)?;
        Ok(self.score_unchecked(h, r, t))
    }

    fn score_unchecked(&self, h: EntityId, r: RelationId, t: EntityId) -> f64 {
        let (hr, hi) = self.entity(h);
        let (tr, ti) = self.entity(t);
        let th = self.phases(r);
        let mut dist = 0.0;
        for k in 0..self.dim {
            let (s, c) = th[k].sin_cos();
            let zr = hr[k] * c - hi[k] * s - tr[k];
            let zi = hr[k] * s + hi[k] * c - ti[k];
            dist += zr.hypot(zi);
        }
        self.gamma - dist
    }

    /// Scores of every tail for `(h, r, ·)`.
    pub fn score_tails(&self, h: EntityId, r: RelationId) -> Result<Vec<f64>> {
        self.check(h, r, EntityId(0))?;
        let (hr, hi) = self.entity(h);
        let th = self.phases(r);
        let rotated: Vec<(f64, f64)> = (0..self.dim)
            .map(|k| {
                let (s, c) = th[k].sin_cos();
                (hr[k] * c - hi[k] * s, hr[k] * s + hi[k] * c)
            })
            .collect();
        Ok((0..self.num_entities)
            .map(|t| {
                let (tr, ti) = self.entity(EntityId(t as u32));
                let dist: f64 = rotated
                    .iter()
                    .enumerate()
                    .map(|(k, &(xr, xi))| (xr - tr[k]).hypot(xi - ti[k]))
                    .sum();
                self.gamma - dist
            })
            .collect())
    }

    /// Accumulates `upstream * ∂score/∂params` for one triple.
    fn accumulate(&self, tri: Triple, upstream: f64, grad: &mut RotatEGradient) {
        let d = self.dim;
        let hb = tri.head.index() * 2 * d;
        let tb = tri.tail.index() * 2 * d;
        let pb = tri.relation.index() * d;
        for k in 0..d {
            let (hr, hi) = (self.entity[hb + k], self.entity[hb + d + k]);
            let (tr, ti) = (self.entity[tb + k], self.entity[tb + d + k]);
            let (s, c) = self.phase[pb + k].sin_cos();
            let xr = hr * c - hi * s;
            let xi = hr * s + hi * c;
            let (zr, zi) = (xr - tr, xi - ti);
            let m = zr.hypot(zi);
            if m == 0.0 {
                continue;
            }
            let ur = -zr / m * upstream;
            let ui = -zi / m * upstream;
            grad.entity[hb + k] += ur * c + ui * s;
            grad.entity[hb + d + k] += -ur * s + ui * c;
            grad.entity[tb + k] -= ur;
            grad.entity[tb + d + k] -= ui;
            grad.phase[pb + k] += -ur * xi + ui * xr;
        }
    }

    pub fn zero_gradient(&self) -> RotatEGradient {
        RotatEGradient {
            entity: vec![0.0; self.entity.len()],
            phase: vec![0.0; self.phase.len()],
        }
    }

    /// Mean over samples of the negative-sampling loss
    /// `-log σ(score⁺) - mean_j log σ(-score⁻_j)`, with its gradient.
    pub fn loss_and_gradient(&self, samples: &[Sample]) -> (f64, RotatEGradient) {
        let mut grad = self.zero_gradient();
        if samples.is_empty() {
            return (0.0, grad);
        }
        let scale = 1.0 / samples.len() as f64;
        let mut loss = 0.0;
        for s in samples {
            let pos = self.score_unchecked(s.positive.head, s.positive.relation, s.positive.tail);
            loss -= log_sigmoid(pos);
            self.accumulate(s.positive, -sigmoid(-pos) * scale, &mut grad);
            if s.negative_tails.is_empty() {
                continue;
            }
            let n = s.negative_tails.len() as f64;
            for &t in &s.negative_tails {
                let tri = Triple::new(s.positive.head, s.positive.relation, t);
                let neg = self.score_unchecked(tri.head, tri.relation, tri.tail);
                loss -= log_sigmoid(-neg) / n;
                self.accumulate(tri, sigmoid(neg) / n * scale, &mut grad);
            }
        }
        (loss * scale, grad)
    }

    pub fn loss(&self, samples: &[Sample]) -> f64 {
        self.loss_and_gradient(samples).0
    }

    /// Mutable flat parameter views, used by finite-difference checks.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.entity, &mut self.phase)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + 8 * (self.entity.len() + self.phase.len()));
        buf.extend((self.dim as u64).to_le_bytes());
        buf.extend((self.num_entities as u64).to_le_bytes());
        buf.extend((self.num_relations as u64).to_le_bytes());
        buf.extend(self.gamma.to_le_bytes());
        for x in self.entity.iter().chain(&self.phase) {
            buf.extend(x.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        let bad = || Error::format("rotate checkpoint", path.display().to_string());
        if buf.len() < 32 || (buf.len() - 32) % 8 != 0 {
            return Err(bad());
        }
        let word = |k: usize| -> [u8; 8] { buf[k * 8..k * 8 + 8].try_into().expect("8 bytes") };
        let dim = u64::from_le_bytes(word(0)) as usize;
        let ne = u64::from_le_bytes(word(1)) as usize;
        let nr = u64::from_le_bytes(word(2)) as usize;
        let gamma = f64::from_le_bytes(word(3));
        let n_ent = ne * 2 * dim;
        let n_phase = nr * dim;
        if (buf.len() - 32) / 8 != n_ent + n_phase {
            return Err(bad());
        }
        let reals: Vec<f64> = (4..4 + n_ent + n_phase).map(|k| f64::from_le_bytes(word(k))).collect();
        Ok(Self {
            dim,
            gamma,
            num_entities: ne,
            num_relations: nr,
            entity: reals[..n_ent].to_vec(),
            phase: reals[n_ent..].to_vec(),
        })
    }
}

/// Trains a model on the training split with uniformly corrupted tails.
/// Returns the model and the mean loss of every epoch.
pub fn rotate_train(kb: &KnowledgeBase, cfg: &RotatEConfig) -> Result<(RotatEModel, Vec<f64>)> {
    if kb.train().is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let mut model = RotatEModel::init(kb.num_entities(), kb.num_relations(), cfg.dim, cfg.gamma, cfg.seed);
    let mut rng = seed::rng(cfg.seed, "rotate-train", &[]);
    let n_ent_params = model.entity.len();
    let mut params: Vec<f64> = model.entity.iter().chain(&model.phase).copied().collect();
    let mut opt = AdamW::new(params.len(), cfg.lr, 0.0);
    let mut order: Vec<usize> = (0..kb.train().len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let d = cfg.dim;

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let samples: Vec<Sample> = chunk
                .iter()
                .map(|&k| Sample {
                    positive: kb.train()[k],
                    negative_tails: (0..cfg.negatives_per_positive)
                        .map(|_| EntityId(rng.gen_range(0..kb.num_entities() as u32)))
                        .collect(),
                })
                .collect();
            let (loss, grad) = model.loss_and_gradient(&samples);
            epoch_loss += loss;
            batches += 1;

            let mut touched: Vec<usize> = Vec::new();
            let mut rows: Vec<usize> = Vec::new();
            let mut rels: Vec<usize> = Vec::new();
            for s in &samples {
                rows.push(s.positive.head.index());
                rows.push(s.positive.tail.index());
                rows.extend(s.negative_tails.iter().map(|t| t.index()));
                rels.push(s.positive.relation.index());
            }
            rows.sort_unstable();
            rows.dedup();
            rels.sort_unstable();
            rels.dedup();
            for e in rows {
                touched.extend(e * 2 * d..(e + 1) * 2 * d);
            }
            for r in rels {
                touched.extend(n_ent_params + r * d..n_ent_params + (r + 1) * d);
            }
            let flat_grad: Vec<f64> = grad.entity.iter().chain(&grad.phase).copied().collect();
            opt.step_sparse(&mut params, &flat_grad, &touched);
            model.entity.copy_from_slice(&params[..n_ent_params]);
            for (dst, src) in model.phase.iter_mut().zip(&params[n_ent_params..]) {
                *dst = wrap_phase(*src);
            }
        }
        trace.push(epoch_loss / batches.max(1) as f64);
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_rotation_scores_gamma() {
        let mut m = RotatEModel::init(2, 1, 4, 6.0, 1);
        let (ent, ph) = m.params_mut();
        ph.iter_mut().for_each(|x| *x = 0.0);
        let first: Vec<f64> = ent[..8].to_vec();
        ent[8..16].copy_from_slice(&first);
        let s = m.score(EntityId(0), RelationId(0), EntityId(1)).unwrap();
        assert!((s - 6.0).abs() < 1e-12);
        assert_eq!(s, m.score(EntityId(0), RelationId(0), EntityId(1)).unwrap());
    }

    #[test]
    fn matches_scalar_recomputation() {
        let m = RotatEModel::init(5, 3, 4, 6.0, 3);
        for h in 0..5u32 {
            for r in 0..3u32 {
                for t in 0..5u32 {
                    let (hr, hi) = m.entity(EntityId(h));
                    let (tr, ti) = m.entity(EntityId(t));
                    let mut dist = 0.0;
                    for k in 0..4 {
                        let th = m.phases(RelationId(r))[k];
                        let re = hr[k] * th.cos() - hi[k] * th.sin() - tr[k];
                        let im = hr[k] * th.sin() + hi[k] * th.cos() - ti[k];
                        dist += (re * re + im * im).sqrt();
                    }
                    let got = m.score(EntityId(h), RelationId(r), EntityId(t)).unwrap();
                    assert!((got - (6.0 - dist)).abs() < 1e-12);
                }
                let row = m.score_tails(EntityId(h), RelationId(r)).unwrap();
                for t in 0..5u32 {
                    assert!((row[t as usize] - m.score(EntityId(h), RelationId(r), EntityId(t)).unwrap()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn out_of_range_ids() {
        let m = RotatEModel::init(2, 1, 2, 6.0, 0);
        assert!(matches!(m.score(EntityId(2), RelationId(0), EntityId(0)), Err(Error::IdOutOfRange { .. })));
        assert!(m.score(EntityId(0), RelationId(1), EntityId(0)).is_err());
    }

    #[test]
    fn phases_stay_wrapped() {
        for x in [-7.0, -PI, 0.0, PI, 3.5, 100.0] {
            let y = wrap_phase(x);
            assert!(y > -PI && y <= PI, "{x} -> {y}");
            assert!(((x - y) / (2.0 * PI)).fract().abs() < 1e-9 || ((x - y) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let kb = KnowledgeBase::from_named(&[("a", "r", "b")], &[], &[]).unwrap();
        let cfg = RotatEConfig { dim: 4, epochs: 0, seed: 9, ..Default::default() };
        let (m, trace) = rotate_train(&kb, &cfg).unwrap();
        assert!(trace.is_empty());
        assert_eq!(m, RotatEModel::init(2, 1, 4, 6.0, 9));
    }

    #[test]
    fn single_triple_learns_to_rank_its_tail() {
        let kb = KnowledgeBase::from_named(&[("a", "r", "b"), ("c", "s", "d"), ("e", "s", "f")], &[], &[]).unwrap();
        let cfg = RotatEConfig {
            dim: 8,
            epochs: 300,
            lr: 0.05,
            negatives_per_positive: 4,
            seed: 2,
            ..Default::default()
        };
        let (m, _) = rotate_train(&kb, &cfg).unwrap();
        let (a, r, b) = (kb.entity_id("a").unwrap(), kb.relation_id("r").unwrap(), kb.entity_id("b").unwrap());
        let pos = m.score(a, r, b).unwrap();
        for t in 0..kb.num_entities() as u32 {
            if EntityId(t) != b {
                assert!(pos > m.score(a, r, EntityId(t)).unwrap());
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rotate.bin");
        let m = RotatEModel::init(7, 3, 5, 6.0, 4);
        m.save(&p).unwrap();
        assert_eq!(RotatEModel::load(&p).unwrap(), m);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 32 + 8 * (7 * 10 + 3 * 5));
        assert_eq!(u64::from_le_bytes(bytes[..8].try_into().unwrap()), 5);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 6.0);
    }
}
