use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symkbc::eval::evaluate_model;
use symkbc::grounding::{ground_all, Grounding};
use symkbc::rotate::{rotate_train, RotatEConfig};
use symkbc::rules::{map_relations, parse_rule};
use symkbc::similarity::TrigramCosine;
use symkbc::synthetic::{PlantedFamily, DECOY_RULES, PLANTED_RULE};
use symkbc::trainer::{
    combined_score, query_loss_and_gradient, softmax, tie_aware_rank, train, train_from, RelationParams, ReasonerParams,
    Reasoner, RuleRow, TrainerConfig,
};
use symkbc::{EntityId, Error, KnowledgeBase, Split};

fn random_params(rng: &mut ChaCha8Rng, n_rules: usize) -> RelationParams {
    let text = format!(
        r#"{{"relation":"r","rules":[{}],"embedding_logit":{},"alpha_logit":{}}}"#,
        (0..n_rules)
            .map(|i| format!(r#"{{"rule":"rule{i}","logit":{}}}"#, rng.gen_range(-2.0..2.0)))
            .collect::<Vec<_>>()
            .join(","),
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-2.0..2.0)
    );
    let mut p: RelationParams = serde_json::from_str(&text).unwrap();
    p.refresh();
    p
}

fn random_rows(rng: &mut ChaCha8Rng, n_rules: usize, n_ent: usize) -> Vec<RuleRow> {
    (0..n_rules)
        .map(|_| {
            if rng.gen_bool(0.2) {
                return Vec::new();
            }
            let mut row = Vec::new();
            for t in 0..n_ent {
                if rng.gen_bool(0.5) {
                    row.push((EntityId(t as u32), rng.gen_range(-3..=4) as f64));
                }
            }
            row
        })
        .collect()
}

fn with_logits(p: &RelationParams, flat: &[f64]) -> RelationParams {
    let mut q = p.clone();
    let n = q.rules.len();
    for (r, x) in q.rules.iter_mut().zip(flat) {
        r.logit = *x;
    }
    q.embedding_logit = flat[n];
    q.alpha_logit = flat[n + 1];
    q
}

fn flat(p: &RelationParams) -> Vec<f64> {
    p.rules.iter().map(|r| r.logit).chain([p.embedding_logit, p.alpha_logit]).collect()
}

#[test]
fn loss_gradient_matches_central_differences() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_ent = 5;
        let n_rules = rng.gen_range(1..=4);
        let p = random_params(&mut rng, n_rules);
        let rows = random_rows(&mut rng, n_rules, n_ent);
        let emb: Vec<f64> = (0..n_ent).map(|_| rng.gen_range(0.0..1.0)).collect();
        let gold = EntityId(rng.gen_range(0..n_ent as u32));
        let candidate: Vec<bool> = (0..n_ent).map(|t| t == gold.index() || rng.gen_bool(0.8)).collect();
        let (_, grad) = query_loss_and_gradient(&p, &rows, &emb, gold, &candidate);
        let x = flat(&p);
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += eps;
            xm[i] -= eps;
            let lp = query_loss_and_gradient(&with_logits(&p, &xp), &rows, &emb, gold, &candidate).0;
            let lm = query_loss_and_gradient(&with_logits(&p, &xm), &rows, &emb, gold, &candidate).0;
            let numeric = (lp - lm) / (2.0 * eps);
            let denom = numeric.abs().max(grad[i].abs());
            if denom < 1e-8 {
                continue;
            }
            assert!((numeric - grad[i]).abs() / denom <= 1e-4, "seed {seed} param {i}: {} vs {numeric}", grad[i]);
        }
    }
}

#[test]
fn softmax_is_a_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let n = rng.gen_range(1..20);
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let w = softmax(&logits);
        assert!(w.iter().all(|&x| x > 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn silent_rules_change_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n_ent = rng.gen_range(2..12);
        let n_rules = rng.gen_range(1..6);
        let p = random_params(&mut rng, n_rules);
        let mut rows = random_rows(&mut rng, n_rules, n_ent);
        let silent = rng.gen_range(0..n_rules);
        rows[silent] = if rng.gen_bool(0.5) { Vec::new() } else { vec![(EntityId(0), 0.0)] };
        let emb: Vec<f64> = (0..n_ent).map(|_| rng.gen_range(0.0..1.0)).collect();
        let full = combined_score(&p, &rows, &emb);

        let mut q = p.clone();
        q.rules.remove(silent);
        let mut fewer = rows.clone();
        fewer.remove(silent);
        assert_eq!(full, combined_score(&q, &fewer, &emb));
    }
}

#[test]
fn combined_score_matches_scalar_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let n_ent = rng.gen_range(1..10);
        let n_rules = rng.gen_range(0..5);
        let p = random_params(&mut rng, n_rules);
        let rows = random_rows(&mut rng, n_rules, n_ent);
        let emb: Vec<f64> = (0..n_ent).map(|_| rng.gen_range(0.0..1.0)).collect();
        let got = combined_score(&p, &rows, &emb);

        let dense = |row: &RuleRow| {
            let mut d = vec![0.0; n_ent];
            for &(t, s) in row {
                d[t.index()] = s;
            }
            d
        };
        let fires: Vec<bool> = rows.iter().map(|r| r.iter().any(|x| x.1 != 0.0)).collect();
        let mut z = p.embedding_logit.exp();
        for (i, r) in p.rules.iter().enumerate() {
            if fires[i] {
                z += r.logit.exp();
            }
        }
        let alpha = 1.0 / (1.0 + (-p.alpha_logit).exp());
        for t in 0..n_ent {
            let mut expect = (1.0 - alpha) * p.embedding_logit.exp() / z * emb[t];
            for (i, r) in p.rules.iter().enumerate() {
                if fires[i] {
                    expect += alpha * r.logit.exp() / z * dense(&rows[i])[t];
                }
            }
            assert!((expect - got[t]).abs() < 1e-12, "{expect} vs {}", got[t]);
        }
    }
}

#[test]
fn shifting_scores_keeps_ranks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.gen_range(1..30);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..64) as f64 / 16.0).collect();
        let shifted: Vec<f64> = scores.iter().map(|s| s + 7.5).collect();
        let cand: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.8)).collect();
        for g in 0..n {
            let mut c = cand.clone();
            c[g] = true;
            let e = EntityId(g as u32);
            assert_eq!(tie_aware_rank(&scores, e, &c), tie_aware_rank(&shifted, e, &c));
        }
    }
}

fn planted(seed: u64) -> (KnowledgeBase, Vec<Grounding>) {
    let kb = PlantedFamily::generate(5, 10, seed).knowledge_base().unwrap();
    let rules: Vec<_> = std::iter::once(PLANTED_RULE)
        .chain(DECOY_RULES)
        .map(|t| map_relations(&parse_rule(t).unwrap(), &kb, &TrigramCosine).unwrap().classified())
        .collect();
    let gs = ground_all(&kb, &rules, None).unwrap();
    (kb, gs)
}

fn planted_cfg(seed: u64, uniform: bool) -> TrainerConfig {
    TrainerConfig { lr: 0.05, seed, uniform_weights: uniform, max_epochs: 200, ..Default::default() }
}

#[test]
fn ranks_match_full_sort_oracle() {
    let (kb, gs) = planted(4);
    let out = train(&kb, &gs, None, &planted_cfg(4, false)).unwrap();
    let reasoner = Reasoner::new(&kb, &out.params, &gs, None).unwrap();
    for t in kb.split(Split::Test).iter().chain(kb.split(Split::Valid)) {
        let scores = reasoner.scores(t.head, t.relation).unwrap();
        let known = kb.known_tails(t.head, t.relation);
        let mut pool: Vec<(f64, usize)> = (0..kb.num_entities())
            .filter(|&e| e == t.tail.index() || !known.contains(&EntityId(e as u32)))
            .map(|e| (scores[e], e))
            .collect();
        pool.sort_by(|a, b| b.0.total_cmp(&a.0));
        let positions: Vec<usize> = pool
            .iter()
            .enumerate()
            .filter(|(_, (s, _))| *s == scores[t.tail.index()])
            .map(|(k, _)| k + 1)
            .collect();
        let oracle = positions.iter().sum::<usize>() as f64 / positions.len() as f64;
        let got = reasoner.rank(t.head, t.relation, Some(t.tail), 5).unwrap();
        assert_eq!(got.rank, Some(oracle));
        for tail in &got.top {
            let sum: f64 = tail.contributions.iter().map(|c| c.value).sum();
            assert!((sum - tail.score).abs() < 1e-6);
        }
    }
}

#[test]
fn planted_rule_wins_and_weight_learning_helps() {
    let mut wins = 0;
    let mut better = 0;
    for seed in 0..10 {
        let (kb, gs) = planted(seed);
        let learned = train(&kb, &gs, None, &planted_cfg(seed, false)).unwrap();
        let uniform = train(&kb, &gs, None, &planted_cfg(seed, true)).unwrap();
        let p = learned.params.relation("grandparent").unwrap();
        let top = p.rules.iter().max_by(|a, b| a.weight.total_cmp(&b.weight)).unwrap();
        let planted_form = gs[0].rule.canonical_form();
        let m_learned = evaluate_model(&Reasoner::new(&kb, &learned.params, &gs, None).unwrap(), Split::Valid).unwrap();
        let m_uniform = evaluate_model(&Reasoner::new(&kb, &uniform.params, &gs, None).unwrap(), Split::Valid).unwrap();
        if top.rule == planted_form && m_learned.hits_at(1) >= 0.9 {
            wins += 1;
        }
        if m_learned.mrr > m_uniform.mrr {
            better += 1;
        }
    }
    assert!(wins >= 9, "{wins}/10");
    assert!(better >= 9, "{better}/10");
}

#[test]
fn uniform_mode_weights_are_equal() {
    let (kb, gs) = planted(1);
    let a = train(&kb, &gs, None, &planted_cfg(1, true)).unwrap();
    let b = train(&kb, &gs, None, &planted_cfg(1, true)).unwrap();
    assert_eq!(a.params, b.params);
    assert!(a.params.uniform_weights);
    let p = a.params.relation("grandparent").unwrap();
    let n = p.rules.len() as f64;
    for r in &p.rules {
        assert!((r.weight - 1.0 / (n + 1.0)).abs() < 1e-12);
    }
    assert!((p.embedding_weight - 1.0 / (n + 1.0)).abs() < 1e-12);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let (kb, gs) = planted(2);
    let cfg = TrainerConfig { lr: 0.0, max_epochs: 5, ..planted_cfg(2, false) };
    let out = train(&kb, &gs, None, &cfg).unwrap();
    let init = ReasonerParams::init(&kb, &gs, false);
    for (a, b) in out.params.relations.iter().zip(&init.relations) {
        assert_eq!(flat(a), flat(b));
    }
}

#[test]
fn resume_continues_epochs_and_checkpoint_round_trips() {
    let (kb, gs) = planted(3);
    let cfg = TrainerConfig { max_epochs: 4, patience: 100, ..planted_cfg(3, false) };
    let first = train(&kb, &gs, None, &cfg).unwrap();
    assert_eq!(first.params.epoch, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.json");
    first.params.save(&path).unwrap();
    let loaded = ReasonerParams::load(&path).unwrap();
    assert_eq!(loaded, first.params);
    let second = train_from(&kb, &gs, None, &cfg, loaded).unwrap();
    assert_eq!(second.params.epoch, 8);
    assert_eq!(second.trace.first().unwrap().epoch, 5);
}

#[test]
fn embedding_only_relation_and_nothing_to_learn() {
    let kb = KnowledgeBase::from_named(&[("a", "r", "b"), ("b", "r", "c")], &[("a", "r", "c")], &[]).unwrap();
    assert!(matches!(train(&kb, &[], None, &TrainerConfig::default()), Err(Error::NothingToLearn(_))));
    let (m, _) = rotate_train(&kb, &RotatEConfig { dim: 4, epochs: 3, ..Default::default() }).unwrap();
    let out = train(&kb, &[], Some(&m), &TrainerConfig { max_epochs: 3, ..Default::default() }).unwrap();
    assert!(out.params.relations[0].rules.is_empty());
    let reasoner = Reasoner::new(&kb, &out.params, &[], Some(&m)).unwrap();
    assert_eq!(evaluate_model(&reasoner, Split::Valid).unwrap().query_count, 1);
}
