//! Matrix groundings against exhaustive enumeration of variable bindings.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symkbc::grounding::ground;
use symkbc::rules::{map_relations, parse_rule};
use symkbc::similarity::TrigramCosine;
use symkbc::{KnowledgeBase, Rule, RuleCase};

fn random_kb(rng: &mut ChaCha8Rng) -> KnowledgeBase {
    let n_ent = rng.gen_range(3..=20);
    let n_rel = rng.gen_range(1..=5);
    let n_triples = rng.gen_range(1..=n_ent * 4);
    let names: Vec<String> = (0..n_ent).map(|i| format!("e{i}")).collect();
    let rels: Vec<String> = (0..n_rel).map(|i| format!("rel{i}")).collect();
    let mut rows = Vec::new();
    for _ in 0..n_triples {
        rows.push((
            names[rng.gen_range(0..n_ent)].as_str(),
            rels[rng.gen_range(0..n_rel)].as_str(),
            names[rng.gen_range(0..n_ent)].as_str(),
        ));
    }
    // make sure every relation name exists in the vocabulary
    for r in &rels {
        rows.push((names[0].as_str(), r.as_str(), names[1].as_str()));
    }
    KnowledgeBase::from_named(&rows, &[], &[]).unwrap()
}

/// Builds a random rule text with the traversal pattern of `case`, with
/// shuffled body order and arbitrary variable letters.
fn rule_text(rng: &mut ChaCha8Rng, case: RuleCase, kb: &KnowledgeBase) -> String {
    let flags = case.inversions().unwrap();
    let mut letters: Vec<char> = "PQRSTUVWXYZ".chars().collect();
    letters.shuffle(rng);
    let vars: Vec<char> = letters[..=flags.len()].to_vec();
    let rel = |rng: &mut ChaCha8Rng| kb.relations().names()[rng.gen_range(0..kb.num_relations())].clone();
    let mut body: Vec<String> = flags
        .iter()
        .enumerate()
        .map(|(k, &inv)| {
            let (s, o) = if inv { (vars[k + 1], vars[k]) } else { (vars[k], vars[k + 1]) };
            format!("({s}, {}, {o})", rel(rng))
        })
        .collect();
    body.shuffle(rng);
    format!("IF {} THEN ({}, {}, {})", body.join(" AND "), vars[0], rel(rng), vars[flags.len()])
}

/// Counts, for every `(h, t)`, the assignments of all rule variables to
/// entities under which every body atom (and optionally the head) is a
/// training fact.
fn enumerate(kb: &KnowledgeBase, rule: &Rule) -> (HashMap<(usize, usize), u64>, HashMap<(usize, usize), u64>) {
    let mut vars: Vec<&str> = Vec::new();
    for a in rule.atoms() {
        for v in [a.subject.as_str(), a.object.as_str()] {
            if !vars.contains(&v) {
                vars.push(v);
            }
        }
    }
    let n = kb.num_entities();
    let slot = |v: &str| vars.iter().position(|x| *x == v).unwrap();
    let holds = |binding: &[usize], a: &symkbc::RuleAtom| {
        let m = kb.matrix(a.relation_id().unwrap());
        m.get(binding[slot(&a.subject)], binding[slot(&a.object)]) > 0
    };
    let mut body = HashMap::new();
    let mut full = HashMap::new();
    let mut binding = vec![0usize; vars.len()];
    loop {
        if rule.body.iter().all(|a| holds(&binding, a)) {
            let key = (binding[slot(&rule.head.subject)], binding[slot(&rule.head.object)]);
            *body.entry(key).or_insert(0) += 1;
            if holds(&binding, &rule.head) {
                *full.entry(key).or_insert(0) += 1;
            }
        }
        let mut k = 0;
        loop {
            if k == binding.len() {
                return (body, full);
            }
            binding[k] += 1;
            if binding[k] < n {
                break;
            }
            binding[k] = 0;
            k += 1;
        }
    }
}

#[test]
fn matrix_groundings_equal_binding_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut per_case: HashMap<RuleCase, usize> = HashMap::new();
    for i in 0..224 {
        let kb = random_kb(&mut rng);
        let case = RuleCase::ALL[i % 14];
        let text = rule_text(&mut rng, case, &kb);
        let rule = map_relations(&parse_rule(&text).unwrap(), &kb, &TrigramCosine).unwrap().classified();
        assert_eq!(rule.case, case, "{text}");
        let g = ground(&kb, &rule).unwrap();
        let (body, full) = enumerate(&kb, &rule);
        for h in 0..kb.num_entities() {
            for t in 0..kb.num_entities() {
                let c = body.get(&(h, t)).copied().unwrap_or(0);
                let a = full.get(&(h, t)).copied().unwrap_or(0);
                assert_eq!(g.body_counts.get(h, t), c, "C({h},{t}) for {text}");
                assert_eq!(g.confirmed_counts.get(h, t), a, "A({h},{t}) for {text}");
                assert!(a <= c);
            }
        }
        assert_eq!(ground(&kb, &rule).unwrap(), g);
        *per_case.entry(case).or_default() += 1;
    }
    assert_eq!(per_case.len(), 14);
}

#[test]
fn confirmed_is_body_masked_by_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..60 {
        let kb = random_kb(&mut rng);
        let text = rule_text(&mut rng, RuleCase::ALL[i % 14], &kb);
        let rule = map_relations(&parse_rule(&text).unwrap(), &kb, &TrigramCosine).unwrap().classified();
        let g = ground(&kb, &rule).unwrap();
        let head = kb.matrix(rule.head.relation_id().unwrap());
        for h in 0..kb.num_entities() {
            for t in 0..kb.num_entities() {
                assert_eq!(g.confirmed_counts.get(h, t), g.body_counts.get(h, t) * head.get(h, t));
            }
            let he = symkbc::EntityId(h as u32);
            let row = g.score_row(he);
            for (t, s) in &row {
                assert_eq!(*s, g.score(he, *t));
            }
            let nonzero = (0..kb.num_entities())
                .filter(|&t| g.score(he, symkbc::EntityId(t as u32)) != 0)
                .count();
            assert_eq!(row.len(), nonzero);
        }
    }
}
