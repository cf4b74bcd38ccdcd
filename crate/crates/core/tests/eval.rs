use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symkbc::eval::{compute_metrics, RuleQualityReport, HITS_AT};
use symkbc::grounding::ground;
use symkbc::rules::{map_relations, parse_rule};
use symkbc::similarity::TrigramCosine;
use symkbc::KnowledgeBase;

#[test]
fn small_rank_list() {
    let m = compute_metrics(&[1.0, 2.0, 4.0]).unwrap();
    assert!((m.mr.unwrap() - 7.0 / 3.0).abs() < 1e-3);
    assert!((m.mrr - 0.5833).abs() < 1e-4);
    assert!((m.hits_at(1) - 0.333).abs() < 1e-3);
    assert!((m.hits_at(3) - 0.667).abs() < 1e-3);
    assert_eq!(m.hits_at(10), 1.0);
}

#[test]
fn random_rank_lists_match_naive_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let ranks: Vec<f64> = (0..1000).map(|_| rng.gen_range(2..400) as f64 / 2.0).collect();
        let m = compute_metrics(&ranks).unwrap();
        let mut mr = 0.0;
        let mut mrr = 0.0;
        let mut hits = [0usize; 3];
        for &r in &ranks {
            mr += r;
            mrr += 1.0 / r;
            for (k, limit) in HITS_AT.iter().enumerate() {
                if r <= *limit as f64 {
                    hits[k] += 1;
                }
            }
        }
        assert_eq!(m.mr.unwrap(), mr / 1000.0);
        assert_eq!(m.mrr, mrr / 1000.0);
        for (k, limit) in HITS_AT.iter().enumerate() {
            assert_eq!(m.hits_at(*limit), hits[k] as f64 / 1000.0);
        }
        assert!(m.hits_at(1) <= m.hits_at(3) && m.hits_at(3) <= m.hits_at(10));

        let mut shuffled = ranks.clone();
        shuffled.reverse();
        let p = compute_metrics(&shuffled).unwrap();
        assert!((p.mrr - m.mrr).abs() < 1e-12);
        assert_eq!(p.hits, m.hits);
    }
}

#[test]
fn rule_quality_table_rows() {
    let gpt35 = RuleQualityReport::from_counts(794, 406, 0.428);
    assert!((gpt35.hcr - 51.13).abs() < 0.01);
    assert!((gpt35.rqi - 46.60).abs() <= 0.05, "{}", gpt35.rqi);

    let gpt4 = RuleQualityReport::from_counts(1406, 1106, 0.5);
    assert!((gpt4.hcr - 78.66).abs() <= 0.01, "{}", gpt4.hcr);

    let gemini = RuleQualityReport::from_ratio(0, 0, 50.69, 0.376);
    assert!((gemini.rqi - 43.18).abs() <= 0.05, "{}", gemini.rqi);
}

#[test]
fn grandparent_worked_example() {
    let rule = "IF (A, parent, B) AND (B, parent, C) THEN (A, grandparent, C)";
    let kb = KnowledgeBase::from_named(
        &[("Anna", "parent", "Bob"), ("Bob", "parent", "Charlie"), ("Anna", "grandparent", "Charlie")],
        &[],
        &[],
    )
    .unwrap();
    let r = map_relations(&parse_rule(rule).unwrap(), &kb, &TrigramCosine).unwrap().classified();
    let g = ground(&kb, &r).unwrap();
    let (anna, charlie) = (kb.entity_id("Anna").unwrap(), kb.entity_id("Charlie").unwrap());
    assert_eq!(g.confirmed_counts.get(anna.index(), charlie.index()), 1);
    assert_eq!(g.score(anna, charlie), 1);

    // body holds, head does not
    let body_only = KnowledgeBase::from_named(
        &[("Anna", "parent", "Bob"), ("Bob", "parent", "Charlie"), ("Dora", "grandparent", "Eve")],
        &[],
        &[],
    )
    .unwrap();
    let r = map_relations(&parse_rule(rule).unwrap(), &body_only, &TrigramCosine).unwrap().classified();
    let g = ground(&body_only, &r).unwrap();
    let (anna, charlie) = (body_only.entity_id("Anna").unwrap(), body_only.entity_id("Charlie").unwrap());
    assert_eq!(g.body_counts.get(anna.index(), charlie.index()), 1);
    assert_eq!(g.confirmed_counts.get(anna.index(), charlie.index()), 0);
    assert_eq!(g.score(anna, charlie), -1);
}
