//! Target sampling and multi-hop subgraph extraction around a relation.
//!
//! Each subgraph grows breadth-first from the endpoints of a target triple.
//! The final hop only keeps triples that touch one of those endpoints, so
//! the retained triples close paths back to the target.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase, RelationId, Triple};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    pub max_hops: usize,
    pub max_neighbors_per_entity: usize,
    pub max_subgraphs_per_relation: usize,
    /// Set from the pipeline seed, not from configuration files.
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            max_hops: 3,
            max_neighbors_per_entity: 3,
            max_subgraphs_per_relation: 30,
            rng_seed: 0,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_hops == 0 || self.max_neighbors_per_entity == 0 || self.max_subgraphs_per_relation == 0 {
            return Err(Error::format("extractor config", "all limits must be positive"));
        }
        Ok(())
    }

    /// Upper bound on the number of triples one subgraph can hold.
    pub fn size_bound(&self) -> usize {
        (1..=self.max_hops)
            .map(|i| 2 * self.max_neighbors_per_entity.pow(i as u32))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub target: Triple,
    triples: Vec<Triple>,
    hops: Vec<usize>,
}

impl Subgraph {
    pub fn new(target: Triple) -> Self {
        Self { target, triples: Vec::new(), hops: Vec::new() }
    }

    fn push(&mut self, t: Triple, hop: usize) {
        self.triples.push(t);
        self.hops.push(hop);
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Triples paired with the hop (1-based) at which they were reached.
    pub fn with_hops(&self) -> impl Iterator<Item = (Triple, usize)> + '_ {
        self.triples.iter().copied().zip(self.hops.iter().copied())
    }

    pub fn hop_of(&self, t: &Triple) -> Option<usize> {
        self.triples.iter().position(|x| x == t).map(|k| self.hops[k])
    }

    pub fn max_hop(&self) -> usize {
        self.hops.iter().copied().max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Samples up to `m` distinct training triples of `relation`, in training order.
pub fn sample_targets(kb: &KnowledgeBase, relation: RelationId, m: usize, seed: u64) -> Vec<Triple> {
    let pool: Vec<Triple> = kb.triples_with_relation(relation).copied().collect();
    if pool.len() <= m {
        return pool;
    }
    let mut rng = seed::rng(seed, "targets", &[u64::from(relation.0)]);
    let mut picked = index::sample(&mut rng, pool.len(), m).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|k| pool[k]).collect()
}

pub fn extract_subgraph(kb: &KnowledgeBase, target: Triple, cfg: &ExtractorConfig) -> Subgraph {
    let mut rng = seed::rng(
        cfg.rng_seed,
        "subgraph",
        &[u64::from(target.head.0), u64::from(target.relation.0), u64::from(target.tail.0)],
    );
    let mut sg = Subgraph::new(target);
    let mut seen: HashSet<EntityId> = HashSet::from([target.head, target.tail]);
    let mut taken: HashSet<Triple> = HashSet::new();
    let mut frontier = vec![target.head];
    if target.tail != target.head {
        frontier.push(target.tail);
    }

    for hop in 1..=cfg.max_hops {
        let last = hop == cfg.max_hops;
        let mut next = Vec::new();
        for &pivot in &frontier {
            let candidates: Vec<Triple> = kb
                .incident(pivot)
                .filter(|t| **t != target && !taken.contains(*t))
                .filter(|t| !last || t.touches(target.head) || t.touches(target.tail))
                .copied()
                .collect();
            let chosen: Vec<Triple> = if candidates.len() <= cfg.max_neighbors_per_entity {
                candidates
            } else {
                let mut idx: Vec<usize> = (0..candidates.len()).collect();
                idx.shuffle(&mut rng);
                idx.truncate(cfg.max_neighbors_per_entity);
                idx.sort_unstable();
                idx.into_iter().map(|k| candidates[k]).collect()
            };
            for t in chosen {
                taken.insert(t);
                sg.push(t, hop);
                let other = t.other(pivot).expect("incident triple touches its pivot");
                if seen.insert(other) {
                    next.push(other);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    sg
}

/// One `(SUBJ, REL, OBJ)` line per triple, in hop then insertion order.
pub fn linearize(kb: &KnowledgeBase, sg: &Subgraph) -> String {
    let lines: Vec<String> = sg.triples.iter().map(|t| kb.display(t)).collect();
    lines.join("\n")
}

/// Serialises subgraphs as tab-separated records: a `TARGET` line followed
/// by one `<hop> head relation tail` line per triple, records separated by
/// a blank line.
pub fn write_dump(kb: &KnowledgeBase, subgraphs: &[Subgraph]) -> String {
    let mut out = String::new();
    for sg in subgraphs {
        let t = sg.target;
        let _ = writeln!(
            out,
            "TARGET\t{}\t{}\t{}",
            kb.entity_name(t.head),
            kb.relation_name(t.relation),
            kb.entity_name(t.tail)
        );
        for (x, hop) in sg.with_hops() {
            let _ = writeln!(
                out,
                "{hop}\t{}\t{}\t{}",
                kb.entity_name(x.head),
                kb.relation_name(x.relation),
                kb.entity_name(x.tail)
            );
        }
        out.push('\n');
    }
    out
}

pub fn read_dump(kb: &KnowledgeBase, text: &str) -> Result<Vec<Subgraph>> {
    let mut out: Vec<Subgraph> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::format("subgraph dump", format!("line {}: expected 4 fields", i + 1)));
        }
        let triple = Triple::new(kb.entity_id(f[1])?, kb.relation_id(f[2])?, kb.entity_id(f[3])?);
        if f[0] == "TARGET" {
            out.push(Subgraph::new(triple));
        } else {
            let hop: usize = f[0]
                .parse()
                .map_err(|_| Error::format("subgraph dump", format!("line {}: bad hop `{}`", i + 1, f[0])))?;
            let sg = out
                .last_mut()
                .ok_or_else(|| Error::format("subgraph dump", format!("line {}: triple before TARGET", i + 1)))?;
            sg.push(triple, hop);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> KnowledgeBase {
        KnowledgeBase::from_named(&[("a", "p", "b"), ("b", "p", "c"), ("a", "g", "c")], &[], &[]).unwrap()
    }

    fn target(kb: &KnowledgeBase, h: &str, r: &str, t: &str) -> Triple {
        Triple::new(kb.entity_id(h).unwrap(), kb.relation_id(r).unwrap(), kb.entity_id(t).unwrap())
    }

    #[test]
    fn exhausts_small_relations() {
        let kb = chain();
        let p = kb.relation_id("p").unwrap();
        assert_eq!(sample_targets(&kb, p, 30, 1).len(), 2);
    }

    #[test]
    fn sampling_is_seeded() {
        let names: Vec<String> = (0..101).map(|i| format!("e{i}")).collect();
        let rows: Vec<(&str, &str, &str)> = (0..100).map(|i| (names[i].as_str(), "r", names[i + 1].as_str())).collect();
        let kb = KnowledgeBase::from_named(&rows, &[], &[]).unwrap();
        let r = kb.relation_id("r").unwrap();
        let a = sample_targets(&kb, r, 5, 1);
        assert_eq!(a, sample_targets(&kb, r, 5, 1));
        assert_eq!(a.len(), 5);
        assert_ne!(a, sample_targets(&kb, r, 5, 2));
        let distinct: HashSet<_> = a.iter().collect();
        assert_eq!(distinct.len(), 5);
    }

    #[test]
    fn chain_keeps_closing_path() {
        let kb = chain();
        let cfg = ExtractorConfig { max_hops: 2, ..Default::default() };
        let t = target(&kb, "a", "g", "c");
        let sg = extract_subgraph(&kb, t, &cfg);
        assert!(sg.triples().contains(&target(&kb, "a", "p", "b")));
        assert!(sg.triples().contains(&target(&kb, "b", "p", "c")));
        assert!(!sg.triples().contains(&t));
    }

    #[test]
    fn star_leaves_are_discarded_on_the_final_hop() {
        // h - x - leaf_i: the leaf triples sit on hop 2 and touch neither h nor t.
        let kb = KnowledgeBase::from_named(
            &[("h", "r", "t"), ("h", "s", "x"), ("x", "s", "l1"), ("x", "s", "l2"), ("x", "s", "t")],
            &[],
            &[],
        )
        .unwrap();
        let cfg = ExtractorConfig { max_hops: 2, max_neighbors_per_entity: 5, ..Default::default() };
        let sg = extract_subgraph(&kb, target(&kb, "h", "r", "t"), &cfg);
        assert!(sg.triples().contains(&target(&kb, "h", "s", "x")));
        assert!(sg.triples().contains(&target(&kb, "x", "s", "t")));
        assert!(!sg.triples().contains(&target(&kb, "x", "s", "l1")));
        assert!(!sg.triples().contains(&target(&kb, "x", "s", "l2")));
    }

    #[test]
    fn isolated_target_gives_empty_subgraph() {
        let kb = KnowledgeBase::from_named(&[("a", "r", "b")], &[], &[]).unwrap();
        let sg = extract_subgraph(&kb, target(&kb, "a", "r", "b"), &ExtractorConfig::default());
        assert!(sg.is_empty());
        assert_eq!(linearize(&kb, &sg), "");
    }

    #[test]
    fn linearize_format() {
        let kb = KnowledgeBase::from_named(&[("Anna", "parent", "Bob"), ("Bob", "x", "Cy")], &[], &[]).unwrap();
        let mut sg = Subgraph::new(target(&kb, "Bob", "x", "Cy"));
        sg.push(target(&kb, "Anna", "parent", "Bob"), 1);
        assert_eq!(linearize(&kb, &sg), "(Anna, parent, Bob)");
    }

    #[test]
    fn dump_round_trip() {
        let kb = chain();
        let cfg = ExtractorConfig { max_hops: 2, ..Default::default() };
        let sgs = vec![
            extract_subgraph(&kb, target(&kb, "a", "g", "c"), &cfg),
            extract_subgraph(&kb, target(&kb, "a", "p", "b"), &cfg),
        ];
        let text = write_dump(&kb, &sgs);
        assert_eq!(read_dump(&kb, &text).unwrap(), sgs);
    }
}
