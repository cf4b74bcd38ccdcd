//! Closed-path rule miner used when no chat backend is configured.
//!
//! For a target `(h, r, t)` every simple path of length one to three from
//! `h` to `t` inside the subgraph becomes a rule whose body walks that path
//! and whose head is the target relation.

use std::collections::HashSet;

use crate::kb::{EntityId, KnowledgeBase, Triple};
use crate::subgraph::Subgraph;

const VARS: [&str; 4] = ["A", "B", "C", "D"];
pub const MAX_PATH_LEN: usize = 3;

/// One rule per line, in discovery order, without duplicates.
pub fn mine_rules(kb: &KnowledgeBase, sg: &Subgraph) -> String {
    let target = sg.target;
    if target.head == target.tail {
        return String::new();
    }
    let edges: Vec<Triple> = sg.triples().iter().copied().filter(|t| *t != target).collect();
    let mut seen = HashSet::new();
    let mut lines = Vec::new();
    let mut path: Vec<(Triple, bool)> = Vec::new();
    let mut visited = vec![target.head];
    walk(kb, &edges, target, target.head, &mut visited, &mut path, &mut |text| {
        if seen.insert(text.clone()) {
            lines.push(text);
        }
    });
    lines.join("\n")
}

fn walk(
    kb: &KnowledgeBase,
    edges: &[Triple],
    target: Triple,
    at: EntityId,
    visited: &mut Vec<EntityId>,
    path: &mut Vec<(Triple, bool)>,
    emit: &mut dyn FnMut(String),
) {
    if at == target.tail && !path.is_empty() {
        emit(render(kb, path, target));
        return;
    }
    if path.len() == MAX_PATH_LEN {
        return;
    }
    for e in edges {
        // an edge can be walked head-to-tail or, as an inverse, tail-to-head
        for (from, to, inverted) in [(e.head, e.tail, false), (e.tail, e.head, true)] {
            if from != at || visited.contains(&to) || (inverted && e.head == e.tail) {
                continue;
            }
            visited.push(to);
            path.push((*e, inverted));
            walk(kb, edges, target, to, visited, path, emit);
            path.pop();
            visited.pop();
        }
    }
}

fn render(kb: &KnowledgeBase, path: &[(Triple, bool)], target: Triple) -> String {
    let body: Vec<String> = path
        .iter()
        .enumerate()
        .map(|(k, (t, inverted))| {
            let (s, o) = if *inverted { (VARS[k + 1], VARS[k]) } else { (VARS[k], VARS[k + 1]) };
            format!("({s}, {}, {o})", kb.relation_name(t.relation))
        })
        .collect();
    format!(
        "IF {} THEN (A, {}, {})",
        body.join(" AND "),
        kb.relation_name(target.relation),
        VARS[path.len()]
    )
}
