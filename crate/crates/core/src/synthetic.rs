//! Synthetic family graphs with a known generating rule.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::kb::KnowledgeBase;
use crate::seed;

pub const PLANTED_RULE: &str = "IF (A, parent, B) AND (B, parent, C) THEN (A, grandparent, C)";

/// Rules for `grandparent` that do not generate it.
pub const DECOY_RULES: [&str; 5] = [
    "IF (A, parent, B) THEN (A, grandparent, B)",
    "IF (B, parent, A) THEN (A, grandparent, B)",
    "IF (A, parent, B) AND (C, parent, B) THEN (A, grandparent, C)",
    "IF (B, parent, A) AND (B, parent, C) THEN (A, grandparent, C)",
    "IF (A, parent, B) AND (B, parent, C) AND (C, parent, D) THEN (A, grandparent, D)",
];

pub type OwnedTriple = (String, String, String);

#[derive(Debug, Clone)]
pub struct PlantedFamily {
    pub train: Vec<OwnedTriple>,
    pub valid: Vec<OwnedTriple>,
    pub test: Vec<OwnedTriple>,
}

impl PlantedFamily {
    /// `generations × per_generation` people. Everyone after the first
    /// generation has one or two parents in the previous one. `parent` facts
    /// all go to training; `grandparent` facts are exactly the two-step
    /// parent paths, split 80/10/10 between train, valid and test.
    pub fn generate(generations: usize, per_generation: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed, "planted-family", &[generations as u64, per_generation as u64]);
        let name = |g: usize, i: usize| format!("person_{g}_{i}");
        let mut parents: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); per_generation]; generations];
        let mut train = Vec::new();
        for g in 1..generations {
            for i in 0..per_generation {
                let k = if rng.gen_bool(0.5) { 1 } else { 2 };
                let mut pool: Vec<usize> = (0..per_generation).collect();
                pool.shuffle(&mut rng);
                let mut ps: Vec<usize> = pool[..k.min(per_generation)].to_vec();
                ps.sort_unstable();
                for &p in &ps {
                    train.push((name(g - 1, p), "parent".to_owned(), name(g, i)));
                }
                parents[g][i] = ps;
            }
        }
        let mut grand = Vec::new();
        for g in 2..generations {
            for i in 0..per_generation {
                let mut gps: Vec<usize> = parents[g][i].iter().flat_map(|&p| parents[g - 1][p].iter().copied()).collect();
                gps.sort_unstable();
                gps.dedup();
                for gp in gps {
                    grand.push((name(g - 2, gp), "grandparent".to_owned(), name(g, i)));
                }
            }
        }
        grand.shuffle(&mut rng);
        let n_valid = (grand.len() / 10).max(1);
        let n_test = (grand.len() / 10).max(1);
        let test = grand.split_off(grand.len() - n_test);
        let valid = grand.split_off(grand.len() - n_valid);
        train.extend(grand);
        Self { train, valid, test }
    }

    pub fn knowledge_base(&self) -> Result<KnowledgeBase> {
        KnowledgeBase::from_named(&borrow(&self.train), &borrow(&self.valid), &borrow(&self.test))
    }

    /// Tab-separated split files, one triple per line.
    pub fn write_tsv(&self, dir: &std::path::Path) -> Result<()> {
        for (file, rows) in [("train.tsv", &self.train), ("valid.tsv", &self.valid), ("test.tsv", &self.test)] {
            let text: String = rows.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect();
            let path = dir.join(file);
            std::fs::write(&path, text).map_err(|e| crate::error::Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn borrow(v: &[OwnedTriple]) -> Vec<(&str, &str, &str)> {
    v.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())).collect()
}
