//! Rule grounding through products of relation adjacency matrices.
//!
//! For a rule whose body walks `r_1, ..., r_n` (each possibly against its
//! direction) from the head subject to the head object, the body-count
//! matrix is the product of the walked relation matrices, with a transpose
//! for every inverted step. The confirmed-count matrix keeps only the pairs
//! where the head fact is also present: `A = C ∘ M_head`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase};
use crate::rules::{Rule, RuleCase};
use crate::sparse::{SparseMatrix, DEFAULT_SATURATION};

#[derive(Debug, Clone, PartialEq)]
pub struct Grounding {
    pub rule: Rule,
    /// `C(h, t)`: number of ways the body connects `h` to `t`.
    pub body_counts: SparseMatrix,
    /// `A(h, t)`: body matches for which the head fact also holds.
    pub confirmed_counts: SparseMatrix,
    pub saturated: bool,
}

pub fn ground(kb: &KnowledgeBase, rule: &Rule) -> Result<Grounding> {
    ground_with_cap(kb, rule, DEFAULT_SATURATION)
}

pub fn ground_with_cap(kb: &KnowledgeBase, rule: &Rule, cap: u64) -> Result<Grounding> {
    if rule.case == RuleCase::Unclassified {
        return Err(Error::Unclassified(rule.to_string()));
    }
    let chain = rule.chain().ok_or_else(|| Error::UnmappedRule(rule.to_string()))?;
    let head = rule.head.relation_id().ok_or_else(|| Error::UnmappedRule(rule.to_string()))?;

    let factors: Vec<SparseMatrix> = chain
        .iter()
        .map(|&(r, inverted)| {
            let m = kb.matrix(r);
            if inverted {
                m.transpose()
            } else {
                m.clone()
            }
        })
        .collect();
    let (body_counts, saturated) = chain_product(&factors, cap)?;
    if saturated {
        warn!("grounding of `{rule}` saturated at {cap}");
    }
    let confirmed_counts = body_counts.hadamard(kb.matrix(head))?;
    Ok(Grounding {
        rule: rule.clone(),
        body_counts,
        confirmed_counts,
        saturated,
    })
}

/// Multiplies one to three factors. With three, the sparser end is
/// multiplied into the middle factor first.
fn chain_product(factors: &[SparseMatrix], cap: u64) -> Result<(SparseMatrix, bool)> {
    match factors {
        [a] => {
            let mut m = a.clone();
            let mut sat = false;
            if m.max_value() > cap {
                m = SparseMatrix::from_entries(m.rows(), m.cols(), m.iter().map(|(i, j, v)| (i, j, v.min(cap))));
                sat = true;
            }
            Ok((m, sat))
        }
        [a, b] => a.mul_saturating(b, cap),
        [a, b, c] => {
            if a.nnz() <= c.nnz() {
                let (ab, s1) = a.mul_saturating(b, cap)?;
                let (abc, s2) = ab.mul_saturating(c, cap)?;
                Ok((abc, s1 || s2))
            } else {
                let (bc, s1) = b.mul_saturating(c, cap)?;
                let (abc, s2) = a.mul_saturating(&bc, cap)?;
                Ok((abc, s1 || s2))
            }
        }
        _ => Err(Error::format("rule body", format!("{} atoms", factors.len()))),
    }
}

impl Grounding {
    /// `+A` if the rule derives `(h, t)` and the head holds, `-C` if the
    /// body fires without head support, `0` otherwise.
    pub fn score(&self, head: EntityId, tail: EntityId) -> i64 {
        let a = self.confirmed_counts.get(head.index(), tail.index());
        if a > 0 {
            return a as i64;
        }
        let c = self.body_counts.get(head.index(), tail.index());
        -(c as i64)
    }

    /// Nonzero scores `s(h, ·)` in increasing tail order.
    pub fn score_row(&self, head: EntityId) -> Vec<(EntityId, i64)> {
        self.body_counts
            .row(head.index())
            .map(|(t, _)| {
                let t = EntityId(t as u32);
                (t, self.score(head, t))
            })
            .collect()
    }

    /// Body counts `C(h, ·)`: the score each tail would receive if the
    /// queried fact were added to the graph.
    pub fn hypothesis_row(&self, head: EntityId) -> Vec<(EntityId, i64)> {
        self.body_counts
            .row(head.index())
            .map(|(t, c)| (EntityId(t as u32), c as i64))
            .collect()
    }
}

/// Up to `limit` entity sequences `h, e_1, ..., t` along which the rule
/// body connects `h` to `t`, in increasing entity order.
pub fn instantiate_paths(kb: &KnowledgeBase, rule: &Rule, head: EntityId, tail: EntityId, limit: usize) -> Vec<Vec<EntityId>> {
    let Some(chain) = rule.chain() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut path = vec![head];
    extend_path(kb, &chain, tail, &mut path, limit, &mut out);
    out
}

fn extend_path(
    kb: &KnowledgeBase,
    chain: &[(crate::kb::RelationId, bool)],
    tail: EntityId,
    path: &mut Vec<EntityId>,
    limit: usize,
    out: &mut Vec<Vec<EntityId>>,
) {
    if out.len() >= limit {
        return;
    }
    let k = path.len() - 1;
    if k == chain.len() {
        if path[k] == tail {
            out.push(path.clone());
        }
        return;
    }
    let (r, inverted) = chain[k];
    let at = path[k];
    let mut next: Vec<EntityId> = kb
        .incident(at)
        .filter(|t| t.relation == r && if inverted { t.tail == at } else { t.head == at })
        .map(|t| if inverted { t.head } else { t.tail })
        .collect();
    next.sort_unstable();
    next.dedup();
    for e in next {
        path.push(e);
        extend_path(kb, chain, tail, path, limit, out);
        path.pop();
    }
}

/// Directory of grounding matrices keyed by the training graph digest and
/// the rule's canonical form.
#[derive(Debug, Clone)]
pub struct GroundingCache {
    dir: PathBuf,
    kb_hash: String,
    cap: u64,
}

impl GroundingCache {
    pub fn new(dir: impl Into<PathBuf>, kb: &KnowledgeBase) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            kb_hash: kb.content_hash(),
            cap: DEFAULT_SATURATION,
        })
    }

    pub fn with_saturation(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    pub fn saturation(&self) -> u64 {
        self.cap
    }

    fn path(&self, rule: &Rule) -> PathBuf {
        let mut h = Sha256::new();
        h.update(self.kb_hash.as_bytes());
        h.update([0]);
        h.update(rule.canonical_form().as_bytes());
        h.update([0]);
        h.update(self.cap.to_le_bytes());
        self.dir.join(format!("{}.grounding", hex::encode(&h.finalize()[..16])))
    }

    pub fn load(&self, rule: &Rule) -> Result<Option<Grounding>> {
        let path = self.path(rule);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let (canonical, body, confirmed, saturated) = decode_entry(&text)?;
        if canonical != rule.canonical_form() {
            return Ok(None);
        }
        Ok(Some(Grounding {
            rule: rule.clone(),
            body_counts: body,
            confirmed_counts: confirmed,
            saturated,
        }))
    }

    /// Writes through a temporary file and an atomic rename so concurrent
    /// writers never expose a partial entry.
    pub fn store(&self, g: &Grounding) -> Result<()> {
        let path = self.path(&g.rule);
        let tmp = path.with_extension(format!(
            "tmp.{}.{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        let body = encode_entry(g);
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn ground(&self, kb: &KnowledgeBase, rule: &Rule) -> Result<Grounding> {
        if let Some(g) = self.load(rule)? {
            return Ok(g);
        }
        let g = ground_with_cap(kb, rule, self.cap)?;
        self.store(&g)?;
        Ok(g)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

fn encode_matrix(out: &mut String, tag: &str, m: &SparseMatrix) {
    use std::fmt::Write as _;
    let _ = writeln!(out, "{tag} {} {} {}", m.rows(), m.cols(), m.nnz());
    for (i, j, v) in m.iter() {
        let _ = writeln!(out, "{i} {j} {v}");
    }
}

fn encode_entry(g: &Grounding) -> String {
    let mut out = format!("# rule\t{}\n# saturated\t{}\n", g.rule.canonical_form(), g.saturated);
    encode_matrix(&mut out, "C", &g.body_counts);
    encode_matrix(&mut out, "A", &g.confirmed_counts);
    out
}

fn decode_entry(text: &str) -> Result<(String, SparseMatrix, SparseMatrix, bool)> {
    let bad = |d: &str| Error::format("grounding cache entry", d.to_owned());
    let mut lines = text.lines();
    let canonical = lines
        .next()
        .and_then(|l| l.strip_prefix("# rule\t"))
        .ok_or_else(|| bad("missing rule header"))?
        .to_owned();
    let saturated = lines
        .next()
        .and_then(|l| l.strip_prefix("# saturated\t"))
        .ok_or_else(|| bad("missing saturation header"))?
        == "true";
    let mut read_matrix = |tag: &str| -> Result<SparseMatrix> {
        let header = lines.next().ok_or_else(|| bad("missing matrix header"))?;
        let f: Vec<&str> = header.split(' ').collect();
        if f.len() != 4 || f[0] != tag {
            return Err(bad(header));
        }
        let dims: Vec<usize> = f[1..].iter().map(|x| x.parse().map_err(|_| bad(header))).collect::<Result<_>>()?;
        let mut entries = Vec::with_capacity(dims[2]);
        for _ in 0..dims[2] {
            let l = lines.next().ok_or_else(|| bad("truncated entry"))?;
            let v: Vec<u64> = l.split(' ').map(|x| x.parse().map_err(|_| bad(l))).collect::<Result<_>>()?;
            if v.len() != 3 || v[0] as usize >= dims[0] || v[1] as usize >= dims[1] {
                return Err(bad(l));
            }
            entries.push((v[0] as usize, v[1] as usize, v[2]));
        }
        Ok(SparseMatrix::from_entries(dims[0], dims[1], entries))
    };
    let c = read_matrix("C")?;
    let a = read_matrix("A")?;
    Ok((canonical, c, a, saturated))
}

/// Grounds every classified rule in parallel, in input order. Unclassified
/// rules are skipped and counted.
pub fn ground_all(kb: &KnowledgeBase, rules: &[Rule], cache: Option<&GroundingCache>) -> Result<Vec<Grounding>> {
    let classified: Vec<&Rule> = rules.iter().filter(|r| r.case != RuleCase::Unclassified).collect();
    let skipped = rules.len() - classified.len();
    if skipped > 0 {
        info!("skipping {skipped} unclassified rule(s) during grounding");
    }
    classified
        .par_iter()
        .map(|r| match cache {
            Some(c) => c.ground(kb, r),
            None => ground(kb, r),
        })
        .collect()
}
