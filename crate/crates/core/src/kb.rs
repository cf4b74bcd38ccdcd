//! Knowledge base loading, vocabularies and relation adjacency matrices.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }

    pub fn touches(&self, e: EntityId) -> bool {
        self.head == e || self.tail == e
    }

    /// The endpoint opposite to `e`, if `e` is one of the endpoints.
    pub fn other(&self, e: EntityId) -> Option<EntityId> {
        if self.head == e {
            Some(self.tail)
        } else if self.tail == e {
            Some(self.head)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// Bijection between names and dense ids, assigned in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// An immutable, indexed knowledge base.
///
/// Relation matrices and neighbourhood indexes are built from the training
/// split only; the validation and test splits are kept for evaluation and
/// for filtering known answers.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    entities: Vocab,
    relations: Vocab,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    matrices: Vec<SparseMatrix>,
    incident: Vec<Vec<usize>>,
    by_relation: Vec<Vec<usize>>,
    train_set: HashSet<Triple>,
    known_tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    train_tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
}

type NamedTriple<'a> = (&'a str, &'a str, &'a str);

impl KnowledgeBase {
    /// Loads tab-separated triple files.
    pub fn load(train: impl AsRef<Path>, valid: impl AsRef<Path>, test: impl AsRef<Path>) -> Result<Self> {
        let train_src = read(train.as_ref())?;
        let valid_src = read(valid.as_ref())?;
        let test_src = read(test.as_ref())?;
        let train_rows = parse_lines(train.as_ref(), &train_src)?;
        let valid_rows = parse_lines(valid.as_ref(), &valid_src)?;
        let test_rows = parse_lines(test.as_ref(), &test_src)?;
        Self::from_named(&train_rows, &valid_rows, &test_rows)
    }

    /// Builds a knowledge base from in-memory named triples.
    pub fn from_named(train: &[NamedTriple<'_>], valid: &[NamedTriple<'_>], test: &[NamedTriple<'_>]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyTrainSplit);
        }
        let mut entities = Vocab::default();
        let mut relations = Vocab::default();
        let mut intern_split = |rows: &[NamedTriple<'_>], split: Split| -> Vec<Triple> {
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(rows.len());
            for &(h, r, t) in rows {
                let triple = Triple::new(
                    EntityId(entities.intern(h)),
                    RelationId(relations.intern(r)),
                    EntityId(entities.intern(t)),
                );
                if seen.insert(triple) {
                    out.push(triple);
                } else {
                    warn!("dropping duplicate {split} triple ({h}, {r}, {t})");
                }
            }
            out
        };
        let train = intern_split(train, Split::Train);
        let valid = intern_split(valid, Split::Valid);
        let test = intern_split(test, Split::Test);
        Ok(Self::index(entities, relations, train, valid, test))
    }

    fn index(entities: Vocab, relations: Vocab, train: Vec<Triple>, valid: Vec<Triple>, test: Vec<Triple>) -> Self {
        let n = entities.len();
        let mut per_relation: Vec<Vec<(usize, usize, u64)>> = vec![Vec::new(); relations.len()];
        let mut incident = vec![Vec::new(); n];
        let mut by_relation = vec![Vec::new(); relations.len()];
        for (k, t) in train.iter().enumerate() {
            per_relation[t.relation.index()].push((t.head.index(), t.tail.index(), 1));
            incident[t.head.index()].push(k);
            if t.tail != t.head {
                incident[t.tail.index()].push(k);
            }
            by_relation[t.relation.index()].push(k);
        }
        let matrices = per_relation
            .into_iter()
            .map(|entries| SparseMatrix::from_entries(n, n, entries))
            .collect();

        let mut known_tails: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        let mut train_tails: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        for t in &train {
            train_tails.entry((t.head, t.relation)).or_default().push(t.tail);
        }
        for t in train.iter().chain(&valid).chain(&test) {
            let tails = known_tails.entry((t.head, t.relation)).or_default();
            if !tails.contains(&t.tail) {
                tails.push(t.tail);
            }
        }
        let train_set = train.iter().copied().collect();
        Self {
            entities,
            relations,
            train,
            valid,
            test,
            matrices,
            incident,
            by_relation,
            train_set,
            known_tails,
            train_tails,
        }
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn matrix(&self, r: RelationId) -> &SparseMatrix {
        &self.matrices[r.index()]
    }

    pub fn contains_train(&self, t: &Triple) -> bool {
        self.train_set.contains(t)
    }

    /// Training triples in which `e` is the head or the tail.
    pub fn incident(&self, e: EntityId) -> impl Iterator<Item = &Triple> + '_ {
        self.incident
            .get(e.index())
            .into_iter()
            .flatten()
            .map(move |&k| &self.train[k])
    }

    pub fn triples_with_relation(&self, r: RelationId) -> impl Iterator<Item = &Triple> + '_ {
        self.by_relation
            .get(r.index())
            .into_iter()
            .flatten()
            .map(move |&k| &self.train[k])
    }

    /// Tails `t` with `(h, r, t)` in any split.
    pub fn known_tails(&self, h: EntityId, r: RelationId) -> &[EntityId] {
        self.known_tails.get(&(h, r)).map_or(&[], Vec::as_slice)
    }

    /// Tails `t` with `(h, r, t)` in the training split.
    pub fn train_tails(&self, h: EntityId, r: RelationId) -> &[EntityId] {
        self.train_tails.get(&(h, r)).map_or(&[], Vec::as_slice)
    }

    pub fn entity_id(&self, name: &str) -> Result<EntityId> {
        self.entities
            .id(name)
            .map(EntityId)
            .ok_or_else(|| Error::UnknownEntity(name.to_owned()))
    }

    pub fn relation_id(&self, name: &str) -> Result<RelationId> {
        self.relations
            .id(name)
            .map(RelationId)
            .ok_or_else(|| Error::UnknownRelation(name.to_owned()))
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        self.entities.name(e.0).expect("entity id from this knowledge base")
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        self.relations.name(r.0).expect("relation id from this knowledge base")
    }

    /// `(head, relation, tail)` surface form.
    pub fn display(&self, t: &Triple) -> String {
        format!(
            "({}, {}, {})",
            self.entity_name(t.head),
            self.relation_name(t.relation),
            self.entity_name(t.tail)
        )
    }

    /// Stable digest over the vocabularies and the training triples; used to
    /// key cached artifacts derived from the training graph.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for name in self.entities.names() {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        h.update([1u8]);
        for name in self.relations.names() {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        h.update([1u8]);
        for t in &self.train {
            h.update(t.head.0.to_le_bytes());
            h.update(t.relation.0.to_le_bytes());
            h.update(t.tail.0.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_lines<'a>(path: &Path, src: &'a str) -> Result<Vec<NamedTriple<'a>>> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedTriple {
                path: path.to_owned(),
                line: i + 1,
                found: fields.len(),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::EmptyName { path: path.to_owned(), line: i + 1 });
        }
        out.push((fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn three_line_file() {
        let dir = tempfile::tempdir().unwrap();
        let tr = write(dir.path(), "train.txt", "a\tp\tb\nb\tp\tc\na\tg\tc\n");
        let va = write(dir.path(), "valid.txt", "");
        let te = write(dir.path(), "test.txt", "");
        let kb = KnowledgeBase::load(&tr, &va, &te).unwrap();
        assert_eq!(kb.num_entities(), 3);
        assert_eq!(kb.num_relations(), 2);
        let p = kb.relation_id("p").unwrap();
        let (a, b, c) = (
            kb.entity_id("a").unwrap().index(),
            kb.entity_id("b").unwrap().index(),
            kb.entity_id("c").unwrap().index(),
        );
        let nz: Vec<_> = kb.matrix(p).iter().map(|(i, j, _)| (i, j)).collect();
        assert_eq!(nz, vec![(a, b), (b, c)]);
    }

    #[test]
    fn arity_violation_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let tr = write(dir.path(), "train.txt", "a\tp\tb\na\tp\n");
        let va = write(dir.path(), "valid.txt", "");
        let te = write(dir.path(), "test.txt", "");
        let err = KnowledgeBase::load(&tr, &va, &te).unwrap_err();
        assert!(matches!(err, Error::MalformedTriple { line: 2, found: 2, .. }), "{err}");
    }

    #[test]
    fn empty_train_split_is_an_error() {
        assert!(matches!(KnowledgeBase::from_named(&[], &[], &[]), Err(Error::EmptyTrainSplit)));
    }

    #[test]
    fn names_may_contain_spaces() {
        let kb = KnowledgeBase::from_named(&[("New York", "located in", "United States")], &[], &[]).unwrap();
        assert!(kb.entity_id("New York").is_ok());
        assert!(kb.relation_id("located in").is_ok());
    }

    #[test]
    fn duplicates_dropped_and_unseen_eval_entities_kept() {
        let kb = KnowledgeBase::from_named(
            &[("a", "p", "b"), ("a", "p", "b")],
            &[("x", "p", "y")],
            &[],
        )
        .unwrap();
        assert_eq!(kb.train().len(), 1);
        assert_eq!(kb.num_entities(), 4);
        let x = kb.entity_id("x").unwrap();
        let p = kb.relation_id("p").unwrap();
        assert_eq!(kb.matrix(p).row_nnz(x.index()), 0);
        assert_eq!(kb.known_tails(x, p), &[kb.entity_id("y").unwrap()]);
    }

    #[test]
    fn ids_follow_first_appearance() {
        let kb = KnowledgeBase::from_named(&[("z", "r2", "y"), ("y", "r1", "x")], &[], &[]).unwrap();
        assert_eq!(kb.entities().names(), &["z", "y", "x"]);
        assert_eq!(kb.relations().names(), &["r2", "r1"]);
        for id in 0..kb.num_entities() as u32 {
            assert_eq!(kb.entities().id(kb.entities().name(id).unwrap()), Some(id));
        }
    }

    #[test]
    fn matrices_mirror_train_split() {
        let kb = KnowledgeBase::from_named(
            &[("a", "p", "b"), ("b", "q", "c"), ("c", "p", "a")],
            &[("a", "p", "c")],
            &[],
        )
        .unwrap();
        for r in 0..kb.num_relations() as u32 {
            let r = RelationId(r);
            for h in 0..kb.num_entities() as u32 {
                for t in 0..kb.num_entities() as u32 {
                    let triple = Triple::new(EntityId(h), r, EntityId(t));
                    let expected = u64::from(kb.contains_train(&triple));
                    assert_eq!(kb.matrix(r).get(h as usize, t as usize), expected);
                }
            }
        }
    }
}
