//! Conjunctive `IF ... THEN ...` rules: parsing, filtering, relation
//! mapping, structural classification and deduplication.
//!
//! A rule is groundable when its body atoms form a simple path from the
//! head's subject to the head's object. Every atom on that path is walked
//! either along its direction or against it, which gives 2 one-atom,
//! 4 two-atom and 8 three-atom traversal patterns ([`RuleCase`]).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, RelationId};
use crate::similarity::{normalize, SimilarityProvider};

pub const MAX_BODY_ATOMS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedRelation {
    pub id: RelationId,
    pub name: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleAtom {
    pub subject: String,
    /// Relation phrase as written in the rule text.
    pub relation: String,
    pub object: String,
    pub mapped: Option<MappedRelation>,
}

impl RuleAtom {
    pub fn new(subject: &str, relation: &str, object: &str) -> Self {
        Self {
            subject: subject.to_owned(),
            relation: relation.to_owned(),
            object: object.to_owned(),
            mapped: None,
        }
    }

    pub fn relation_id(&self) -> Option<RelationId> {
        self.mapped.as_ref().map(|m| m.id)
    }

    fn display_relation(&self) -> &str {
        self.mapped.as_ref().map_or(&self.relation, |m| &m.name)
    }
}

impl fmt::Display for RuleAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.relation, self.object)
    }
}

/// Traversal pattern of a rule body, named `<order>-<variant>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RuleCase {
    Case01,
    Case02,
    Case11,
    Case12,
    Case13,
    Case14,
    Case21,
    Case22,
    Case23,
    Case24,
    Case25,
    Case26,
    Case27,
    Case28,
    Unclassified,
}

impl RuleCase {
    pub const ALL: [RuleCase; 14] = [
        RuleCase::Case01,
        RuleCase::Case02,
        RuleCase::Case11,
        RuleCase::Case12,
        RuleCase::Case13,
        RuleCase::Case14,
        RuleCase::Case21,
        RuleCase::Case22,
        RuleCase::Case23,
        RuleCase::Case24,
        RuleCase::Case25,
        RuleCase::Case26,
        RuleCase::Case27,
        RuleCase::Case28,
    ];

    /// Per-step inversion flags along the path from the head subject.
    pub fn inversions(self) -> Option<&'static [bool]> {
        use RuleCase::*;
        const F: bool = false;
        const T: bool = true;
        Some(match self {
            Case01 => &[F],
            Case02 => &[T],
            Case11 => &[F, F],
            Case12 => &[T, F],
            Case13 => &[F, T],
            Case14 => &[T, T],
            Case21 => &[F, F, F],
            Case22 => &[F, F, T],
            Case23 => &[F, T, F],
            Case24 => &[T, F, F],
            Case25 => &[F, T, T],
            Case26 => &[T, F, T],
            Case27 => &[T, T, F],
            Case28 => &[T, T, T],
            Unclassified => return None,
        })
    }

    pub fn from_inversions(flags: &[bool]) -> Self {
        Self::ALL
            .into_iter()
            .find(|c| c.inversions() == Some(flags))
            .unwrap_or(RuleCase::Unclassified)
    }

    pub fn as_str(self) -> &'static str {
        use RuleCase::*;
        match self {
            Case01 => "0-1",
            Case02 => "0-2",
            Case11 => "1-1",
            Case12 => "1-2",
            Case13 => "1-3",
            Case14 => "1-4",
            Case21 => "2-1",
            Case22 => "2-2",
            Case23 => "2-3",
            Case24 => "2-4",
            Case25 => "2-5",
            Case26 => "2-6",
            Case27 => "2-7",
            Case28 => "2-8",
            Unclassified => "UNCLASSIFIED",
        }
    }
}

impl fmt::Display for RuleCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .chain([RuleCase::Unclassified])
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::format("rule case", s))
    }
}

/// One step of a body traversal: which body atom, walked forwards or backwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub atom: usize,
    pub inverted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub body: Vec<RuleAtom>,
    pub head: RuleAtom,
    pub case: RuleCase,
    /// Relation this rule was proposed for, when known.
    pub target_relation: Option<String>,
    pub provenance: Vec<String>,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("IF ")?;
        for (i, a) in self.body.iter().enumerate() {
            if i > 0 {
                f.write_str(" AND ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, " THEN {}", self.head)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleParseError {
    #[error("expected rule to start with IF")]
    MissingIf,
    #[error("missing THEN clause")]
    MissingThen,
    #[error("missing rule head after THEN")]
    MissingHead,
    #[error("disjunction (OR) is not supported")]
    Disjunction,
    #[error("negation (NOT) is not supported")]
    Negation,
    #[error("atom `{0}` does not have exactly three fields")]
    Arity(String),
    #[error("atom `{0}` uses the same argument twice")]
    RepeatedArgument(String),
    #[error("rule body has {0} atoms; at most 3 are supported")]
    TooManyBodyAtoms(usize),
    #[error("unexpected input at `{0}`")]
    Unexpected(String),
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn at_end(&self) -> bool {
        self.rest().trim().is_empty()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        let rest = self.rest();
        if rest.len() < kw.len() || !rest.is_char_boundary(kw.len()) || !rest[..kw.len()].eq_ignore_ascii_case(kw) {
            return false;
        }
        if rest[kw.len()..].chars().next().is_some_and(|c| c.is_alphanumeric() || c == '_') {
            return false;
        }
        self.pos += kw.len();
        true
    }

    fn snippet(&self) -> String {
        self.rest().chars().take(24).collect()
    }

    fn atom(&mut self) -> Result<RuleAtom, RuleParseError> {
        if !self.eat('(') {
            return Err(RuleParseError::Unexpected(self.snippet()));
        }
        let rest = self.rest();
        let close = rest.find(')').ok_or_else(|| RuleParseError::Arity(rest.to_owned()))?;
        let inner = &rest[..close];
        self.pos += close + 1;
        if inner.contains('(') {
            return Err(RuleParseError::Arity(inner.to_owned()));
        }
        let fields: Vec<&str> = inner.split(',').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(RuleParseError::Arity(inner.trim().to_owned()));
        }
        if fields[0] == fields[2] {
            return Err(RuleParseError::RepeatedArgument(inner.trim().to_owned()));
        }
        Ok(RuleAtom::new(fields[0], fields[1], fields[2]))
    }
}

/// Words that appear outside of parenthesised atoms.
fn connective_words(s: &str) -> Vec<String> {
    let mut depth = 0i32;
    let mut outside = String::new();
    for c in s.chars() {
        match c {
            '(' => {
                depth += 1;
                outside.push(' ');
            }
            ')' => {
                depth -= 1;
                outside.push(' ');
            }
            _ if depth == 0 => outside.push(c),
            _ => {}
        }
    }
    outside
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Strips list markers, surrounding quotes and a trailing full stop.
fn strip_decorations(line: &str) -> &str {
    let mut s = line.trim();
    if let Some(at) = find_if_keyword(s) {
        if !s[..at].contains('(') {
            s = &s[at..];
        }
    }
    s = s.trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '“' || c == '”');
    s = s.trim();
    s.strip_suffix('.').unwrap_or(s).trim()
}

fn find_if_keyword(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    (0..bytes.len().saturating_sub(1)).find(|&i| {
        bytes[i].eq_ignore_ascii_case(&b'i')
            && bytes[i + 1].eq_ignore_ascii_case(&b'f')
            && (i == 0 || !bytes[i - 1].is_ascii_alphanumeric())
            && bytes.get(i + 2).is_none_or(|b| !b.is_ascii_alphanumeric())
    })
}

pub fn parse_rule(text: &str) -> Result<Rule, RuleParseError> {
    let s = strip_decorations(text);
    for w in connective_words(s) {
        if w.eq_ignore_ascii_case("or") {
            return Err(RuleParseError::Disjunction);
        }
        if w.eq_ignore_ascii_case("not") {
            return Err(RuleParseError::Negation);
        }
    }

    let mut p = Cursor { src: s, pos: 0 };
    p.skip_ws();
    if !p.keyword("IF") {
        return Err(RuleParseError::MissingIf);
    }
    let mut body = Vec::new();
    loop {
        p.skip_ws();
        if p.at_end() {
            return Err(RuleParseError::MissingThen);
        }
        body.push(p.atom()?);
        p.skip_ws();
        p.eat(',');
        p.skip_ws();
        if p.keyword("AND") {
            continue;
        }
        if p.keyword("THEN") {
            break;
        }
        if p.at_end() {
            return Err(RuleParseError::MissingThen);
        }
        return Err(RuleParseError::Unexpected(p.snippet()));
    }
    p.skip_ws();
    if p.at_end() {
        return Err(RuleParseError::MissingHead);
    }
    let head = p.atom()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(RuleParseError::Unexpected(p.snippet()));
    }
    if body.len() > MAX_BODY_ATOMS {
        return Err(RuleParseError::TooManyBodyAtoms(body.len()));
    }
    Ok(Rule {
        body,
        head,
        case: RuleCase::Unclassified,
        target_relation: None,
        provenance: Vec::new(),
    })
}

/// Why a parsed rule was dropped before relation mapping.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("rule head `{head}` does not match target relation `{target}`")]
    IrrelevantHead { head: String, target: String },
    #[error("argument `{0}` is not a variable")]
    NotEntityAgnostic(String),
    #[error("head variable `{0}` does not occur in the body")]
    UnboundHeadVariable(String),
}

/// A single uppercase letter, optionally followed by digits.
pub fn is_variable(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase()) && chars.all(|c| c.is_ascii_digit())
}

/// First-stage filter: head relevance, entity agnosticism and head groundability.
pub fn filter_stage1(rule: &Rule, target_relation: &str) -> Result<(), Rejection> {
    if normalize(&rule.head.relation) != normalize(target_relation) {
        return Err(Rejection::IrrelevantHead {
            head: rule.head.relation.clone(),
            target: target_relation.to_owned(),
        });
    }
    for atom in rule.body.iter().chain(std::iter::once(&rule.head)) {
        for arg in [&atom.subject, &atom.object] {
            if !is_variable(arg) {
                return Err(Rejection::NotEntityAgnostic(arg.clone()));
            }
        }
    }
    for v in [&rule.head.subject, &rule.head.object] {
        if !rule.body.iter().any(|a| &a.subject == v || &a.object == v) {
            return Err(Rejection::UnboundHeadVariable(v.clone()));
        }
    }
    Ok(())
}

/// Replaces every relation phrase with the most similar KB relation.
/// Ties go to the lower relation id.
pub fn map_relations(rule: &Rule, kb: &KnowledgeBase, sim: &dyn SimilarityProvider) -> Result<Rule> {
    if kb.num_relations() == 0 {
        return Err(Error::EmptyRelationVocabulary);
    }
    let mut memo: HashMap<String, MappedRelation> = HashMap::new();
    let mut best_match = |phrase: &str| -> MappedRelation {
        memo.entry(phrase.to_owned())
            .or_insert_with(|| {
                let mut best = (RelationId(0), f64::NEG_INFINITY);
                for (id, name) in kb.relations().names().iter().enumerate() {
                    let s = sim.score(phrase, name);
                    if s > best.1 {
                        best = (RelationId(id as u32), s);
                    }
                }
                MappedRelation {
                    id: best.0,
                    name: kb.relation_name(best.0).to_owned(),
                    similarity: best.1,
                }
            })
            .clone()
    };
    let mut out = rule.clone();
    for atom in out.body.iter_mut().chain(std::iter::once(&mut out.head)) {
        atom.mapped = Some(best_match(&atom.relation));
    }
    Ok(out)
}

impl Rule {
    pub fn is_mapped(&self) -> bool {
        self.atoms().all(|a| a.mapped.is_some())
    }

    pub fn atoms(&self) -> impl Iterator<Item = &RuleAtom> {
        self.body.iter().chain(std::iter::once(&self.head))
    }

    /// Orders the body as a simple path from the head subject to the head
    /// object, if one exists.
    pub fn traversal(&self) -> Option<Vec<Step>> {
        let start = self.head.subject.as_str();
        let end = self.head.object.as_str();
        if start == end || self.body.is_empty() || self.body.len() > MAX_BODY_ATOMS {
            return None;
        }
        let mut order: Vec<usize> = (0..self.body.len()).collect();
        loop {
            if let Some(steps) = self.walk(&order, start, end) {
                return Some(steps);
            }
            if !next_permutation(&mut order) {
                return None;
            }
        }
    }

    fn walk(&self, order: &[usize], start: &str, end: &str) -> Option<Vec<Step>> {
        let mut visited = vec![start];
        let mut cur = start;
        let mut steps = Vec::with_capacity(order.len());
        for (k, &i) in order.iter().enumerate() {
            let atom = &self.body[i];
            let (next, inverted) = if atom.subject == cur {
                (atom.object.as_str(), false)
            } else if atom.object == cur {
                (atom.subject.as_str(), true)
            } else {
                return None;
            };
            let last = k + 1 == order.len();
            if visited.contains(&next) || (last != (next == end)) {
                return None;
            }
            visited.push(next);
            steps.push(Step { atom: i, inverted });
            cur = next;
        }
        Some(steps)
    }

    /// Rule with its traversal case filled in.
    pub fn classified(mut self) -> Self {
        self.case = classify(&self);
        self
    }

    /// Variable-renaming-invariant textual form. Classified rules are written
    /// along their traversal with variables `A, B, C, D`; others have their
    /// variables renamed in order of first appearance.
    pub fn canonical_form(&self) -> String {
        let names = |v: usize| -> String {
            let c = (b'A' + (v % 26) as u8) as char;
            if v < 26 { c.to_string() } else { format!("{c}{}", v / 26) }
        };
        if let Some(steps) = self.traversal() {
            let n = steps.len();
            let atoms: Vec<String> = steps
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let a = &self.body[s.atom];
                    let (x, y) = if s.inverted { (k + 1, k) } else { (k, k + 1) };
                    format!("({}, {}, {})", names(x), a.display_relation(), names(y))
                })
                .collect();
            return format!(
                "IF {} THEN ({}, {}, {})",
                atoms.join(" AND "),
                names(0),
                self.head.display_relation(),
                names(n)
            );
        }
        let mut seen: Vec<String> = Vec::new();
        let mut var = |v: &str| -> String {
            let k = seen.iter().position(|s| s == v).unwrap_or_else(|| {
                seen.push(v.to_owned());
                seen.len() - 1
            });
            names(k)
        };
        let mut fmt_atom = |a: &RuleAtom| {
            let s = var(&a.subject);
            let o = var(&a.object);
            format!("({s}, {}, {o})", a.display_relation())
        };
        let body: Vec<String> = self.body.iter().map(&mut fmt_atom).collect();
        let head = fmt_atom(&self.head);
        format!("IF {} THEN {head}", body.join(" AND "))
    }

    /// Relations along the traversal, with inversion flags.
    pub fn chain(&self) -> Option<Vec<(RelationId, bool)>> {
        let steps = self.traversal()?;
        steps
            .iter()
            .map(|s| self.body[s.atom].relation_id().map(|r| (r, s.inverted)))
            .collect()
    }
}

pub fn classify(rule: &Rule) -> RuleCase {
    match rule.traversal() {
        Some(steps) => {
            let flags: Vec<bool> = steps.iter().map(|s| s.inverted).collect();
            RuleCase::from_inversions(&flags)
        }
        None => RuleCase::Unclassified,
    }
}

pub fn classify_case(rule: Rule) -> Rule {
    rule.classified()
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Drops structurally equal rules (same canonical form), keeping the first
/// occurrence and appending the provenance of the dropped copies.
pub fn dedup(rules: Vec<Rule>) -> Vec<Rule> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<Rule> = Vec::new();
    for rule in rules {
        let key = format!("{}\u{1f}{}", rule.canonical_form(), rule.target_relation.as_deref().unwrap_or(""));
        match index.get(&key) {
            Some(&k) => out[k].provenance.extend(rule.provenance),
            None => {
                index.insert(key, out.len());
                out.push(rule);
            }
        }
    }
    out
}

/// One line of a rule file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub text: String,
    pub target_relation: String,
    pub case: String,
    pub mapped_relations: Vec<String>,
    pub provenance: Vec<String>,
    pub similarity_scores: Vec<f64>,
}

impl Rule {
    pub fn to_record(&self) -> RuleRecord {
        RuleRecord {
            text: self.to_string(),
            target_relation: self.target_relation.clone().unwrap_or_default(),
            case: self.case.to_string(),
            mapped_relations: self.atoms().filter_map(|a| a.mapped.as_ref().map(|m| m.name.clone())).collect(),
            provenance: self.provenance.clone(),
            similarity_scores: self.atoms().filter_map(|a| a.mapped.as_ref().map(|m| m.similarity)).collect(),
        }
    }

    /// Rebuilds a rule from its record, resolving mapped relation names
    /// against `kb`.
    pub fn from_record(rec: &RuleRecord, kb: &KnowledgeBase) -> Result<Rule> {
        let mut rule = parse_rule(&rec.text).map_err(|e| Error::format("rule record", format!("{}: {e}", rec.text)))?;
        let n_atoms = rule.body.len() + 1;
        if !rec.mapped_relations.is_empty() {
            if rec.mapped_relations.len() != n_atoms || rec.similarity_scores.len() != n_atoms {
                return Err(Error::format("rule record", format!("{}: mapping length mismatch", rec.text)));
            }
            let atoms = rule.body.iter_mut().chain(std::iter::once(&mut rule.head));
            for ((atom, name), &sim) in atoms.zip(&rec.mapped_relations).zip(&rec.similarity_scores) {
                atom.mapped = Some(MappedRelation {
                    id: kb.relation_id(name)?,
                    name: name.clone(),
                    similarity: sim,
                });
            }
        }
        rule.case = rec.case.parse()?;
        rule.target_relation = (!rec.target_relation.is_empty()).then(|| rec.target_relation.clone());
        rule.provenance = rec.provenance.clone();
        Ok(rule)
    }
}

pub fn write_rule_records(records: &[RuleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("rule record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_rule_records(text: &str) -> Result<Vec<RuleRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format("rule file", format!("line {}: {e}", i + 1))))
        .collect()
}
