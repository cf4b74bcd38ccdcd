//! Rule-based knowledge base completion.
//!
//! The pipeline samples subgraphs around each relation, turns proposed
//! `IF ... THEN ...` rules into sparse grounding matrices, and learns how
//! much to trust each rule alongside a RotatE embedding scorer.

pub mod error;
pub mod eval;
pub mod grounding;
pub mod kb;
pub mod optim;
pub mod proposer;
pub mod rotate;
pub mod rules;
pub mod seed;
pub mod similarity;
pub mod sparse;
pub mod subgraph;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use kb::{EntityId, KnowledgeBase, RelationId, Split, Triple};
pub use rules::{Rule, RuleAtom, RuleCase};
pub use sparse::SparseMatrix;
