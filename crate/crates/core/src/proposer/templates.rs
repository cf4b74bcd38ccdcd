//! Prompt templates sent to chat backends.

use crate::kb::{EntityId, KnowledgeBase, RelationId, Triple};
use crate::subgraph::{linearize, Subgraph};

const PREAMBLE: &str = "A knowledge subgraph describes relationships between entities using a set of triplets. \
Each triplet is written in the form of triplet (SUBJ, REL, OBJ), which states that entity SUBJ is of relation REL to entity OBJ.";

const RULE_BODY: &str = "A logic rule can be applied to known triplets to deduce new ones. \
Each rule is written in the form of a logical implication, which states that if the conditions on the right-hand side are satisfied, \
then the statement on the left-hand side holds true. Here are some example rules where A, B, C are entities:\n\
\n\
IF (A, parent, B) AND NOT (A, father, B) THEN (A, mother, B)\n\
\n\
IF (A, father, B) OR (A, mother, B) THEN (A, parent, B)\n\
\n\
IF (A, mother, B) AND (A, sibling, C) THEN (C, mother, B)\n\
\n\
Now we have the following triplets:\n";

const RULE_TAIL_BEFORE: &str = "Please generate as many of the most important logical rules based on the above knowledge subgraph to deduce triplet ";
const RULE_TAIL_AFTER: &str = ". The rules provide general logic implications instead of using specific entities. \
Return the rules only without any explanations.";

const INFER_BODY: &str = "Now we have the following triplets:\n\n";
const INFER_TAIL_BEFORE: &str = "Please generate 10 most likely OBJ candidates to complete ";
const INFER_TAIL_AFTER: &str = ". Return only the entity candidates without any additional text.";

/// Rule-proposing prompt for `target` given its subgraph.
pub fn build_rule_prompt(kb: &KnowledgeBase, sg: &Subgraph, target: &Triple) -> String {
    format!(
        "{PREAMBLE}\n\n{RULE_BODY}{}\n\n{RULE_TAIL_BEFORE}{}{RULE_TAIL_AFTER}",
        linearize(kb, sg),
        kb.display(target)
    )
}

/// Candidate-generation prompt for the query `(head, relation, ?)`.
pub fn build_inference_prompt(kb: &KnowledgeBase, sg: &Subgraph, head: EntityId, relation: RelationId) -> String {
    let query = format!("({}, {}, ?)", kb.entity_name(head), kb.relation_name(relation));
    format!(
        "{PREAMBLE}\n\n{INFER_BODY}{}\n\n{INFER_TAIL_BEFORE}{query}{INFER_TAIL_AFTER}",
        linearize(kb, sg)
    )
}
