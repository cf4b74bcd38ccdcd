//! String similarity used to map free-text relation phrases onto the KB's
//! relation vocabulary.

use std::collections::HashMap;

pub trait SimilarityProvider: Send + Sync {
    fn name(&self) -> &str;

    /// Similarity in `[0, 1]`; must be symmetric with `score(x, x) == 1`.
    fn score(&self, a: &str, b: &str) -> f64;
}

/// Lowercases and replaces every non-alphanumeric run with a single space.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.chars() {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(c.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

/// Cosine similarity between character-trigram count vectors of the
/// normalized strings, padded with one space on each side.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramCosine;

impl TrigramCosine {
    fn trigrams(s: &str) -> HashMap<[char; 3], u32> {
        let padded: Vec<char> = std::iter::once(' ').chain(s.chars()).chain(std::iter::once(' ')).collect();
        let mut counts = HashMap::new();
        for w in padded.windows(3) {
            *counts.entry([w[0], w[1], w[2]]).or_insert(0) += 1;
        }
        counts
    }
}

impl SimilarityProvider for TrigramCosine {
    fn name(&self) -> &str {
        "trigram-cosine"
    }

    fn score(&self, a: &str, b: &str) -> f64 {
        let (na, nb) = (normalize(a), normalize(b));
        if na == nb {
            return 1.0;
        }
        let (ta, tb) = (Self::trigrams(&na), Self::trigrams(&nb));
        let dot: f64 = ta
            .iter()
            .filter_map(|(k, &x)| tb.get(k).map(|&y| f64::from(x) * f64::from(y)))
            .sum();
        let norm = |t: &HashMap<[char; 3], u32>| t.values().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        let denom = norm(&ta) * norm(&tb);
        if denom == 0.0 {
            return 0.0;
        }
        (dot / denom).clamp(0.0, 1.0)
    }
}
