//! Independent brute-force recomputations used to verify the fast paths.
//!
//! Everything here is deliberately written the slow, obvious way and shares no
//! code with the implementations it checks. The functions back the derived
//! test values across the crate and the acceptance suite.

use std::collections::HashSet;

/// Log-probability of index `target` under a softmax of `logits`, computed by
/// materializing the full distribution and indexing it.
pub fn softmax_log_prob(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    (weights[target] / total).ln()
}

/// Mean cross-entropy over positions by per-row softmax materialization.
pub fn cross_entropy(logits_rows: &[Vec<f64>], targets: &[usize]) -> f64 {
    let total: f64 = logits_rows
        .iter()
        .zip(targets)
        .map(|(row, &t)| -softmax_log_prob(row, t))
        .sum();
    total / targets.len() as f64
}

/// 1-based rank of `target` via a full sort, ties broken by lower index.
pub fn rank_by_sort(scores: &[f64], target: usize) -> u32 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    (order.iter().position(|&i| i == target).expect("target indexed") + 1) as u32
}

/// Reference Adam loop (bias-corrected), one flat parameter vector.
pub struct AdamReference {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamReference {
    pub fn new(n: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamReference { beta1, beta2, epsilon, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Sentence-level co-occurrence count by a quadratic scan over raw sentences.
pub fn cooccurrence_brute(sentences: &[String], a: &str, b: &str) -> u64 {
    sentences
        .iter()
        .filter(|s| {
            let words: Vec<&str> = s.split_whitespace().collect();
            words.contains(&a) && words.contains(&b)
        })
        .count() as u64
}

/// Downward-monotone closure derived from verbalized statements alone:
/// `A is-a B` and `B <relation> C` entail `A <relation> C`.
///
/// Inputs are (entity, class) membership pairs and (class, relation,
/// predicate) class-level property triples, as parsed from text or a
/// manifest — not taxonomy internals.
pub fn closure_from_statements(
    memberships: &[(String, String)],
    class_properties: &[(String, String, String)],
) -> HashSet<(String, String, String)> {
    let mut entailed = HashSet::new();
    for (entity, class) in memberships {
        for (subject, relation, predicate) in class_properties {
            if subject == class {
                entailed.insert((entity.clone(), relation.clone(), predicate.clone()));
            }
        }
    }
    entailed
}

/// One-pass mean reciprocal rank over a rank column.
pub fn mrr(ranks: &[u32]) -> f64 {
    let total: f64 = ranks.iter().map(|&r| 1.0 / r as f64).sum();
    total / ranks.len() as f64
}
