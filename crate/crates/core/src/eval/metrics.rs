//! ROUGE-N, ROUGE-L and corpus BLEU over token sequences.
//!
//! Settings: lowercase tokens as produced by [`crate::text::tokenize`], no
//! stemming, no stopword removal, BLEU with uniform weights and no
//! smoothing.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

/// Human-readable statement of the scoring settings, printed in report headers.
pub const METRIC_SETTINGS: &str =
    "tokens=lowercase/punct-split; rouge: no stemming, multi-ref=max F1; bleu: corpus-level, uniform weights, no smoothing, brevity penalty exp(1-r/c)";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        let recall = if ref_total == 0 { 0.0 } else { overlap as f64 / ref_total as f64 };
        let precision = if cand_total == 0 { 0.0 } else { overlap as f64 / cand_total as f64 };
        Prf { recall, precision, f1: f1(precision, recall) }
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

fn clipped_overlap<T: Eq + Hash>(cand: &HashMap<&[T], usize>, reference: &HashMap<&[T], usize>) -> usize {
    cand.iter().map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0))).sum()
}

fn best_of<I: IntoIterator<Item = Prf>>(scores: I) -> Prf {
    scores.into_iter().fold(Prf::default(), |best, s| {
        if s.f1 > best.f1 || (s.f1 == best.f1 && s.recall > best.recall) {
            s
        } else {
            best
        }
    })
}

/// ROUGE-N with clipped n-gram counts. With several references the
/// reference with the highest F1 is reported. A reference shorter than `n`
/// contributes no n-grams.
///
/// # Panics
/// If `n == 0`.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], references: &[Vec<T>], n: usize) -> Prf {
    assert!(n >= 1, "rouge_n needs n >= 1");
    let cand = ngram_counts(candidate, n);
    let cand_total = candidate.len().saturating_sub(n - 1);
    best_of(references.iter().map(|r| {
        let rc = ngram_counts(r, n);
        let ref_total = r.len().saturating_sub(n - 1);
        Prf::from_counts(clipped_overlap(&cand, &rc), cand_total, ref_total)
    }))
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence-level ROUGE-L; multi-reference takes the max F1.
pub fn rouge_l<T: Eq>(candidate: &[T], references: &[Vec<T>]) -> Prf {
    best_of(references.iter().map(|r| {
        let l = lcs_len(candidate, r);
        Prf::from_counts(l, candidate.len(), r.len())
    }))
}

/// Corpus-level BLEU against one reference per candidate: clipped n-gram
/// precisions pooled over the corpus, geometric mean with uniform weights,
/// times the brevity penalty. Any pooled precision of zero yields 0.
///
/// # Panics
/// If the slices differ in length, are empty, or `max_n == 0`.
pub fn bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> f64 {
    assert_eq!(candidates.len(), references.len(), "one reference per candidate");
    assert!(!candidates.is_empty(), "bleu needs at least one candidate");
    assert!(max_n >= 1);
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=max_n {
            let cc = ngram_counts(c, n);
            let rc = ngram_counts(r, n);
            matched[n - 1] += clipped_overlap(&cc, &rc);
            total[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if c_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        if matched[n] == 0 || total[n] == 0 {
            return 0.0;
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    let bp = if c_len < r_len { (1.0 - r_len as f64 / c_len as f64).exp() } else { 1.0 };
    bp * (log_sum / max_n as f64).exp()
}

/// The five reported scores for one (task, split) cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub rouge1_recall: f64,
    pub rouge2_recall: f64,
    pub rouge_l_f1: f64,
    pub bleu: f64,
    pub bleu1: f64,
}

impl Scores {
    pub fn as_array(&self) -> [f64; 5] {
        [self.rouge1_recall, self.rouge2_recall, self.rouge_l_f1, self.bleu, self.bleu1]
    }
}

/// ROUGE scores averaged over pairs; BLEU and BLEU-1 at corpus level.
/// An empty corpus scores all zeros.
pub fn score_corpus<T: Eq + Hash + Clone>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Scores {
    assert_eq!(candidates.len(), references.len());
    if candidates.is_empty() {
        return Scores::default();
    }
    let n = candidates.len() as f64;
    let mut s = Scores::default();
    for (c, r) in candidates.iter().zip(references) {
        let refs = std::slice::from_ref(r);
        s.rouge1_recall += rouge_n(c, refs, 1).recall;
        s.rouge2_recall += rouge_n(c, refs, 2).recall;
        s.rouge_l_f1 += rouge_l(c, refs).f1;
    }
    s.rouge1_recall /= n;
    s.rouge2_recall /= n;
    s.rouge_l_f1 /= n;
    s.bleu = bleu(candidates, references, 4);
    s.bleu1 = bleu(candidates, references, 1);
    s
}
