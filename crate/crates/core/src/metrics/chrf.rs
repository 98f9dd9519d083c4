use super::{check_corpus, MetricError, MetricKind, ScoreReport};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const CHAR_ORDER: usize = 6;
const WORD_ORDER: usize = 2;
const ORDERS: usize = CHAR_ORDER + WORD_ORDER;
const BETA: f64 = 2.0;
const PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

pub const CHRF_SIGNATURE: &str = "nrefs:1|case:mixed|eff:yes|nc:6|nw:2|space:no";

/// Sufficient statistics of one segment: for each character order 1..=6
/// then word order 1..=2, the hypothesis n-gram count, the reference
/// n-gram count and the clipped matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChrfStats(pub [u64; 3 * ORDERS]);

impl Default for ChrfStats {
    fn default() -> Self {
        Self([0; 3 * ORDERS])
    }
}

impl ChrfStats {
    pub fn add(&mut self, other: &ChrfStats) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += b;
        }
    }

    /// F-score with precision and recall averaged over the orders for which
    /// both sides have n-grams.
    pub fn score(&self) -> f64 {
        let factor = BETA * BETA;
        let (mut avg_prec, mut avg_rec, mut effective) = (0.0, 0.0, 0usize);
        for order in self.0.chunks_exact(3) {
            let (hyp, reference, matches) = (order[0], order[1], order[2]);
            if hyp > 0 && reference > 0 {
                avg_prec += matches as f64 / hyp as f64;
                avg_rec += matches as f64 / reference as f64;
                effective += 1;
            }
        }
        if effective == 0 {
            return 0.0;
        }
        avg_prec /= effective as f64;
        avg_rec /= effective as f64;
        if avg_prec + avg_rec == 0.0 {
            return 0.0;
        }
        100.0 * (1.0 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec)
    }
}

fn char_ngrams(text: &str, n: usize) -> HashMap<&str, u64> {
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    let mut counts = HashMap::new();
    for w in bounds.windows(n + 1) {
        *counts.entry(&text[w[0]..w[n]]).or_insert(0) += 1;
    }
    counts
}

fn word_ngrams(tokens: &[&str], n: usize) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w.join(" ")).or_insert(0) += 1;
    }
    counts
}

/// Splits one leading or trailing punctuation character off each word.
fn split_punctuation(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut chars = word.chars();
        let first = chars.next().expect("non-empty word");
        if chars.next().is_none() {
            out.push(word);
            continue;
        }
        let last = word.chars().next_back().expect("non-empty word");
        if PUNCTUATION.contains(last) {
            out.push(&word[..word.len() - last.len_utf8()]);
            out.push(&word[word.len() - last.len_utf8()..]);
        } else if PUNCTUATION.contains(first) {
            out.push(&word[..first.len_utf8()]);
            out.push(&word[first.len_utf8()..]);
        } else {
            out.push(word);
        }
    }
    out
}

fn match_stats<K: std::hash::Hash + Eq>(hyp: &HashMap<K, u64>, reference: &HashMap<K, u64>) -> [u64; 3] {
    let hyp_total: u64 = hyp.values().sum();
    let ref_total: u64 = reference.values().sum();
    let matches = hyp
        .iter()
        .filter_map(|(k, &c)| reference.get(k).map(|&r| c.min(r)))
        .sum();
    [if ref_total > 0 { hyp_total } else { 0 }, ref_total, matches]
}

fn segment_stats(hypothesis: &str, reference: &str) -> ChrfStats {
    let hyp_chars: String = hypothesis.split_whitespace().collect();
    let ref_chars: String = reference.split_whitespace().collect();
    let hyp_words = split_punctuation(hypothesis);
    let ref_words = split_punctuation(reference);
    let mut stats = ChrfStats::default();
    for n in 1..=CHAR_ORDER {
        let s = match_stats(&char_ngrams(&hyp_chars, n), &char_ngrams(&ref_chars, n));
        stats.0[3 * (n - 1)..3 * n].copy_from_slice(&s);
    }
    for n in 1..=WORD_ORDER {
        let s = match_stats(&word_ngrams(&hyp_words, n), &word_ngrams(&ref_words, n));
        let at = 3 * (CHAR_ORDER + n - 1);
        stats.0[at..at + 3].copy_from_slice(&s);
    }
    stats
}

/// Per-segment sufficient statistics, for resampling.
pub fn chrf_statistics<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
) -> Result<Vec<ChrfStats>, MetricError> {
    check_corpus(hypotheses, references)?;
    Ok(hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| segment_stats(h.as_ref(), r.as_ref()))
        .collect())
}

/// chrF++ over a single-reference corpus.
pub fn chrf_pp<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
) -> Result<ScoreReport, MetricError> {
    let stats = chrf_statistics(hypotheses, references)?;
    let mut total = ChrfStats::default();
    for s in &stats {
        total.add(s);
    }
    Ok(ScoreReport {
        metric: MetricKind::Chrfpp,
        corpus_score: total.score(),
        per_sentence: stats.iter().map(ChrfStats::score).collect(),
        signature: CHRF_SIGNATURE.to_string(),
    })
}
