use super::{check_corpus, MetricError, MetricKind, ScoreReport, Tokenizer};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const MAX_ORDER: usize = 4;

/// Sufficient statistics of one segment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub hyp_len: u64,
    pub ref_len: u64,
    pub correct: [u64; MAX_ORDER],
    pub total: [u64; MAX_ORDER],
}

fn log_or_floor(x: f64) -> f64 {
    if x == 0.0 {
        -9_999_999_999.0
    } else {
        x.ln()
    }
}

impl BleuStats {
    pub fn add(&mut self, other: &BleuStats) {
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
        for n in 0..MAX_ORDER {
            self.correct[n] += other.correct[n];
            self.total[n] += other.total[n];
        }
    }

    /// BLEU with exponential smoothing. With `effective_order` the geometric
    /// mean only covers orders the hypothesis is long enough to have.
    pub fn score(&self, effective_order: bool) -> f64 {
        let mut precisions = [0.0; MAX_ORDER];
        let mut smooth = 1.0;
        let mut eff_order = MAX_ORDER;
        for (n, (&correct, &total)) in self.correct.iter().zip(&self.total).enumerate() {
            if total == 0 {
                break;
            }
            if effective_order {
                eff_order = n + 1;
            }
            precisions[n] = if correct == 0 {
                smooth *= 2.0;
                100.0 / (smooth * total as f64)
            } else {
                100.0 * correct as f64 / total as f64
            };
        }
        if self.correct[0] == 0 {
            return 0.0;
        }
        let bp = if self.hyp_len < self.ref_len {
            if self.hyp_len == 0 {
                0.0
            } else {
                (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
            }
        } else {
            1.0
        };
        let log_sum: f64 = precisions[..eff_order].iter().map(|&p| log_or_floor(p)).sum();
        bp * (log_sum / eff_order as f64).exp()
    }
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], u64> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

fn segment_stats(hypothesis: &str, reference: &str) -> BleuStats {
    let hyp: Vec<&str> = hypothesis.split_whitespace().collect();
    let reference: Vec<&str> = reference.split_whitespace().collect();
    let mut stats = BleuStats {
        hyp_len: hyp.len() as u64,
        ref_len: reference.len() as u64,
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let h = ngram_counts(&hyp, n);
        let r = ngram_counts(&reference, n);
        stats.total[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
        stats.correct[n - 1] = h
            .iter()
            .filter_map(|(g, &c)| r.get(g).map(|&rc| c.min(rc)))
            .sum();
    }
    stats
}

fn to_owned_lines<T: AsRef<str>>(lines: &[T]) -> Vec<String> {
    lines.iter().map(|l| l.as_ref().to_string()).collect()
}

/// Per-segment sufficient statistics after tokenization.
pub fn bleu_statistics<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<BleuStats>, MetricError> {
    check_corpus(hypotheses, references)?;
    let hyps = tokenizer.tokenize_lines(&to_owned_lines(hypotheses))?;
    let refs = tokenizer.tokenize_lines(&to_owned_lines(references))?;
    Ok(hyps
        .iter()
        .zip(&refs)
        .map(|(h, r)| segment_stats(h, r))
        .collect())
}

pub fn bleu_signature(tokenizer: &dyn Tokenizer) -> String {
    format!("nrefs:1|case:mixed|eff:no|tok:{}|smooth:exp", tokenizer.name())
}

/// Corpus BLEU. Sentence scores use effective order, as sentence-level
/// BLEU is otherwise zero for anything shorter than four tokens.
pub fn bleu_with_options<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
    tokenizer: &dyn Tokenizer,
    metric: MetricKind,
) -> Result<ScoreReport, MetricError> {
    let stats = bleu_statistics(hypotheses, references, tokenizer)?;
    let mut total = BleuStats::default();
    for s in &stats {
        total.add(s);
    }
    Ok(ScoreReport {
        metric,
        corpus_score: total.score(false),
        per_sentence: stats.iter().map(|s| s.score(true)).collect(),
        signature: bleu_signature(tokenizer),
    })
}

/// BLEU under `tokenizer`; reported as spBLEU when it is a subword tokenizer.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
    tokenizer: &dyn Tokenizer,
) -> Result<ScoreReport, MetricError> {
    let metric = if tokenizer.is_subword() {
        MetricKind::Spbleu
    } else {
        MetricKind::Bleu
    };
    bleu_with_options(hypotheses, references, tokenizer, metric)
}

pub fn spbleu<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
    tokenizer: &dyn Tokenizer,
) -> Result<ScoreReport, MetricError> {
    bleu_with_options(hypotheses, references, tokenizer, MetricKind::Spbleu)
}
