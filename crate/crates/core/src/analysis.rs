//! Diagnostics over scored output: quality by source length, off-target
//! rate, and the gain of the contextual stage over the first stage alone.

use crate::metrics::{CorpusStatistic, MetricKind, ScoreReport};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use thiserror::Error;

/// Smallest number of sentences a length bucket may hold.
pub const MIN_BUCKET_SIZE: usize = 20;

/// Label returned by identifiers that cannot decide.
pub const UNDETERMINED: &str = "und";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("need at least {required} sentences, got {found}")]
    TooFewSamples { found: usize, required: usize },
    #[error("{left} lengths but {right} scores")]
    LengthMismatch { left: usize, right: usize },
    #[error("no outputs to analyse")]
    EmptyCorpus,
    #[error("cannot compare a {left} report with a {right} report")]
    MetricMismatch { left: MetricKind, right: MetricKind },
    #[error("reports cover different corpora ({left} vs {right} sentences)")]
    CorpusMismatch { left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    /// Shortest source length assigned to the bucket.
    pub min_len: usize,
    /// Longest source length assigned to the bucket.
    pub max_len: usize,
    pub sentence_count: usize,
    /// Corpus-level score of the sentences in the bucket.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    /// Population standard deviation of the source lengths.
    pub bucket_width: f64,
    pub buckets: Vec<LengthBucket>,
}

impl BucketReport {
    /// Tab-separated columns for plotting.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("min_len\tmax_len\tcount\tscore\n");
        for b in &self.buckets {
            out.push_str(&format!("{}\t{}\t{}\t{:.4}\n", b.min_len, b.max_len, b.sentence_count, b.score));
        }
        out
    }
}

fn population_std(values: &[usize]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<usize>() as f64 / n;
    (values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Raw bucket index of each length: `floor((len - min) / width)`, or 0
/// for every sentence when all lengths are equal.
fn raw_bucket(len: usize, min: usize, width: f64) -> usize {
    if width == 0.0 {
        0
    } else {
        ((len - min) as f64 / width).floor() as usize
    }
}

/// Groups sentences into source-length buckets one standard deviation
/// wide, starting at the shortest length. Walking left to right, a bucket
/// with fewer than [`MIN_BUCKET_SIZE`] sentences absorbs its right
/// neighbour; a short final bucket joins the one before it. Each bucket is
/// scored from its pooled statistics.
pub fn bucket_by_length<S: CorpusStatistic>(
    source_lengths: &[usize],
    per_sentence: &[S],
) -> Result<BucketReport, AnalysisError> {
    if source_lengths.len() != per_sentence.len() {
        return Err(AnalysisError::LengthMismatch {
            left: source_lengths.len(),
            right: per_sentence.len(),
        });
    }
    if source_lengths.len() < MIN_BUCKET_SIZE {
        return Err(AnalysisError::TooFewSamples {
            found: source_lengths.len(),
            required: MIN_BUCKET_SIZE,
        });
    }
    let width = population_std(source_lengths);
    let min = *source_lengths.iter().min().expect("non-empty");
    let max = *source_lengths.iter().max().expect("non-empty");
    let raw_count = raw_bucket(max, min, width) + 1;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); raw_count];
    for (i, &len) in source_lengths.iter().enumerate() {
        members[raw_bucket(len, min, width)].push(i);
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    for bucket in members {
        open.extend(bucket);
        if open.len() >= MIN_BUCKET_SIZE {
            groups.push(std::mem::take(&mut open));
        }
    }
    if !open.is_empty() {
        match groups.last_mut() {
            Some(last) => last.extend(open),
            None => groups.push(open),
        }
    }

    let buckets = groups
        .into_iter()
        .map(|idx| {
            let mut acc = S::zero();
            for &i in &idx {
                acc.accumulate(&per_sentence[i]);
            }
            LengthBucket {
                min_len: idx.iter().map(|&i| source_lengths[i]).min().expect("non-empty bucket"),
                max_len: idx.iter().map(|&i| source_lengths[i]).max().expect("non-empty bucket"),
                sentence_count: idx.len(),
                score: acc.corpus_score(),
            }
        })
        .collect();
    Ok(BucketReport {
        bucket_width: width,
        buckets,
    })
}

/// Assigns a language label to a piece of text.
pub trait LanguageIdentifier {
    fn identify(&self, text: &str) -> String;
}

impl<F: Fn(&str) -> String> LanguageIdentifier for F {
    fn identify(&self, text: &str) -> String {
        self(text)
    }
}

/// Picks the language whose word list covers the most tokens of the text.
/// Ties go to the language registered first; no overlap gives
/// [`UNDETERMINED`].
#[derive(Debug, Clone, Default)]
pub struct LexiconOverlapIdentifier {
    languages: Vec<(String, HashSet<String>)>,
}

impl LexiconOverlapIdentifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_language<I, W>(mut self, label: impl Into<String>, words: I) -> Self
    where
        I: IntoIterator<Item = W>,
        W: Into<String>,
    {
        self.languages
            .push((label.into(), words.into_iter().map(Into::into).collect()));
        self
    }
}

impl LanguageIdentifier for LexiconOverlapIdentifier {
    fn identify(&self, text: &str) -> String {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let mut best: Option<(&str, usize)> = None;
        for (label, words) in &self.languages {
            let hits = tokens.iter().filter(|t| words.contains(**t)).count();
            if hits > 0 && best.is_none_or(|(_, b)| hits > b) {
                best = Some((label, hits));
            }
        }
        best.map_or_else(|| UNDETERMINED.to_string(), |(l, _)| l.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageVerdict {
    pub index: usize,
    pub identified: String,
    pub on_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffTargetReport {
    pub expected_lang: String,
    pub total: usize,
    pub off_target: usize,
    pub rate_percent: f64,
    pub verdicts: Vec<LanguageVerdict>,
}

/// Share of outputs the identifier assigns to a language other than
/// `expected_lang`, with per-sentence verdicts kept for auditing.
pub fn off_target_rate<T: AsRef<str>>(
    outputs: &[T],
    expected_lang: &str,
    identifier: &dyn LanguageIdentifier,
) -> Result<OffTargetReport, AnalysisError> {
    if outputs.is_empty() {
        return Err(AnalysisError::EmptyCorpus);
    }
    let verdicts: Vec<LanguageVerdict> = outputs
        .iter()
        .enumerate()
        .map(|(index, text)| {
            let identified = identifier.identify(text.as_ref());
            LanguageVerdict {
                index,
                on_target: identified == expected_lang,
                identified,
            }
        })
        .collect();
    let off_target = verdicts.iter().filter(|v| !v.on_target).count();
    Ok(OffTargetReport {
        expected_lang: expected_lang.to_string(),
        total: verdicts.len(),
        off_target,
        rate_percent: 100.0 * off_target as f64 / verdicts.len() as f64,
        verdicts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDelta {
    pub metric: MetricKind,
    pub single_stage: f64,
    pub two_stage: f64,
    pub delta: f64,
}

impl fmt::Display for StageDelta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: single stage {:.1}, two stage {:.1} ({:+.1})",
            self.metric, self.single_stage, self.two_stage, self.delta
        )
    }
}

/// Gain of the two-stage output over the first stage alone.
pub fn stage_delta(single_stage: &ScoreReport, two_stage: &ScoreReport) -> Result<StageDelta, AnalysisError> {
    if single_stage.metric != two_stage.metric {
        return Err(AnalysisError::MetricMismatch {
            left: single_stage.metric,
            right: two_stage.metric,
        });
    }
    if single_stage.per_sentence.len() != two_stage.per_sentence.len() {
        return Err(AnalysisError::CorpusMismatch {
            left: single_stage.per_sentence.len(),
            right: two_stage.per_sentence.len(),
        });
    }
    Ok(StageDelta {
        metric: two_stage.metric,
        single_stage: single_stage.corpus_score,
        two_stage: two_stage.corpus_score,
        delta: two_stage.corpus_score - single_stage.corpus_score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MeanScore;
    use proptest::prelude::*;

    fn scores(n: usize) -> Vec<MeanScore> {
        (0..n).map(|i| MeanScore::of(i as f64)).collect()
    }

    fn report(metric: MetricKind, score: f64) -> ScoreReport {
        ScoreReport {
            metric,
            corpus_score: score,
            per_sentence: vec![score; 3],
            signature: String::new(),
        }
    }

    #[test]
    fn equal_lengths_form_one_bucket() {
        let r = bucket_by_length(&[7; 25], &scores(25)).unwrap();
        assert_eq!(r.bucket_width, 0.0);
        assert_eq!(r.buckets.len(), 1);
        assert_eq!(r.buckets[0].sentence_count, 25);
        assert_eq!(r.buckets[0].score, 12.0);
    }

    #[test]
    fn too_few_sentences() {
        assert_eq!(
            bucket_by_length(&[3; 19], &scores(19)),
            Err(AnalysisError::TooFewSamples { found: 19, required: 20 })
        );
    }

    #[test]
    fn short_tail_joins_left() {
        let mut lengths = vec![10; 30];
        lengths.extend([40; 5]);
        let r = bucket_by_length(&lengths, &scores(35)).unwrap();
        assert_eq!(r.buckets.len(), 1);
        assert_eq!((r.buckets[0].min_len, r.buckets[0].max_len), (10, 40));
    }

    #[test]
    fn tsv_has_a_row_per_bucket() {
        let r = bucket_by_length(&[5; 20], &scores(20)).unwrap();
        assert_eq!(r.to_tsv().lines().count(), 2);
    }

    #[test]
    fn off_target_counts() {
        let id = |t: &str| if t.contains("XX") { "other".to_string() } else { "ind".to_string() };
        let outs = ["a", "b XX", "c", "XX d"];
        let r = off_target_rate(&outs, "ind", &id).unwrap();
        assert_eq!((r.total, r.off_target, r.rate_percent), (4, 2, 50.0));
        assert!(!r.verdicts[1].on_target);
        let clean = off_target_rate(&["a"], "ind", &id).unwrap();
        assert_eq!(clean.rate_percent, 0.0);
        assert_eq!(off_target_rate::<&str>(&[], "ind", &id), Err(AnalysisError::EmptyCorpus));
    }

    #[test]
    fn lexicon_identifier() {
        let id = LexiconOverlapIdentifier::new()
            .with_language("zsm", ["boleh", "kerana"])
            .with_language("ind", ["bisa", "karena", "boleh"]);
        assert_eq!(id.identify("saya boleh pergi kerana"), "zsm");
        assert_eq!(id.identify("saya bisa pergi karena"), "ind");
        assert_eq!(id.identify("boleh"), "zsm");
        assert_eq!(id.identify("hello"), UNDETERMINED);
    }

    #[test]
    fn deltas() {
        let d = stage_delta(&report(MetricKind::Chrfpp, 33.7), &report(MetricKind::Chrfpp, 37.0)).unwrap();
        assert_eq!(format!("{:+.1}", d.delta), "+3.3");
        let same = report(MetricKind::Bleu, 20.0);
        assert_eq!(stage_delta(&same, &same).unwrap().delta, 0.0);
        assert!(matches!(
            stage_delta(&report(MetricKind::Chrfpp, 1.0), &report(MetricKind::Bleu, 1.0)),
            Err(AnalysisError::MetricMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn buckets_partition_the_corpus(lengths in proptest::collection::vec(1usize..80, 20..200)) {
            let r = bucket_by_length(&lengths, &scores(lengths.len())).unwrap();
            let total: usize = r.buckets.iter().map(|b| b.sentence_count).sum();
            prop_assert_eq!(total, lengths.len());
            prop_assert!(r.buckets.iter().all(|b| b.sentence_count >= MIN_BUCKET_SIZE));
            for pair in r.buckets.windows(2) {
                prop_assert!(pair[0].max_len < pair[1].min_len);
            }
        }
    }
}
