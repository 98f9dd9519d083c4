use super::{BleuStats, ChrfStats, MetricError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Per-segment statistics that can be pooled into a corpus score.
pub trait CorpusStatistic: Clone {
    fn zero() -> Self;
    fn accumulate(&mut self, other: &Self);
    fn corpus_score(&self) -> f64;
}

impl CorpusStatistic for ChrfStats {
    fn zero() -> Self {
        Self::default()
    }
    fn accumulate(&mut self, other: &Self) {
        self.add(other);
    }
    fn corpus_score(&self) -> f64 {
        self.score()
    }
}

impl CorpusStatistic for BleuStats {
    fn zero() -> Self {
        Self::default()
    }
    fn accumulate(&mut self, other: &Self) {
        self.add(other);
    }
    fn corpus_score(&self) -> f64 {
        self.score(false)
    }
}

/// A plain per-segment score whose corpus value is the mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanScore {
    pub sum: f64,
    pub count: u64,
}

impl MeanScore {
    pub fn of(score: f64) -> Self {
        Self { sum: score, count: 1 }
    }
}

impl CorpusStatistic for MeanScore {
    fn zero() -> Self {
        Self::default()
    }
    fn accumulate(&mut self, other: &Self) {
        self.sum += other.sum;
        self.count += other.count;
    }
    fn corpus_score(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Fraction of resamples in which system B scored at least as high as A.
    pub p_value: f64,
    pub n_resamples: usize,
    pub seed: u64,
    /// Corpus score of A minus corpus score of B on the full sample.
    pub delta: f64,
}

fn pooled<S: CorpusStatistic>(stats: &[S]) -> S {
    let mut acc = S::zero();
    for s in stats {
        acc.accumulate(s);
    }
    acc
}

/// One-sided paired bootstrap test that system A beats system B. Each
/// resample draws segment indices with replacement (`gen_range` on a
/// ChaCha8 stream seeded with `seed`) and recomputes both corpus scores
/// from the pooled statistics.
pub fn paired_bootstrap<S: CorpusStatistic>(
    a: &[S],
    b: &[S],
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapResult, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch {
            hypotheses: a.len(),
            references: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(MetricError::TooFewSamples {
            found: a.len(),
            required: 2,
        });
    }
    if n_resamples == 0 {
        return Err(MetricError::InvalidArgument(
            "n_resamples must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b_wins = 0usize;
    for _ in 0..n_resamples {
        let (mut sa, mut sb) = (S::zero(), S::zero());
        for _ in 0..a.len() {
            let i = rng.gen_range(0..a.len());
            sa.accumulate(&a[i]);
            sb.accumulate(&b[i]);
        }
        if sb.corpus_score() >= sa.corpus_score() {
            b_wins += 1;
        }
    }
    Ok(BootstrapResult {
        p_value: b_wins as f64 / n_resamples as f64,
        n_resamples,
        seed,
        delta: pooled(a).corpus_score() - pooled(b).corpus_score(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn means(xs: &[f64]) -> Vec<MeanScore> {
        xs.iter().copied().map(MeanScore::of).collect()
    }

    #[test]
    fn identical_systems_never_separate() {
        let a = means(&[10.0, 20.0, 30.0, 40.0]);
        let r = paired_bootstrap(&a, &a, 1000, 1).unwrap();
        assert!(r.p_value >= 0.95);
        assert_eq!(r.delta, 0.0);
    }

    #[test]
    fn dominance_gives_tiny_p() {
        let a = means(&[50.0, 60.0, 70.0, 80.0, 90.0]);
        let b = means(&[40.0, 59.0, 65.0, 10.0, 89.0]);
        let r = paired_bootstrap(&a, &b, 1000, 9).unwrap();
        assert!(r.p_value < 0.001);
        assert!(r.delta > 0.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = means(&[1.0, 5.0, 3.0, 2.0, 8.0, 4.0]);
        let b = means(&[2.0, 4.0, 3.0, 3.0, 7.0, 4.0]);
        let x = paired_bootstrap(&a, &b, 500, 42).unwrap();
        let y = paired_bootstrap(&a, &b, 500, 42).unwrap();
        assert_eq!(x, y);
        assert!((0.0..=1.0).contains(&x.p_value));
    }

    #[test]
    fn single_resample_matches_direct_draw() {
        let a = means(&[1.0, 9.0, 2.0]);
        let b = means(&[5.0, 5.0, 5.0]);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx: Vec<usize> = (0..3).map(|_| rng.gen_range(0..3)).collect();
            let sa: f64 = idx.iter().map(|&i| a[i].sum).sum::<f64>() / 3.0;
            let sb: f64 = idx.iter().map(|&i| b[i].sum).sum::<f64>() / 3.0;
            let want = if sb >= sa { 1.0 } else { 0.0 };
            assert_eq!(paired_bootstrap(&a, &b, 1, seed).unwrap().p_value, want);
        }
    }

    #[test]
    fn argument_errors() {
        let one = means(&[1.0]);
        assert_eq!(
            paired_bootstrap(&one, &one, 10, 0),
            Err(MetricError::TooFewSamples { found: 1, required: 2 })
        );
        assert!(matches!(
            paired_bootstrap(&means(&[1.0, 2.0]), &one, 10, 0),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert!(paired_bootstrap(&means(&[1.0, 2.0]), &means(&[1.0, 2.0]), 0, 0).is_err());
    }
}
