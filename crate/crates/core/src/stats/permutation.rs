use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::StatsError;

/// Observed statistics within this distance of |t| still count as extreme.
const T_TOLERANCE: f64 = 1e-12;
/// Above this many subjects the mask space no longer fits a `u64`.
const MAX_MASK_BITS: usize = 63;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSamples {
    subject_ids: Vec<String>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl PairedSamples {
    pub fn new(subject_ids: Vec<String>, a: Vec<f64>, b: Vec<f64>) -> Result<Self, StatsError> {
        if a.len() != b.len() || a.len() != subject_ids.len() {
            return Err(StatsError::Precondition(format!(
                "length mismatch: {} ids, {} a, {} b",
                subject_ids.len(),
                a.len(),
                b.len()
            )));
        }
        if a.len() < 2 {
            return Err(StatsError::Precondition(format!("need at least 2 subjects, got {}", a.len())));
        }
        if a.iter().chain(&b).any(|x| !x.is_finite()) {
            return Err(StatsError::Precondition("scores must be finite".into()));
        }
        Ok(Self { subject_ids, a, b })
    }

    /// Subjects are numbered from 1.
    pub fn from_scores(a: Vec<f64>, b: Vec<f64>) -> Result<Self, StatsError> {
        let ids = (1..=a.len()).map(|i| i.to_string()).collect();
        Self::new(ids, a, b)
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn differences(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(x, y)| x - y).collect()
    }

    pub fn swapped(&self) -> Self {
        Self { subject_ids: self.subject_ids.clone(), a: self.b.clone(), b: self.a.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermTestConfig {
    pub max_exhaustive_n: usize,
    pub n_resamples: u64,
    pub seed: u64,
}

impl Default for PermTestConfig {
    fn default() -> Self {
        Self { max_exhaustive_n: 20, n_resamples: 100_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    pub t_statistic: f64,
    pub p_value: f64,
    pub n_permutations_used: u64,
    pub exhaustive: bool,
}

/// One-sample t of the differences, with the n-1 sd. Returns ±inf when the
/// differences are constant and nonzero, and 0 when they are all zero.
pub fn t_statistic(d: &[f64]) -> f64 {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    if se == 0.0 {
        if mean == 0.0 {
            0.0
        } else {
            mean.signum() * f64::INFINITY
        }
    } else {
        mean / se
    }
}

fn flipped_t(d: &[f64], mask: u64, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(
        d.iter()
            .enumerate()
            .map(|(i, &x)| if mask >> i & 1 == 1 { -x } else { x }),
    );
    t_statistic(scratch)
}

fn is_extreme(t_star: f64, threshold: f64) -> bool {
    t_star.abs() >= threshold
}

/// Two-sided sign-flip test on `a - b`.
///
/// Enumerates all `2^n` flips when `n <= max_exhaustive_n`. Otherwise draws
/// `n_resamples` masks from a ChaCha stream seeded with `seed`; if that
/// covers the whole mask space the masks are drawn without replacement, so
/// the result equals the exhaustive one.
pub fn paired_permutation_test(
    samples: &PairedSamples,
    config: &PermTestConfig,
) -> Result<PermutationTestResult, StatsError> {
    let d = samples.differences();
    let n = d.len();
    if d.iter().all(|&x| x == 0.0) {
        let exhaustive = n <= config.max_exhaustive_n;
        let used = if exhaustive { 1u64 << n } else { config.n_resamples };
        return Ok(PermutationTestResult { t_statistic: 0.0, p_value: 1.0, n_permutations_used: used, exhaustive });
    }
    let t = t_statistic(&d);
    let threshold = t.abs() - T_TOLERANCE;
    let mut scratch = Vec::with_capacity(n);

    if n <= config.max_exhaustive_n {
        if n > MAX_MASK_BITS {
            return Err(StatsError::Precondition(format!("exhaustive enumeration is limited to {MAX_MASK_BITS} subjects")));
        }
        let total = 1u64 << n;
        let hits = (0..total).filter(|&m| is_extreme(flipped_t(&d, m, &mut scratch), threshold)).count() as u64;
        return Ok(PermutationTestResult {
            t_statistic: t,
            p_value: hits as f64 / total as f64,
            n_permutations_used: total,
            exhaustive: true,
        });
    }

    if config.n_resamples == 0 {
        return Err(StatsError::Precondition("n_resamples must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let hits = if n <= MAX_MASK_BITS && config.n_resamples >= 1u64 << n {
        let mut masks: Vec<u64> = (0..1u64 << n).collect();
        masks.shuffle(&mut rng);
        masks
            .into_iter()
            .filter(|&m| is_extreme(flipped_t(&d, m, &mut scratch), threshold))
            .count() as u64
    } else {
        let mut hits = 0u64;
        for _ in 0..config.n_resamples {
            let extreme = if n <= 64 {
                let mask: u64 = rng.random();
                let mask = if n == 64 { mask } else { mask & ((1u64 << n) - 1) };
                is_extreme(flipped_t(&d, mask, &mut scratch), threshold)
            } else {
                scratch.clear();
                scratch.extend(d.iter().map(|&x| if rng.random::<bool>() { -x } else { x }));
                is_extreme(t_statistic(&scratch), threshold)
            };
            hits += u64::from(extreme);
        }
        hits
    };
    let used = if n <= MAX_MASK_BITS { config.n_resamples.min(1u64 << n) } else { config.n_resamples };
    Ok(PermutationTestResult { t_statistic: t, p_value: hits as f64 / used as f64, n_permutations_used: used, exhaustive: false })
}

/// Bonferroni adjustment for `comparisons` tests, capped at 1.
pub fn bonferroni(p: f64, comparisons: usize) -> f64 {
    (p * comparisons as f64).min(1.0)
}
