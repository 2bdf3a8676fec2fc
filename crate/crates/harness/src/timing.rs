//! Wall-clock probes for attack runs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    /// Seconds per image, one per repeat.
    pub samples: Vec<f64>,
    pub median: f64,
    pub iqr: f64,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl TimingStats {
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("timing needs at least one sample"));
        }
        let raw = samples.clone();
        samples.sort_by(f64::total_cmp);
        Ok(Self { median: quantile(&samples, 0.5), iqr: quantile(&samples, 0.75) - quantile(&samples, 0.25), samples: raw })
    }
}

/// Runs `attack` once to warm up, then `n_repeats` timed times; each sample
/// is the run time divided by `n_images`.
pub fn timing_probe(attack: &mut dyn FnMut() -> Result<()>, n_images: usize, n_repeats: usize) -> Result<TimingStats> {
    if n_images == 0 || n_repeats == 0 {
        return Err(invalid("timing probe needs images and repeats"));
    }
    attack()?;
    let mut samples = Vec::with_capacity(n_repeats);
    for _ in 0..n_repeats {
        let start = Instant::now();
        attack()?;
        samples.push(start.elapsed().as_secs_f64() / n_images as f64);
    }
    TimingStats::from_samples(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_repeat_has_zero_iqr() {
        let s = timing_probe(&mut || Ok(()), 4, 1).unwrap();
        assert_eq!(s.iqr, 0.0);
        assert_eq!(s.samples.len(), 1);
    }

    #[test]
    fn quantiles_of_known_samples() {
        let s = TimingStats::from_samples(vec![4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(s.median, 3.0);
        assert_eq!(s.iqr, 2.0);
    }

    #[test]
    fn errors_propagate_and_zero_counts_are_rejected() {
        assert!(timing_probe(&mut || Err(invalid("boom")), 1, 3).is_err());
        assert!(timing_probe(&mut || Ok(()), 0, 3).is_err());
    }
}
