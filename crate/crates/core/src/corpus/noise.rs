//! Denoising corruption: token drops plus a bounded local shuffle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub drop_prob: f64,
    pub shuffle_window: usize,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(drop_prob: f64, shuffle_window: usize, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&drop_prob) {
            return Err(Error::Config(format!(
                "drop_prob must be in [0,1), got {drop_prob}"
            )));
        }
        Ok(NoiseConfig {
            drop_prob,
            shuffle_window,
            seed,
        })
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            drop_prob: 0.1,
            shuffle_window: 3,
            seed: 0,
        }
    }
}

/// Drop each token independently with `drop_prob` (keeping one uniformly if
/// everything would drop), then permute survivors so no token moves more than
/// `shuffle_window` positions.
pub fn apply_noise<R: Rng>(sentence: &[String], cfg: &NoiseConfig, rng: &mut R) -> Vec<String> {
    assert!(!sentence.is_empty(), "apply_noise on empty sentence");
    let mut kept: Vec<usize> = Vec::with_capacity(sentence.len());
    for i in 0..sentence.len() {
        if rng.gen::<f64>() >= cfg.drop_prob {
            kept.push(i);
        }
    }
    if kept.is_empty() {
        kept.push(rng.gen_range(0..sentence.len()));
    }
    if cfg.shuffle_window > 0 && kept.len() > 1 {
        // Sorting by position + U{0..window} displaces each survivor by at
        // most `shuffle_window` slots; the stable sort keeps it deterministic.
        let mut keyed: Vec<(usize, usize)> = kept
            .iter()
            .enumerate()
            .map(|(pos, &idx)| (pos + rng.gen_range(0..=cfg.shuffle_window), idx))
            .collect();
        keyed.sort_by_key(|&(key, _)| key);
        kept = keyed.into_iter().map(|(_, idx)| idx).collect();
    }
    kept.into_iter().map(|i| sentence[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;

    fn sentence(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn zero_noise_is_identity() {
        let cfg = NoiseConfig::new(0.0, 0, 0).unwrap();
        let mut rng = seeding::stream(1, "noise");
        let s = sentence(8);
        assert_eq!(apply_noise(&s, &cfg, &mut rng), s);
    }

    #[test]
    fn never_empties_single_token() {
        let cfg = NoiseConfig::new(0.999, 0, 0).unwrap();
        let mut rng = seeding::stream(2, "noise");
        let s = sentence(1);
        for _ in 0..200 {
            assert_eq!(apply_noise(&s, &cfg, &mut rng), s);
        }
    }

    #[test]
    fn retained_fraction_matches_drop_prob() {
        // Monte-Carlo check against the binomial expectation: mean retained
        // fraction 0.9 +/- 0.01 at drop_prob 0.1.
        let cfg = NoiseConfig::new(0.1, 3, 0).unwrap();
        let mut rng = seeding::stream(3, "noise");
        let s = sentence(10);
        let mut kept = 0usize;
        let total = 10_000usize;
        for _ in 0..total {
            kept += apply_noise(&s, &cfg, &mut rng).len();
        }
        let frac = kept as f64 / (total * s.len()) as f64;
        assert!((frac - 0.9).abs() < 0.01, "retained fraction {frac}");
    }

    #[test]
    fn displacement_bounded_by_window() {
        let window = 3;
        let cfg = NoiseConfig::new(0.0, window, 0).unwrap();
        let mut rng = seeding::stream(4, "noise");
        let s = sentence(30);
        for _ in 0..500 {
            let noisy = apply_noise(&s, &cfg, &mut rng);
            assert_eq!(noisy.len(), s.len());
            for (new_pos, tok) in noisy.iter().enumerate() {
                let old_pos: usize = tok[1..].parse().unwrap();
                assert!(
                    new_pos.abs_diff(old_pos) <= window,
                    "token {tok} moved {} -> {}",
                    old_pos,
                    new_pos
                );
            }
        }
    }

    #[test]
    fn rejects_invalid_drop_prob() {
        assert!(NoiseConfig::new(1.0, 0, 0).is_err());
        assert!(NoiseConfig::new(-0.1, 0, 0).is_err());
    }
}
