//! Exploration noise: temporally correlated Gaussians and guided sign flips.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// `ε̂ = β·ε_prev + sqrt(1 − β²)·ε`, with `ε` standard normal per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedNoise {
    pub beta: f64,
    prev: Vec<f64>,
}

impl CorrelatedNoise {
    pub fn new(dim: usize, beta: f64) -> CorrelatedNoise {
        CorrelatedNoise {
            beta,
            prev: vec![0.0; dim],
        }
    }

    pub fn reset(&mut self) {
        self.prev.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn state(&self) -> &[f64] {
        &self.prev
    }

    pub fn sample<R: Rng>(&mut self, rng: &mut R) -> Vec<f64> {
        let c = (1.0 - self.beta * self.beta).sqrt();
        for p in &mut self.prev {
            let e: f64 = rng.sample(StandardNormal);
            *p = self.beta * *p + c * e;
        }
        self.prev.clone()
    }
}

/// With probability `p` (one draw per call), forces the sign of each entry
/// listed in `signs` to the given direction. Magnitudes never change.
pub fn guided_noise<R: Rng>(eps: &[f64], signs: &[(usize, f64)], p: f64, rng: &mut R) -> Vec<f64> {
    let mut out = eps.to_vec();
    if signs.is_empty() || p <= 0.0 {
        return out;
    }
    if p >= 1.0 || rng.random::<f64>() < p {
        for &(j, s) in signs {
            if s != 0.0 {
                out[j] = out[j].abs().copysign(s);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_sample_is_scaled_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut n = CorrelatedNoise::new(3, 0.2);
        let got = n.sample(&mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for g in got {
            let e: f64 = rng.sample(StandardNormal);
            assert_eq!(g, 0.96f64.sqrt() * e);
        }
    }

    #[test]
    fn zero_beta_is_iid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut n = CorrelatedNoise::new(2, 0.0);
        n.sample(&mut rng);
        let got = n.sample(&mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _: f64 = rng.sample(StandardNormal);
        let _: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        assert_eq!(got[0], e);
    }

    #[test]
    fn guided_flip_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(guided_noise(&[-0.3, 0.2], &[(0, 1.0)], 1.0, &mut rng), vec![0.3, 0.2]);
        assert_eq!(guided_noise(&[-0.3, 0.2], &[(0, 1.0)], 0.0, &mut rng), vec![-0.3, 0.2]);
        assert_eq!(guided_noise(&[-0.3, 0.2], &[], 1.0, &mut rng), vec![-0.3, 0.2]);
        assert_eq!(guided_noise(&[0.3, 0.2], &[(1, -1.0)], 1.0, &mut rng), vec![0.3, -0.2]);
    }

    #[test]
    fn guided_fraction_tracks_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let flipped = (0..n)
            .filter(|_| guided_noise(&[-1.0], &[(0, 1.0)], 0.5, &mut rng)[0] > 0.0)
            .count();
        let frac = flipped as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn correlated_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut n = CorrelatedNoise::new(1, 0.2);
        // Warm up past the zero initial state.
        for _ in 0..100 {
            n.sample(&mut rng);
        }
        let count = 1_000_000;
        let xs: Vec<f64> = (0..count).map(|_| n.sample(&mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / count as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / count as f64;
        let lag1 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (count - 1) as f64 / var;
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
        assert!((lag1 - 0.2).abs() < 0.02, "lag-1 {lag1}");
    }

    #[test]
    fn guided_preserves_norm_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut n = CorrelatedNoise::new(9, 0.2);
        for _ in 0..100_000 {
            let eps = n.sample(&mut rng);
            let signs: Vec<(usize, f64)> = (0..3)
                .filter_map(|f| match rng.random_range(0..3) {
                    0 => None,
                    1 => Some((3 * f, 1.0)),
                    _ => Some((3 * f, -1.0)),
                })
                .collect();
            let out = guided_noise(&eps, &signs, 0.5, &mut rng);
            let a: f64 = eps.iter().map(|x| x * x).sum();
            let b: f64 = out.iter().map(|x| x * x).sum();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
