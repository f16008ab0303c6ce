//! Seedable random variate streams.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed, with a stream
//! id selecting one of the generator's independent 64-bit stream words, so
//! `(seed, stream_id)` pairs never overlap. Standard normals use the ziggurat
//! sampler from `rand_distr`. Poisson variates use Knuth's multiplication
//! method below a mean of 30 and the PTRS transformed-rejection sampler
//! (Hörmann 1993) at or above it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const PTRS_THRESHOLD: f64 = 30.0;

/// A deterministic, single-owner source of random variates.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self::derived(seed, 0)
    }

    /// Independent stream for `(seed, stream_id)`.
    pub fn derived(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Child stream keyed by this stream's seed and a new id.
    pub fn fork(&self, stream_id: u64) -> Self {
        Self::derived(self.seed, stream_id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal(&mut self, mean: f64, variance: f64) -> Result<f64> {
        if !(variance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "normal variance must be nonnegative, got {variance}"
            )));
        }
        if variance == 0.0 {
            return Ok(mean);
        }
        Ok(mean + variance.sqrt() * self.standard_normal())
    }

    /// Uniform on the half-open interval [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn poisson(&mut self, mean: f64) -> Result<u64> {
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "poisson mean must be positive and finite, got {mean}"
            )));
        }
        if mean < PTRS_THRESHOLD {
            Ok(self.poisson_knuth(mean))
        } else {
            Ok(self.poisson_ptrs(mean))
        }
    }

    fn poisson_knuth(&mut self, mean: f64) -> u64 {
        let limit = (-mean).exp();
        let mut k = 0u64;
        let mut prod = self.uniform();
        while prod > limit {
            k += 1;
            prod *= self.uniform();
        }
        k
    }

    fn poisson_ptrs(&mut self, mean: f64) -> u64 {
        let slam = mean.sqrt();
        let loglam = mean.ln();
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let vr = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.uniform() - 0.5;
            let v = self.uniform();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
            if us >= 0.07 && v <= vr {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
            let rhs = -mean + k * loglam - ln_factorial(k);
            if lhs <= rhs {
                return k as u64;
            }
        }
    }
}

fn ln_factorial(k: f64) -> f64 {
    if k < 10.0 {
        (1..=(k as u64)).map(|i| (i as f64).ln()).sum()
    } else {
        // Stirling series
        let k1 = k + 1.0;
        (k1 - 0.5) * k1.ln() - k1
            + 0.5 * (2.0 * std::f64::consts::PI).ln()
            + 1.0 / (12.0 * k1)
            - 1.0 / (360.0 * k1.powi(3))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn standard_normal_moments() {
        let mut s = RandomStream::new(11);
        let xs: Vec<f64> = (0..1_000_000).map(|_| s.standard_normal()).collect();
        let (m, v) = moments(&xs);
        assert!(m.abs() < 0.005, "mean {m}");
        assert!((v - 1.0).abs() < 0.01, "var {v}");
    }

    #[test]
    fn identical_seeds_identical_draws() {
        let mut a = RandomStream::new(99);
        let mut b = RandomStream::new(99);
        for _ in 0..100 {
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = RandomStream::derived(5, 0);
        let mut b = RandomStream::derived(5, 1);
        let xa: Vec<f64> = (0..16).map(|_| a.uniform()).collect();
        let xb: Vec<f64> = (0..16).map(|_| b.uniform()).collect();
        assert_ne!(xa, xb);
    }

    #[test]
    fn normal_shift_scale_and_degenerate() {
        let mut s = RandomStream::new(3);
        assert_eq!(s.normal(5.0, 0.0).unwrap(), 5.0);
        let xs: Vec<f64> = (0..1_000_000).map(|_| s.normal(0.0, 4.0).unwrap()).collect();
        assert!((moments(&xs).1 - 4.0).abs() < 0.05);
        let ys: Vec<f64> = (0..1_000_000).map(|_| s.normal(-3.0, 1.0).unwrap()).collect();
        assert!((moments(&ys).0 + 3.0).abs() < 0.01);
        assert!(matches!(s.normal(0.0, -1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn poisson_means_and_variance() {
        let mut s = RandomStream::new(17);
        let xs: Vec<f64> = (0..1_000_000).map(|_| s.poisson(4.59).unwrap() as f64).collect();
        assert!((moments(&xs).0 - 4.59).abs() < 0.02);
        let ys: Vec<f64> = (0..1_000_000).map(|_| s.poisson(10.0).unwrap() as f64).collect();
        assert!((moments(&ys).1 - 10.0).abs() < 0.15);
    }

    #[test]
    fn poisson_tiny_mean_mostly_zero() {
        let mut s = RandomStream::new(23);
        let n = 200_000;
        let zeros = (0..n).filter(|_| s.poisson(0.001).unwrap() == 0).count();
        let frac = zeros as f64 / n as f64;
        // P(0) = exp(-0.001) = 0.9990005
        assert!((frac - 0.999_000_5).abs() < 0.0005, "{frac}");
    }

    #[test]
    fn poisson_large_mean_path() {
        let mut s = RandomStream::new(29);
        let xs: Vec<f64> = (0..400_000).map(|_| s.poisson(75.0).unwrap() as f64).collect();
        let (m, v) = moments(&xs);
        assert!((m - 75.0).abs() < 0.1, "{m}");
        assert!((v - 75.0).abs() < 1.0, "{v}");
    }

    #[test]
    fn poisson_rejects_nonpositive_mean() {
        let mut s = RandomStream::new(1);
        assert!(s.poisson(0.0).is_err());
        assert!(s.poisson(-2.0).is_err());
        assert!(s.poisson(f64::NAN).is_err());
    }

    #[test]
    fn poisson_chi_square_goodness_of_fit() {
        let mut s = RandomStream::new(31);
        let n = 100_000;
        let mean: f64 = 5.0;
        let bins = 13; // 0..=11 and a tail bin
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let k = s.poisson(mean).unwrap() as usize;
            counts[k.min(bins - 1)] += 1;
        }
        let mut pmf = Vec::with_capacity(bins);
        let mut p = (-mean).exp();
        for k in 0..bins - 1 {
            pmf.push(p);
            p *= mean / (k + 1) as f64;
        }
        pmf.push(1.0 - pmf.iter().sum::<f64>());
        let chi2: f64 = counts
            .iter()
            .zip(&pmf)
            .map(|(&c, &p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // chi-square critical value, 12 dof, alpha = 0.001
        assert!(chi2 < 32.909, "chi2 = {chi2}");
    }
}
