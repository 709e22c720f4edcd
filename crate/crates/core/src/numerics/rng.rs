//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`Rng`], a ChaCha8 stream
//! cipher generator (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`. ChaCha8 output is specified bit-for-bit and does not
//! depend on platform word size or endianness, so equal seeds give equal
//! streams everywhere. Independent sub-streams are derived with
//! [`Rng::fork`], which selects a ChaCha stream id; forking never consumes
//! draws from the parent.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator on stream `stream` of the same seed.
    pub fn fork(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Rng {
            seed: self.seed,
            inner,
        }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

/// I.i.d. samples from `[lo, hi)`.
pub fn init_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(lo < hi) {
        return Err(Error::Domain(format!(
            "uniform init needs lo < hi, got [{lo}, {hi})"
        )));
    }
    let dist = Uniform::new(lo, hi).map_err(|e| Error::Domain(e.to_string()))?;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(&mut rng.inner)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Inverted dropout mask: each entry is `1/keep_prob` with probability
/// `keep_prob`, else 0.
pub fn dropout_mask(len: usize, keep_prob: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    check_keep_prob(keep_prob)?;
    let scale = 1.0 / keep_prob;
    Ok((0..len)
        .map(|_| if rng.unit() < keep_prob { scale } else { 0.0 })
        .collect())
}

pub(crate) fn check_keep_prob(keep_prob: f64) -> Result<()> {
    if keep_prob > 0.0 && keep_prob <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "dropout keep probability must lie in (0, 1], got {keep_prob}"
        )))
    }
}

/// Inverted dropout on a plain tensor. Evaluation mode and `keep_prob == 1`
/// return the input unchanged and draw nothing from `rng`.
pub fn dropout(x: &Tensor, keep_prob: f64, rng: &mut Rng, training: bool) -> Result<Tensor> {
    check_keep_prob(keep_prob)?;
    if !training || keep_prob == 1.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), keep_prob, rng)?;
    let mut out = x.clone();
    for (v, m) in out.data_mut().iter_mut().zip(mask) {
        *v *= m;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_range_mean_and_determinism() {
        let mut rng = Rng::new(7);
        let t = init_uniform(&[100_000], 0.0, 1.0, &mut rng).unwrap();
        assert!(t.data().iter().all(|&v| (0.0..1.0).contains(&v)));
        let mean = t.sum() / t.len() as f64;
        assert!(mean > 0.99 * 0.5 && mean < 1.01 * 0.5, "{mean}");
        let again = init_uniform(&[100_000], 0.0, 1.0, &mut Rng::new(7)).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn uniform_rejects_empty_interval() {
        let mut rng = Rng::new(0);
        assert!(matches!(
            init_uniform(&[3], 0.5, 0.5, &mut rng),
            Err(Error::Domain(_))
        ));
        assert!(init_uniform(&[3], 1.0, -1.0, &mut rng).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = Rng::new(1);
        let x = init_uniform(&[50], -1.0, 1.0, &mut rng).unwrap();
        assert_eq!(dropout(&x, 1.0, &mut rng, true).unwrap(), x);
        assert_eq!(dropout(&x, 0.3, &mut rng, false).unwrap(), x);
        assert!(dropout(&x, 0.0, &mut rng, true).is_err());
        assert!(dropout(&x, 1.5, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_is_unbiased() {
        let mut rng = Rng::new(3);
        let ones = Tensor::filled(&[4], 1.0);
        let mut acc = [0.0; 4];
        let samples = 100_000;
        for _ in 0..samples {
            let d = dropout(&ones, 0.95, &mut rng, true).unwrap();
            for (a, v) in acc.iter_mut().zip(d.data()) {
                *a += v;
            }
        }
        for a in acc {
            let mean = a / samples as f64;
            assert!((mean - 1.0).abs() < 0.01, "{mean}");
        }
    }

    #[test]
    fn forks_are_reproducible_and_distinct() {
        let base = Rng::new(11);
        let mut a = base.fork(1);
        let mut b = base.fork(1);
        let mut c = base.fork(2);
        let xa: Vec<f64> = (0..5).map(|_| a.unit()).collect();
        let xb: Vec<f64> = (0..5).map(|_| b.unit()).collect();
        let xc: Vec<f64> = (0..5).map(|_| c.unit()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }
}
