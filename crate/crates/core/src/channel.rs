//! Power normalisation and the additive white Gaussian noise channel.

use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConfig {
    /// Signal-to-noise ratio in dB; `f64::INFINITY` disables the noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(snr_db: f64, seed: u64) -> Result<Self> {
        let c = ChannelConfig { snr_db, seed };
        c.validate()?;
        Ok(c)
    }

    pub fn noiseless(seed: u64) -> Self {
        ChannelConfig {
            snr_db: f64::INFINITY,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Config(format!("snr_db must be finite or +inf, got {}", self.snr_db)));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.snr_db == f64::INFINITY
    }

    /// Noise variance for a unit-power signal.
    pub fn noise_variance(&self) -> f64 {
        noise_variance(self.snr_db)
    }
}

pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Mean of squares, accumulated in `f64`.
pub fn mean_power(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64
}

/// Scales `symbols` to unit mean power; returns the scaled vector and the RMS
/// the receiver multiplies back in.
pub fn power_normalize(symbols: &[f32]) -> Result<(Vec<f32>, f32)> {
    let p = mean_power(symbols);
    if p == 0.0 || !p.is_finite() {
        return Err(Error::ZeroPower);
    }
    let rms = p.sqrt();
    Ok((symbols.iter().map(|&v| (v as f64 / rms) as f32).collect(), rms as f32))
}

pub fn denormalize(symbols: &[f32], scale: f32) -> Vec<f32> {
    symbols.iter().map(|&v| v * scale).collect()
}

/// Draws `len` i.i.d. noise samples at `snr_db` (zeros when noiseless).
pub fn noise(len: usize, snr_db: f64, rng: &mut dyn RngCore) -> Vec<f32> {
    if snr_db == f64::INFINITY {
        return vec![0.0; len];
    }
    let normal = Normal::new(0.0, noise_variance(snr_db).sqrt()).expect("finite noise scale");
    (0..len).map(|_| normal.sample(rng) as f32).collect()
}

/// `symbols + e`, `e ~ N(0, 10^(-snr/10))`.
pub fn awgn(symbols: &[f32], config: &ChannelConfig, rng: &mut dyn RngCore) -> Vec<f32> {
    if config.is_noiseless() {
        return symbols.to_vec();
    }
    let e = noise(symbols.len(), config.snr_db, rng);
    symbols.iter().zip(e).map(|(s, n)| s + n).collect()
}

/// Empirical SNR in dB; `+inf` when the two vectors are identical.
pub fn measure_snr_db(clean: &[f32], noisy: &[f32]) -> Result<f64> {
    if clean.len() != noisy.len() {
        return Err(Error::LengthMismatch {
            expected: clean.len(),
            got: noisy.len(),
        });
    }
    let noise_power = clean
        .iter()
        .zip(noisy)
        .map(|(&c, &n)| {
            let d = n as f64 - c as f64;
            d * d
        })
        .sum::<f64>()
        / clean.len().max(1) as f64;
    if noise_power == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (mean_power(clean) / noise_power).log10())
}

/// A memoryless channel acting on power-normalised symbols.
pub trait Channel {
    fn apply(&self, symbols: &[f32], rng: &mut dyn RngCore) -> Vec<f32>;
}

impl Channel for ChannelConfig {
    fn apply(&self, symbols: &[f32], rng: &mut dyn RngCore) -> Vec<f32> {
        awgn(symbols, self, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.3, 2.0).unwrap();
        (0..n).map(|_| d.sample(&mut rng) as f32).collect()
    }

    #[test]
    fn normalises_small_vectors() {
        let (y, s) = power_normalize(&[3.0, 4.0]).unwrap();
        assert!((y[0] - 0.848_528).abs() < 1e-5 && (y[1] - 1.131_371).abs() < 1e-5);
        assert!((s as f64 - 12.5f64.sqrt()).abs() < 1e-6);
        let (_, s) = power_normalize(&[1.0, -1.0, 1.0]).unwrap();
        assert_eq!(s, 1.0);
        assert!(matches!(power_normalize(&[0.0; 4]), Err(Error::ZeroPower)));
        assert!(matches!(power_normalize(&[]), Err(Error::ZeroPower)));
    }

    #[test]
    fn normalised_power_is_one_on_a_large_draw() {
        let x = gaussian(1_000_000, 1);
        let (y, s) = power_normalize(&x).unwrap();
        assert!((mean_power(&y) - 1.0).abs() < 1e-6);
        let back = denormalize(&y, s);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-3));
        }
    }

    #[test]
    fn noise_variance_follows_snr() {
        assert!((noise_variance(10.0) - 0.1).abs() < 1e-15);
        assert!((noise_variance(0.0) - 1.0).abs() < 1e-15);
        assert!(ChannelConfig::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn infinite_snr_passes_through() {
        let x = gaussian(100, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(awgn(&x, &ChannelConfig::noiseless(0), &mut rng), x);
        assert_eq!(measure_snr_db(&x, &x).unwrap(), f64::INFINITY);
    }

    #[test]
    fn measured_snr_matches_definition() {
        let clean = vec![1.0f32; 4];
        let noisy = vec![1.1f32, 0.9, 1.1, 0.9];
        assert!((measure_snr_db(&clean, &noisy).unwrap() - 20.0).abs() < 1e-5);
        assert!(measure_snr_db(&clean, &noisy[..2]).is_err());
    }

    #[test]
    fn empirical_snr_is_within_tolerance() {
        let (x, _) = power_normalize(&gaussian(1_000_000, 3)).unwrap();
        for snr in [0.0, 10.0, 15.0] {
            let mut rng = ChaCha8Rng::seed_from_u64(snr as u64);
            let y = awgn(&x, &ChannelConfig::new(snr, 0).unwrap(), &mut rng);
            let got = measure_snr_db(&x, &y).unwrap();
            assert!((got - snr).abs() < 0.2, "{snr} dB measured as {got}");
        }
    }

    #[test]
    fn noise_is_uncorrelated_with_the_signal() {
        let n = 1_000_000;
        let (x, _) = power_normalize(&gaussian(n, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = awgn(&x, &ChannelConfig::new(5.0, 0).unwrap(), &mut rng);
        let e: Vec<f64> = x.iter().zip(&y).map(|(&a, &b)| b as f64 - a as f64).collect();
        let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mx, me) = (mean(&xs), mean(&e));
        let cov: f64 = xs.iter().zip(&e).map(|(a, b)| (a - mx) * (b - me)).sum();
        let vx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
        let ve: f64 = e.iter().map(|b| (b - me).powi(2)).sum();
        let rho = cov / (vx * ve).sqrt();
        assert!(rho.abs() < 3.0 / (n as f64).sqrt(), "rho = {rho}");
    }

    #[test]
    fn channel_trait_is_object_safe() {
        let ch: Box<dyn Channel> = Box::new(ChannelConfig::new(10.0, 0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(ch.apply(&[1.0; 8], &mut rng).len(), 8);
    }
}
