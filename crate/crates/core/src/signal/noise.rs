use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;

use super::filter::{design_filter, FilterKind};

/// Default low-pass corner of channel replacement noise, in Hz.
pub const REPLACEMENT_CUTOFF_HZ: f64 = 100.0;

/// `length` i.i.d. draws from `N(mu, sigma2)` passed through an order-2
/// Butterworth low-pass at `cutoff`. The filter runs on the zero-mean part and
/// `mu` is added back, which is the steady-state response to the constant
/// component (unit DC gain), so the output carries no start-up transient.
pub fn filtered_gaussian_noise(
    mu: f64,
    sigma2: f64,
    length: usize,
    sample_rate: f64,
    cutoff: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let spec = design_filter(FilterKind::Lowpass, 2, &[cutoff], sample_rate)?;
    let sigma = sigma2.max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..length)
        .map(|_| sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    Ok(spec.filter(&raw).into_iter().map(|v| v + mu).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_variance_is_constant() {
        let mu = 3.5;
        let x = filtered_gaussian_noise(mu, 1e-30, 500, 1000.0, 100.0, 1).unwrap();
        assert!(x.iter().all(|v| (v - mu).abs() < 1e-6 * mu.abs() + 1e-9));
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let a = filtered_gaussian_noise(0.2, 1.3, 440, 1000.0, 100.0, 42).unwrap();
        let b = filtered_gaussian_noise(0.2, 1.3, 440, 1000.0, 100.0, 42).unwrap();
        let c = filtered_gaussian_noise(0.2, 1.3, 440, 1000.0, 100.0, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
