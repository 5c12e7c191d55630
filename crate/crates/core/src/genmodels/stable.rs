//! Symmetric alpha-stable variates via the Chambers–Mallows–Stuck transform.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Open01};

use crate::error::{Error, Result};

/// Symmetric standard stable law `S(alpha, 0, 1, 0)`.
///
/// At `alpha = 2` this is a normal with variance 2; at `alpha = 1` it is the
/// standard Cauchy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricStable {
    alpha: f64,
    inv_alpha: f64,
    tail_exp: f64,
}

impl SymmetricStable {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(Error::Domain(format!(
                "stability exponent must lie in (0, 2], got {alpha}"
            )));
        }
        Ok(Self {
            alpha,
            inv_alpha: 1.0 / alpha,
            tail_exp: (1.0 - alpha) / alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Distribution<f64> for SymmetricStable {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = Open01.sample(rng);
        let v = FRAC_PI_2 * (2.0 * u - 1.0);
        if self.alpha == 1.0 {
            return v.tan();
        }
        let w: f64 = Exp1.sample(rng);
        if self.alpha == 2.0 {
            // sin(2V)/sqrt(cos V) · sqrt(W / cos V) = 2 sin V sqrt(W)
            return 2.0 * v.sin() * w.sqrt();
        }
        let a = self.alpha;
        (a * v).sin() / v.cos().powf(self.inv_alpha) * (((1.0 - a) * v).cos() / w).powf(self.tail_exp)
    }
}

/// One draw from `S(alpha, 0, 1, 0)`.
pub fn sample_alpha_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    Ok(SymmetricStable::new(alpha)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_out_of_range_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for bad in [0.0, -1.0, 2.0001, f64::NAN] {
            assert!(matches!(sample_alpha_stable(bad, &mut rng), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn general_formula_agrees_with_gaussian_shortcut_near_two() {
        // The closed-form branch at alpha = 2 must be the limit of the general one.
        let near = SymmetricStable {
            alpha: 2.0 - 1e-12,
            inv_alpha: 1.0 / (2.0 - 1e-12),
            tail_exp: (1.0 - (2.0 - 1e-12)) / (2.0 - 1e-12),
        };
        let exact = SymmetricStable::new(2.0).unwrap();
        for seed in 0..50 {
            let x = near.sample(&mut ChaCha8Rng::seed_from_u64(seed));
            let y = exact.sample(&mut ChaCha8Rng::seed_from_u64(seed));
            assert!((x - y).abs() < 1e-6 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn alpha_two_variance_is_two() {
        let dist = SymmetricStable::new(2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 2.0).abs() < 0.03, "var {var}");
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn alpha_one_is_cauchy() {
        let dist = SymmetricStable::new(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let below = (0..n).filter(|_| dist.sample(&mut rng) <= 1.0).count() as f64 / n as f64;
        // F(1) = 1/2 + atan(1)/pi = 0.75
        assert!((below - 0.75).abs() < 0.006, "{below}");
    }

    #[test]
    fn heavy_tailed_draws_are_symmetric() {
        for alpha in [1.2, 1.5, 1.8] {
            let dist = SymmetricStable::new(alpha).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let n = 100_000;
            let pos = (0..n).filter(|_| dist.sample(&mut rng) > 0.0).count() as f64 / n as f64;
            assert!((pos - 0.5).abs() < 0.006, "alpha {alpha}: {pos}");
        }
    }
}
