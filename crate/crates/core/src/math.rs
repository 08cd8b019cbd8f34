//! Small numeric helpers shared across modules.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Logistic squash mapping the real line onto (0,1).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]; valid for y in (0,1).
pub fn logit(y: f64) -> f64 {
    (y / (1.0 - y)).ln()
}

/// Deterministic RNG for a (seed, stream) pair. Streams keep independent
/// random sources (optimizer, densification, generation, ...) from
/// perturbing each other when one consumes a different number of draws.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One sample from the standard normal via Box-Muller. `rand_distr` is not a
/// dependency; the straightforward transform is enough here.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.random();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        return r * (std::f64::consts::TAU * u2).cos();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squash_round_trips() {
        for &y in &[1e-6, 1e-4, 0.1, 0.5, 0.9, 1.0 - 1e-4, 1.0 - 1e-6] {
            assert!((sigmoid(logit(y)) - y).abs() < 1e-9);
        }
        for &x in &[-13.0, -3.0, 0.0, 1.5, 13.0] {
            assert!((logit(sigmoid(x)) - x).abs() < 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn log_exp_round_trips() {
        for &s in &[1e-6, 1e-3, 0.5, 1.0, 42.0] {
            assert!((f64::exp(f64::ln(s)) - s).abs() <= 1e-9 * s);
        }
    }

    #[test]
    fn seeded_rng_is_reproducible() {
        let mut a = seeded_rng(7, 1);
        let mut b = seeded_rng(7, 1);
        for _ in 0..16 {
            assert_eq!(standard_normal(&mut a), standard_normal(&mut b));
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = seeded_rng(12, 0);
        let n = 200_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = standard_normal(&mut rng);
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }
}
