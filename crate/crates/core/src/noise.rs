//! Noise primitives: Laplace, Gaussian and truncated Laplace samplers.
//!
//! Laplace and truncated Laplace are sampled by exact inverse-CDF from a
//! single open-interval uniform, so each draw consumes exactly one `u64`
//! from the stream and replays bit-for-bit under a fixed seed.
//!
//! None of these samplers are hardened against floating-point side channels;
//! they are meant for experiments, not for deployment on real data.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_positive, check_unit_open, Error, Result};

/// Seeded, splittable random stream.
///
/// Child streams obtained with [`RngState::derive`] depend only on the
/// parent's seed, stream id and the key, never on how much of the parent
/// has been consumed.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: [u8; 32],
    stream: u64,
    rng: ChaCha20Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn seed_from(master: u64) -> Self {
        let mut seed = [0u8; 32];
        let mut z = master;
        for chunk in seed.chunks_exact_mut(8) {
            z = splitmix64(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: [u8; 32], stream: u64) -> Self {
        let mut rng = ChaCha20Rng::from_seed(seed);
        rng.set_stream(stream);
        RngState { seed, stream, rng }
    }

    /// Independent child stream identified by `key`.
    pub fn derive(&self, key: u64) -> Self {
        let stream = splitmix64(self.stream ^ splitmix64(key.wrapping_add(0xA076_1D64_78BD_642F)));
        Self::with_stream(self.seed, stream)
    }

    /// Uniform draw from the open interval (0, 1).
    #[inline]
    pub fn open01(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// `Lap(scale)`: density `exp(-|x|/scale) / (2 scale)`.
#[derive(Debug, Clone, Copy)]
pub struct Laplace {
    scale: f64,
}

impl Laplace {
    pub fn new(scale: f64) -> Result<Self> {
        check_positive("laplace scale", scale)?;
        Ok(Laplace { scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub fn sample(&self, rng: &mut RngState) -> f64 {
        let u = rng.open01() - 0.5;
        // 1 - 2|u| lies in (0, 1] so the log is finite.
        -self.scale * u.signum() * (-2.0 * u.abs()).ln_1p()
    }
}

/// `N(0, sigma^2)`.
#[derive(Debug, Clone, Copy)]
pub struct Gaussian {
    sigma: f64,
}

impl Gaussian {
    pub fn new(sigma: f64) -> Result<Self> {
        check_positive("gaussian sigma", sigma)?;
        Ok(Gaussian { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn sample(&self, rng: &mut RngState) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.sigma * z
    }
}

/// Laplace density restricted to `[-radius, radius]` and renormalized.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedLaplace {
    scale: f64,
    radius: f64,
    // Mass of the untruncated half-line inside the radius: 1 - exp(-R/scale).
    inner_mass: f64,
}

impl TruncatedLaplace {
    pub fn new(scale: f64, radius: f64) -> Result<Self> {
        check_positive("truncated laplace scale", scale)?;
        check_positive("truncated laplace radius", radius)?;
        Ok(TruncatedLaplace {
            scale,
            radius,
            inner_mass: -(-radius / scale).exp_m1(),
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    #[inline]
    pub fn sample(&self, rng: &mut RngState) -> f64 {
        let u = rng.open01();
        let x = if u < 0.5 {
            self.scale * (-self.inner_mass * (1.0 - 2.0 * u)).ln_1p()
        } else {
            -self.scale * (-self.inner_mass * (2.0 * u - 1.0)).ln_1p()
        };
        x.clamp(-self.radius, self.radius)
    }
}

pub fn sample_laplace(sigma: f64, rng: &mut RngState) -> Result<f64> {
    Ok(Laplace::new(sigma)?.sample(rng))
}

pub fn sample_gaussian(sigma: f64, rng: &mut RngState) -> Result<f64> {
    Ok(Gaussian::new(sigma)?.sample(rng))
}

pub fn sample_trunc_laplace(params: TruncatedLaplace, rng: &mut RngState) -> f64 {
    params.sample(rng)
}

/// Radius `(1/eps) ln(1 + (e^eps - 1) / (2 delta))` that makes `x + TruncLap(1/eps, R)`
/// an `(eps, delta)`-DP release of a sensitivity-1 integer.
pub fn trunc_lap_radius(eps: f64, delta: f64) -> Result<f64> {
    check_positive("eps", eps)?;
    if delta == 0.0 {
        return Err(Error::param(
            "delta",
            delta,
            "zero gives an infinite radius; use the plain Laplace sampler",
        ));
    }
    check_unit_open("delta", delta)?;
    Ok((eps.exp_m1() / (2.0 * delta)).ln_1p() / eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    fn draws(n: usize, seed: u64, mut f: impl FnMut(&mut RngState) -> f64) -> Vec<f64> {
        let mut rng = RngState::seed_from(seed);
        (0..n).map(|_| f(&mut rng)).collect()
    }

    #[test]
    fn laplace_variance_is_two_sigma_squared() {
        let lap = Laplace::new(1.0).unwrap();
        let xs = draws(1_000_000, 1, |r| lap.sample(r));
        let (mean, var) = moments(&xs);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 2.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn laplace_median_of_magnitude() {
        // P(|X| > sigma ln 2) = 1/2.
        let lap = Laplace::new(3.0).unwrap();
        let xs = draws(200_000, 2, |r| lap.sample(r));
        let frac = xs.iter().filter(|x| x.abs() > 3.0 * 2f64.ln()).count() as f64 / xs.len() as f64;
        // 4 standard errors of a proportion at p = 1/2.
        assert!((frac - 0.5).abs() < 4.0 * (0.25 / xs.len() as f64).sqrt(), "{frac}");
    }

    #[test]
    fn gaussian_moments() {
        let g = Gaussian::new(1.0).unwrap();
        let xs = draws(1_000_000, 3, |r| g.sample(r));
        let (_, var) = moments(&xs);
        assert!((var - 1.0).abs() < 0.01, "var {var}");
        let m4 = xs.iter().map(|x| x.powi(4)).sum::<f64>() / xs.len() as f64;
        assert!((m4 - 3.0).abs() < 0.05, "m4 {m4}");

        let g2 = Gaussian::new(2.0).unwrap();
        let ys = draws(200_000, 4, |r| g2.sample(r));
        let pos = ys.iter().filter(|&&y| y > 0.0).count() as f64 / ys.len() as f64;
        assert!((pos - 0.5).abs() < 4.0 * (0.25 / ys.len() as f64).sqrt());
    }

    #[test]
    fn invalid_scales() {
        let mut rng = RngState::seed_from(0);
        assert!(sample_laplace(0.0, &mut rng).is_err());
        assert!(sample_laplace(-1.0, &mut rng).is_err());
        assert!(sample_gaussian(f64::NAN, &mut rng).is_err());
        assert!(TruncatedLaplace::new(1.0, 0.0).is_err());
        assert!(TruncatedLaplace::new(0.0, 1.0).is_err());
    }

    #[test]
    fn radius_values() {
        assert!((trunc_lap_radius(1.0, 0.5).unwrap() - 1.0).abs() < 1e-12);
        let r = trunc_lap_radius(0.1, 1e-6).unwrap();
        assert!((r - 108.70).abs() < 0.01, "{r}");
        let r = trunc_lap_radius(1.0, 0.01).unwrap();
        let expected = (1.0 + 50.0 * (std::f64::consts::E - 1.0)).ln();
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 4.465).abs() < 1e-3);
        assert!(trunc_lap_radius(1.0, 0.0).is_err());
        assert!(trunc_lap_radius(1.0, 1.0).is_err());
        assert!(trunc_lap_radius(0.0, 0.1).is_err());
    }

    #[test]
    fn truncated_support_and_symmetry() {
        let tl = TruncatedLaplace::new(2.0, 3.0).unwrap();
        let xs = draws(200_000, 5, |r| tl.sample(r));
        assert!(xs.iter().all(|x| x.abs() <= 3.0));
        let (mean, _) = moments(&xs);
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn truncated_converges_to_laplace() {
        let tl = TruncatedLaplace::new(1.0, 60.0).unwrap();
        let xs = draws(1_000_000, 6, |r| tl.sample(r));
        let (_, var) = moments(&xs);
        assert!((var - 2.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn truncated_cdf_matches() {
        // Analytic CDF of TruncLap(1, 1) written out independently.
        let cdf = |x: f64| {
            let z = 2.0 * (1.0 - (-1.0f64).exp());
            if x < 0.0 {
                (x.exp() - (-1.0f64).exp()) / z
            } else {
                0.5 + (1.0 - (-x).exp()) / z
            }
        };
        let tl = TruncatedLaplace::new(1.0, 1.0).unwrap();
        let mut xs = draws(1_000_000, 7, |r| tl.sample(r));
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.005, "ks {ks}");
    }

    #[test]
    fn replay_and_split() {
        let lap = Laplace::new(1.0).unwrap();
        let a = draws(100, 42, |r| lap.sample(r));
        let b = draws(100, 42, |r| lap.sample(r));
        assert_eq!(a, b);

        let root = RngState::seed_from(9);
        let mut consumed = root.clone();
        for _ in 0..10 {
            consumed.next_u64();
        }
        // Children depend on the key only, not on parent consumption.
        assert_eq!(root.derive(3).next_u64(), consumed.derive(3).next_u64());

        let mut c1 = root.derive(1);
        let mut c2 = root.derive(2);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| c1.open01() - 0.5).collect();
        let ys: Vec<f64> = (0..n).map(|_| c2.open01() - 0.5).collect();
        let corr = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / n as f64 / (1.0 / 12.0);
        assert!(corr.abs() < 0.02, "corr {corr}");
    }
}
