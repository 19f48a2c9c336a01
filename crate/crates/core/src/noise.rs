//! Gaussian noise functionals consumed by the kinetic integrators.
//!
//! Per half-interval of length `delta` and per coordinate the schemes need
//! the jointly Gaussian pair `(dW, I_E)` with `I_E = int E(delta - s) dW(s)`;
//! the third functional `I_F = int F(delta - s) dW(s)` is recovered exactly
//! from the identity `gamma I_F = dW - I_E` and is never sampled separately.
//! Blocks over contiguous subintervals aggregate exactly to the block over
//! their union, which is what makes shared-path refinement studies possible.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels;

/// Per-interval noise functionals for all `d` coordinates.
#[derive(Clone, Debug)]
pub struct NoiseBlock {
    pub gamma: f64,
    /// Interval length.
    pub delta: f64,
    /// Brownian increment per coordinate.
    pub dw: DVector<f64>,
    /// Exponentially weighted integral per coordinate.
    pub ie: DVector<f64>,
}

impl NoiseBlock {
    pub fn dim(&self) -> usize {
        self.dw.len()
    }

    /// `I_F = (dW - I_E) / gamma`, exact by construction.
    pub fn i_f(&self) -> DVector<f64> {
        (&self.dw - &self.ie) / self.gamma
    }

    /// All-zero block (deterministic stepping).
    pub fn zeros(gamma: f64, delta: f64, d: usize) -> Self {
        Self {
            gamma,
            delta,
            dw: DVector::zeros(d),
            ie: DVector::zeros(d),
        }
    }
}

/// Deterministic per-chain RNG stream: one base seed, one stream per chain.
pub fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

/// Draw one noise block. Consumes exactly `2 d` standard normals in
/// coordinate order, pair by pair, so the stream layout is scheduler
/// independent.
pub fn sample_noise_block(
    gamma: f64,
    delta: f64,
    d: usize,
    rng: &mut impl Rng,
) -> Result<NoiseBlock> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "interval length must be positive, got {delta}"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "friction must be positive, got {gamma}"
        )));
    }
    let [l11, l21, l22] = kernels::half_block_cholesky(gamma, delta);
    let mut dw = DVector::zeros(d);
    let mut ie = DVector::zeros(d);
    for i in 0..d {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        dw[i] = l11 * z1;
        ie[i] = l21 * z1 + l22 * z2;
    }
    Ok(NoiseBlock {
        gamma,
        delta,
        dw,
        ie,
    })
}

/// Merge blocks over `k` contiguous equal subintervals into the block over
/// their union: `dW = sum dW_j` and
/// `I_E = sum_j E(remaining time after j) I_E_j`. The result has exactly the
/// joint law of a block sampled directly at the coarse length.
pub fn aggregate_noise(blocks: &[NoiseBlock]) -> Result<NoiseBlock> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::InvalidParameter("cannot aggregate zero blocks".into()))?;
    let gamma = first.gamma;
    let delta = first.delta;
    let d = first.dim();
    for b in blocks {
        if (b.delta - delta).abs() > 1e-14 * delta.max(1e-300) {
            return Err(Error::InvalidParameter(
                "aggregation needs equal-length subintervals".into(),
            ));
        }
        if b.gamma != gamma || b.dim() != d {
            return Err(Error::InvalidParameter(
                "aggregation needs a homogeneous block list".into(),
            ));
        }
    }
    let k = blocks.len();
    let mut dw = DVector::zeros(d);
    let mut ie = DVector::zeros(d);
    for (j, b) in blocks.iter().enumerate() {
        let remaining = (k - 1 - j) as f64 * delta;
        let weight = kernels::decay_e(gamma, remaining);
        dw += &b.dw;
        ie += weight * &b.ie;
    }
    Ok(NoiseBlock {
        gamma,
        delta: k as f64 * delta,
        dw,
        ie,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{decay_e, half_block_covariance};

    fn empirical_cov(samples: &[(f64, f64)]) -> [[f64; 2]; 2] {
        let n = samples.len() as f64;
        let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
        let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
        let mut cxx = 0.0;
        let mut cxy = 0.0;
        let mut cyy = 0.0;
        for (x, y) in samples {
            cxx += (x - mx) * (x - mx);
            cxy += (x - mx) * (y - my);
            cyy += (y - my) * (y - my);
        }
        [[cxx / n, cxy / n], [cxy / n, cyy / n]]
    }

    #[test]
    fn empirical_covariance_matches_analytic_within_3_sigma() {
        let gamma = 2.0;
        let delta = 0.5;
        let n = 100_000usize;
        let mut rng = chain_rng(1234, 0);
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let b = sample_noise_block(gamma, delta, 1, &mut rng).unwrap();
            samples.push((b.dw[0], b.ie[0]));
        }
        let emp = empirical_cov(&samples);
        let cov = half_block_covariance(gamma, delta);
        let nf = n as f64;
        // var of a variance estimate is 2 sigma^4 / n; of a covariance
        // estimate (vx vy + c^2) / n
        let sd_xx = (2.0 * cov[0][0] * cov[0][0] / nf).sqrt();
        let sd_yy = (2.0 * cov[1][1] * cov[1][1] / nf).sqrt();
        let sd_xy = ((cov[0][0] * cov[1][1] + cov[0][1] * cov[0][1]) / nf).sqrt();
        assert!((emp[0][0] - cov[0][0]).abs() < 3.0 * sd_xx);
        assert!((emp[1][1] - cov[1][1]).abs() < 3.0 * sd_yy);
        assert!((emp[0][1] - cov[0][1]).abs() < 3.0 * sd_xy);
    }

    #[test]
    fn unit_interval_covariances_at_friction_two() {
        // frozen values, cross-checked against numerical quadrature of the
        // defining integrals: Var(I_E) = (1 - e^{-4})/4, Cov = (1 - e^{-2})/2
        let cov = half_block_covariance(2.0, 1.0);
        assert!((cov[0][0] - 1.0).abs() < 1e-15);
        assert!((cov[1][1] - 0.24542109027781646).abs() < 1e-16);
        assert!((cov[0][1] - 0.43233235838169365).abs() < 1e-16);
    }

    #[test]
    fn aggregate_single_block_is_identity() {
        let mut rng = chain_rng(5, 0);
        let b = sample_noise_block(2.0, 0.25, 3, &mut rng).unwrap();
        let agg = aggregate_noise(std::slice::from_ref(&b)).unwrap();
        assert_eq!(agg.dw, b.dw);
        assert_eq!(agg.ie, b.ie);
        assert_eq!(agg.delta, b.delta);
    }

    #[test]
    fn aggregation_weights_follow_the_semigroup() {
        // E(h) = E(h/2)^2 consistency: aggregating two unit-ie blocks must
        // weight the first by E(delta)
        let gamma = 2.0;
        let delta = 0.3;
        let ones = DVector::from_element(1, 1.0);
        let b1 = NoiseBlock {
            gamma,
            delta,
            dw: ones.clone(),
            ie: ones.clone(),
        };
        let b2 = NoiseBlock {
            gamma,
            delta,
            dw: ones.clone(),
            ie: ones.clone(),
        };
        let agg = aggregate_noise(&[b1, b2]).unwrap();
        assert!((agg.ie[0] - (decay_e(gamma, delta) + 1.0)).abs() < 1e-15);
        assert!((agg.dw[0] - 2.0).abs() < 1e-15);
        assert!((agg.delta - 2.0 * delta).abs() < 1e-15);
    }

    #[test]
    fn aggregated_blocks_have_the_coarse_law() {
        let gamma = 2.0;
        let delta = 0.125;
        let k = 4;
        let n = 100_000usize;
        let mut rng = chain_rng(99, 1);
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let blocks: Vec<_> = (0..k)
                .map(|_| sample_noise_block(gamma, delta, 1, &mut rng).unwrap())
                .collect();
            let agg = aggregate_noise(&blocks).unwrap();
            samples.push((agg.dw[0], agg.ie[0]));
        }
        let emp = empirical_cov(&samples);
        let cov = half_block_covariance(gamma, k as f64 * delta);
        let nf = n as f64;
        let sd_xx = (2.0 * cov[0][0] * cov[0][0] / nf).sqrt();
        let sd_yy = (2.0 * cov[1][1] * cov[1][1] / nf).sqrt();
        let sd_xy = ((cov[0][0] * cov[1][1] + cov[0][1] * cov[0][1]) / nf).sqrt();
        assert!((emp[0][0] - cov[0][0]).abs() < 3.0 * sd_xx);
        assert!((emp[1][1] - cov[1][1]).abs() < 3.0 * sd_yy);
        assert!((emp[0][1] - cov[0][1]).abs() < 3.0 * sd_xy);
    }

    #[test]
    fn if_identity_is_exact() {
        let mut rng = chain_rng(7, 2);
        let b = sample_noise_block(1.7, 0.4, 5, &mut rng).unwrap();
        let i_f = b.i_f();
        for i in 0..5 {
            assert_eq!(b.gamma * i_f[i], b.dw[i] - b.ie[i]);
        }
    }

    #[test]
    fn chain_streams_are_distinct_and_reproducible() {
        let a1: f64 = chain_rng(42, 0).sample(StandardNormal);
        let a2: f64 = chain_rng(42, 0).sample(StandardNormal);
        let b1: f64 = chain_rng(42, 1).sample(StandardNormal);
        assert_eq!(a1, a2);
        assert_ne!(a1, b1);
    }

    #[test]
    fn invalid_aggregation_inputs_rejected() {
        assert!(aggregate_noise(&[]).is_err());
        let b1 = NoiseBlock::zeros(2.0, 0.1, 1);
        let b2 = NoiseBlock::zeros(2.0, 0.2, 1);
        assert!(aggregate_noise(&[b1, b2]).is_err());
    }
}
