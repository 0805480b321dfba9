//! Sparse multipath channel generation and noisy OFDM observations.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::config::ChannelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct MultipathChannel {
    /// Seconds, each in `[0, τ_max]`.
    pub delays: Vec<f64>,
    pub coeffs: Vec<Complex64>,
    pub freq_response: Vec<Complex64>,
    pub noise_var: f64,
}

impl MultipathChannel {
    pub fn n_paths(&self) -> usize {
        self.delays.len()
    }
}

/// Per-path power scale `u` giving `E[|h_i|^2 | L̃] = target` for an
/// exponential profile on `[0, τ_max]`.
pub fn gain_normalization(cfg: &ChannelConfig, n_paths: usize) -> f64 {
    let ratio = cfg.decay_constant / cfg.max_delay;
    let mean_decay = ratio * (1.0 - (-cfg.max_delay / cfg.decay_constant).exp());
    cfg.target_mean_gain / (n_paths as f64 * mean_decay)
}

/// Prior variance of each path coefficient given its delay.
pub fn path_variances(cfg: &ChannelConfig, delays: &[f64]) -> Vec<f64> {
    let u = gain_normalization(cfg, delays.len());
    delays.iter().map(|&t| u * (-t / cfg.decay_constant).exp()).collect()
}

/// Zero-truncated Poisson draw: rejection of zero from a plain Poisson.
pub fn zero_truncated_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    let pois = Poisson::new(mean).expect("positive Poisson mean");
    loop {
        let k: f64 = pois.sample(rng);
        if k >= 1.0 {
            return k as usize;
        }
    }
}

/// Complex normal with variance `var`.
pub fn complex_normal<R: Rng + ?Sized>(var: f64, rng: &mut R) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Draw `(τ, α)` from the exponential power-delay-profile model.
pub fn draw_channel<R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> (Vec<f64>, Vec<Complex64>) {
    let n_paths = zero_truncated_poisson(cfg.poisson_mean, rng);
    let delays: Vec<f64> = (0..n_paths).map(|_| rng.random::<f64>() * cfg.max_delay).collect();
    let coeffs = path_variances(cfg, &delays)
        .into_iter()
        .map(|v| complex_normal(v, rng))
        .collect();
    (delays, coeffs)
}

/// `h_n = Σ_l α_l exp(-j 2π Δf n τ_l)`, `n = 1..=N`.
pub fn freq_response(delays: &[f64], coeffs: &[Complex64], n: usize, spacing: f64) -> Vec<Complex64> {
    let mut h = vec![Complex64::new(0.0, 0.0); n];
    for (&tau, &a) in delays.iter().zip(coeffs) {
        let w = -2.0 * PI * spacing * tau;
        for (k, hk) in h.iter_mut().enumerate() {
            *hk += a * Complex64::cis(w * (k + 1) as f64);
        }
    }
    h
}

/// Noise variance for a realization: `β = ||h||² / (SNR N)`.
pub fn noise_variance(h: &[Complex64], snr_db: f64) -> f64 {
    let snr = 10f64.powf(snr_db / 10.0);
    h.iter().map(|x| x.norm_sqr()).sum::<f64>() / (snr * h.len() as f64)
}

/// `y = X h + w`, `w_i ~ CN(0, β)`. Returns `(y, β)`.
pub fn observe<R: Rng + ?Sized>(
    symbols: &[Complex64],
    h: &[Complex64],
    snr_db: f64,
    rng: &mut R,
) -> (Vec<Complex64>, f64) {
    let beta = noise_variance(h, snr_db);
    let y = symbols
        .iter()
        .zip(h)
        .map(|(&x, &hh)| x * hh + complex_normal(beta, rng))
        .collect();
    (y, beta)
}

/// Full channel realization for an `n`-subcarrier system.
pub fn realize<R: Rng + ?Sized>(
    cfg: &ChannelConfig,
    n: usize,
    spacing: f64,
    snr_db: f64,
    rng: &mut R,
) -> MultipathChannel {
    let (delays, coeffs) = draw_channel(cfg, rng);
    let freq_response = freq_response(&delays, &coeffs, n, spacing);
    let noise_var = noise_variance(&freq_response, snr_db);
    MultipathChannel {
        delays,
        coeffs,
        freq_response,
        noise_var,
    }
}

/// Debug dump: `trial,l,tau,re_alpha,im_alpha` rows.
pub fn write_channel_dump<W: Write>(
    mut w: W,
    rows: &[(usize, &MultipathChannel)],
) -> std::io::Result<()> {
    writeln!(w, "trial,l,tau,re_alpha,im_alpha")?;
    for (trial, ch) in rows {
        for (l, (tau, a)) in ch.delays.iter().zip(&ch.coeffs).enumerate() {
            writeln!(w, "{trial},{l},{tau:e},{:e},{:e}", a.re, a.im)?;
        }
    }
    Ok(())
}
