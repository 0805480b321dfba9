//! Delay-domain steering vectors `ψ(τ)`, weighted inner products, the
//! residual periodogram `|ψᴴ(τ) r|²` and its analytic derivatives.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Steering-vector factory for `n` subcarriers with spacing `Δf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dictionary {
    n: usize,
    spacing: f64,
}

impl Dictionary {
    pub fn new(n: usize, spacing: f64) -> Self {
        Dictionary { n, spacing }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    #[inline]
    fn omega(&self) -> f64 {
        2.0 * PI * self.spacing
    }

    /// `[ψ(τ)]_n = exp(-j 2π Δf n τ)`, `n = 1..=N`.
    pub fn steering(&self, tau: f64) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        self.steering_into(tau, &mut out);
        out
    }

    pub fn steering_into(&self, tau: f64, out: &mut [Complex64]) {
        let w = -self.omega() * tau;
        for (k, o) in out.iter_mut().enumerate() {
            *o = Complex64::cis(w * (k + 1) as f64);
        }
    }

    /// `ψᴴ(τ) r`.
    pub fn project(&self, tau: f64, r: &[Complex64]) -> Complex64 {
        let w = self.omega() * tau;
        r.iter()
            .enumerate()
            .map(|(k, &x)| x * Complex64::cis(w * (k + 1) as f64))
            .sum()
    }

    /// `ψᴴ(τ₁) diag(d) ψ(τ₂)`.
    pub fn weighted_gram(&self, tau1: f64, tau2: f64, d: &[f64]) -> Complex64 {
        let w = self.omega() * (tau1 - tau2);
        d.iter()
            .enumerate()
            .map(|(k, &dk)| Complex64::cis(w * (k + 1) as f64) * dk)
            .sum()
    }

    /// `out += c · diag(d) ψ(τ)`; pass `d = None` for unit weights.
    pub fn add_scaled(&self, tau: f64, c: Complex64, d: Option<&[f64]>, out: &mut [Complex64]) {
        let w = -self.omega() * tau;
        match d {
            Some(d) => {
                for (k, (o, &dk)) in out.iter_mut().zip(d).enumerate() {
                    if dk != 0.0 {
                        *o += c * Complex64::cis(w * (k + 1) as f64) * dk;
                    }
                }
            }
            None => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o += c * Complex64::cis(w * (k + 1) as f64);
                }
            }
        }
    }

    /// `Ψ(τ) c` for a set of delays.
    pub fn synthesize(&self, delays: &[f64], coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        for (&t, &c) in delays.iter().zip(coeffs) {
            self.add_scaled(t, c, None, &mut out);
        }
        out
    }

    /// `Ψᴴ(τ) v` for a set of delays.
    pub fn analyze(&self, delays: &[f64], v: &[Complex64]) -> Vec<Complex64> {
        delays.iter().map(|&t| self.project(t, v)).collect()
    }

    /// `f(τ) = |ψᴴ(τ) r|²` and its first two derivatives.
    pub fn objective_derivs(&self, tau: f64, r: &[Complex64]) -> ObjectiveDerivs {
        let w = self.omega();
        let mut a = Complex64::new(0.0, 0.0);
        let mut a1 = Complex64::new(0.0, 0.0);
        let mut a2 = Complex64::new(0.0, 0.0);
        for (k, &x) in r.iter().enumerate() {
            let n = (k + 1) as f64;
            let term = x * Complex64::cis(w * n * tau);
            a += term;
            // d/dτ e^{jωnτ} = jωn e^{jωnτ}
            a1 += term * Complex64::new(0.0, w * n);
            a2 -= term * (w * n).powi(2);
        }
        let value = a.norm_sqr();
        let first = 2.0 * (a1 * a.conj()).re;
        let second = 2.0 * (a2 * a.conj()).re + 2.0 * a1.norm_sqr();
        ObjectiveDerivs {
            value,
            first,
            second,
        }
    }

    pub fn objective(&self, tau: f64, r: &[Complex64]) -> f64 {
        self.project(tau, r).norm_sqr()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveDerivs {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// Equispaced delay grid `start + k step`, `k = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl DelayGrid {
    /// Grid on `[-(1/2)/(N Δf), T_CP]` with spacing `(N Δf)^-1 / oversampling`.
    pub fn for_system(n: usize, spacing: f64, cyclic_prefix: f64, oversampling: usize) -> Self {
        let resolution = 1.0 / (n as f64 * spacing);
        let start = -0.5 * resolution;
        let step = resolution / oversampling as f64;
        // small slack so T_CP itself is included when it falls on the grid
        let len = ((cyclic_prefix - start) / step + 1e-9).floor() as usize + 1;
        DelayGrid { start, step, len }
    }

    pub fn delay(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn delays(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.delay(k)).collect()
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GridError {
    #[error("empty delay grid")]
    Empty,
    #[error("grid step must equal (N Δf)^-1 / oversampling")]
    Step,
    #[error("grid has {len} points but the FFT length is only {fft_len}")]
    TooLong { len: usize, fft_len: usize },
}

/// Periodogram evaluator over a [`DelayGrid`] using one zero-padded FFT.
///
/// With `M = oversampling · N` the grid step is `2π/(ω M)`, so
/// `ψᴴ(start + k step) r = Σ_n [r_n e^{jωn·start}] e^{j2πnk/M}`: an
/// unnormalised inverse DFT of the pre-rotated residual.
#[derive(Clone)]
pub struct Periodogram {
    dict: Dictionary,
    grid: DelayGrid,
    fft: Arc<dyn Fft<f64>>,
    fft_len: usize,
    rotation: Vec<Complex64>,
}

impl std::fmt::Debug for Periodogram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Periodogram")
            .field("grid", &self.grid)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

impl Periodogram {
    pub fn new(dict: Dictionary, grid: DelayGrid, oversampling: usize) -> Result<Self, GridError> {
        if grid.len == 0 {
            return Err(GridError::Empty);
        }
        let n = dict.len();
        let fft_len = oversampling * n;
        let expected_step = 1.0 / (fft_len as f64 * dict.spacing());
        if ((grid.step - expected_step) / expected_step).abs() > 1e-9 {
            return Err(GridError::Step);
        }
        if grid.len > fft_len {
            return Err(GridError::TooLong {
                len: grid.len,
                fft_len,
            });
        }
        let fft = FftPlanner::new().plan_fft_inverse(fft_len);
        let w = 2.0 * PI * dict.spacing() * grid.start;
        let rotation = (1..=n).map(|k| Complex64::cis(w * k as f64)).collect();
        Ok(Periodogram {
            dict,
            grid,
            fft,
            fft_len,
            rotation,
        })
    }

    pub fn grid(&self) -> &DelayGrid {
        &self.grid
    }

    /// `|ψᴴ(τ_k) r|²` for every grid delay.
    pub fn values(&self, r: &[Complex64]) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_len];
        for (k, (&x, &rot)) in r.iter().zip(&self.rotation).enumerate() {
            buf[(k + 1) % self.fft_len] = x * rot;
        }
        self.fft.process(&mut buf);
        buf[..self.grid.len].iter().map(|c| c.norm_sqr()).collect()
    }

    /// Maximising grid delay and all grid values.
    pub fn argmax(&self, r: &[Complex64]) -> (f64, Vec<f64>) {
        let vals = self.values(r);
        let mut best = 0;
        for (k, &v) in vals.iter().enumerate() {
            if v > vals[best] {
                best = k;
            }
        }
        (self.grid.delay(best), vals)
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DF: f64 = 15e3;

    fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    #[test]
    fn steering_basics() {
        let d = Dictionary::new(64, DF);
        assert!(d.steering(0.0).iter().all(|x| (x - 1.0).norm() < 1e-14));
        assert!(d.steering(1.0 / DF).iter().all(|x| (x - 1.0).norm() < 1e-9));
        let psi = d.steering(2.345e-6);
        let e: f64 = psi.iter().map(|x| x.norm_sqr()).sum();
        assert!((e - 64.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_gram_cases() {
        let n = 40;
        let d = Dictionary::new(n, DF);
        let ones = vec![1.0; n];
        assert!((d.weighted_gram(1e-6, 1e-6, &ones) - 40.0).norm() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let g = d.weighted_gram(3e-6, 3e-6, &w);
        assert!(g.im.abs() < 1e-12 && (g.re - w.iter().sum::<f64>()).abs() < 1e-12);
        let (t1, t2) = (0.7e-6, 4.1e-6);
        let p1 = d.steering(t1);
        let p2 = d.steering(t2);
        let naive: Complex64 = (0..n).map(|k| p1[k].conj() * w[k] * p2[k]).sum();
        let got = d.weighted_gram(t1, t2, &w);
        assert!((naive - got).norm() / naive.norm() < 1e-12);
    }

    #[test]
    fn grid_for_table_one() {
        let g = DelayGrid::for_system(601, DF, 5.2e-6, 8);
        let res = 1.0 / (601.0 * DF);
        assert!((g.start + 0.5 * res).abs() < 1e-20);
        assert!((g.step - res / 8.0).abs() < 1e-20);
        assert!(g.delay(g.len - 1) <= 5.2e-6 + 1e-15);
        assert!(g.delay(g.len) > 5.2e-6);
    }

    #[test]
    fn fft_matches_direct_sum() {
        let n = 601;
        let d = Dictionary::new(n, DF);
        let g = DelayGrid::for_system(n, DF, 5.2e-6, 8);
        let p = Periodogram::new(d, g, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_vec(n, &mut rng);
        let vals = p.values(&r);
        for (k, v) in vals.iter().enumerate() {
            let direct = d.objective(g.delay(k), &r);
            assert!((v - direct).abs() <= 1e-10 * direct.max(1e-300), "k={k}");
        }
    }

    #[test]
    fn on_grid_peak_found() {
        let n = 128;
        let d = Dictionary::new(n, DF);
        let g = DelayGrid::for_system(n, DF, 5.2e-6, 8);
        let p = Periodogram::new(d, g, 8).unwrap();
        let tau0 = g.delay(g.len / 2 + 3);
        let (best, _) = p.argmax(&d.steering(tau0));
        assert!((best - tau0).abs() < 1e-15);
    }

    #[test]
    fn off_grid_peak_within_one_step() {
        let n = 601;
        let d = Dictionary::new(n, DF);
        let g = DelayGrid::for_system(n, DF, 5.2e-6, 8);
        let p = Periodogram::new(d, g, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let tau0 = rng.random::<f64>() * 5.0e-6;
            let noise = random_vec(n, &mut rng);
            let r: Vec<Complex64> = d.steering(tau0).iter().zip(&noise).map(|(a, b)| a + b * 0.1).collect();
            let (best, _) = p.argmax(&r);
            // brute force on a 64x denser grid
            let fine_step = g.step / 64.0;
            let mut fine_best = g.start;
            let mut fine_val = 0.0;
            for k in 0..(g.len * 64) {
                let t = g.start + k as f64 * fine_step;
                let v = d.objective(t, &r);
                if v > fine_val {
                    fine_val = v;
                    fine_best = t;
                }
            }
            assert!((best - fine_best).abs() <= g.step, "grid {best} vs dense {fine_best}");
            assert!((best - tau0).abs() <= g.step);
        }
    }

    #[test]
    fn grid_errors() {
        let d = Dictionary::new(16, DF);
        let g = DelayGrid {
            start: 0.0,
            step: 1.0,
            len: 0,
        };
        assert_eq!(Periodogram::new(d, g, 8).unwrap_err(), GridError::Empty);
        let g = DelayGrid {
            start: 0.0,
            step: 1e-6,
            len: 4,
        };
        assert_eq!(Periodogram::new(d, g, 8).unwrap_err(), GridError::Step);
    }

    #[test]
    fn derivative_stationary_at_peak() {
        let d = Dictionary::new(601, DF);
        let tau0 = 1.7e-6;
        let r = d.steering(tau0);
        let od = d.objective_derivs(tau0, &r);
        assert!((od.value - 601.0f64.powi(2)).abs() < 1e-6);
        assert!(od.first.abs() < 1e-9 * od.value * 601.0 * DF);
        assert!(od.second < 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let n = 601;
        let d = Dictionary::new(n, DF);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = 1e-4 / (n as f64 * DF);
        for _ in 0..10 {
            let r = random_vec(n, &mut rng);
            let tau = rng.random::<f64>() * 5e-6;
            let od = d.objective_derivs(tau, &r);
            let fp = d.objective(tau + h, &r);
            let fm = d.objective(tau - h, &r);
            let f0 = d.objective(tau, &r);
            let fd1 = (fp - fm) / (2.0 * h);
            let fd2 = (fp - 2.0 * f0 + fm) / (h * h);
            // relative to the derivative scale `f · (ωN)^k`
            let w = 2.0 * PI * DF * n as f64;
            assert!((od.value - f0).abs() <= 1e-12 * f0);
            assert!((od.first - fd1).abs() <= 1e-4 * (od.first.abs() + f0 * w * 1e-3), "first {} vs {}", od.first, fd1);
            assert!((od.second - fd2).abs() <= 1e-4 * (od.second.abs() + f0 * w * w * 1e-3), "second {} vs {}", od.second, fd2);
        }
    }

    #[test]
    fn homogeneity_and_cauchy_schwarz() {
        let n = 100;
        let d = Dictionary::new(n, DF);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let r = random_vec(n, &mut rng);
        let c = 3.5;
        let rc: Vec<Complex64> = r.iter().map(|x| x * c).collect();
        let a = d.objective_derivs(2e-6, &r);
        let b = d.objective_derivs(2e-6, &rc);
        for (x, y) in [(a.value, b.value), (a.first, b.first), (a.second, b.second)] {
            assert!((y - c * c * x).abs() <= 1e-9 * y.abs().max(1.0));
        }
        let norm: f64 = r.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        for k in 0..50 {
            let t = k as f64 * 1e-7;
            assert!(d.project(t, &r).norm() <= (n as f64).sqrt() * norm + 1e-12);
        }
    }
}
