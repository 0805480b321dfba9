//! Baseline receivers: a genie LMMSE estimator that knows the transmitted
//! symbols and the channel's delays and path variances, and an iterative
//! frequency-domain LMMSE estimator under a robust (uniform delay profile)
//! prior covariance.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::dictionary::Dictionary;
use crate::linear_solver::cholesky_solve;

pub const ROBUST_SCALE: f64 = 25.0;

/// Relative eigenvalue cut below which eigen-directions of the robust
/// covariance are dropped.
pub const EIGEN_CUT: f64 = 1e-10;

/// LMMSE estimate of `h = Ψ(τ)α` given `y = X h + w`, with `α ~ CN(0,
/// diag(path_var))`. Solved in the `L̃ × L̃` coefficient domain when that
/// is smaller than `N`, otherwise through the Toeplitz `N × N` covariance.
pub fn oracle_lmmse(
    dict: &Dictionary,
    y: &[Complex64],
    x: &[Complex64],
    delays: &[f64],
    path_var: &[f64],
    noise_var: f64,
) -> Vec<Complex64> {
    let n = y.len();
    let l = delays.len();
    if l < n {
        // (Σ⁻¹ + ΨᴴXᴴXΨ/β) α̂ = ΨᴴXᴴy/β, ĥ = Ψ α̂
        let w: Vec<f64> = x.iter().map(|v| v.norm_sqr()).collect();
        let mut q = DMatrix::from_element(l, l, Complex64::new(0.0, 0.0));
        for i in 0..l {
            for j in i..l {
                let g = dict.weighted_gram(delays[i], delays[j], &w) / noise_var;
                q[(i, j)] = g;
                q[(j, i)] = g.conj();
            }
            q[(i, i)] = Complex64::new(q[(i, i)].re + 1.0 / path_var[i], 0.0);
        }
        let a: Vec<Complex64> = x.iter().zip(y).map(|(xi, yi)| xi.conj() * yi).collect();
        let p: Vec<Complex64> = dict.analyze(delays, &a).into_iter().map(|v| v / noise_var).collect();
        let alpha = cholesky_solve(q, &p).expect("LMMSE system is positive definite");
        dict.synthesize(delays, &alpha)
    } else {
        // R_{mn} = Σ_l σ_l exp(-jω(m-n)τ_l) depends on m - n only
        let w = 2.0 * PI * dict.spacing();
        let lag = |k: i64| -> Complex64 {
            delays
                .iter()
                .zip(path_var)
                .map(|(&t, &s)| Complex64::cis(-w * k as f64 * t) * s)
                .sum()
        };
        let lags: Vec<Complex64> = (0..n as i64).map(lag).collect();
        let r = |m: usize, k: usize| if m >= k { lags[m - k] } else { lags[k - m].conj() };
        // ĥ = R Xᴴ (X R Xᴴ + βI)⁻¹ y
        let s = DMatrix::from_fn(n, n, |i, j| {
            let v = x[i] * r(i, j) * x[j].conj();
            if i == j {
                v + noise_var
            } else {
                v
            }
        });
        let z = cholesky_solve(s, y).expect("LMMSE system is positive definite");
        let xz: Vec<Complex64> = x.iter().zip(&z).map(|(a, b)| a.conj() * b).collect();
        (0..n).map(|i| (0..n).map(|j| r(i, j) * xz[j]).sum()).collect()
    }
}

/// `Σ_{mn} = (1 − e^{−j2πΔf(m−n)T})/(j2πΔf(m−n)T)`, unit diagonal.
pub fn robust_kernel(n: usize, cyclic_prefix: f64, spacing: f64) -> DMatrix<Complex64> {
    DMatrix::from_fn(n, n, |m, k| {
        if m == k {
            return Complex64::new(1.0, 0.0);
        }
        let phi = 2.0 * PI * spacing * (m as f64 - k as f64) * cyclic_prefix;
        (Complex64::new(1.0, 0.0) - Complex64::cis(-phi)) / Complex64::new(0.0, phi)
    })
}

/// Scaled robust covariance kept as a truncated eigendecomposition.
#[derive(Debug, Clone)]
pub struct RobustCovariance {
    /// `N × r` orthonormal eigenvectors.
    pub basis: DMatrix<Complex64>,
    pub eigenvalues: Vec<f64>,
    pub diagonal: Vec<f64>,
}

impl RobustCovariance {
    pub fn new(n: usize, cyclic_prefix: f64, spacing: f64) -> Self {
        let sigma = robust_kernel(n, cyclic_prefix, spacing) * Complex64::new(ROBUST_SCALE, 0.0);
        let diagonal = (0..n).map(|i| sigma[(i, i)].re).collect();
        let eig = sigma.symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > EIGEN_CUT * max).collect();
        let basis = DMatrix::from_fn(n, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]);
        let eigenvalues = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
        RobustCovariance {
            basis,
            eigenvalues,
            diagonal,
        }
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn len(&self) -> usize {
        self.basis.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.nrows() == 0
    }

    /// Rebuild the (truncated) dense matrix.
    pub fn dense(&self) -> DMatrix<Complex64> {
        let scaled = DMatrix::from_fn(self.basis.nrows(), self.rank(), |i, j| self.basis[(i, j)] * self.eigenvalues[j]);
        scaled * self.basis.adjoint()
    }
}

/// Posterior mean and marginal variances of `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqEstimate {
    pub mean: Vec<Complex64>,
    pub var: Vec<f64>,
}

/// `ĥ = Σ′X̄ᴴ(X̄Σ′X̄ᴴ + D)⁻¹y` with `D = diag(β + Σ′_ii var(x_i))`,
/// evaluated in the eigenbasis of `Σ′`. Subcarriers with `observed[i] =
/// false` are left out.
pub fn freq_lmmse(
    cov: &RobustCovariance,
    y: &[Complex64],
    mean: &[Complex64],
    second: &[f64],
    observed: &[bool],
    noise_var: f64,
) -> FreqEstimate {
    let n = cov.len();
    let r = cov.rank();
    let u = &cov.basis;
    let d_inv: Vec<f64> = (0..n)
        .map(|i| {
            if !observed[i] {
                return 0.0;
            }
            let var_x = (second[i] - mean[i].norm_sqr()).max(0.0);
            1.0 / (noise_var + cov.diagonal[i] * var_x)
        })
        .collect();
    // G = D^{-1/2} X̄ U, so M = GᴴG and g = Gᴴ D^{-1/2} y
    let g = DMatrix::from_fn(n, r, |i, j| mean[i] * u[(i, j)] * d_inv[i].sqrt());
    let wy = DVector::from_fn(n, |i, _| y[i] * d_inv[i].sqrt());
    let mut m = g.adjoint() * &g;
    for j in 0..r {
        m[(j, j)] += 1.0 / cov.eigenvalues[j];
    }
    let rhs = g.adjoint() * wy;
    let chol = m.cholesky().expect("posterior precision is positive definite");
    let coef = chol.solve(&rhs);
    let mean_h = u * coef;
    // diag(U M⁻¹ Uᴴ) = row norms of U L⁻ᴴ
    let l = chol.l();
    let ut = u.transpose();
    let half = l
        .solve_lower_triangular(&ut.map(|v| v.conj()))
        .expect("triangular factor is nonsingular");
    let var = (0..n).map(|i| half.column(i).iter().map(|v| v.norm_sqr()).sum()).collect();
    FreqEstimate {
        mean: mean_h.iter().copied().collect(),
        var,
    }
}

/// `||y − X̄ĥ||²` over the observed subcarriers.
pub fn residual_power(est: &FreqEstimate, y: &[Complex64], mean: &[Complex64], observed: &[bool]) -> (f64, usize) {
    let mut u = 0.0;
    let mut n_obs = 0;
    for i in (0..y.len()).filter(|&i| observed[i]) {
        u += (y[i] - mean[i] * est.mean[i]).norm_sqr();
        n_obs += 1;
    }
    (u, n_obs)
}

/// `⟨||y − X h||²⟩` over the observed subcarriers.
pub fn expected_residual_power(
    est: &FreqEstimate,
    y: &[Complex64],
    mean: &[Complex64],
    second: &[f64],
    observed: &[bool],
) -> (f64, usize) {
    let mut u = 0.0;
    let mut n_obs = 0;
    for i in 0..y.len() {
        if !observed[i] {
            continue;
        }
        let h = est.mean[i];
        u += (y[i] - mean[i] * h).norm_sqr() + (second[i] - mean[i].norm_sqr()) * h.norm_sqr() + second[i] * est.var[i];
        n_obs += 1;
    }
    (u, n_obs)
}
