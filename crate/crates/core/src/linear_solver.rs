//! Joint coefficient system `Q μ = p`: dense Cholesky, the Woodbury
//! reformulation solved by conjugate gradients, and the power-iteration
//! probe of `λ_max(T)` with `T = β⁻¹ η Ψ Ψᴴ`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::dictionary::Dictionary;

pub const CG_TOL: f64 = 1e-12;

/// `4⌈√N⌉`.
pub fn cg_max_iters(n: usize) -> usize {
    4 * (n as f64).sqrt().ceil() as usize
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum SolveError {
    #[error("conjugate gradients did not converge in {iters} iterations (relative residual {residual:e})")]
    NotConverged { iters: usize, residual: f64 },
    #[error("system matrix is not positive definite")]
    NotPositiveDefinite,
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<Complex64>,
    pub iters: usize,
    pub residual: f64,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Plain conjugate gradients for a Hermitian positive definite operator.
/// Stops once `||C x − a|| ≤ tol ||a||`.
pub fn cg_solve<F>(apply: F, a: &[Complex64], tol: f64, max_iters: usize) -> Result<CgSolution, SolveError>
where
    F: Fn(&[Complex64], &mut [Complex64]),
{
    let n = a.len();
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    let a_norm = norm_sqr(a).sqrt();
    if a_norm == 0.0 {
        return Ok(CgSolution {
            x,
            iters: 0,
            residual: 0.0,
        });
    }
    let mut r = a.to_vec();
    let mut p = r.clone();
    let mut cp = vec![Complex64::new(0.0, 0.0); n];
    let mut rr = norm_sqr(&r);
    for it in 1..=max_iters {
        apply(&p, &mut cp);
        let pcp = dot(&p, &cp).re;
        if pcp <= 0.0 {
            return Err(SolveError::NotPositiveDefinite);
        }
        let alpha = rr / pcp;
        for i in 0..n {
            x[i] += p[i] * alpha;
            r[i] -= cp[i] * alpha;
        }
        let rr_new = norm_sqr(&r);
        let rel = rr_new.sqrt() / a_norm;
        if rel <= tol {
            return Ok(CgSolution {
                x,
                iters: it,
                residual: rel,
            });
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + p[i] * beta;
        }
        rr = rr_new;
    }
    Err(SolveError::NotConverged {
        iters: max_iters,
        residual: rr.sqrt() / a_norm,
    })
}

/// Dense Hermitian positive definite solve via Cholesky.
pub fn cholesky_solve(q: DMatrix<Complex64>, p: &[Complex64]) -> Result<Vec<Complex64>, SolveError> {
    let chol = q.cholesky().ok_or(SolveError::NotPositiveDefinite)?;
    let x = chol.solve(&DVector::from_column_slice(p));
    Ok(x.iter().copied().collect())
}

/// The joint system for the active coefficients: weights `w = ⟨|x_n|²⟩`,
/// noise variance `β`, component variance `η`.
#[derive(Debug, Clone, Copy)]
pub struct CoeffSystem<'a> {
    pub dict: &'a Dictionary,
    pub delays: &'a [f64],
    pub weights: &'a [f64],
    pub noise_var: f64,
    pub comp_var: f64,
}

/// Which path produced a joint solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolvePath {
    Direct,
    Woodbury { iters: usize },
    Fallback,
}

impl<'a> CoeffSystem<'a> {
    /// `Q = β⁻¹ Ψᴴ W Ψ + η⁻¹ I`.
    pub fn matrix(&self) -> DMatrix<Complex64> {
        let l = self.delays.len();
        let inv_beta = 1.0 / self.noise_var;
        let mut q = DMatrix::from_element(l, l, Complex64::new(0.0, 0.0));
        for i in 0..l {
            for j in i..l {
                let g = self.dict.weighted_gram(self.delays[i], self.delays[j], self.weights) * inv_beta;
                q[(i, j)] = g;
                q[(j, i)] = g.conj();
            }
            q[(i, i)] = Complex64::new(q[(i, i)].re + 1.0 / self.comp_var, 0.0);
        }
        q
    }

    /// `p = β⁻¹ Ψᴴ a` for `a = ⟨X⟩ᴴ y`.
    pub fn rhs(&self, a: &[Complex64]) -> Vec<Complex64> {
        let inv_beta = 1.0 / self.noise_var;
        self.dict.analyze(self.delays, a).into_iter().map(|v| v * inv_beta).collect()
    }

    pub fn solve_direct(&self, a: &[Complex64]) -> Result<Vec<Complex64>, SolveError> {
        cholesky_solve(self.matrix(), &self.rhs(a))
    }

    fn ratio(&self) -> f64 {
        self.comp_var / self.noise_var
    }

    /// `C z = W⁻¹ z + β⁻¹ η Ψ Ψᴴ z`.
    pub fn apply_c(&self, z: &[Complex64], out: &mut [Complex64]) {
        let k = self.ratio();
        for ((o, &zi), &w) in out.iter_mut().zip(z).zip(self.weights) {
            *o = zi / w;
        }
        for &t in self.delays {
            let c = self.dict.project(t, z) * k;
            self.dict.add_scaled(t, c, None, out);
        }
    }

    /// `μ = β⁻¹η (I − β⁻¹η Ψᴴ C⁻¹ Ψ) Ψᴴ a`, evaluated as `β⁻¹η Ψᴴ C⁻¹ W⁻¹ a`
    /// (same value, since `β⁻¹η C⁻¹ Ψ Ψᴴ = I − C⁻¹ W⁻¹`) to avoid the
    /// cancellation between the two terms.
    pub fn solve_woodbury(&self, a: &[Complex64], tol: f64, max_iters: usize) -> Result<(Vec<Complex64>, usize), SolveError> {
        let k = self.ratio();
        let rhs: Vec<Complex64> = a.iter().zip(self.weights).map(|(&ai, &w)| ai / w).collect();
        let sol = cg_solve(|z, out| self.apply_c(z, out), &rhs, tol, max_iters)?;
        let mu = self.dict.analyze(self.delays, &sol.x).into_iter().map(|v| v * k).collect();
        Ok((mu, sol.iters))
    }

    /// Direct when `L̂ ≤ √N` or some weight vanishes, otherwise Woodbury
    /// with a direct fallback if CG stalls.
    pub fn solve(&self, a: &[Complex64], tol: f64) -> (Vec<Complex64>, SolvePath) {
        let n = self.dict.len();
        let l = self.delays.len();
        let direct = |s: &Self| s.solve_direct(a).expect("Q is positive definite by construction");
        if (l as f64) <= (n as f64).sqrt() || self.weights.iter().any(|&w| w <= 0.0) {
            return (direct(self), SolvePath::Direct);
        }
        match self.solve_woodbury(a, tol, cg_max_iters(n)) {
            Ok((mu, iters)) => (mu, SolvePath::Woodbury { iters }),
            Err(e) => {
                log::debug!("woodbury path failed: {e}; using direct solve");
                (direct(self), SolvePath::Fallback)
            }
        }
    }

    /// `T v = β⁻¹ η Ψ Ψᴴ v`.
    pub fn apply_t(&self, v: &[Complex64], out: &mut [Complex64]) {
        let k = self.ratio();
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for &t in self.delays {
            let c = self.dict.project(t, v) * k;
            self.dict.add_scaled(t, c, None, out);
        }
    }
}

/// Power iteration for the largest eigenvalue of a Hermitian PSD operator.
pub fn power_iteration<F, R>(apply: F, n: usize, iters: usize, rng: &mut R) -> f64
where
    F: Fn(&[Complex64], &mut [Complex64]),
    R: Rng + ?Sized,
{
    let mut v: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let mut lambda = 0.0;
    for _ in 0..iters {
        let nv = norm_sqr(&v).sqrt();
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        apply(&v, &mut w);
        lambda = dot(&v, &w).re;
        std::mem::swap(&mut v, &mut w);
    }
    lambda
}
