//! Sparse off-the-grid channel estimator: Bernoulli-Gaussian components
//! with continuous delays, updated by mean-field message passing.

use num_complex::Complex64;

use crate::dictionary::{DelayGrid, Dictionary, GridError, Periodogram};
use crate::linear_solver::{CoeffSystem, SolvePath, CG_TOL};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const MAX_HALVINGS: usize = 30;

/// First and second symbol moments per subcarrier. Subcarriers with
/// `observed[i] == false` carry no information for the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolMoments {
    pub mean: Vec<Complex64>,
    pub second: Vec<f64>,
    pub observed: Vec<bool>,
}

impl SymbolMoments {
    /// Every symbol known exactly.
    pub fn known(x: &[Complex64]) -> Self {
        SymbolMoments {
            mean: x.to_vec(),
            second: x.iter().map(|v| v.norm_sqr()).collect(),
            observed: vec![true; x.len()],
        }
    }

    /// Pilots known, everything else dropped.
    pub fn pilots_only(x: &[Complex64], pilots: &[usize]) -> Self {
        let n = x.len();
        let mut m = SymbolMoments {
            mean: vec![ZERO; n],
            second: vec![0.0; n],
            observed: vec![false; n],
        };
        for &p in pilots {
            m.mean[p] = x[p];
            m.second[p] = x[p].norm_sqr();
            m.observed[p] = true;
        }
        m
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Observation plus the symbol moments it is paired with, and the
/// quantities derived from them that stay fixed during an inner loop.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub y: &'a [Complex64],
    pub moments: &'a SymbolMoments,
    /// `⟨X⟩ᴴ y`
    pub matched: Vec<Complex64>,
    pub sum_weights: f64,
    pub y_energy: f64,
    pub n_obs: usize,
}

impl<'a> Problem<'a> {
    pub fn new(y: &'a [Complex64], moments: &'a SymbolMoments) -> Self {
        assert_eq!(y.len(), moments.len());
        let matched = y
            .iter()
            .zip(&moments.mean)
            .map(|(&yi, &m)| m.conj() * yi)
            .collect();
        let mut y_energy = 0.0;
        let mut n_obs = 0;
        for (yi, &o) in y.iter().zip(&moments.observed) {
            if o {
                y_energy += yi.norm_sqr();
                n_obs += 1;
            }
        }
        Problem {
            y,
            moments,
            matched,
            sum_weights: moments.second.iter().sum(),
            y_energy,
            n_obs,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.moments.second
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub active: Vec<bool>,
    pub delays: Vec<f64>,
    pub coeff_mean: Vec<Complex64>,
    pub coeff_var: Vec<f64>,
    pub act_prob: f64,
    pub comp_var: f64,
    pub noise_var: f64,
    /// `⟨X⟩ᴴ y − ⟨XᴴX⟩ Ψ(τ_A) μ_A`
    pub residual: Vec<Complex64>,
}

impl EstimatorState {
    /// All components off, `ρ = 0.5`, `η = 1`, `β = ||y||²/N` on the
    /// observed subcarriers.
    pub fn initial(n_components: usize, prob: &Problem) -> Self {
        EstimatorState {
            active: vec![false; n_components],
            delays: vec![0.0; n_components],
            coeff_mean: vec![ZERO; n_components],
            coeff_var: vec![0.0; n_components],
            act_prob: 0.5,
            comp_var: 1.0,
            noise_var: prob.y_energy / prob.n_obs as f64,
            residual: prob.matched.clone(),
        }
    }

    pub fn n_components(&self) -> usize {
        self.active.len()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&l| self.active[l]).collect()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_delays(&self) -> Vec<f64> {
        self.active_indices().iter().map(|&l| self.delays[l]).collect()
    }

    pub fn active_coeffs(&self) -> Vec<Complex64> {
        self.active_indices().iter().map(|&l| self.coeff_mean[l]).collect()
    }

    fn deactivate(&mut self, l: usize) {
        self.active[l] = false;
        self.coeff_mean[l] = ZERO;
        self.coeff_var[l] = 0.0;
    }
}

/// `|μ|²/σ² > ln(η/σ²) + ln((1−ρ)/ρ)`.
pub fn activation_test(mean: Complex64, var: f64, comp_var: f64, act_prob: f64) -> bool {
    mean.norm_sqr() / var > activation_threshold(var, comp_var, act_prob)
}

pub fn activation_threshold(var: f64, comp_var: f64, act_prob: f64) -> f64 {
    (comp_var / var).ln() + ((1.0 - act_prob) / act_prob).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSettings {
    pub n_components: usize,
    pub cyclic_prefix: f64,
    pub inner_tol: f64,
    pub max_inner_iters: usize,
    pub oversampling: usize,
}

/// Outcome of one call to [`Estimator::activate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    NoneInactive,
    Accepted(usize),
    Rejected(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerTrace {
    pub inner_iter: usize,
    pub l_hat: usize,
    pub noise_var: f64,
    pub comp_var: f64,
    pub act_prob: f64,
    pub rbfe: f64,
}

#[derive(Debug, Clone, Default)]
pub struct InnerReport {
    pub iters: usize,
    pub converged: bool,
    pub cg_fallbacks: usize,
    pub trace: Vec<InnerTrace>,
}

#[derive(Debug, Clone)]
pub struct Estimator {
    dict: Dictionary,
    periodogram: Periodogram,
    settings: EstimatorSettings,
}

impl Estimator {
    pub fn new(n: usize, spacing: f64, settings: EstimatorSettings) -> Result<Self, GridError> {
        let dict = Dictionary::new(n, spacing);
        let grid = DelayGrid::for_system(n, spacing, settings.cyclic_prefix, settings.oversampling);
        let periodogram = Periodogram::new(dict, grid, settings.oversampling)?;
        Ok(Estimator {
            dict,
            periodogram,
            settings,
        })
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn settings(&self) -> &EstimatorSettings {
        &self.settings
    }

    pub fn grid(&self) -> &DelayGrid {
        self.periodogram.grid()
    }

    fn clamp_delay(&self, tau: f64) -> f64 {
        tau.clamp(0.0, self.settings.cyclic_prefix)
    }

    /// `r = ⟨X⟩ᴴ y − W Ψ_A μ_A` from scratch.
    pub fn compute_residual(&self, state: &EstimatorState, prob: &Problem) -> Vec<Complex64> {
        let mut r = prob.matched.clone();
        for l in state.active_indices() {
            self.dict
                .add_scaled(state.delays[l], -state.coeff_mean[l], Some(prob.weights()), &mut r);
        }
        r
    }

    pub fn refresh_residual(&self, state: &mut EstimatorState, prob: &Problem) {
        state.residual = self.compute_residual(state, prob);
    }

    fn coeff_var(&self, state: &EstimatorState, prob: &Problem) -> f64 {
        1.0 / (prob.sum_weights / state.noise_var + 1.0 / state.comp_var)
    }

    /// Mean-field update of `(μ_l, σ²_l)` against the residual that
    /// excludes component `l`.
    pub fn coeff_update(&self, state: &mut EstimatorState, prob: &Problem, l: usize) {
        debug_assert!(state.active[l]);
        let tau = state.delays[l];
        let old = state.coeff_mean[l];
        // ψᴴ W ψ = Σ w, so ψᴴ r_¬l = ψᴴ r + μ_l Σ w
        let q = (self.dict.project(tau, &state.residual) + old * prob.sum_weights) / state.noise_var;
        let var = self.coeff_var(state, prob);
        let mean = q * var;
        state.coeff_var[l] = var;
        state.coeff_mean[l] = mean;
        self.dict
            .add_scaled(tau, old - mean, Some(prob.weights()), &mut state.residual);
    }

    /// Backtracking Newton step on `|ψᴴ(τ) r_¬l|²`, then a coefficient
    /// update at the new delay.
    pub fn delay_refine(&self, state: &mut EstimatorState, prob: &Problem, l: usize) {
        debug_assert!(state.active[l]);
        let tau = state.delays[l];
        let mut r_ex = state.residual.clone();
        self.dict
            .add_scaled(tau, state.coeff_mean[l], Some(prob.weights()), &mut r_ex);
        let new_tau = self.newton_step(tau, &r_ex);
        state.delays[l] = new_tau;
        let var = self.coeff_var(state, prob);
        let mean = self.dict.project(new_tau, &r_ex) / state.noise_var * var;
        state.coeff_var[l] = var;
        state.coeff_mean[l] = mean;
        self.dict.add_scaled(new_tau, -mean, Some(prob.weights()), &mut r_ex);
        state.residual = r_ex;
    }

    /// One Newton step `Δ = g′/|g″|` with step halving until the
    /// objective does not decrease; the result stays in `[0, T_CP]`.
    pub fn newton_step(&self, tau: f64, r: &[Complex64]) -> f64 {
        let d = self.dict.objective_derivs(tau, r);
        if d.second == 0.0 || d.first == 0.0 || !d.first.is_finite() || !d.second.is_finite() {
            return tau;
        }
        let mut step = d.first / d.second.abs();
        for _ in 0..MAX_HALVINGS {
            let cand = self.clamp_delay(tau + step);
            if self.dict.objective(cand, r) >= d.value {
                return cand;
            }
            step *= 0.5;
        }
        tau
    }

    /// Joint solve `Q μ_A = p` and `σ²_l = (s + η⁻¹)⁻¹` for every active
    /// component.
    pub fn joint_solve(&self, state: &mut EstimatorState, prob: &Problem) -> Option<SolvePath> {
        let idx = state.active_indices();
        if idx.is_empty() {
            return None;
        }
        let delays: Vec<f64> = idx.iter().map(|&l| state.delays[l]).collect();
        let sys = CoeffSystem {
            dict: &self.dict,
            delays: &delays,
            weights: prob.weights(),
            noise_var: state.noise_var,
            comp_var: state.comp_var,
        };
        let (mu, path) = sys.solve(&prob.matched, CG_TOL);
        let var = self.coeff_var(state, prob);
        for (&l, m) in idx.iter().zip(mu) {
            state.coeff_mean[l] = m;
            state.coeff_var[l] = var;
        }
        self.refresh_residual(state, prob);
        Some(path)
    }

    /// Try one new component at the periodogram peak of the residual; roll
    /// back if it fails the activation test.
    pub fn activate(&self, state: &mut EstimatorState, prob: &Problem) -> Activation {
        let Some(l) = state.active.iter().position(|&a| !a) else {
            return Activation::NoneInactive;
        };
        let saved_mean = state.coeff_mean.clone();
        let saved_var = state.coeff_var.clone();
        let saved_residual = state.residual.clone();
        let saved_delay = state.delays[l];

        let (tau, _) = self.periodogram.argmax(&state.residual);
        state.active[l] = true;
        state.delays[l] = self.clamp_delay(tau);
        self.joint_solve(state, prob);
        self.delay_refine(state, prob, l);
        if activation_test(state.coeff_mean[l], state.coeff_var[l], state.comp_var, state.act_prob) {
            Activation::Accepted(l)
        } else {
            state.coeff_mean = saved_mean;
            state.coeff_var = saved_var;
            state.residual = saved_residual;
            state.delays[l] = saved_delay;
            state.deactivate(l);
            Activation::Rejected(l)
        }
    }

    /// Elementary activation: one new component at the periodogram peak
    /// with only its own coefficient updated, kept iff it passes the
    /// activation test.
    pub fn activate_single(&self, state: &mut EstimatorState, prob: &Problem) -> Activation {
        let Some(l) = state.active.iter().position(|&a| !a) else {
            return Activation::NoneInactive;
        };
        let saved_delay = state.delays[l];
        let (tau, _) = self.periodogram.argmax(&state.residual);
        state.active[l] = true;
        state.delays[l] = self.clamp_delay(tau);
        self.coeff_update(state, prob, l);
        if activation_test(state.coeff_mean[l], state.coeff_var[l], state.comp_var, state.act_prob) {
            Activation::Accepted(l)
        } else {
            self.dict
                .add_scaled(state.delays[l], state.coeff_mean[l], Some(prob.weights()), &mut state.residual);
            state.delays[l] = saved_delay;
            state.deactivate(l);
            Activation::Rejected(l)
        }
    }

    /// Refine every active component in ascending order, dropping those
    /// that fail the activation test.
    pub fn refine_all(&self, state: &mut EstimatorState, prob: &Problem) {
        for l in state.active_indices() {
            self.delay_refine(state, prob, l);
            if !activation_test(state.coeff_mean[l], state.coeff_var[l], state.comp_var, state.act_prob) {
                self.dict
                    .add_scaled(state.delays[l], state.coeff_mean[l], Some(prob.weights()), &mut state.residual);
                state.deactivate(l);
            }
        }
    }

    /// `u = ⟨||y − X Ψ α||²⟩` over the observed subcarriers.
    pub fn expected_residual_energy(&self, state: &EstimatorState, prob: &Problem) -> f64 {
        let idx = state.active_indices();
        let delays: Vec<f64> = idx.iter().map(|&l| state.delays[l]).collect();
        let coeffs: Vec<Complex64> = idx.iter().map(|&l| state.coeff_mean[l]).collect();
        let h = self.dict.synthesize(&delays, &coeffs);
        let var_sum: f64 = idx.iter().map(|&l| state.coeff_var[l]).sum();
        let m = prob.moments;
        let mut u = prob.y_energy + var_sum * prob.sum_weights;
        for n in 0..h.len() {
            u += m.second[n] * h[n].norm_sqr() - 2.0 * (prob.y[n].conj() * m.mean[n] * h[n]).re;
        }
        u
    }

    /// Maximum-likelihood updates of `(ρ, η, β)`. `ρ` is held fixed when
    /// `learn_rho` is false.
    pub fn update_params(&self, state: &mut EstimatorState, prob: &Problem, learn_rho: bool) {
        let idx = state.active_indices();
        let l = state.n_components() as f64;
        if learn_rho {
            state.act_prob = (idx.len() as f64 / l).clamp(1.0 / l, 1.0 - 1.0 / l);
        }
        if !idx.is_empty() {
            let s: f64 = idx
                .iter()
                .map(|&k| state.coeff_mean[k].norm_sqr() + state.coeff_var[k])
                .sum();
            state.comp_var = s / idx.len() as f64;
        }
        let u = self.expected_residual_energy(state, prob);
        let floor = 1e-12 * prob.y_energy / prob.n_obs as f64;
        state.noise_var = (u / prob.n_obs as f64).max(floor).max(f64::MIN_POSITIVE);
    }

    /// One pass of the inner loop body.
    pub fn inner_iteration(&self, state: &mut EstimatorState, prob: &Problem, learn_rho: bool) -> usize {
        let mut fallbacks = 0;
        let mut count = |p: Option<SolvePath>| {
            if p == Some(SolvePath::Fallback) {
                fallbacks += 1;
            }
        };
        count(self.joint_solve(state, prob));
        self.activate(state, prob);
        self.refine_all(state, prob);
        count(self.joint_solve(state, prob));
        self.update_params(state, prob, learn_rho);
        self.refresh_residual(state, prob);
        fallbacks
    }

    /// Iterate until `|1/β_t − 1/β_{t−1}| < tol/β_{t−1}` or the cap.
    pub fn inner_loop(&self, state: &mut EstimatorState, prob: &Problem, learn_rho: bool, trace: bool) -> InnerReport {
        self.refresh_residual(state, prob);
        let mut report = InnerReport::default();
        for it in 1..=self.settings.max_inner_iters {
            let prev = state.noise_var;
            report.cg_fallbacks += self.inner_iteration(state, prob, learn_rho);
            report.iters = it;
            if trace {
                report.trace.push(InnerTrace {
                    inner_iter: it,
                    l_hat: state.n_active(),
                    noise_var: state.noise_var,
                    comp_var: state.comp_var,
                    act_prob: state.act_prob,
                    rbfe: self.rbfe_mf(state, prob),
                });
            }
            if inner_converged(prev, state.noise_var, self.settings.inner_tol) {
                report.converged = true;
                break;
            }
        }
        report
    }

    /// `(⟨h_i⟩, ⟨|h_i|²⟩)` under the current beliefs.
    pub fn channel_posterior(&self, state: &EstimatorState) -> (Vec<Complex64>, Vec<f64>) {
        let h = self.dict.synthesize(&state.active_delays(), &state.active_coeffs());
        let var: f64 = state.active_indices().iter().map(|&l| state.coeff_var[l]).sum();
        let second = h.iter().map(|x| x.norm_sqr() + var).collect();
        (h, second)
    }

    /// Mean-field part of the free energy, up to terms that do not depend
    /// on the estimator state.
    pub fn rbfe_mf(&self, state: &EstimatorState, prob: &Problem) -> f64 {
        use std::f64::consts::{E, PI};
        let rho = state.act_prob;
        let eta = state.comp_var;
        let beta = state.noise_var;
        let idx = state.active_indices();
        let mut f = 0.0;
        for &l in &idx {
            let var = state.coeff_var[l];
            f += -(PI * E * var).ln() + (PI * eta).ln() + (state.coeff_mean[l].norm_sqr() + var) / eta - rho.ln();
        }
        f -= (state.n_components() - idx.len()) as f64 * (1.0 - rho).ln();
        let u = self.expected_residual_energy(state, prob);
        f + prob.n_obs as f64 * (PI * beta).ln() + u / beta
    }
}

pub fn inner_converged(prev: f64, cur: f64, tol: f64) -> bool {
    (1.0 / cur - 1.0 / prev).abs() < tol / prev
}
