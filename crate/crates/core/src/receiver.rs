//! Outer receiver loops: alternate channel estimation with one pass of the
//! decoding subgraph until the decoded bits settle.

use num_complex::Complex64;

use crate::decoder::{Decoder, SoftInfo};
use crate::dictionary::Dictionary;
use crate::estimator::{inner_converged, Estimator, EstimatorState, Problem, SymbolMoments};
use crate::reference::{expected_residual_power, freq_lmmse, residual_power, oracle_lmmse, RobustCovariance};

/// Number of decoding iterations run by the genie receiver.
pub const ORACLE_BP_ITERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OuterSettings {
    pub max_outer_iters: usize,
    pub patience: usize,
}

/// What the receiver knows about the frame layout.
#[derive(Debug, Clone, Copy)]
pub struct FrameLayout<'a> {
    pub pilot_indices: &'a [usize],
    /// Full symbol vector; only the pilot entries are read.
    pub pilot_symbols: &'a [Complex64],
}

/// Snapshot handed to the caller after each decoding pass.
#[derive(Debug, Clone, Copy)]
pub struct IterationView<'a> {
    pub outer_iter: usize,
    pub info_bits_hat: &'a [u8],
    pub h_hat: &'a [Complex64],
    pub l_hat: usize,
    pub beta_hat: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub outer_iters: usize,
    /// Stopped because the decoded bits stayed unchanged.
    pub settled: bool,
    pub inner_iters: usize,
    pub cg_fallbacks: usize,
    pub decoder_fallbacks: usize,
}

/// Counts consecutive iterations with identical hard decisions.
#[derive(Debug, Default)]
struct Settle {
    prev: Option<Vec<u8>>,
    unchanged: usize,
}

impl Settle {
    fn update(&mut self, bits: &[u8]) -> usize {
        match &self.prev {
            Some(p) if p.as_slice() == bits => self.unchanged += 1,
            _ => {
                self.unchanged = 0;
                self.prev = Some(bits.to_vec());
            }
        }
        self.unchanged
    }
}

/// Symbol moments after a decoding pass: pilots exact (and observed unless
/// `drop_pilots`), data from the symbol beliefs.
pub fn moments_from_soft(
    n: usize,
    layout: &FrameLayout,
    data_indices: &[usize],
    soft: &SoftInfo,
    drop_pilots: bool,
) -> SymbolMoments {
    let mut m = SymbolMoments {
        mean: vec![Complex64::new(0.0, 0.0); n],
        second: vec![0.0; n],
        observed: vec![true; n],
    };
    for &p in layout.pilot_indices {
        if drop_pilots {
            m.observed[p] = false;
        } else {
            m.mean[p] = layout.pilot_symbols[p];
            m.second[p] = layout.pilot_symbols[p].norm_sqr();
        }
    }
    for (k, &i) in data_indices.iter().enumerate() {
        m.mean[i] = soft.symbol_mean[k];
        m.second[i] = soft.symbol_second[k];
    }
    m
}

/// Joint sparse channel estimation and decoding.
#[derive(Debug, Clone, Copy)]
pub struct OffgridReceiver<'a> {
    pub estimator: &'a Estimator,
    pub decoder: &'a Decoder,
    pub settings: OuterSettings,
}

impl<'a> OffgridReceiver<'a> {
    /// `drop_pilots_after_first` removes the pilot observations from the
    /// estimator after the first outer iteration.
    pub fn run(
        &self,
        y: &[Complex64],
        layout: &FrameLayout,
        drop_pilots_after_first: bool,
        on_iter: &mut dyn FnMut(&IterationView),
    ) -> RunSummary {
        let n = y.len();
        let mut summary = RunSummary::default();
        let mut moments = SymbolMoments::pilots_only(layout.pilot_symbols, layout.pilot_indices);
        let mut state: Option<EstimatorState> = None;
        let mut priors = self.decoder.flat_priors();
        let mut settle = Settle::default();
        for it in 1..=self.settings.max_outer_iters {
            let prob = Problem::new(y, &moments);
            let st = state.get_or_insert_with(|| EstimatorState::initial(self.estimator.settings().n_components, &prob));
            let report = self.estimator.inner_loop(st, &prob, it > 1, false);
            summary.inner_iters += report.iters;
            summary.cg_fallbacks += report.cg_fallbacks;

            let (h_mean, h_second) = self.estimator.channel_posterior(st);
            let soft = self.decoder.decode_pass(y, &h_mean, &h_second, st.noise_var, &priors);
            summary.decoder_fallbacks += soft.fallbacks;
            summary.outer_iters = it;
            on_iter(&IterationView {
                outer_iter: it,
                info_bits_hat: &soft.info_bits_hat,
                h_hat: &h_mean,
                l_hat: st.n_active(),
                beta_hat: st.noise_var,
            });
            if settle.update(&soft.info_bits_hat) >= self.settings.patience {
                summary.settled = true;
                break;
            }
            moments = moments_from_soft(n, layout, self.decoder.data_indices(), &soft, drop_pilots_after_first);
            priors = soft.coded_extrinsic;
        }
        summary
    }
}

/// Iterative frequency-domain LMMSE under the robust prior covariance.
#[derive(Debug, Clone, Copy)]
pub struct FreqLmmseReceiver<'a> {
    pub covariance: &'a RobustCovariance,
    pub decoder: &'a Decoder,
    pub settings: OuterSettings,
    pub inner_tol: f64,
    pub max_inner_iters: usize,
}

impl<'a> FreqLmmseReceiver<'a> {
    pub fn run(
        &self,
        y: &[Complex64],
        layout: &FrameLayout,
        drop_pilots_after_first: bool,
        on_iter: &mut dyn FnMut(&IterationView),
    ) -> RunSummary {
        let n = y.len();
        let mut summary = RunSummary::default();
        let mut moments = SymbolMoments::pilots_only(layout.pilot_symbols, layout.pilot_indices);
        let mut priors = self.decoder.flat_priors();
        let mut settle = Settle::default();
        let first = Problem::new(y, &moments);
        let mut beta = first.y_energy / first.n_obs as f64;
        for it in 1..=self.settings.max_outer_iters {
            let m = &moments;
            let mut est = freq_lmmse(self.covariance, y, &m.mean, &m.second, &m.observed, beta);
            for _ in 0..self.max_inner_iters {
                summary.inner_iters += 1;
                let (u, n_obs) = if it == 1 {
                    expected_residual_power(&est, y, &m.mean, &m.second, &m.observed)
                } else {
                    residual_power(&est, y, &m.mean, &m.observed)
                };
                let prev = beta;
                beta = (u / n_obs as f64).max(f64::MIN_POSITIVE);
                est = freq_lmmse(self.covariance, y, &m.mean, &m.second, &m.observed, beta);
                if inner_converged(prev, beta, self.inner_tol) {
                    break;
                }
            }
            let second: Vec<f64> = est.mean.iter().zip(&est.var).map(|(h, v)| h.norm_sqr() + v).collect();
            let soft = self.decoder.decode_pass(y, &est.mean, &second, beta, &priors);
            summary.decoder_fallbacks += soft.fallbacks;
            summary.outer_iters = it;
            on_iter(&IterationView {
                outer_iter: it,
                info_bits_hat: &soft.info_bits_hat,
                h_hat: &est.mean,
                l_hat: 0,
                beta_hat: beta,
            });
            if settle.update(&soft.info_bits_hat) >= self.settings.patience {
                summary.settled = true;
                break;
            }
            moments = moments_from_soft(n, layout, self.decoder.data_indices(), &soft, drop_pilots_after_first);
            priors = soft.coded_extrinsic;
        }
        summary
    }
}

/// Genie receiver: LMMSE with known symbols, delays, path variances and
/// noise variance, followed by a fixed number of decoding passes.
#[derive(Debug, Clone, Copy)]
pub struct OracleReceiver<'a> {
    pub dict: &'a Dictionary,
    pub decoder: &'a Decoder,
}

impl<'a> OracleReceiver<'a> {
    pub fn run(
        &self,
        y: &[Complex64],
        symbols: &[Complex64],
        delays: &[f64],
        path_var: &[f64],
        noise_var: f64,
        on_iter: &mut dyn FnMut(&IterationView),
    ) -> RunSummary {
        let h = oracle_lmmse(self.dict, y, symbols, delays, path_var, noise_var);
        let second: Vec<f64> = h.iter().map(|v| v.norm_sqr()).collect();
        let mut priors = self.decoder.flat_priors();
        let mut summary = RunSummary::default();
        for it in 1..=ORACLE_BP_ITERS {
            let soft = self.decoder.decode_pass(y, &h, &second, noise_var, &priors);
            summary.decoder_fallbacks += soft.fallbacks;
            summary.outer_iters = it;
            on_iter(&IterationView {
                outer_iter: it,
                info_bits_hat: &soft.info_bits_hat,
                h_hat: &h,
                l_hat: delays.len(),
                beta_hat: noise_var,
            });
            priors = soft.coded_extrinsic;
        }
        summary
    }
}
