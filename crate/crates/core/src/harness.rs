//! Monte Carlo drivers: seeded trials, per-iteration metrics, sweeps and
//! CSV output.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{self, MultipathChannel};
use crate::config::{equispaced_pilots, random_pilots, Config, ConfigError, PilotPattern};
use crate::decoder::Decoder;
use crate::dictionary::Dictionary;
use crate::estimator::{Estimator, EstimatorSettings, EstimatorState, Problem, SymbolMoments};
use crate::linear_solver::{power_iteration, CoeffSystem};
use crate::receiver::{FrameLayout, FreqLmmseReceiver, IterationView, OffgridReceiver, OracleReceiver, OuterSettings};
use crate::reference::RobustCovariance;
use crate::tx::{SquareQam, SymbolFrame, Transmitter, TxError};

const STREAM_BITS: u64 = 0;
const STREAM_CHANNEL: u64 = 1;
const STREAM_NOISE: u64 = 2;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tx(#[from] TxError),
    #[error("delay grid: {0}")]
    Grid(#[from] crate::dictionary::GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReceiverKind {
    OffgridBpmf,
    FreqLmmse,
    Oracle,
}

impl ReceiverKind {
    pub const ALL: [ReceiverKind; 3] = [ReceiverKind::OffgridBpmf, ReceiverKind::FreqLmmse, ReceiverKind::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            ReceiverKind::OffgridBpmf => "offgrid_bpmf",
            ReceiverKind::FreqLmmse => "freq_lmmse",
            ReceiverKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for ReceiverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReceiverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReceiverKind::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown receiver {s:?} (expected offgrid_bpmf, freq_lmmse or oracle)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub trial: usize,
    pub receiver: ReceiverKind,
    pub snr_db: f64,
    pub n_pilots: usize,
    pub poisson_mean: f64,
    pub outer_iter: usize,
    pub bit_errors: usize,
    pub bits: usize,
    pub nmse: f64,
    pub l_hat: usize,
    pub beta_hat: f64,
    pub runtime_ms: f64,
}

impl MetricsRecord {
    pub fn ber(&self) -> f64 {
        self.bit_errors as f64 / self.bits as f64
    }

    /// Same record with the wall-clock field cleared, for comparisons.
    pub fn without_runtime(&self) -> Self {
        MetricsRecord {
            runtime_ms: 0.0,
            ..self.clone()
        }
    }
}

/// `||ĥ − h||² / ||h||²`.
pub fn nmse(h_hat: &[Complex64], h: &[Complex64]) -> f64 {
    let err: f64 = h_hat.iter().zip(h).map(|(a, b)| (a - b).norm_sqr()).sum();
    err / h.iter().map(|v| v.norm_sqr()).sum::<f64>()
}

pub fn bit_errors(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Independent RNG stream `stream` of trial `trial`.
pub fn trial_rng(master_seed: u64, trial: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ trial as u64);
    rng.set_stream(stream);
    rng
}

/// Everything drawn for one trial.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub frame: SymbolFrame,
    pub channel: MultipathChannel,
    pub path_var: Vec<f64>,
    pub y: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrialOptions {
    /// Remove the pilot observations after the first outer iteration.
    pub drop_pilots_after_first: bool,
}

/// Shared, read-only state for one configuration.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: Config,
    pub tx: Transmitter,
    pub decoder: Decoder,
    pub estimator: Estimator,
    pub dict: Dictionary,
    robust: Option<RobustCovariance>,
}

impl Simulation {
    /// Builds the robust covariance only if `with_robust` is set, since its
    /// eigendecomposition is the most expensive setup step.
    pub fn new(config: Config, with_robust: bool) -> Result<Self, HarnessError> {
        let config = config.validate()?;
        let sys = &config.system;
        let tx = Transmitter::new(sys)?;
        let decoder = Decoder::new(&tx.code, tx.interleaver.clone(), tx.qam.clone(), tx.data_indices.clone());
        let settings = EstimatorSettings {
            n_components: config.sim.n_components(sys),
            cyclic_prefix: sys.cyclic_prefix,
            inner_tol: config.sim.inner_tol,
            max_inner_iters: config.sim.max_inner_iters,
            oversampling: config.sim.grid_oversampling,
        };
        let estimator = Estimator::new(sys.n_subcarriers, sys.subcarrier_spacing, settings)?;
        let dict = Dictionary::new(sys.n_subcarriers, sys.subcarrier_spacing);
        let robust = with_robust.then(|| RobustCovariance::new(sys.n_subcarriers, sys.cyclic_prefix, sys.subcarrier_spacing));
        Ok(Simulation {
            config,
            tx,
            decoder,
            estimator,
            dict,
            robust,
        })
    }

    pub fn robust(&self) -> Option<&RobustCovariance> {
        self.robust.as_ref()
    }

    pub fn outer_settings(&self) -> OuterSettings {
        OuterSettings {
            max_outer_iters: self.config.sim.max_outer_iters,
            patience: self.config.sim.outer_patience,
        }
    }

    /// Bits, channel and noise for trial `trial`; each comes from its own
    /// RNG stream so receivers and sweep points see paired draws.
    pub fn draw_trial(&self, snr_db: f64, trial: usize) -> TrialData {
        let seed = self.config.sim.master_seed;
        let sys = &self.config.system;
        let bits = self.tx.random_info_bits(&mut trial_rng(seed, trial, STREAM_BITS));
        let frame = self
            .tx
            .build_frame(&bits, sys.pilot_seed ^ trial as u64)
            .expect("info length matches the transmitter");
        let channel = channel::realize(
            &self.config.channel,
            sys.n_subcarriers,
            sys.subcarrier_spacing,
            snr_db,
            &mut trial_rng(seed, trial, STREAM_CHANNEL),
        );
        let path_var = channel::path_variances(&self.config.channel, &channel.delays);
        let mut noise_rng = trial_rng(seed, trial, STREAM_NOISE);
        let y = frame
            .symbols
            .iter()
            .zip(&channel.freq_response)
            .map(|(&x, &h)| x * h + channel::complex_normal(channel.noise_var, &mut noise_rng))
            .collect();
        TrialData {
            frame,
            channel,
            path_var,
            y,
        }
    }

    /// One record per outer iteration.
    pub fn run_trial(&self, receiver: ReceiverKind, snr_db: f64, trial: usize, opts: TrialOptions) -> Vec<MetricsRecord> {
        let data = self.draw_trial(snr_db, trial);
        self.run_on(receiver, snr_db, trial, &data, opts)
    }

    pub fn run_on(&self, receiver: ReceiverKind, snr_db: f64, trial: usize, data: &TrialData, opts: TrialOptions) -> Vec<MetricsRecord> {
        let start = Instant::now();
        let mut records = Vec::new();
        let h = &data.channel.freq_response;
        let mut push = |v: &IterationView| {
            records.push(MetricsRecord {
                trial,
                receiver,
                snr_db,
                n_pilots: self.config.system.n_pilots(),
                poisson_mean: self.config.channel.poisson_mean,
                outer_iter: v.outer_iter,
                bit_errors: bit_errors(v.info_bits_hat, &data.frame.info_bits),
                bits: data.frame.info_bits.len(),
                nmse: nmse(v.h_hat, h),
                l_hat: v.l_hat,
                beta_hat: v.beta_hat,
                runtime_ms: start.elapsed().as_secs_f64() * 1e3,
            })
        };
        let layout = FrameLayout {
            pilot_indices: &data.frame.pilot_indices,
            pilot_symbols: &data.frame.symbols,
        };
        let summary = match receiver {
            ReceiverKind::OffgridBpmf => OffgridReceiver {
                estimator: &self.estimator,
                decoder: &self.decoder,
                settings: self.outer_settings(),
            }
            .run(&data.y, &layout, opts.drop_pilots_after_first, &mut push),
            ReceiverKind::FreqLmmse => FreqLmmseReceiver {
                covariance: self.robust.as_ref().expect("simulation built without the robust covariance"),
                decoder: &self.decoder,
                settings: self.outer_settings(),
                inner_tol: self.config.sim.inner_tol,
                max_inner_iters: self.config.sim.max_inner_iters,
            }
            .run(&data.y, &layout, opts.drop_pilots_after_first, &mut push),
            ReceiverKind::Oracle => OracleReceiver {
                dict: &self.dict,
                decoder: &self.decoder,
            }
            .run(
                &data.y,
                &data.frame.symbols,
                &data.channel.delays,
                &data.path_var,
                data.channel.noise_var,
                &mut push,
            ),
        };
        if receiver != ReceiverKind::Oracle && !summary.settled {
            log::info!("{receiver} trial {trial}: outer loop hit the cap of {} iterations", summary.outer_iters);
        }
        if summary.cg_fallbacks > 0 {
            log::debug!("{receiver} trial {trial}: {} direct-solve fallbacks", summary.cg_fallbacks);
        }
        records
    }

    /// Trials `0..n_trials`, each a record stream, in trial order.
    pub fn run_trials(&self, receiver: ReceiverKind, snr_db: f64, n_trials: usize, opts: TrialOptions) -> Vec<Vec<MetricsRecord>> {
        (0..n_trials)
            .into_par_iter()
            .map(|t| self.run_trial(receiver, snr_db, t, opts))
            .collect()
    }
}

/// Pads a record stream to `len` iterations by repeating its last record.
pub fn carry_forward(stream: &[MetricsRecord], len: usize) -> Vec<MetricsRecord> {
    let mut out: Vec<MetricsRecord> = stream.iter().take(len).cloned().collect();
    if let Some(last) = stream.last() {
        while out.len() < len {
            let mut r = last.clone();
            r.outer_iter = out.len() + 1;
            out.push(r);
        }
    }
    out
}

/// Aggregate of a set of trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub ber: f64,
    pub nmse: f64,
    pub bit_errors: usize,
    pub bits: usize,
    pub trials: usize,
}

/// Pooled BER `Σ errors / Σ bits` and mean linear NMSE.
pub fn aggregate<'a, I: IntoIterator<Item = &'a MetricsRecord>>(records: I) -> Aggregate {
    let mut errors = 0;
    let mut bits = 0;
    let mut nmse = 0.0;
    let mut trials = 0;
    for r in records {
        errors += r.bit_errors;
        bits += r.bits;
        nmse += r.nmse;
        trials += 1;
    }
    Aggregate {
        ber: if bits == 0 { 0.0 } else { errors as f64 / bits as f64 },
        nmse: if trials == 0 { 0.0 } else { nmse / trials as f64 },
        bit_errors: errors,
        bits,
        trials,
    }
}

/// Last record of every stream.
pub fn finals(streams: &[Vec<MetricsRecord>]) -> Vec<MetricsRecord> {
    streams.iter().filter_map(|s| s.last().cloned()).collect()
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Snr,
    Pilots,
    NumTaps,
    Iters,
    PilotAblation,
}

pub const NUMTAPS_MEANS: [f64; 9] = [1.0, 3.0, 5.0, 13.0, 32.0, 80.0, 200.0, 500.0, 1200.0];
pub const PILOT_COUNTS: [usize; 8] = [31, 41, 51, 61, 76, 101, 121, 151];
pub const ABLATION_PILOTS: usize = 51;
pub const EIGEN_SIZES: [usize; 4] = [100, 200, 400, 800];
pub const EIGEN_MEANS: [f64; 5] = [1.0, 5.0, 13.0, 32.0, 80.0];
/// Subcarrier count of the multipath-count panel of the eigenvalue probe.
pub const EIGEN_MEANS_SIZE: usize = 400;

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub receivers: Vec<ReceiverKind>,
    /// SNR for every experiment except the SNR sweep.
    pub snr_db: f64,
    pub threads: Option<usize>,
}

fn pattern_name(p: PilotPattern) -> &'static str {
    match p {
        PilotPattern::Equispaced => "equispaced",
        PilotPattern::Random => "random",
    }
}

fn with_pilots(base: &Config, n_pilots: usize, pattern: PilotPattern) -> Result<Config, HarnessError> {
    let n = base.system.n_subcarriers;
    let pilots = match pattern {
        PilotPattern::Equispaced => equispaced_pilots(n, n_pilots)?,
        PilotPattern::Random => random_pilots(n, n_pilots, base.system.pilot_seed)?,
    };
    let mut cfg = base.clone();
    cfg.system.set_pilots(pilots);
    Ok(cfg)
}

fn fmt_row(w: &mut dyn Write, prefix: &str, receiver: &str, agg: &Aggregate) -> std::io::Result<()> {
    writeln!(w, "{prefix},{receiver},{:e},{:e},{}", agg.ber, agg.nmse, agg.trials)
}

/// Runs one experiment and writes its CSV to `w`.
pub fn sweep(experiment: Experiment, config: &Config, opts: &SweepOptions, w: &mut dyn Write) -> Result<(), HarnessError> {
    let run = || {
        let mut buf = Vec::new();
        sweep_inner(experiment, config, opts, &mut buf).map(|_| buf)
    };
    let buf = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Pool(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    w.write_all(&buf)?;
    Ok(())
}

fn sweep_inner(experiment: Experiment, config: &Config, opts: &SweepOptions, w: &mut dyn Write) -> Result<(), HarnessError> {
    let trials = config.sim.n_trials;
    let needs_robust = opts.receivers.contains(&ReceiverKind::FreqLmmse);
    let none = TrialOptions::default();
    match experiment {
        Experiment::Snr => {
            writeln!(w, "snr_db,receiver,ber,nmse,trials")?;
            let sim = Simulation::new(config.clone(), needs_robust)?;
            for &snr in &config.sim.snr_db_list {
                for &r in &opts.receivers {
                    let agg = aggregate(&finals(&sim.run_trials(r, snr, trials, none)));
                    fmt_row(w, &format!("{snr}"), r.name(), &agg)?;
                }
            }
        }
        Experiment::Pilots => {
            writeln!(w, "n_pilots,pattern,receiver,ber,nmse,trials")?;
            for &np in &PILOT_COUNTS {
                for pattern in [PilotPattern::Equispaced, PilotPattern::Random] {
                    let sim = Simulation::new(with_pilots(config, np, pattern)?, needs_robust)?;
                    for &r in &opts.receivers {
                        let agg = aggregate(&finals(&sim.run_trials(r, opts.snr_db, trials, none)));
                        fmt_row(w, &format!("{np},{}", pattern_name(pattern)), r.name(), &agg)?;
                    }
                }
            }
        }
        Experiment::NumTaps => {
            writeln!(w, "poisson_mean,receiver,ber,nmse,trials")?;
            for &lambda in &NUMTAPS_MEANS {
                let mut cfg = config.clone();
                cfg.channel.poisson_mean = lambda;
                let sim = Simulation::new(cfg, needs_robust)?;
                for &r in &opts.receivers {
                    let agg = aggregate(&finals(&sim.run_trials(r, opts.snr_db, trials, none)));
                    fmt_row(w, &format!("{lambda}"), r.name(), &agg)?;
                }
            }
        }
        Experiment::Iters => {
            writeln!(w, "iteration,receiver,ber,nmse,trials")?;
            let sim = Simulation::new(config.clone(), needs_robust)?;
            let len = config.sim.max_outer_iters;
            for &r in &opts.receivers {
                let streams: Vec<Vec<MetricsRecord>> = sim
                    .run_trials(r, opts.snr_db, trials, none)
                    .iter()
                    .map(|s| carry_forward(s, len))
                    .collect();
                for it in 0..len {
                    let agg = aggregate(streams.iter().map(|s| &s[it]));
                    fmt_row(w, &format!("{}", it + 1), r.name(), &agg)?;
                }
            }
        }
        Experiment::PilotAblation => {
            writeln!(w, "iteration,n_pilots,variant,ber,nmse,trials")?;
            let cfg = with_pilots(config, ABLATION_PILOTS, PilotPattern::Random)?;
            let sim = Simulation::new(cfg, false)?;
            let len = config.sim.max_outer_iters;
            for (variant, drop) in [("all_iterations", false), ("first_iteration_only", true)] {
                let topts = TrialOptions {
                    drop_pilots_after_first: drop,
                };
                let streams: Vec<Vec<MetricsRecord>> = sim
                    .run_trials(ReceiverKind::OffgridBpmf, opts.snr_db, trials, topts)
                    .iter()
                    .map(|s| carry_forward(s, len))
                    .collect();
                for it in 0..len {
                    let agg = aggregate(streams.iter().map(|s| &s[it]));
                    writeln!(w, "{},{ABLATION_PILOTS},{variant},{:e},{:e},{}", it + 1, agg.ber, agg.nmse, agg.trials)?;
                }
            }
        }
    }
    Ok(())
}

/// One sample of the largest eigenvalue of `T = β⁻¹ η Ψ Ψᴴ`: the maximum
/// over every inner iteration of a known-symbol estimator run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSample {
    pub n: usize,
    pub poisson_mean: f64,
    pub trial: usize,
    pub lambda_max: f64,
}

pub fn eigen_probe(config: &Config, n: usize, poisson_mean: f64, snr_db: f64, trials: usize) -> Vec<EigenSample> {
    let sys = &config.system;
    let settings = EstimatorSettings {
        n_components: n,
        cyclic_prefix: sys.cyclic_prefix,
        inner_tol: config.sim.inner_tol,
        max_inner_iters: config.sim.max_inner_iters,
        oversampling: config.sim.grid_oversampling,
    };
    let est = Estimator::new(n, sys.subcarrier_spacing, settings).expect("valid probe grid");
    let mut ch_cfg = config.channel.clone();
    ch_cfg.poisson_mean = poisson_mean;
    let qam = SquareQam::qam256();
    let seed = config.sim.master_seed;
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut bits = trial_rng(seed, trial, STREAM_BITS);
            let x: Vec<Complex64> = (0..n).map(|_| qam.point(bits.random_range(0..qam.size()))).collect();
            let ch = channel::realize(&ch_cfg, n, sys.subcarrier_spacing, snr_db, &mut trial_rng(seed, trial, STREAM_CHANNEL));
            let mut noise = trial_rng(seed, trial, STREAM_NOISE);
            let y: Vec<Complex64> = x
                .iter()
                .zip(&ch.freq_response)
                .map(|(&a, &h)| a * h + channel::complex_normal(ch.noise_var, &mut noise))
                .collect();
            let moments = SymbolMoments::known(&x);
            let prob = Problem::new(&y, &moments);
            let mut st = EstimatorState::initial(n, &prob);
            let mut power_rng = trial_rng(seed, trial, 3);
            let mut lambda_max = 0.0f64;
            est.refresh_residual(&mut st, &prob);
            for _ in 0..settings.max_inner_iters {
                let prev = st.noise_var;
                est.inner_iteration(&mut st, &prob, true);
                let delays = st.active_delays();
                if !delays.is_empty() {
                    let sys = CoeffSystem {
                        dict: est.dictionary(),
                        delays: &delays,
                        weights: prob.weights(),
                        noise_var: st.noise_var,
                        comp_var: st.comp_var,
                    };
                    let lam = power_iteration(|v, o| sys.apply_t(v, o), n, 100, &mut power_rng);
                    lambda_max = lambda_max.max(lam);
                }
                if crate::estimator::inner_converged(prev, st.noise_var, settings.inner_tol) {
                    break;
                }
            }
            EigenSample {
                n,
                poisson_mean,
                trial,
                lambda_max,
            }
        })
        .collect()
}

pub fn write_eigen_csv(w: &mut dyn Write, samples: &[EigenSample]) -> std::io::Result<()> {
    writeln!(w, "n,poisson_mean,trial,lambda_max")?;
    for s in samples {
        writeln!(w, "{},{},{},{:e}", s.n, s.poisson_mean, s.trial, s.lambda_max)?;
    }
    Ok(())
}

/// Least-squares line `y = a + b x` and its R².
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (my - slope * mx, slope, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_known_values() {
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
        let (lo, hi) = wilson_interval(0, 100, 1.96);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.0370).abs() < 1e-3);
    }

    #[test]
    fn aggregation_consistency() {
        let rec = |e: usize, nm: f64| MetricsRecord {
            trial: 0,
            receiver: ReceiverKind::Oracle,
            snr_db: 0.0,
            n_pilots: 1,
            poisson_mean: 1.0,
            outer_iter: 1,
            bit_errors: e,
            bits: 1992,
            nmse: nm,
            l_hat: 0,
            beta_hat: 1.0,
            runtime_ms: 0.0,
        };
        let rs = vec![rec(3, 0.1), rec(0, 0.2), rec(17, 0.3)];
        let a = aggregate(&rs);
        let mean_ber = rs.iter().map(|r| r.ber()).sum::<f64>() / 3.0;
        assert!((a.ber - mean_ber).abs() < 1e-15);
        assert!((a.nmse - 0.2).abs() < 1e-15);
        let padded = carry_forward(&rs[..2], 5);
        assert_eq!(padded.len(), 5);
        assert_eq!(padded[4].bit_errors, 0);
        assert_eq!(padded[4].outer_iter, 5);
    }

    #[test]
    fn linear_fit_exact_line() {
        let (a, b, r2) = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn receiver_names_round_trip() {
        for r in ReceiverKind::ALL {
            assert_eq!(r.name().parse::<ReceiverKind>().unwrap(), r);
        }
        assert!("turbo".parse::<ReceiverKind>().is_err());
    }
}
