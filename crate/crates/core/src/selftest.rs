//! Oracle checks shared by the `selftest` subcommand and the acceptance
//! suite. Each check is parametrised by size so the CLI can run a fast
//! version.

use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{complex_normal, zero_truncated_poisson};
use crate::decoder::{bcjr_decode, map_bits_to_symbol, map_symbol_to_bits, symbol_belief, Trellis};
use crate::dictionary::Dictionary;
use crate::estimator::{Estimator, EstimatorSettings, EstimatorState, Problem, SymbolMoments};
use crate::linear_solver::{cg_max_iters, power_iteration, CoeffSystem, CG_TOL};
use crate::tx::{ConvCode, SquareQam};

pub const SPACING: f64 = 15e3;
pub const CYCLIC_PREFIX: f64 = 5.2e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn settings(n: usize) -> EstimatorSettings {
    EstimatorSettings {
        n_components: n,
        cyclic_prefix: CYCLIC_PREFIX,
        inner_tol: 1e-3,
        max_inner_iters: 50,
        oversampling: 8,
    }
}

fn qam_symbols(n: usize, rng: &mut impl Rng) -> Vec<Complex64> {
    let qam = SquareQam::qam256();
    (0..n).map(|_| qam.point(rng.random_range(0..qam.size()))).collect()
}

fn observe(x: &[Complex64], h: &[Complex64], noise_var: f64, rng: &mut impl Rng) -> Vec<Complex64> {
    x.iter().zip(h).map(|(a, b)| a * b + complex_normal(noise_var, rng)).collect()
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|v| v.norm_sqr()).sum();
    (num / den).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MonotonicityStats {
    pub sequences: usize,
    pub updates: usize,
    /// Largest single-step increase of the free energy (negative if every
    /// step decreased it).
    pub max_increase: f64,
}

/// Random sequences of elementary estimator updates with fixed symbol
/// moments, tracking the largest free-energy increase of any step.
pub fn rbfe_monotonicity(n: usize, sequences: usize, steps: usize, seed: u64) -> MonotonicityStats {
    rbfe_walk(n, sequences, steps, seed, false)
}

/// As [`rbfe_monotonicity`], with the full activation routine (joint solve
/// and delay refinement before the test) in place of the elementary one.
pub fn rbfe_walk_composite(n: usize, sequences: usize, steps: usize, seed: u64) -> MonotonicityStats {
    rbfe_walk(n, sequences, steps, seed, true)
}

fn rbfe_walk(n: usize, sequences: usize, steps: usize, seed: u64, composite: bool) -> MonotonicityStats {
    let est = Estimator::new(n, SPACING, settings(n)).expect("valid grid");
    let dict = *est.dictionary();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = MonotonicityStats {
        max_increase: f64::NEG_INFINITY,
        ..Default::default()
    };
    for _ in 0..sequences {
        let n_paths = rng.random_range(1..=6);
        let delays: Vec<f64> = (0..n_paths).map(|_| rng.random::<f64>() * CYCLIC_PREFIX).collect();
        let coeffs: Vec<Complex64> = (0..n_paths).map(|_| complex_normal(1.0 / n_paths as f64, &mut rng)).collect();
        let h = dict.synthesize(&delays, &coeffs);
        let noise_var = 10f64.powf(-rng.random_range(0.5..3.0));
        let x = qam_symbols(n, &mut rng);
        let y = observe(&x, &h, noise_var, &mut rng);
        // soft moments: a random mix of known and uncertain symbols
        let mut moments = SymbolMoments::known(&x);
        for i in 0..n {
            if rng.random::<f64>() < 0.3 {
                moments.mean[i] *= rng.random::<f64>();
                moments.second[i] = moments.second[i].max(moments.mean[i].norm_sqr()) + rng.random::<f64>();
            }
        }
        let prob = Problem::new(&y, &moments);
        let mut st = EstimatorState::initial(n, &prob);
        est.refresh_residual(&mut st, &prob);
        let mut f = est.rbfe_mf(&st, &prob);
        let learn_rho = rng.random::<bool>();
        for _ in 0..steps {
            let active = st.active_indices();
            let pick = if active.is_empty() { 0 } else { rng.random_range(0..6) };
            match pick {
                0 if composite => {
                    est.activate(&mut st, &prob);
                }
                0 => {
                    est.activate_single(&mut st, &prob);
                }
                1 => est.coeff_update(&mut st, &prob, active[rng.random_range(0..active.len())]),
                2 => est.delay_refine(&mut st, &prob, active[rng.random_range(0..active.len())]),
                3 => est.refine_all(&mut st, &prob),
                4 => {
                    est.joint_solve(&mut st, &prob);
                }
                _ => est.update_params(&mut st, &prob, learn_rho),
            }
            let g = est.rbfe_mf(&st, &prob);
            stats.max_increase = stats.max_increase.max(g - f);
            stats.updates += 1;
            f = g;
        }
        stats.sequences += 1;
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolverStats {
    pub instances: usize,
    pub max_rel_err: f64,
    /// Instances whose CG run also met the tolerance within `4⌈√N⌉`.
    pub within_small_cap: usize,
    pub max_cg_iters: usize,
}

/// Woodbury + CG against a dense Cholesky solve on random systems with
/// 256-QAM second-moment weights.
pub fn solver_equivalence(n: usize, instances: usize, max_paths: usize, seed: u64) -> SolverStats {
    let dict = Dictionary::new(n, SPACING);
    let qam = SquareQam::qam256();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = SolverStats::default();
    for _ in 0..instances {
        let l = rng.random_range(1..=max_paths);
        let delays: Vec<f64> = (0..l).map(|_| rng.random::<f64>() * CYCLIC_PREFIX).collect();
        let weights: Vec<f64> = (0..n).map(|_| qam.point(rng.random_range(0..qam.size())).norm_sqr()).collect();
        let a: Vec<Complex64> = (0..n).map(|_| complex_normal(1.0, &mut rng)).collect();
        let sys = CoeffSystem {
            dict: &dict,
            delays: &delays,
            weights: &weights,
            noise_var: 10f64.powf(-rng.random_range(0.5..2.5)),
            comp_var: rng.random_range(0.05..1.0),
        };
        let direct = sys.solve_direct(&a).expect("positive definite");
        let Ok((wood, iters)) = sys.solve_woodbury(&a, CG_TOL, 10 * n) else {
            stats.max_rel_err = f64::INFINITY;
            stats.instances += 1;
            continue;
        };
        stats.max_rel_err = stats.max_rel_err.max(rel_err(&wood, &direct));
        stats.max_cg_iters = stats.max_cg_iters.max(iters);
        if iters <= cg_max_iters(n) {
            stats.within_small_cap += 1;
        }
        stats.instances += 1;
    }
    stats
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

/// Bitwise posteriors of the information bits and extrinsics of the coded
/// bits by summing over every codeword.
pub fn enumerate_marginals(code: &ConvCode, k: usize, llr: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut info = vec![[f64::NEG_INFINITY; 2]; k];
    let mut coded = vec![[f64::NEG_INFINITY; 2]; llr.len()];
    for word in 0..(1u64 << k) {
        let u: Vec<u8> = (0..k).map(|i| ((word >> i) & 1) as u8).collect();
        let c = code.encode(&u);
        let metric: Vec<f64> = c.iter().zip(llr).map(|(&b, &l)| if b == 0 { 0.5 * l } else { -0.5 * l }).collect();
        let total: f64 = metric.iter().sum();
        for i in 0..k {
            info[i][u[i] as usize] = log_add(info[i][u[i] as usize], total);
        }
        for j in 0..c.len() {
            coded[j][c[j] as usize] = log_add(coded[j][c[j] as usize], total - metric[j]);
        }
    }
    (
        info.iter().map(|v| v[0] - v[1]).collect(),
        coded.iter().map(|v| v[0] - v[1]).collect(),
    )
}

/// Largest absolute LLR difference between BCJR and enumeration on the
/// (7,5) code over `draws` noisy BPSK codewords of `k` bits.
pub fn bcjr_exactness(k: usize, draws: usize, seed: u64) -> f64 {
    let code = ConvCode::new(&[0o7, 0o5]).expect("valid generators");
    let trellis = Trellis::new(&code);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let u: Vec<u8> = (0..k).map(|_| rng.random_range(0..2)).collect();
        let sigma = rng.random_range(0.5..1.5);
        let llr: Vec<f64> = code
            .encode(&u)
            .iter()
            .map(|&b| {
                let s = if b == 0 { 1.0 } else { -1.0 };
                let noise: f64 = rng.sample(rand_distr::StandardNormal);
                2.0 * (s + sigma * noise) / (sigma * sigma)
            })
            .collect();
        let out = bcjr_decode(&trellis, &llr);
        let (info, coded) = enumerate_marginals(&code, k, &llr);
        for (a, b) in out.info_llr.iter().zip(&info).chain(out.coded_extrinsic.iter().zip(&coded)) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecoveryStats {
    pub trials: usize,
    /// Every true delay matched and NMSE at or below the threshold.
    pub successes: usize,
    pub delays_matched: usize,
    pub nmse_met: usize,
    pub worst_nmse_db: f64,
}

/// Known-symbol estimation of a 3-path channel whose delays sit between
/// points of the `1/(NΔf)` grid.
pub fn offgrid_recovery(n: usize, trials: usize, snr_db: f64, seed: u64) -> RecoveryStats {
    let est = Estimator::new(n, SPACING, settings(n)).expect("valid grid");
    let dict = *est.dictionary();
    let res = 1.0 / (n as f64 * SPACING);
    let tol = res / 16.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = RecoveryStats {
        worst_nmse_db: f64::NEG_INFINITY,
        ..Default::default()
    };
    let max_cell = (CYCLIC_PREFIX / res) as usize - 1;
    assert!(max_cell > 11, "cyclic prefix too short for three separated paths at N = {n}");
    for _ in 0..trials {
        let cells = loop {
            let c: Vec<usize> = (0..3).map(|_| rng.random_range(1..max_cell)).collect();
            if c[0].abs_diff(c[1]) >= 5 && c[0].abs_diff(c[2]) >= 5 && c[1].abs_diff(c[2]) >= 5 {
                break c;
            }
        };
        let delays: Vec<f64> = cells.iter().map(|&c| (c as f64 + rng.random_range(0.3..0.7)) * res).collect();
        let coeffs: Vec<Complex64> = (0..3).map(|_| complex_normal(1.0 / 3.0, &mut rng)).collect();
        let h = dict.synthesize(&delays, &coeffs);
        let power = h.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        let noise_var = power / 10f64.powf(snr_db / 10.0);
        let x = qam_symbols(n, &mut rng);
        let y = observe(&x, &h, noise_var, &mut rng);
        let moments = SymbolMoments::known(&x);
        let prob = Problem::new(&y, &moments);
        let mut st = EstimatorState::initial(n, &prob);
        est.inner_loop(&mut st, &prob, false, false);
        est.inner_loop(&mut st, &prob, true, false);
        let (h_hat, _) = est.channel_posterior(&st);
        let err: f64 = h_hat.iter().zip(&h).map(|(a, b)| (a - b).norm_sqr()).sum();
        let nmse_db = 10.0 * (err / h.iter().map(|v| v.norm_sqr()).sum::<f64>()).log10();
        let found = st.active_delays();
        let matched = delays
            .iter()
            .all(|&t| found.iter().any(|&f| (f - t).abs() <= tol));
        stats.trials += 1;
        stats.delays_matched += usize::from(matched);
        stats.nmse_met += usize::from(nmse_db <= -30.0);
        stats.successes += usize::from(matched && nmse_db <= -30.0);
        stats.worst_nmse_db = stats.worst_nmse_db.max(nmse_db);
    }
    stats
}

pub fn truncated_poisson_mean(lambda: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..draws).map(|_| zero_truncated_poisson(lambda, &mut rng) as f64).sum::<f64>() / draws as f64
}

/// `λ / (1 − e^{−λ})`.
pub fn truncated_poisson_expectation(lambda: f64) -> f64 {
    lambda / (1.0 - (-lambda).exp())
}

/// Largest deviation of a symbol pmf sum from one over random messages.
pub fn pmf_normalization(draws: usize, seed: u64) -> f64 {
    let qam = SquareQam::qam256();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut bp = vec![0.0; qam.size()];
    let mut ext = vec![0.0; qam.bits_per_symbol()];
    for _ in 0..draws {
        let m = complex_normal(0.5, &mut rng);
        let v = 10f64.powf(rng.random_range(-4.0..0.0));
        let demap: Vec<f64> = qam.points().iter().map(|x| -(x - m).norm_sqr() / v).collect();
        let prior: Vec<f64> = (0..qam.bits_per_symbol()).map(|_| rng.random_range(-60.0..60.0)).collect();
        map_bits_to_symbol(&qam, &prior, &mut bp);
        map_symbol_to_bits(&qam, &demap, &prior, &mut ext);
        let (pmf, _, _, _) = symbol_belief(&qam, &demap, &bp);
        worst = worst.max((pmf.iter().sum::<f64>() - 1.0).abs());
        if ext.iter().any(|l| !l.is_finite()) {
            return f64::INFINITY;
        }
    }
    worst
}

/// `λ_max` of `β⁻¹ η Ψ Ψᴴ` for a single delay, relative to `Nη/β`.
pub fn rank_one_eigen_error(n: usize, seed: u64) -> f64 {
    let dict = Dictionary::new(n, SPACING);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ones = vec![1.0; n];
    let sys = CoeffSystem {
        dict: &dict,
        delays: &[rng.random::<f64>() * CYCLIC_PREFIX],
        weights: &ones,
        noise_var: 0.3,
        comp_var: 0.8,
    };
    let lam = power_iteration(|v, o| sys.apply_t(v, o), n, 50, &mut rng);
    let exact = 0.8 / 0.3 * n as f64;
    (lam - exact).abs() / exact
}

/// Zero-noise round trip of the standard code through BCJR.
pub fn round_trip_errors(k: usize, seed: u64) -> usize {
    let code = ConvCode::standard();
    let trellis = Trellis::new(&code);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<u8> = (0..k).map(|_| rng.random_range(0..2)).collect();
    let llr: Vec<f64> = code.encode(&u).iter().map(|&b| if b == 0 { 20.0 } else { -20.0 }).collect();
    let out = bcjr_decode(&trellis, &llr);
    out.info_llr.iter().zip(&u).filter(|(l, &b)| u8::from(**l < 0.0) != b).count()
}

/// Fast versions of every check.
pub fn run_all() -> Vec<Check> {
    let mut out = Vec::new();
    let m = rbfe_monotonicity(96, 20, 25, 1);
    out.push(Check {
        name: "free energy non-increasing",
        passed: m.max_increase <= 1e-9,
        detail: format!("{} updates, max increase {:.3e}", m.updates, m.max_increase),
    });
    let s = solver_equivalence(128, 10, 20, 2);
    out.push(Check {
        name: "woodbury matches direct",
        passed: s.max_rel_err <= 1e-8,
        detail: format!("max relative error {:.3e}", s.max_rel_err),
    });
    let b = bcjr_exactness(8, 10, 3);
    out.push(Check {
        name: "bcjr matches enumeration",
        passed: b <= 1e-9,
        detail: format!("max LLR error {b:.3e}"),
    });
    let r = round_trip_errors(200, 4);
    out.push(Check {
        name: "noiseless round trip",
        passed: r == 0,
        detail: format!("{r} bit errors"),
    });
    let p = pmf_normalization(200, 5);
    out.push(Check {
        name: "symbol pmf normalised",
        passed: p <= 1e-12,
        detail: format!("max deviation {p:.3e}"),
    });
    let mean = truncated_poisson_mean(5.0, 20_000, 6);
    out.push(Check {
        name: "truncated poisson mean",
        passed: (mean / 5.034 - 1.0).abs() <= 0.02,
        detail: format!("mean {mean:.4} vs {:.4}", truncated_poisson_expectation(5.0)),
    });
    let e = rank_one_eigen_error(64, 7);
    out.push(Check {
        name: "rank-one eigenvalue",
        passed: e <= 1e-9,
        detail: format!("relative error {e:.3e}"),
    });
    let rec = offgrid_recovery(256, 5, 30.0, 8);
    out.push(Check {
        name: "off-grid delay recovery",
        passed: rec.successes * 100 >= 80 * rec.trials,
        detail: format!("{}/{} trials", rec.successes, rec.trials),
    });
    out
}
