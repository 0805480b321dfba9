use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use offgrid_rx::channel::{complex_normal, freq_response, noise_variance};
use offgrid_rx::config::{equispaced_pilots, random_pilots, Config, SystemConfig};
use offgrid_rx::decoder::{bcjr_decode, map_bits_to_symbol, map_symbol_to_bits, symbol_belief, Trellis};
use offgrid_rx::dictionary::Dictionary;
use offgrid_rx::estimator::{Estimator, EstimatorSettings, EstimatorState, Problem, SymbolMoments};
use offgrid_rx::linear_solver::CoeffSystem;
use offgrid_rx::tx::{ConvCode, SquareQam, Transmitter};

const DF: f64 = 15e3;
const TCP: f64 = 5.2e-6;

fn c64() -> impl Strategy<Value = Complex64> {
    (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b)| Complex64::new(a, b))
}

fn settings(n: usize) -> EstimatorSettings {
    EstimatorSettings {
        n_components: n,
        cyclic_prefix: TCP,
        inner_tol: 1e-3,
        max_inner_iters: 50,
        oversampling: 8,
    }
}

fn rel_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|x| x.norm_sqr()).sum::<f64>().max(1e-300);
    (num / den).sqrt()
}

/// Symbols, observation and soft moments for a random sparse channel.
fn random_problem(n: usize, seed: u64) -> (Vec<Complex64>, SymbolMoments) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let qam = SquareQam::qam256();
    let dict = Dictionary::new(n, DF);
    let l = rng.random_range(1..=5);
    let delays: Vec<f64> = (0..l).map(|_| rng.random::<f64>() * TCP).collect();
    let coeffs: Vec<Complex64> = (0..l).map(|_| complex_normal(1.0 / l as f64, &mut rng)).collect();
    let h = dict.synthesize(&delays, &coeffs);
    let beta = 10f64.powf(-rng.random_range(0.5..3.0));
    let x: Vec<Complex64> = (0..n).map(|_| qam.point(rng.random_range(0..256))).collect();
    let y = x.iter().zip(&h).map(|(a, b)| a * b + complex_normal(beta, &mut rng)).collect();
    let mut m = SymbolMoments::known(&x);
    for i in 0..n {
        if rng.random::<f64>() < 0.2 {
            m.mean[i] *= rng.random::<f64>();
            m.second[i] = m.second[i].max(m.mean[i].norm_sqr()) + rng.random::<f64>();
        }
        if rng.random::<f64>() < 0.05 {
            m.observed[i] = false;
        }
    }
    (y, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn equispaced_pilot_sets(k in 2usize..40, step in 1usize..20) {
        let n = (k - 1) * step + 1;
        let p = equispaced_pilots(n, k).unwrap();
        prop_assert_eq!(p.len(), k);
        prop_assert_eq!(p[0], 0);
        prop_assert_eq!(*p.last().unwrap(), n - 1);
        prop_assert!(p.windows(2).all(|w| w[1] - w[0] == step));
    }

    #[test]
    fn random_pilot_sets(n in 40usize..700, frac in 0.05..0.45f64, seed: u64) {
        let k = ((n as f64 * frac) as usize).max(2);
        let p = random_pilots(n, k, seed).unwrap();
        prop_assert_eq!(p.len(), k);
        prop_assert_eq!(p[0], 0);
        prop_assert_eq!(*p.last().unwrap(), n - 1);
        prop_assert!(p.windows(2).all(|w| w[1] >= w[0] + 2));
    }

    #[test]
    fn validated_configs_keep_index_invariants(k in 2usize..120, seed: u64) {
        let mut cfg = Config::default();
        if let Ok(p) = random_pilots(601, k, seed) {
            cfg.system.set_pilots(p);
            if let Ok(cfg) = cfg.validate() {
                let s = &cfg.system;
                prop_assert_eq!(s.n_pilots() + s.n_data(), s.n_subcarriers);
                prop_assert!(s.pilot_indices.iter().all(|p| !s.data_indices.contains(p)));
                prop_assert!(s.data_indices.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn invalid_configs_rejected(key in 0usize..4, v in -10.0..0.0f64) {
        let mut cfg = Config::default();
        match key {
            0 => cfg.channel.poisson_mean = v,
            1 => cfg.channel.max_delay = 2.0 * cfg.system.cyclic_prefix,
            2 => cfg.sim.inner_tol = v,
            _ => cfg.sim.n_trials = 0,
        }
        prop_assert!(cfg.validate().is_err());
    }

    #[test]
    fn mapping_is_bijective(seed: u64) {
        let system = SystemConfig::table_one();
        let tx = Transmitter::new(&system).unwrap();
        let bits = tx.random_info_bits(&mut ChaCha8Rng::seed_from_u64(seed));
        let frame = tx.build_frame(&bits, seed).unwrap();
        let q = tx.qam.bits_per_symbol();
        let mut recovered = Vec::with_capacity(frame.coded_bits.len());
        for &i in &frame.data_indices {
            let label = tx.qam.hard_demap(frame.symbols[i]);
            recovered.extend((0..q).map(|m| tx.qam.label_bit(label, m)));
        }
        prop_assert_eq!(&recovered, &frame.coded_bits);
        let natural = tx.interleaver.deinterleave(&recovered).unwrap();
        prop_assert_eq!(natural, tx.code.encode(&bits));
    }

    #[test]
    fn response_is_linear(
        delays in prop::collection::vec(0.0..TCP, 1..6),
        a in c64(), b in c64(), seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c1: Vec<Complex64> = delays.iter().map(|_| complex_normal(1.0, &mut rng)).collect();
        let c2: Vec<Complex64> = delays.iter().map(|_| complex_normal(1.0, &mut rng)).collect();
        let mix: Vec<Complex64> = c1.iter().zip(&c2).map(|(x, y)| a * x + b * y).collect();
        let h1 = freq_response(&delays, &c1, 64, DF);
        let h2 = freq_response(&delays, &c2, 64, DF);
        let hm = freq_response(&delays, &mix, 64, DF);
        for k in 0..64 {
            prop_assert!((hm[k] - (a * h1[k] + b * h2[k])).norm() < 1e-12 * (1.0 + hm[k].norm()));
        }
    }

    #[test]
    fn noise_variance_matches_snr(delays in prop::collection::vec(0.0..TCP, 1..6), snr in -5.0..40.0f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<Complex64> = delays.iter().map(|_| complex_normal(1.0, &mut rng)).collect();
        let h = freq_response(&delays, &c, 601, DF);
        let beta = noise_variance(&h, snr);
        let ratio = h.iter().map(|x| x.norm_sqr()).sum::<f64>() / (601.0 * beta);
        let target = 10f64.powf(snr / 10.0);
        prop_assert!((ratio - target).abs() <= 1e-12 * target);
    }

    #[test]
    fn projection_cauchy_schwarz(tau in 0.0..TCP, r in prop::collection::vec(c64(), 32)) {
        let dict = Dictionary::new(32, DF);
        let norm = r.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(dict.project(tau, &r).norm() <= (32f64).sqrt() * norm * (1.0 + 1e-12));
    }

    #[test]
    fn diagonal_gram_is_weight_sum(tau in 0.0..TCP, d in prop::collection::vec(0.0..3.0f64, 48)) {
        let dict = Dictionary::new(48, DF);
        let g = dict.weighted_gram(tau, tau, &d);
        let s: f64 = d.iter().sum();
        prop_assert!(g.im.abs() < 1e-12 * s.max(1.0));
        prop_assert!((g.re - s).abs() < 1e-12 * s.max(1.0));
    }

    #[test]
    fn c_operator_is_hermitian(seed: u64, l in 1usize..12) {
        let n = 40;
        let dict = Dictionary::new(n, DF);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delays: Vec<f64> = (0..l).map(|_| rng.random::<f64>() * TCP).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
        let sys = CoeffSystem { dict: &dict, delays: &delays, weights: &weights, noise_var: 0.1, comp_var: 0.5 };
        let u: Vec<Complex64> = (0..n).map(|_| complex_normal(1.0, &mut rng)).collect();
        let v: Vec<Complex64> = (0..n).map(|_| complex_normal(1.0, &mut rng)).collect();
        let mut cu = vec![Complex64::new(0.0, 0.0); n];
        let mut cv = cu.clone();
        sys.apply_c(&u, &mut cu);
        sys.apply_c(&v, &mut cv);
        let lhs: Complex64 = cu.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
        let rhs: Complex64 = u.iter().zip(&cv).map(|(a, b)| a.conj() * b).sum();
        prop_assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
    }

    #[test]
    fn symbol_beliefs_are_normalised(m in c64(), logv in -5.0..1.0f64, prior in prop::collection::vec(-80.0..80.0f64, 8)) {
        let qam = SquareQam::qam256();
        let v = 10f64.powf(logv);
        let demap: Vec<f64> = qam.points().iter().map(|x| -(x - m).norm_sqr() / v).collect();
        let mut bp = vec![0.0; 256];
        map_bits_to_symbol(&qam, &prior, &mut bp);
        let (pmf, mean, second, _) = symbol_belief(&qam, &demap, &bp);
        prop_assert!((pmf.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(pmf.iter().all(|&p| p >= 0.0));
        prop_assert!(second >= mean.norm_sqr());
        let mut ext = vec![0.0; 8];
        map_symbol_to_bits(&qam, &demap, &prior, &mut ext);
        prop_assert!(ext.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn mapper_extrinsic_ignores_own_prior(m in c64(), prior in prop::collection::vec(-10.0..10.0f64, 8), bit in 0usize..8, delta in -5.0..5.0f64) {
        let qam = SquareQam::qam256();
        let demap: Vec<f64> = qam.points().iter().map(|x| -(x - m).norm_sqr() / 0.3).collect();
        let mut a = vec![0.0; 8];
        let mut b = vec![0.0; 8];
        map_symbol_to_bits(&qam, &demap, &prior, &mut a);
        let mut moved = prior.clone();
        moved[bit] += delta;
        map_symbol_to_bits(&qam, &demap, &moved, &mut b);
        prop_assert!((a[bit] - b[bit]).abs() < 1e-9);
    }

    #[test]
    fn bcjr_extrinsic_ignores_own_input(seed: u64, j in 0usize..24, delta in -4.0..4.0f64) {
        let code = ConvCode::new(&[0o7, 0o5]).unwrap();
        let t = Trellis::new(&code);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let llr: Vec<f64> = (0..24).map(|_| rng.random_range(-6.0..6.0)).collect();
        let mut moved = llr.clone();
        moved[j] += delta;
        let a = bcjr_decode(&t, &llr);
        let b = bcjr_decode(&t, &moved);
        prop_assert!((a.coded_extrinsic[j] - b.coded_extrinsic[j]).abs() < 1e-9);
    }

    #[test]
    fn bcjr_noiseless_round_trip(bits in prop::collection::vec(0u8..2, 1..300)) {
        let code = ConvCode::standard();
        let t = Trellis::new(&code);
        let llr: Vec<f64> = code.encode(&bits).iter().map(|&b| if b == 0 { 12.0 } else { -12.0 }).collect();
        let out = bcjr_decode(&t, &llr);
        let hat: Vec<u8> = out.info_llr.iter().map(|&l| u8::from(l < 0.0)).collect();
        prop_assert_eq!(hat, bits);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn estimator_updates_keep_state_consistent(seed: u64, ops in prop::collection::vec(0usize..7, 1..30)) {
        let n = 128;
        let est = Estimator::new(n, DF, settings(n)).unwrap();
        let (y, moments) = random_problem(n, seed);
        let prob = Problem::new(&y, &moments);
        let mut st = EstimatorState::initial(n, &prob);
        est.refresh_residual(&mut st, &prob);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let mut f = est.rbfe_mf(&st, &prob);
        for op in ops {
            let active = st.active_indices();
            let op = if active.is_empty() { 0 } else { op };
            match op {
                0 => { est.activate_single(&mut st, &prob); }
                6 => { est.activate(&mut st, &prob); }
                1 => est.coeff_update(&mut st, &prob, active[rng.random_range(0..active.len())]),
                2 => est.delay_refine(&mut st, &prob, active[rng.random_range(0..active.len())]),
                3 => est.refine_all(&mut st, &prob),
                4 => { est.joint_solve(&mut st, &prob); }
                _ => est.update_params(&mut st, &prob, true),
            }
            let fresh = est.compute_residual(&st, &prob);
            prop_assert!(rel_diff(&st.residual, &fresh) < 1e-9, "residual drift after op {}", op);
            prop_assert!(st.active_delays().iter().all(|&t| (0.0..=TCP).contains(&t)));
            for l in 0..n {
                if !st.active[l] {
                    prop_assert_eq!(st.coeff_mean[l], Complex64::new(0.0, 0.0));
                }
            }
            let g = est.rbfe_mf(&st, &prob);
            if op != 6 {
                prop_assert!(g <= f + 1e-9 * f.abs().max(1.0), "free energy rose from {} to {} (op {})", f, g, op);
            }
            f = g;
        }
    }

    #[test]
    fn newton_step_never_decreases_objective(seed: u64, tau in 0.0..TCP) {
        let n = 96;
        let est = Estimator::new(n, DF, settings(n)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<Complex64> = (0..n).map(|_| complex_normal(1.0, &mut rng)).collect();
        let next = est.newton_step(tau, &r);
        let dict = est.dictionary();
        prop_assert!((0.0..=TCP).contains(&next));
        prop_assert!(dict.objective(next, &r) >= dict.objective(tau, &r) * (1.0 - 1e-12));
    }
}
