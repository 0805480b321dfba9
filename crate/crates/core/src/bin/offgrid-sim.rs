use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use offgrid_rx::config::Config;
use offgrid_rx::harness::{self, Experiment, ReceiverKind, SweepOptions, EIGEN_MEANS, EIGEN_MEANS_SIZE, EIGEN_SIZES};
use offgrid_rx::selftest;

#[derive(Parser)]
#[command(name = "offgrid-sim", about = "OFDM joint channel estimation and decoding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo sweeps
    Sim {
        #[arg(value_enum)]
        experiment: SimKind,
        #[command(flatten)]
        common: Common,
        /// Restrict to one receiver (offgrid_bpmf, freq_lmmse, oracle)
        #[arg(long, value_name = "NAME")]
        receiver: Option<ReceiverKind>,
    },
    /// Diagnostics
    Probe {
        #[arg(value_enum)]
        probe: ProbeKind,
        #[command(flatten)]
        common: Common,
    },
    /// Run the built-in oracle checks
    Selftest,
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    /// CSV output (stdout if absent)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Worker threads
    #[arg(long, value_name = "N")]
    parallel: Option<usize>,
    /// SNR in dB for experiments at a fixed operating point
    #[arg(long, value_name = "DB", default_value_t = 18.0)]
    snr: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Snr,
    Pilots,
    Numtaps,
    Iters,
    PilotAblation,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeKind {
    Eigen,
}

fn load(common: &Common) -> Result<Config, String> {
    let mut cfg = match &common.config {
        Some(p) => Config::from_file(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.sim.master_seed = s;
    }
    if let Some(t) = common.trials {
        cfg.sim.n_trials = t;
    }
    cfg.validate().map_err(|e| e.to_string())
}

fn output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn run_sim(kind: SimKind, common: &Common, receiver: Option<ReceiverKind>) -> Result<(), String> {
    let cfg = load(common)?;
    let experiment = match kind {
        SimKind::Snr => Experiment::Snr,
        SimKind::Pilots => Experiment::Pilots,
        SimKind::Numtaps => Experiment::NumTaps,
        SimKind::Iters => Experiment::Iters,
        SimKind::PilotAblation => Experiment::PilotAblation,
    };
    let opts = SweepOptions {
        receivers: receiver.map_or_else(|| ReceiverKind::ALL.to_vec(), |r| vec![r]),
        snr_db: common.snr,
        threads: common.parallel,
    };
    let mut w = output(&common.out).map_err(|e| e.to_string())?;
    harness::sweep(experiment, &cfg, &opts, &mut w).map_err(|e| e.to_string())?;
    w.flush().map_err(|e| e.to_string())
}

fn run_probe(common: &Common) -> Result<(), String> {
    let cfg = load(common)?;
    let trials = cfg.sim.n_trials;
    let work = || {
        let mut samples = Vec::new();
        for &n in &EIGEN_SIZES {
            samples.extend(harness::eigen_probe(&cfg, n, cfg.channel.poisson_mean, common.snr, trials));
        }
        for &lambda in &EIGEN_MEANS {
            samples.extend(harness::eigen_probe(&cfg, EIGEN_MEANS_SIZE, lambda, common.snr, trials));
        }
        samples
    };
    let samples = match common.parallel {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| e.to_string())?
            .install(work),
        None => work(),
    };
    let mut w = output(&common.out).map_err(|e| e.to_string())?;
    harness::write_eigen_csv(&mut w, &samples).map_err(|e| e.to_string())?;
    w.flush().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim {
            experiment,
            common,
            receiver,
        } => run_sim(experiment, &common, receiver),
        Command::Probe { common, .. } => run_probe(&common),
        Command::Selftest => {
            let checks = selftest::run_all();
            for c in &checks {
                println!("{c}");
            }
            if checks.iter().all(|c| c.passed) {
                Ok(())
            } else {
                Err("self-test failed".to_string())
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
