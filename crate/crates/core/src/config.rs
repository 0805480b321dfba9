//! System, channel and simulation parameters.
//!
//! Subcarrier numbering: subcarrier `n = 1..=N` is stored at zero-based index
//! `n - 1` everywhere in this crate, so pilot index sets such as
//! `{1, 7, ..., 601}` appear as `{0, 6, ..., 600}`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("overlapping index sets: subcarrier {0} is both pilot and data")]
    OverlappingIndexSets(usize),
    #[error("index sets do not cover all subcarriers: subcarrier {0} is missing")]
    IncompleteIndexSets(usize),
    #[error("index {index} out of range for {n} subcarriers")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("{0} must be strictly positive")]
    NotPositive(&'static str),
    #[error("max delay exceeds cyclic prefix ({max_delay:e} s > {cyclic_prefix:e} s)")]
    MaxDelayExceedsCyclicPrefix { max_delay: f64, cyclic_prefix: f64 },
    #[error("unsupported bits per symbol {0}; only 256-QAM (8) is supported")]
    UnsupportedModulation(usize),
    #[error("pilot spacing: (n - 1) = {0} is not divisible by (n_pilots - 1) = {1}")]
    PilotSpacing(usize, usize),
    #[error("need at least {min} pilots, got {got}")]
    TooFewPilots { min: usize, got: usize },
    #[error("cannot place {n_pilots} pilots in {n} subcarriers with minimum spacing 2")]
    InfeasiblePilotSpacing { n: usize, n_pilots: usize },
    #[error("inner_tol must be strictly positive")]
    InnerTolerance,
    #[error("component count {0} exceeds the number of subcarriers")]
    TooManyComponents(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    InvalidValue { key: String, value: String },
    #[error("io error reading config: {0}")]
    Io(String),
}

/// Pilot placement rule used when the pilot set is derived from a count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotPattern {
    Equispaced,
    Random,
}

impl fmt::Display for PilotPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PilotPattern::Equispaced => write!(f, "equispaced"),
            PilotPattern::Random => write!(f, "random"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub n_subcarriers: usize,
    /// Hz.
    pub subcarrier_spacing: f64,
    /// Seconds.
    pub cyclic_prefix: f64,
    pub pilot_indices: Vec<usize>,
    pub data_indices: Vec<usize>,
    pub bits_per_symbol: usize,
    /// Octal generator pair, e.g. `[0o561, 0o753]`.
    pub code_polynomials: [u32; 2],
    pub interleaver_seed: u64,
    pub pilot_seed: u64,
}

impl SystemConfig {
    /// Table I system: 601 subcarriers, 15 kHz, 5.2 us CP, 101 equispaced pilots.
    pub fn table_one() -> Self {
        let n = 601;
        let pilots = equispaced_pilots(n, 101).expect("601/101 divisible");
        Self::with_pilots(n, pilots)
    }

    /// Table I system parameters with an explicit pilot set; data indices
    /// are the complement.
    pub fn with_pilots(n: usize, pilot_indices: Vec<usize>) -> Self {
        let data_indices = complement(n, &pilot_indices);
        SystemConfig {
            n_subcarriers: n,
            subcarrier_spacing: 15e3,
            cyclic_prefix: 5.2e-6,
            pilot_indices,
            data_indices,
            bits_per_symbol: 8,
            code_polynomials: [0o561, 0o753],
            interleaver_seed: 0x1d_2c3b,
            pilot_seed: 0x7a11,
        }
    }

    /// Replace the pilot set (and recompute the data set).
    pub fn set_pilots(&mut self, pilot_indices: Vec<usize>) {
        self.data_indices = complement(self.n_subcarriers, &pilot_indices);
        self.pilot_indices = pilot_indices;
    }

    pub fn n_pilots(&self) -> usize {
        self.pilot_indices.len()
    }

    pub fn n_data(&self) -> usize {
        self.data_indices.len()
    }

    /// Delay resolution `(N Δf)^-1` in seconds.
    pub fn delay_resolution(&self) -> f64 {
        1.0 / (self.n_subcarriers as f64 * self.subcarrier_spacing)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_subcarriers == 0 {
            return Err(ConfigError::NotPositive("n_subcarriers"));
        }
        if !(self.subcarrier_spacing > 0.0) {
            return Err(ConfigError::NotPositive("subcarrier_spacing"));
        }
        if !(self.cyclic_prefix > 0.0) {
            return Err(ConfigError::NotPositive("cyclic_prefix"));
        }
        if self.bits_per_symbol != 8 {
            return Err(ConfigError::UnsupportedModulation(self.bits_per_symbol));
        }
        let n = self.n_subcarriers;
        let mut seen = vec![false; n];
        for &i in &self.pilot_indices {
            if i >= n {
                return Err(ConfigError::IndexOutOfRange { index: i, n });
            }
            seen[i] = true;
        }
        for &i in &self.data_indices {
            if i >= n {
                return Err(ConfigError::IndexOutOfRange { index: i, n });
            }
            if seen[i] {
                return Err(ConfigError::OverlappingIndexSets(i));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(ConfigError::IncompleteIndexSets(missing));
        }
        if self.pilot_indices.is_empty() {
            return Err(ConfigError::TooFewPilots { min: 1, got: 0 });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    /// Mean of the Poisson law before zero truncation.
    pub poisson_mean: f64,
    /// Seconds.
    pub max_delay: f64,
    /// Seconds.
    pub decay_constant: f64,
    pub target_mean_gain: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            poisson_mean: 5.0,
            max_delay: 5.2e-6,
            decay_constant: 1.5e-6,
            target_mean_gain: 1.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self, system: &SystemConfig) -> Result<(), ConfigError> {
        if !(self.poisson_mean > 0.0) {
            return Err(ConfigError::NotPositive("poisson_mean"));
        }
        if !(self.max_delay > 0.0) {
            return Err(ConfigError::NotPositive("max_delay"));
        }
        if !(self.decay_constant > 0.0) {
            return Err(ConfigError::NotPositive("decay_constant"));
        }
        if !(self.target_mean_gain > 0.0) {
            return Err(ConfigError::NotPositive("target_mean_gain"));
        }
        if self.max_delay > system.cyclic_prefix {
            return Err(ConfigError::MaxDelayExceedsCyclicPrefix {
                max_delay: self.max_delay,
                cyclic_prefix: system.cyclic_prefix,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub snr_db_list: Vec<f64>,
    pub n_trials: usize,
    pub master_seed: u64,
    pub max_outer_iters: usize,
    pub outer_patience: usize,
    pub max_inner_iters: usize,
    pub inner_tol: f64,
    pub grid_oversampling: usize,
    /// `None` means `L = N`.
    pub n_components_max: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            snr_db_list: vec![10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 22.0],
            n_trials: 100,
            master_seed: 1,
            max_outer_iters: 50,
            outer_patience: 10,
            max_inner_iters: 50,
            inner_tol: 1e-3,
            grid_oversampling: 8,
            n_components_max: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, system: &SystemConfig) -> Result<(), ConfigError> {
        for (name, v) in [
            ("n_trials", self.n_trials),
            ("max_outer_iters", self.max_outer_iters),
            ("outer_patience", self.outer_patience),
            ("max_inner_iters", self.max_inner_iters),
            ("grid_oversampling", self.grid_oversampling),
        ] {
            if v == 0 {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if !(self.inner_tol > 0.0) {
            return Err(ConfigError::InnerTolerance);
        }
        if let Some(l) = self.n_components_max {
            if l == 0 {
                return Err(ConfigError::NotPositive("n_components_max"));
            }
            if l > system.n_subcarriers {
                return Err(ConfigError::TooManyComponents(l));
            }
        }
        Ok(())
    }

    pub fn n_components(&self, system: &SystemConfig) -> usize {
        self.n_components_max.unwrap_or(system.n_subcarriers)
    }
}

/// Complete run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub system: SystemConfig,
    pub channel: ChannelConfig,
    pub sim: SimConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            system: SystemConfig::table_one(),
            channel: ChannelConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

impl Config {
    /// Returns the configuration unchanged if every invariant holds.
    pub fn validate(self) -> Result<Self, ConfigError> {
        self.system.validate()?;
        self.channel.validate(&self.system)?;
        self.sim.validate(&self.system)?;
        Ok(self)
    }

    /// Parse a flat `key = value` file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(e.to_string()))?;
        let mut cfg = Config::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: lineno + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Set one field by name. Pilot-derived keys (`n_pilots`,
    /// `pilot_pattern`, `pilot_indices`) rebuild the index sets immediately.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        fn num<T: std::str::FromStr>(v: &str, bad: impl Fn() -> ConfigError) -> Result<T, ConfigError> {
            v.parse::<T>().map_err(|_| bad())
        }
        match key {
            "n_subcarriers" => {
                let n: usize = num(value, bad)?;
                let n_p = self.system.n_pilots();
                self.system.n_subcarriers = n;
                // keep the pilot count, re-place equispaced if possible
                if let Ok(p) = equispaced_pilots(n, n_p) {
                    self.system.set_pilots(p);
                }
            }
            "subcarrier_spacing" => self.system.subcarrier_spacing = num(value, bad)?,
            "cyclic_prefix" => self.system.cyclic_prefix = num(value, bad)?,
            "bits_per_symbol" => self.system.bits_per_symbol = num(value, bad)?,
            "interleaver_seed" => self.system.interleaver_seed = num(value, bad)?,
            "pilot_seed" => self.system.pilot_seed = num(value, bad)?,
            "code_polynomials" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(bad());
                }
                let a = u32::from_str_radix(parts[0], 8).map_err(|_| bad())?;
                let b = u32::from_str_radix(parts[1], 8).map_err(|_| bad())?;
                self.system.code_polynomials = [a, b];
            }
            "pilot_indices" => {
                let idx = parse_list::<usize>(value).ok_or_else(bad)?;
                self.system.set_pilots(idx);
            }
            "n_pilots" | "pilot_pattern" => {
                let (count, pattern) = if key == "n_pilots" {
                    let guess = if is_equispaced(&self.system.pilot_indices) {
                        PilotPattern::Equispaced
                    } else {
                        PilotPattern::Random
                    };
                    (num::<usize>(value, bad)?, guess)
                } else {
                    let p = match value {
                        "equispaced" => PilotPattern::Equispaced,
                        "random" => PilotPattern::Random,
                        _ => return Err(bad()),
                    };
                    (self.system.n_pilots(), p)
                };
                let n = self.system.n_subcarriers;
                let pilots = match pattern {
                    PilotPattern::Equispaced => equispaced_pilots(n, count)?,
                    PilotPattern::Random => random_pilots(n, count, self.system.pilot_seed)?,
                };
                self.system.set_pilots(pilots);
            }
            "poisson_mean" => self.channel.poisson_mean = num(value, bad)?,
            "max_delay" => self.channel.max_delay = num(value, bad)?,
            "decay_constant" => self.channel.decay_constant = num(value, bad)?,
            "target_mean_gain" => self.channel.target_mean_gain = num(value, bad)?,
            "snr_db_list" => self.sim.snr_db_list = parse_list::<f64>(value).ok_or_else(bad)?,
            "n_trials" => self.sim.n_trials = num(value, bad)?,
            "master_seed" => self.sim.master_seed = num(value, bad)?,
            "max_outer_iters" => self.sim.max_outer_iters = num(value, bad)?,
            "outer_patience" => self.sim.outer_patience = num(value, bad)?,
            "max_inner_iters" => self.sim.max_inner_iters = num(value, bad)?,
            "inner_tol" => self.sim.inner_tol = num(value, bad)?,
            "grid_oversampling" => self.sim.grid_oversampling = num(value, bad)?,
            "n_components_max" => self.sim.n_components_max = Some(num(value, bad)?),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Option<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().ok())
        .collect()
}

fn complement(n: usize, pilots: &[usize]) -> Vec<usize> {
    let set: BTreeSet<usize> = pilots.iter().copied().collect();
    (0..n).filter(|i| !set.contains(i)).collect()
}

fn is_equispaced(idx: &[usize]) -> bool {
    idx.len() >= 2 && idx.windows(2).all(|w| w[1] - w[0] == idx[1] - idx[0])
}

/// Pilots `{1, 1+Δ_P, ..., N}` (zero-based `{0, Δ_P, ..., N-1}`).
pub fn equispaced_pilots(n: usize, n_pilots: usize) -> Result<Vec<usize>, ConfigError> {
    if n_pilots < 2 {
        return Err(ConfigError::TooFewPilots { min: 2, got: n_pilots });
    }
    if n < 2 || !(n - 1).is_multiple_of(n_pilots - 1) {
        return Err(ConfigError::PilotSpacing(n.saturating_sub(1), n_pilots - 1));
    }
    let spacing = (n - 1) / (n_pilots - 1);
    Ok((0..n_pilots).map(|k| k * spacing).collect())
}

/// Seeded random pilot set of `n_pilots` distinct indices that contains both
/// band edges and has no two pilots on adjacent subcarriers.
///
/// The pattern is drawn uniformly among all admissible patterns: the interior
/// positions are a uniform `k`-subset of a shortened range, spread out by
/// adding the rank, which maps subsets one-to-one onto non-adjacent sets.
pub fn random_pilots(n: usize, n_pilots: usize, seed: u64) -> Result<Vec<usize>, ConfigError> {
    if n_pilots < 2 {
        return Err(ConfigError::TooFewPilots { min: 2, got: n_pilots });
    }
    if n_pilots > n || n < 3 {
        return Err(ConfigError::InfeasiblePilotSpacing { n, n_pilots });
    }
    let k = n_pilots - 2;
    // interior slots 2..=n-3 keep distance >= 2 from both edges
    let slots = n.saturating_sub(4);
    if k > 0 && (slots + 1 < 2 * k || slots == 0) {
        return Err(ConfigError::InfeasiblePilotSpacing { n, n_pilots });
    }
    let mut out = Vec::with_capacity(n_pilots);
    out.push(0);
    if k > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = index::sample(&mut rng, slots - k + 1, k).into_vec();
        picks.sort_unstable();
        out.extend(picks.iter().enumerate().map(|(rank, &p)| 2 + p + rank));
    }
    out.push(n - 1);
    Ok(out)
}
