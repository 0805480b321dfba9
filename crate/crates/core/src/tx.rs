//! Transmit chain: convolutional encoding, random interleaving, Gray-mapped
//! square QAM for data and QPSK for pilots, and OFDM frame assembly.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::SystemConfig;

#[derive(Debug, Error, PartialEq)]
pub enum TxError {
    #[error("generator {0:o} is not a valid code polynomial")]
    BadGenerator(u32),
    #[error("expected {expected} bits, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("bit group of size {got} does not match {expected} bits per symbol")]
    GroupSize { expected: usize, got: usize },
    #[error("empty input")]
    Empty,
}

/// Feed-forward rate-1/n convolutional code, zero-tail terminated.
///
/// Generators are read MSB first: the MSB tap multiplies the current input
/// bit and the LSB tap the oldest register bit. The shift-register state
/// holds the last `memory` inputs with the most recent one in the MSB.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvCode {
    generators: Vec<u32>,
    constraint_len: usize,
}

impl ConvCode {
    pub fn new(generators: &[u32]) -> Result<Self, TxError> {
        if generators.is_empty() {
            return Err(TxError::Empty);
        }
        let constraint_len = generators
            .iter()
            .map(|&g| 32 - g.leading_zeros() as usize)
            .max()
            .unwrap_or(0);
        if !(2..=16).contains(&constraint_len) {
            return Err(TxError::BadGenerator(generators[0]));
        }
        for &g in generators {
            // every generator must tap the current input, otherwise the
            // constraint length is ill-defined
            if g == 0 || (g >> (constraint_len - 1)) & 1 == 0 {
                return Err(TxError::BadGenerator(g));
            }
        }
        Ok(ConvCode {
            generators: generators.to_vec(),
            constraint_len,
        })
    }

    /// The (561, 753) octal code with constraint length 9.
    pub fn standard() -> Self {
        Self::new(&[0o561, 0o753]).expect("valid generators")
    }

    pub fn generators(&self) -> &[u32] {
        &self.generators
    }

    pub fn constraint_len(&self) -> usize {
        self.constraint_len
    }

    pub fn memory(&self) -> usize {
        self.constraint_len - 1
    }

    pub fn num_states(&self) -> usize {
        1 << self.memory()
    }

    pub fn n_outputs(&self) -> usize {
        self.generators.len()
    }

    /// Coded length for `k` information bits, termination included.
    pub fn coded_len(&self, k: usize) -> usize {
        (k + self.memory()) * self.n_outputs()
    }

    /// Output bits (packed, generator 0 in bit 0) and next state for one
    /// trellis step.
    pub fn step(&self, state: usize, input: u8) -> (u32, usize) {
        let m = self.memory();
        let reg = ((input as usize) << m) | state;
        let mut out = 0u32;
        for (j, &g) in self.generators.iter().enumerate() {
            let bit = (reg as u32 & g).count_ones() & 1;
            out |= bit << j;
        }
        (out, reg >> 1)
    }

    /// Encode `bits` followed by `memory` flush zeros.
    pub fn encode(&self, bits: &[u8]) -> Vec<u8> {
        let n_out = self.n_outputs();
        let mut out = Vec::with_capacity(self.coded_len(bits.len()));
        let mut state = 0usize;
        let tail = std::iter::repeat_n(0u8, self.memory());
        for b in bits.iter().copied().chain(tail) {
            let (o, next) = self.step(state, b & 1);
            for j in 0..n_out {
                out.push(((o >> j) & 1) as u8);
            }
            state = next;
        }
        out
    }
}

/// Seeded random permutation: `interleave(x)[i] = x[perm[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interleaver {
    perm: Vec<usize>,
}

impl Interleaver {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        perm.shuffle(&mut rng);
        Interleaver { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn interleave<T: Copy>(&self, x: &[T]) -> Result<Vec<T>, TxError> {
        self.check(x.len())?;
        Ok(self.perm.iter().map(|&p| x[p]).collect())
    }

    pub fn deinterleave<T: Copy + Default>(&self, x: &[T]) -> Result<Vec<T>, TxError> {
        self.check(x.len())?;
        let mut out = vec![T::default(); x.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = x[i];
        }
        Ok(out)
    }

    fn check(&self, got: usize) -> Result<(), TxError> {
        if got != self.perm.len() {
            return Err(TxError::LengthMismatch {
                expected: self.perm.len(),
                got,
            });
        }
        Ok(())
    }
}

/// Gray-labelled square QAM with unit average energy.
///
/// The first `Q/2` bits of a label (MSB first) select the in-phase level,
/// the remaining `Q/2` the quadrature level. Along each axis, level index
/// `k` maps to amplitude `2k - (M - 1)` and carries label `k ^ (k >> 1)`.
#[derive(Debug, Clone)]
pub struct SquareQam {
    bits_per_symbol: usize,
    points: Vec<Complex64>,
}

impl SquareQam {
    pub fn new(bits_per_symbol: usize) -> Result<Self, TxError> {
        if bits_per_symbol == 0 || !bits_per_symbol.is_multiple_of(2) || bits_per_symbol > 12 {
            return Err(TxError::GroupSize {
                expected: 8,
                got: bits_per_symbol,
            });
        }
        let half = bits_per_symbol / 2;
        let levels = 1usize << half;
        // mean energy per axis: (levels^2 - 1) / 3
        let energy = 2.0 * ((levels * levels - 1) as f64) / 3.0;
        let scale = 1.0 / energy.sqrt();
        let mut amp_for_gray = vec![0.0; levels];
        for k in 0..levels {
            let gray = k ^ (k >> 1);
            amp_for_gray[gray] = (2 * k) as f64 - (levels - 1) as f64;
        }
        let points = (0..1usize << bits_per_symbol)
            .map(|label| {
                let i_bits = label >> half;
                let q_bits = label & (levels - 1);
                Complex64::new(amp_for_gray[i_bits], amp_for_gray[q_bits]) * scale
            })
            .collect();
        Ok(SquareQam {
            bits_per_symbol,
            points,
        })
    }

    pub fn qam256() -> Self {
        Self::new(8).expect("256-QAM")
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    /// Constellation point for integer label `label` (MSB = first bit).
    pub fn point(&self, label: usize) -> Complex64 {
        self.points[label]
    }

    /// All `(symbol, label)` pairs, indexed by label.
    pub fn soft_alphabet(&self) -> impl Iterator<Item = (Complex64, usize)> + '_ {
        self.points.iter().copied().zip(0..)
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Bit `m` (0 = first/MSB) of `label`.
    #[inline]
    pub fn label_bit(&self, label: usize, m: usize) -> u8 {
        ((label >> (self.bits_per_symbol - 1 - m)) & 1) as u8
    }

    pub fn label_of(&self, bits: &[u8]) -> Result<usize, TxError> {
        if bits.len() != self.bits_per_symbol {
            return Err(TxError::GroupSize {
                expected: self.bits_per_symbol,
                got: bits.len(),
            });
        }
        Ok(bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize))
    }

    /// Map a flat bit vector, `Q` bits per symbol.
    pub fn map(&self, bits: &[u8]) -> Result<Vec<Complex64>, TxError> {
        if !bits.len().is_multiple_of(self.bits_per_symbol) {
            return Err(TxError::GroupSize {
                expected: self.bits_per_symbol,
                got: bits.len() % self.bits_per_symbol,
            });
        }
        bits.chunks(self.bits_per_symbol)
            .map(|g| self.label_of(g).map(|l| self.points[l]))
            .collect()
    }

    /// Nearest-point label.
    pub fn hard_demap(&self, x: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (l, p) in self.points.iter().enumerate() {
            let d = (x - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = l;
            }
        }
        best
    }

    pub fn max_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).fold(0.0, f64::max)
    }
}

/// Unit-energy QPSK symbol from two bits.
pub fn qpsk(b0: u8, b1: u8) -> Complex64 {
    let re = if b0 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    let im = if b1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    Complex64::new(re, im)
}

/// One OFDM symbol worth of transmitted data.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub info_bits: Vec<u8>,
    /// Coded bits after interleaving, `Q` consecutive bits per data subcarrier.
    pub coded_bits: Vec<u8>,
    pub symbols: Vec<Complex64>,
    pub pilot_indices: Vec<usize>,
    pub data_indices: Vec<usize>,
}

impl SymbolFrame {
    pub fn pilot_values(&self) -> Vec<Complex64> {
        self.pilot_indices.iter().map(|&j| self.symbols[j]).collect()
    }

    /// Bit group carried by the `k`-th data subcarrier.
    pub fn bit_group(&self, k: usize, q: usize) -> &[u8] {
        &self.coded_bits[k * q..(k + 1) * q]
    }
}

/// Encoder, interleaver and mapper for one run.
#[derive(Debug, Clone)]
pub struct Transmitter {
    pub code: ConvCode,
    pub interleaver: Interleaver,
    pub qam: SquareQam,
    pub pilot_indices: Vec<usize>,
    pub data_indices: Vec<usize>,
    pub n_subcarriers: usize,
}

impl Transmitter {
    pub fn new(system: &SystemConfig) -> Result<Self, TxError> {
        let code = ConvCode::new(&system.code_polynomials)?;
        let qam = SquareQam::new(system.bits_per_symbol)?;
        let coded = system.n_data() * system.bits_per_symbol;
        if !coded.is_multiple_of(code.n_outputs()) || coded / code.n_outputs() <= code.memory() {
            return Err(TxError::LengthMismatch {
                expected: code.n_outputs() * (code.memory() + 1),
                got: coded,
            });
        }
        Ok(Transmitter {
            interleaver: Interleaver::new(coded, system.interleaver_seed),
            code,
            qam,
            pilot_indices: system.pilot_indices.clone(),
            data_indices: system.data_indices.clone(),
            n_subcarriers: system.n_subcarriers,
        })
    }

    /// Information bits per frame: `D Q R` minus the termination bits.
    pub fn info_len(&self) -> usize {
        self.coded_len() / self.code.n_outputs() - self.code.memory()
    }

    pub fn coded_len(&self) -> usize {
        self.data_indices.len() * self.qam.bits_per_symbol()
    }

    pub fn random_info_bits<R: Rng>(&self, rng: &mut R) -> Vec<u8> {
        (0..self.info_len()).map(|_| rng.random_range(0..2u8)).collect()
    }

    /// Assemble a frame; pilots are i.i.d. QPSK drawn under `pilot_seed`.
    pub fn build_frame(&self, info_bits: &[u8], pilot_seed: u64) -> Result<SymbolFrame, TxError> {
        if info_bits.len() != self.info_len() {
            return Err(TxError::LengthMismatch {
                expected: self.info_len(),
                got: info_bits.len(),
            });
        }
        let coded = self.code.encode(info_bits);
        let coded_bits = self.interleaver.interleave(&coded)?;
        let data = self.qam.map(&coded_bits)?;
        let mut symbols = vec![Complex64::new(0.0, 0.0); self.n_subcarriers];
        for (&i, &x) in self.data_indices.iter().zip(&data) {
            symbols[i] = x;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(pilot_seed);
        for &j in &self.pilot_indices {
            let b0 = rng.random_range(0..2u8);
            let b1 = rng.random_range(0..2u8);
            symbols[j] = qpsk(b0, b1);
        }
        Ok(SymbolFrame {
            info_bits: info_bits.to_vec(),
            coded_bits,
            symbols,
            pilot_indices: self.pilot_indices.clone(),
            data_indices: self.data_indices.clone(),
        })
    }
}
