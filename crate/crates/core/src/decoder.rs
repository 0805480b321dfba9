//! Soft demapping, exact sum-product over the QAM mapping factor, log-domain
//! BCJR decoding and symbol beliefs.
//!
//! LLRs are `ln P(b = 0) / P(b = 1)` throughout.

use num_complex::Complex64;

use crate::tx::{ConvCode, Interleaver, SquareQam};

pub const LLR_CLAMP: f64 = 60.0;

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    let d = lo - hi;
    if d < -40.0 {
        hi
    } else {
        hi + d.exp().ln_1p()
    }
}

fn clamp_llr(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(-LLR_CLAMP, LLR_CLAMP)
    }
}

/// `(ln P(0), ln P(1))` for an LLR.
#[inline]
fn bit_log_probs(llr: f64) -> (f64, f64) {
    // ln P(0) = -ln(1 + e^{-L}), ln P(1) = -ln(1 + e^{L})
    let softplus = |x: f64| if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    (-softplus(-llr), -softplus(llr))
}

/// Precomputed trellis of a feed-forward convolutional code.
#[derive(Debug, Clone)]
pub struct Trellis {
    n_states: usize,
    n_outputs: usize,
    memory: usize,
    /// `next[2s + u]`
    next: Vec<usize>,
    /// packed output bits `out[2s + u]`
    out: Vec<u32>,
    /// branches `2s + u` entering each state
    prev: Vec<Vec<usize>>,
}

impl Trellis {
    pub fn new(code: &ConvCode) -> Self {
        let n_states = code.num_states();
        let mut next = Vec::with_capacity(2 * n_states);
        let mut out = Vec::with_capacity(2 * n_states);
        for s in 0..n_states {
            for u in 0..2u8 {
                let (o, nx) = code.step(s, u);
                next.push(nx);
                out.push(o);
            }
        }
        let mut prev = vec![Vec::new(); n_states];
        for (b, &ns) in next.iter().enumerate() {
            prev[ns].push(b);
        }
        Trellis {
            n_states,
            n_outputs: code.n_outputs(),
            memory: code.memory(),
            next,
            out,
            prev,
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    /// Information bits carried by `coded_len` terminated coded bits.
    pub fn info_len(&self, coded_len: usize) -> usize {
        coded_len / self.n_outputs - self.memory
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcjrOutput {
    /// Posterior LLRs of the information bits.
    pub info_llr: Vec<f64>,
    /// Extrinsic LLRs of the coded bits, encoder order.
    pub coded_extrinsic: Vec<f64>,
}

/// Exact log-domain BCJR over a zero-terminated trellis. Starts and ends
/// in state 0; tail inputs are forced to zero.
pub fn bcjr_decode(trellis: &Trellis, channel_llr: &[f64]) -> BcjrOutput {
    let n_out = trellis.n_outputs;
    assert_eq!(channel_llr.len() % n_out, 0, "LLR length must be a multiple of the code outputs");
    let steps = channel_llr.len() / n_out;
    let k = trellis.info_len(channel_llr.len());
    let s_count = trellis.n_states;
    let ninf = f64::NEG_INFINITY;

    // branch metric for each packed output pattern at every step
    let patterns = 1usize << n_out;
    let mut gamma = vec![0.0; steps * patterns];
    for t in 0..steps {
        let l = &channel_llr[t * n_out..(t + 1) * n_out];
        for p in 0..patterns {
            let mut g = 0.0;
            for (j, &lj) in l.iter().enumerate() {
                g += if (p >> j) & 1 == 0 { 0.5 * lj } else { -0.5 * lj };
            }
            gamma[t * patterns + p] = g;
        }
    }
    let inputs = |t: usize| if t < k { 2 } else { 1 };

    let mut alpha = vec![ninf; (steps + 1) * s_count];
    alpha[0] = 0.0;
    for t in 0..steps {
        let (cur, nxt) = alpha.split_at_mut((t + 1) * s_count);
        let cur = &cur[t * s_count..];
        let nxt = &mut nxt[..s_count];
        let g = &gamma[t * patterns..(t + 1) * patterns];
        let n_in = inputs(t);
        for (ns, slot) in nxt.iter_mut().enumerate() {
            let mut acc = ninf;
            for &b in &trellis.prev[ns] {
                if b % 2 < n_in {
                    let a = cur[b / 2];
                    if a != ninf {
                        acc = log_add(acc, a + g[trellis.out[b] as usize]);
                    }
                }
            }
            *slot = acc;
        }
        let m = nxt.iter().cloned().fold(ninf, f64::max);
        if m.is_finite() {
            nxt.iter_mut().for_each(|v| *v -= m);
        }
    }

    let mut beta = vec![ninf; (steps + 1) * s_count];
    beta[steps * s_count] = 0.0;
    for t in (0..steps).rev() {
        let (cur, nxt) = beta.split_at_mut((t + 1) * s_count);
        let cur = &mut cur[t * s_count..];
        let nxt = &nxt[..s_count];
        let g = &gamma[t * patterns..(t + 1) * patterns];
        for s in 0..s_count {
            let mut acc = ninf;
            for u in 0..inputs(t) {
                let b = 2 * s + u;
                let bn = nxt[trellis.next[b]];
                if bn != ninf {
                    acc = log_add(acc, bn + g[trellis.out[b] as usize]);
                }
            }
            cur[s] = acc;
        }
        let m = cur.iter().cloned().fold(ninf, f64::max);
        if m.is_finite() {
            cur.iter_mut().for_each(|v| *v -= m);
        }
    }

    // branch metrics are pooled by (input, output pattern), then summed
    // as max + ln Σ exp
    let n_buckets = 2 * patterns;
    let mut info_llr = vec![0.0; k];
    let mut coded_post = vec![0.0; channel_llr.len()];
    let mut metric = vec![ninf; 2 * s_count];
    let mut peak = vec![ninf; n_buckets];
    let mut sum = vec![0.0; n_buckets];
    let mut bucket = vec![ninf; n_buckets];
    for t in 0..steps {
        let a = &alpha[t * s_count..(t + 1) * s_count];
        let bn = &beta[(t + 1) * s_count..(t + 2) * s_count];
        let g = &gamma[t * patterns..(t + 1) * patterns];
        let n_in = inputs(t);
        peak.iter_mut().for_each(|v| *v = ninf);
        for (b, m) in metric.iter_mut().enumerate() {
            *m = if b % 2 < n_in {
                let o = trellis.out[b] as usize;
                let v = a[b / 2] + g[o] + bn[trellis.next[b]];
                let id = (b % 2) * patterns + o;
                if v > peak[id] {
                    peak[id] = v;
                }
                v
            } else {
                ninf
            };
        }
        sum.iter_mut().for_each(|v| *v = 0.0);
        for (b, &m) in metric.iter().enumerate() {
            if m != ninf {
                let id = (b % 2) * patterns + trellis.out[b] as usize;
                sum[id] += (m - peak[id]).exp();
            }
        }
        for id in 0..n_buckets {
            bucket[id] = if peak[id] == ninf { ninf } else { peak[id] + sum[id].ln() };
        }
        if t < k {
            let by_input = |u: usize| bucket[u * patterns..(u + 1) * patterns].iter().fold(ninf, |acc, &v| log_add(acc, v));
            info_llr[t] = clamp_llr(by_input(0) - by_input(1));
        }
        for j in 0..n_out {
            let mut slot = [ninf; 2];
            for (id, &v) in bucket.iter().enumerate() {
                let bit = ((id % patterns) >> j) & 1;
                slot[bit] = log_add(slot[bit], v);
            }
            coded_post[t * n_out + j] = slot[0] - slot[1];
        }
    }
    let coded_extrinsic = coded_post
        .iter()
        .zip(channel_llr)
        .map(|(&p, &l)| {
            if p.is_infinite() {
                // bit fixed by the trellis alone
                clamp_llr(p)
            } else {
                clamp_llr(p - l)
            }
        })
        .collect();
    BcjrOutput {
        info_llr,
        coded_extrinsic,
    }
}

/// Log-domain demapping metric `−|x − m|²/v` for every alphabet point,
/// with `m = y⟨h⟩*/⟨|h|²⟩` and `v = β/⟨|h|²⟩`. Uniform when `⟨|h|²⟩ = 0`.
pub fn demap_log(y: Complex64, h_mean: Complex64, h_second: f64, noise_var: f64, qam: &SquareQam, out: &mut [f64]) -> (Complex64, f64) {
    if h_second <= 0.0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return (Complex64::new(0.0, 0.0), f64::INFINITY);
    }
    let m = y * h_mean.conj() / h_second;
    let v = noise_var / h_second;
    for (o, x) in out.iter_mut().zip(qam.points()) {
        *o = -(x - m).norm_sqr() / v;
    }
    (m, v)
}

/// Normalised pmf from log weights.
pub fn normalize_log(logw: &[f64]) -> Vec<f64> {
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return vec![1.0 / logw.len() as f64; logw.len()];
    }
    let w: Vec<f64> = logw.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Symbols→bits message through the mapping factor: extrinsic LLR of each
/// label bit given the symbol log-metric and the other bits' priors.
pub fn map_symbol_to_bits(qam: &SquareQam, log_metric: &[f64], bit_prior: &[f64], out: &mut [f64]) {
    let q = qam.bits_per_symbol();
    let probs: Vec<(f64, f64)> = bit_prior.iter().map(|&l| bit_log_probs(l)).collect();
    let mut logw = vec![0.0; qam.size()];
    for (label, w) in logw.iter_mut().enumerate() {
        let mut acc = log_metric[label];
        for (m, &(p0, p1)) in probs.iter().enumerate() {
            acc += if qam.label_bit(label, m) == 0 { p0 } else { p1 };
        }
        *w = acc;
    }
    let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sums = vec![[0.0f64; 2]; q];
    for (label, &w) in logw.iter().enumerate() {
        let e = (w - mx).exp();
        for (m, s) in sums.iter_mut().enumerate() {
            s[qam.label_bit(label, m) as usize] += e;
        }
    }
    for m in 0..q {
        let post = sums[m][0].ln() - sums[m][1].ln();
        let (p0, p1) = probs[m];
        out[m] = clamp_llr(post - (p0 - p1));
    }
}

/// Bits→symbol message: `ln Π_m P(b_m(x))` for every alphabet point.
pub fn map_bits_to_symbol(qam: &SquareQam, bit_prior: &[f64], out: &mut [f64]) {
    let probs: Vec<(f64, f64)> = bit_prior.iter().map(|&l| bit_log_probs(l)).collect();
    for (label, o) in out.iter_mut().enumerate() {
        *o = probs
            .iter()
            .enumerate()
            .map(|(m, &(p0, p1))| if qam.label_bit(label, m) == 0 { p0 } else { p1 })
            .sum();
    }
}

/// `q(x) ∝ demap(x) · m_BP(x)` with its first two moments. Returns `None`
/// in the moments slot when the product underflows everywhere.
pub fn symbol_belief(qam: &SquareQam, demap: &[f64], bp: &[f64]) -> (Vec<f64>, Complex64, f64, bool) {
    let logw: Vec<f64> = demap.iter().zip(bp).map(|(a, b)| a + b).collect();
    let degenerate = !logw.iter().any(|v| v.is_finite());
    let pmf = normalize_log(&logw);
    let mut mean = Complex64::new(0.0, 0.0);
    let mut second = 0.0;
    for (p, x) in pmf.iter().zip(qam.points()) {
        mean += x * *p;
        second += p * x.norm_sqr();
    }
    (pmf, mean, second.max(mean.norm_sqr()), degenerate)
}

/// Output of one pass through the decoding subgraph.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftInfo {
    pub demap_mean: Vec<Complex64>,
    pub demap_var: Vec<f64>,
    /// `D × 2^Q`, row per data subcarrier.
    pub symbol_pmf: Vec<f64>,
    pub symbol_mean: Vec<Complex64>,
    pub symbol_second: Vec<f64>,
    /// BCJR extrinsic coded-bit LLRs in interleaved (transmitted) order.
    pub coded_extrinsic: Vec<f64>,
    pub info_llr: Vec<f64>,
    pub info_bits_hat: Vec<u8>,
    pub fallbacks: usize,
}

/// Decoding subgraph for one frame layout.
#[derive(Debug, Clone)]
pub struct Decoder {
    trellis: Trellis,
    interleaver: Interleaver,
    qam: SquareQam,
    data_indices: Vec<usize>,
}

impl Decoder {
    pub fn new(code: &ConvCode, interleaver: Interleaver, qam: SquareQam, data_indices: Vec<usize>) -> Self {
        Decoder {
            trellis: Trellis::new(code),
            interleaver,
            qam,
            data_indices,
        }
    }

    pub fn qam(&self) -> &SquareQam {
        &self.qam
    }

    pub fn data_indices(&self) -> &[usize] {
        &self.data_indices
    }

    pub fn coded_len(&self) -> usize {
        self.data_indices.len() * self.qam.bits_per_symbol()
    }

    pub fn info_len(&self) -> usize {
        self.trellis.info_len(self.coded_len())
    }

    /// Uniform (zero LLR) coded-bit priors.
    pub fn flat_priors(&self) -> Vec<f64> {
        vec![0.0; self.coded_len()]
    }

    /// demap → symbols→bits → deinterleave → BCJR → interleave →
    /// bits→symbols → beliefs. `bit_prior` is the previous pass's BCJR
    /// extrinsic in interleaved order.
    pub fn decode_pass(
        &self,
        y: &[Complex64],
        h_mean: &[Complex64],
        h_second: &[f64],
        noise_var: f64,
        bit_prior: &[f64],
    ) -> SoftInfo {
        let q = self.qam.bits_per_symbol();
        let size = self.qam.size();
        let d = self.data_indices.len();
        let mut demap = vec![0.0; d * size];
        let mut demap_mean = Vec::with_capacity(d);
        let mut demap_var = Vec::with_capacity(d);
        let mut channel_llr = vec![0.0; d * q];
        for (k, &i) in self.data_indices.iter().enumerate() {
            let row = &mut demap[k * size..(k + 1) * size];
            let (m, v) = demap_log(y[i], h_mean[i], h_second[i], noise_var, &self.qam, row);
            demap_mean.push(m);
            demap_var.push(v);
            map_symbol_to_bits(&self.qam, row, &bit_prior[k * q..(k + 1) * q], &mut channel_llr[k * q..(k + 1) * q]);
        }
        let natural = self.interleaver.deinterleave(&channel_llr).expect("interleaver length matches");
        let out = bcjr_decode(&self.trellis, &natural);
        let coded_extrinsic = self.interleaver.interleave(&out.coded_extrinsic).expect("interleaver length matches");

        let mut symbol_pmf = Vec::with_capacity(d * size);
        let mut symbol_mean = Vec::with_capacity(d);
        let mut symbol_second = Vec::with_capacity(d);
        let mut fallbacks = 0;
        let mut bp = vec![0.0; size];
        for k in 0..d {
            map_bits_to_symbol(&self.qam, &coded_extrinsic[k * q..(k + 1) * q], &mut bp);
            let (pmf, m, s, degenerate) = symbol_belief(&self.qam, &demap[k * size..(k + 1) * size], &bp);
            if degenerate {
                fallbacks += 1;
            }
            symbol_pmf.extend(pmf);
            symbol_mean.push(m);
            symbol_second.push(s);
        }
        let info_bits_hat = out.info_llr.iter().map(|&l| u8::from(l < 0.0)).collect();
        SoftInfo {
            demap_mean,
            demap_var,
            symbol_pmf,
            symbol_mean,
            symbol_second,
            coded_extrinsic,
            info_llr: out.info_llr,
            info_bits_hat,
            fallbacks,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_normal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (ConvCode, Trellis) {
        let code = ConvCode::new(&[0o7, 0o5]).unwrap();
        let t = Trellis::new(&code);
        (code, t)
    }

    fn bpsk_llrs(bits: &[u8], sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
        bits.iter()
            .map(|&b| {
                let s = if b == 0 { 1.0 } else { -1.0 };
                let n: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
                2.0 * (s + sigma * n) / (sigma * sigma)
            })
            .collect()
    }

    /// Bitwise marginals by enumerating every codeword.
    fn brute_force(code: &ConvCode, k: usize, llr: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut info = vec![[f64::NEG_INFINITY; 2]; k];
        let mut coded_ext = vec![[f64::NEG_INFINITY; 2]; llr.len()];
        for word in 0..(1u32 << k) {
            let u: Vec<u8> = (0..k).map(|i| ((word >> i) & 1) as u8).collect();
            let c = code.encode(&u);
            let metric: Vec<f64> = c.iter().zip(llr).map(|(&b, &l)| if b == 0 { 0.5 * l } else { -0.5 * l }).collect();
            let total: f64 = metric.iter().sum();
            for i in 0..k {
                let e = &mut info[i][u[i] as usize];
                *e = log_add(*e, total);
            }
            for j in 0..c.len() {
                let e = &mut coded_ext[j][c[j] as usize];
                *e = log_add(*e, total - metric[j]);
            }
        }
        (
            info.iter().map(|v| v[0] - v[1]).collect(),
            coded_ext.iter().map(|v| v[0] - v[1]).collect(),
        )
    }

    #[test]
    fn toy_code_noiseless_recovery() {
        let (code, t) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let u: Vec<u8> = (0..6).map(|_| rng.random_range(0..2)).collect();
            let c = code.encode(&u);
            let llr: Vec<f64> = c.iter().map(|&b| if b == 0 { 8.0 } else { -8.0 }).collect();
            let out = bcjr_decode(&t, &llr);
            let hat: Vec<u8> = out.info_llr.iter().map(|&l| u8::from(l < 0.0)).collect();
            assert_eq!(hat, u);
        }
    }

    #[test]
    fn zero_llrs_give_zero_extrinsic() {
        let (_, t) = toy();
        let out = bcjr_decode(&t, &[0.0; 16]);
        assert!(out.info_llr.iter().all(|&l| l.abs() < 1e-12));
        // the last coded bits of a terminated code are not free, but with
        // flat inputs every bit that depends on an information bit is
        assert!(out.coded_extrinsic.iter().all(|&l| l.abs() < 1e-12));
        let std = Trellis::new(&ConvCode::standard());
        let out = bcjr_decode(&std, &vec![0.0; 4000]);
        assert!(out.info_llr.iter().all(|&l| l.abs() < 1e-9));
    }

    #[test]
    fn matches_enumeration() {
        let (code, t) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in [3usize, 6, 10] {
            for _ in 0..10 {
                let u: Vec<u8> = (0..k).map(|_| rng.random_range(0..2)).collect();
                let llr = bpsk_llrs(&code.encode(&u), 0.9, &mut rng);
                let out = bcjr_decode(&t, &llr);
                let (info, ext) = brute_force(&code, k, &llr);
                for (a, b) in out.info_llr.iter().zip(&info) {
                    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                }
                for (a, b) in out.coded_extrinsic.iter().zip(&ext) {
                    let b = clamp_llr(*b);
                    assert!((a - b).abs() < 1e-9, "extrinsic {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn standard_code_error_free_at_zero_noise() {
        let code = ConvCode::standard();
        let t = Trellis::new(&code);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<u8> = (0..200).map(|_| rng.random_range(0..2)).collect();
        let llr: Vec<f64> = code.encode(&u).iter().map(|&b| if b == 0 { 20.0 } else { -20.0 }).collect();
        let out = bcjr_decode(&t, &llr);
        let hat: Vec<u8> = out.info_llr.iter().map(|&l| u8::from(l < 0.0)).collect();
        assert_eq!(hat, u);
    }

    #[test]
    fn demap_cases() {
        let qam = SquareQam::qam256();
        let mut out = vec![0.0; 256];
        let h = Complex64::new(0.6, -0.8);
        for label in [0, 17, 128, 255] {
            let x = qam.point(label);
            let y = h * x;
            demap_log(y, h, h.norm_sqr(), 1e-4, &qam, &mut out);
            let pmf = normalize_log(&out);
            let best = (0..256).max_by(|&a, &b| pmf[a].total_cmp(&pmf[b])).unwrap();
            assert_eq!(best, label);
            // a common phase rotation of y and h leaves the argmax alone
            let rot = Complex64::from_polar(1.0, 1.1);
            demap_log(y * rot, h * rot, h.norm_sqr(), 1e-4, &qam, &mut out);
            let pmf2 = normalize_log(&out);
            let best2 = (0..256).max_by(|&a, &b| pmf2[a].total_cmp(&pmf2[b])).unwrap();
            assert_eq!(best2, label);
        }
        demap_log(Complex64::new(1.0, 1.0), h, 1.0, 1e12, &qam, &mut out);
        let pmf = normalize_log(&out);
        assert!(pmf.iter().all(|&p| (p - 1.0 / 256.0).abs() < 1e-9));
        demap_log(Complex64::new(1.0, 1.0), h, 0.0, 1.0, &qam, &mut out);
        assert!(normalize_log(&out).iter().all(|&p| (p - 1.0 / 256.0).abs() < 1e-15));
    }

    #[test]
    fn mapper_uniform_and_delta() {
        let qam = SquareQam::qam256();
        let mut bits = vec![0.0; 8];
        map_symbol_to_bits(&qam, &[0.0; 256], &[0.0; 8], &mut bits);
        assert!(bits.iter().all(|&l| l.abs() < 1e-12));
        let mut sym = vec![0.0; 256];
        map_bits_to_symbol(&qam, &[0.0; 8], &mut sym);
        let pmf = normalize_log(&sym);
        assert!(pmf.iter().all(|&p| (p - 1.0 / 256.0).abs() < 1e-15));

        let label = 0b1011_0010;
        let mut delta = vec![f64::NEG_INFINITY; 256];
        delta[label] = 0.0;
        map_symbol_to_bits(&qam, &delta, &[0.0; 8], &mut bits);
        for (m, &l) in bits.iter().enumerate() {
            let b = qam.label_bit(label, m);
            assert_eq!(l, if b == 0 { LLR_CLAMP } else { -LLR_CLAMP });
        }
    }

    #[test]
    fn mapper_matches_enumeration() {
        let qam = SquareQam::qam256();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let prior: Vec<f64> = (0..8).map(|_| (rng.random::<f64>() - 0.5) * 6.0).collect();
            let metric: Vec<f64> = (0..256).map(|_| -rng.random::<f64>() * 10.0).collect();
            let mut sym = vec![0.0; 256];
            map_bits_to_symbol(&qam, &prior, &mut sym);
            for label in 0..256 {
                // Σ over all 2⁸ bit patterns of 1[pattern = label] Π P(b_m)
                let mut s = 0.0;
                for pattern in 0..256usize {
                    if pattern != label {
                        continue;
                    }
                    let mut p = 1.0;
                    for m in 0..8 {
                        let p0 = 1.0 / (1.0 + (-prior[m]).exp());
                        p *= if qam.label_bit(pattern, m) == 0 { p0 } else { 1.0 - p0 };
                    }
                    s += p;
                }
                assert!((sym[label].exp() - s).abs() < 1e-12);
            }
            let mut ext = vec![0.0; 8];
            map_symbol_to_bits(&qam, &metric, &prior, &mut ext);
            for m in 0..8 {
                let mut num = [0.0; 2];
                for label in 0..256 {
                    let mut p = metric[label].exp();
                    for mm in 0..8 {
                        if mm == m {
                            continue;
                        }
                        let p0 = 1.0 / (1.0 + (-prior[mm]).exp());
                        p *= if qam.label_bit(label, mm) == 0 { p0 } else { 1.0 - p0 };
                    }
                    num[qam.label_bit(label, m) as usize] += p;
                }
                assert!((ext[m] - (num[0] / num[1]).ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn beliefs() {
        let qam = SquareQam::qam256();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let demap: Vec<f64> = (0..256).map(|_| -rng.random::<f64>() * 5.0).collect();
        let (pmf, _, _, _) = symbol_belief(&qam, &demap, &[0.0; 256]);
        let direct = normalize_log(&demap);
        assert!(pmf.iter().zip(&direct).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let mut delta = vec![f64::NEG_INFINITY; 256];
        delta[42] = 0.0;
        let (_, m, s, degenerate) = symbol_belief(&qam, &delta, &delta);
        assert!(!degenerate);
        assert!((m - qam.point(42)).norm() < 1e-15);
        assert!((s - m.norm_sqr()).abs() < 1e-15);

        let mut other = vec![f64::NEG_INFINITY; 256];
        other[7] = 0.0;
        let (pmf, _, _, degenerate) = symbol_belief(&qam, &delta, &other);
        assert!(degenerate);
        assert!(pmf.iter().all(|&p| (p - 1.0 / 256.0).abs() < 1e-15));

        for _ in 0..2000 {
            let a: Vec<f64> = (0..256).map(|_| -rng.random::<f64>() * 30.0).collect();
            let b: Vec<f64> = (0..256).map(|_| -rng.random::<f64>() * 30.0).collect();
            let (_, m, s, _) = symbol_belief(&qam, &a, &b);
            assert!(s >= m.norm_sqr());
        }
    }

    fn decoder_fixture() -> (crate::tx::Transmitter, Decoder) {
        let cfg = crate::config::SystemConfig::table_one();
        let tx = crate::tx::Transmitter::new(&cfg).unwrap();
        let dec = Decoder::new(&tx.code, tx.interleaver.clone(), tx.qam.clone(), tx.data_indices.clone());
        (tx, dec)
    }

    #[test]
    fn genie_decode_pass() {
        let (tx, dec) = decoder_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = tx.random_info_bits(&mut rng);
        let frame = tx.build_frame(&u, 9).unwrap();
        let h: Vec<Complex64> = (0..601).map(|_| complex_normal(1.0, &mut rng)).collect();
        let beta = 1e-3;
        let y: Vec<Complex64> = frame.symbols.iter().zip(&h).map(|(x, hh)| x * hh + complex_normal(beta, &mut rng)).collect();
        let second: Vec<f64> = h.iter().map(|v| v.norm_sqr()).collect();
        let out = dec.decode_pass(&y, &h, &second, beta, &dec.flat_priors());
        assert_eq!(out.info_bits_hat, u);
        let again = dec.decode_pass(&y, &h, &second, beta, &dec.flat_priors());
        assert_eq!(out, again);
        assert!(out.symbol_pmf.chunks(256).all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert!(out.symbol_mean.iter().zip(&out.symbol_second).all(|(m, &s)| s >= m.norm_sqr()));
    }

    #[test]
    fn no_channel_information() {
        let (tx, dec) = decoder_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = tx.random_info_bits(&mut rng);
        let frame = tx.build_frame(&u, 9).unwrap();
        let zeros = vec![Complex64::new(0.0, 0.0); 601];
        let out = dec.decode_pass(&frame.symbols, &zeros, &vec![0.0; 601], 1.0, &dec.flat_priors());
        let errors = out.info_bits_hat.iter().zip(&u).filter(|(a, b)| a != b).count();
        let ber = errors as f64 / u.len() as f64;
        assert!((ber - 0.5).abs() < 0.05, "ber {ber}");
    }
}
