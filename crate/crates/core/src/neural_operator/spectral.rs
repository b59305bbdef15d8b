//! Truncated Fourier transforms over the time axis.
//!
//! Only the lowest `modes` coefficients of the real-input transform survive
//! the spectral layer, so both analysis and synthesis are evaluated directly
//! in O(M * modes * channels) with precomputed twiddles — algebraically equal
//! to rFFT -> truncate -> inverse rFFT, and cheaper than an FFT at the sizes
//! used here. The synthesis takes the real-part convention for the DC bin
//! (a complex bin 0 contributes only its real part), matching how an inverse
//! real FFT consumes a spectrum produced by complex mode mixing.
//!
//! `naive_spectral_conv` is the independent O(M^2) full-spectrum oracle used
//! by the test suite; it shares no code with the fast path.

use crate::linalg::{axpy, axpy2};
use crate::scalar::Real;

/// cos/sin tables for one signal length: entry [k*m + j] holds the angle
/// 2 pi k j / m, reduced exactly in integers before the trig call.
pub struct TwiddleTables<S> {
    pub m: usize,
    pub cos: Vec<S>,
    pub sin: Vec<S>,
    /// Synthesis weights: 1/m for the DC bin, 2/m for the rest.
    pub g: Vec<S>,
    /// Unit weights, for the scale-free passes.
    pub ones: Vec<S>,
}

impl<S: Real> TwiddleTables<S> {
    fn build(m: usize, modes: usize) -> Self {
        let mut cos = Vec::with_capacity(modes * m);
        let mut sin = Vec::with_capacity(modes * m);
        for k in 0..modes {
            for j in 0..m {
                let red = (k * j) % m;
                if 2 * red == m {
                    // Half turn: pin the values so the Nyquist row is exact.
                    cos.push(S::of(-1.0));
                    sin.push(S::zero());
                } else {
                    let theta = 2.0 * std::f64::consts::PI * red as f64 / m as f64;
                    cos.push(S::of(theta.cos()));
                    sin.push(S::of(theta.sin()));
                }
            }
        }
        // Bin 0 (and the Nyquist bin when it is retained) appears once in the
        // full spectrum; every other retained bin stands for itself plus its
        // Hermitian mirror.
        let mut g = vec![S::of(2.0 / m as f64); modes];
        g[0] = S::of(1.0 / m as f64);
        for (k, g) in g.iter_mut().enumerate() {
            if 2 * k == m {
                *g = S::of(1.0 / m as f64);
            }
        }
        TwiddleTables {
            m,
            cos,
            sin,
            g,
            ones: vec![S::one(); modes],
        }
    }
}

/// Lazily built tables per signal length. One cache lives in each workspace,
/// so a filter rollout builds each prefix length once and reuses it across
/// layers and differentiation passes.
pub struct TwiddleCache<S> {
    modes: usize,
    tables: Vec<Option<TwiddleTables<S>>>,
}

impl<S: Real> TwiddleCache<S> {
    pub fn new(modes: usize) -> Self {
        TwiddleCache {
            modes,
            tables: Vec::new(),
        }
    }

    pub fn get(&mut self, m: usize) -> &TwiddleTables<S> {
        if self.tables.len() <= m {
            self.tables.resize_with(m + 1, || None);
        }
        self.tables[m].get_or_insert_with(|| TwiddleTables::build(m, self.modes))
    }
}

/// Analysis-shaped pass: for k < modes,
///   z_re[k][c] += scale[k] * sum_j cos(kj) v[j][c]
///   z_im[k][c] -= scale[k] * sum_j sin(kj) v[j][c]
/// With unit scale this is the truncated DFT of a real signal; with `g` it is
/// the adjoint of `expand`.
pub fn contract<S: Real>(
    v: &[S],
    channels: usize,
    tab: &TwiddleTables<S>,
    scale: &[S],
    z_re: &mut [S],
    z_im: &mut [S],
) {
    let m = tab.m;
    debug_assert_eq!(v.len(), m * channels);
    for (j, row) in v.chunks_exact(channels).enumerate() {
        for (k, &s) in scale.iter().enumerate() {
            let cr = s * tab.cos[k * m + j];
            let si = s * tab.sin[k * m + j];
            axpy(&mut z_re[k * channels..(k + 1) * channels], cr, row);
            axpy(&mut z_im[k * channels..(k + 1) * channels], -si, row);
        }
    }
}

/// Synthesis-shaped pass: v[j][c] += sum_k scale[k] (cos(kj) z_re[k][c]
/// - sin(kj) z_im[k][c]). With `g` this is the truncated inverse real FFT;
/// with unit scale it is the adjoint of `contract`.
pub fn expand<S: Real>(
    z_re: &[S],
    z_im: &[S],
    channels: usize,
    tab: &TwiddleTables<S>,
    scale: &[S],
    v: &mut [S],
) {
    let m = tab.m;
    debug_assert_eq!(v.len(), m * channels);
    for (j, row) in v.chunks_exact_mut(channels).enumerate() {
        for (k, &s) in scale.iter().enumerate() {
            let cr = s * tab.cos[k * m + j];
            let si = -(s * tab.sin[k * m + j]);
            axpy2(
                row,
                cr,
                &z_re[k * channels..(k + 1) * channels],
                si,
                &z_im[k * channels..(k + 1) * channels],
            );
        }
    }
}

/// Complex per-mode channel mixing: z_out[k][o] = sum_c z[k][c] r[k][c][o].
pub fn mix<S: Real>(
    z_re: &[S],
    z_im: &[S],
    r_re: &[S],
    r_im: &[S],
    modes: usize,
    channels: usize,
    out_re: &mut [S],
    out_im: &mut [S],
) {
    for k in 0..modes {
        let zr = &z_re[k * channels..(k + 1) * channels];
        let zi = &z_im[k * channels..(k + 1) * channels];
        let or = &mut out_re[k * channels..(k + 1) * channels];
        let oi = &mut out_im[k * channels..(k + 1) * channels];
        for c in 0..channels {
            let base = (k * channels + c) * channels;
            crate::linalg::zaxpy(
                or,
                oi,
                zr[c],
                zi[c],
                &r_re[base..base + channels],
                &r_im[base..base + channels],
            );
        }
    }
}

/// Independent O(M^2) oracle: full complex DFT, truncate to the lowest
/// `modes` bins (with Hermitian mirrors), per-mode mixing, full inverse DFT,
/// real part. Shares no tables or kernels with the fast path.
pub fn naive_spectral_conv(
    v: &[f64],
    m: usize,
    channels: usize,
    modes: usize,
    r_re: &[f64],
    r_im: &[f64],
) -> Vec<f64> {
    // Full spectrum per channel.
    let mut sp_re = vec![0.0; m * channels];
    let mut sp_im = vec![0.0; m * channels];
    for k in 0..m {
        for j in 0..m {
            let th = -2.0 * std::f64::consts::PI * (k as f64) * (j as f64) / m as f64;
            let (s, c) = th.sin_cos();
            for ch in 0..channels {
                sp_re[k * channels + ch] += v[j * channels + ch] * c;
                sp_im[k * channels + ch] += v[j * channels + ch] * s;
            }
        }
    }
    // Mix retained bins, zero the rest, restore Hermitian mirrors.
    let mut mixed_re = vec![0.0; m * channels];
    let mut mixed_im = vec![0.0; m * channels];
    for k in 0..modes {
        for c in 0..channels {
            let (zr, zi) = (sp_re[k * channels + c], sp_im[k * channels + c]);
            for o in 0..channels {
                let rr = r_re[(k * channels + c) * channels + o];
                let ri = r_im[(k * channels + c) * channels + o];
                mixed_re[k * channels + o] += zr * rr - zi * ri;
                mixed_im[k * channels + o] += zr * ri + zi * rr;
            }
        }
    }
    for k in 1..modes {
        let mk = m - k;
        for o in 0..channels {
            if mk == k {
                // Retained Nyquist bin: real under the inverse-real-FFT convention.
                mixed_im[k * channels + o] = 0.0;
            } else {
                mixed_re[mk * channels + o] = mixed_re[k * channels + o];
                mixed_im[mk * channels + o] = -mixed_im[k * channels + o];
            }
        }
    }
    // DC stays real under the inverse-real-FFT convention.
    for o in 0..channels {
        mixed_im[o] = 0.0;
    }
    // Full inverse transform, real part.
    let mut out = vec![0.0; m * channels];
    for j in 0..m {
        for k in 0..m {
            let th = 2.0 * std::f64::consts::PI * (k as f64) * (j as f64) / m as f64;
            let (s, c) = th.sin_cos();
            for ch in 0..channels {
                out[j * channels + ch] +=
                    (mixed_re[k * channels + ch] * c - mixed_im[k * channels + ch] * s) / m as f64;
            }
        }
    }
    out
}

/// Fast-path spectral convolution (analysis, mix, synthesis) used by tests;
/// the operator itself calls the three stages directly to reuse buffers.
pub fn spectral_conv<S: Real>(
    v: &[S],
    m: usize,
    channels: usize,
    modes: usize,
    r_re: &[S],
    r_im: &[S],
    cache: &mut TwiddleCache<S>,
) -> Vec<S> {
    let kc = modes * channels;
    let mut z_re = vec![S::zero(); kc];
    let mut z_im = vec![S::zero(); kc];
    let mut o_re = vec![S::zero(); kc];
    let mut o_im = vec![S::zero(); kc];
    let mut out = vec![S::zero(); m * channels];
    let tab = cache.get(m);
    contract(v, channels, tab, &tab.ones, &mut z_re, &mut z_im);
    mix(&z_re, &z_im, r_re, r_im, modes, channels, &mut o_re, &mut o_im);
    expand(&o_re, &o_im, channels, tab, &tab.g, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_problem(
        m: usize,
        channels: usize,
        modes: usize,
        seed: u64,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = crate::seed::stream(seed, "spectral", 0);
        let v: Vec<f64> = (0..m * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r_re: Vec<f64> = (0..modes * channels * channels)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        let r_im: Vec<f64> = (0..modes * channels * channels)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        (v, r_re, r_im)
    }

    #[test]
    fn fast_path_matches_naive_dft_oracle() {
        for (m, ch, modes, seed) in [(40, 3, 7, 1), (50, 6, 16, 2), (33, 4, 5, 3)] {
            let (v, r_re, r_im) = random_problem(m, ch, modes, seed);
            let mut cache = TwiddleCache::new(modes);
            let fast = spectral_conv(&v, m, ch, modes, &r_re, &r_im, &mut cache);
            let slow = naive_spectral_conv(&v, m, ch, modes, &r_re, &r_im);
            let scale: f64 = slow.iter().map(|x| x.abs()).fold(1.0, f64::max);
            for (a, b) in fast.iter().zip(&slow) {
                assert!(
                    (a - b).abs() <= 1e-9 * scale,
                    "mismatch {a} vs {b} at m={m} ch={ch} modes={modes}"
                );
            }
        }
    }

    #[test]
    fn low_pass_with_identity_mixing_is_idempotent() {
        let (v, _, _) = random_problem(64, 4, 9, 4);
        let (m, ch, modes) = (64usize, 4usize, 9usize);
        let mut r_re = vec![0.0; modes * ch * ch];
        let r_im = vec![0.0; modes * ch * ch];
        for k in 0..modes {
            for c in 0..ch {
                r_re[(k * ch + c) * ch + c] = 1.0;
            }
        }
        let mut cache = TwiddleCache::new(modes);
        let once = spectral_conv(&v, m, ch, modes, &r_re, &r_im, &mut cache);
        let twice = spectral_conv(&once, m, ch, modes, &r_re, &r_im, &mut cache);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() <= 1e-12, "low-pass not idempotent: {a} vs {b}");
        }
    }

    #[test]
    fn contract_and_expand_are_adjoint() {
        // <contract(v), z> == <v, expand(z)> with matching scales — the
        // identity the backward passes rely on.
        let (m, ch, modes) = (21usize, 3usize, 6usize);
        let mut rng = crate::seed::stream(9, "adjoint", 0);
        let v: Vec<f64> = (0..m * ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let zr: Vec<f64> = (0..modes * ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let zi: Vec<f64> = (0..modes * ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cache = TwiddleCache::new(modes);
        let tab = cache.get(m);
        let mut cv_re = vec![0.0; modes * ch];
        let mut cv_im = vec![0.0; modes * ch];
        contract(&v, ch, tab, &tab.g, &mut cv_re, &mut cv_im);
        let mut ev = vec![0.0; m * ch];
        expand(&zr, &zi, ch, tab, &tab.g, &mut ev);
        let lhs: f64 = cv_re.iter().zip(&zr).map(|(a, b)| a * b).sum::<f64>()
            + cv_im.iter().zip(&zi).map(|(a, b)| a * b).sum::<f64>();
        let rhs: f64 = v.iter().zip(&ev).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
