//! Constant-Q transform via direct windowed complex-sinusoid kernels.
//!
//! Each bin k has center frequency `f_min * 2^(k / bins_per_octave)` and a
//! Hann-windowed kernel of `ceil(Q * sr / f_k)` samples, Q = 1/(2^(1/bpo)-1).
//! Kernels are correlated with the signal at every frame center; no octave
//! downsampling is performed, which keeps the transform trivially equal to
//! its own defining inner products.

use super::Waveform;
use crate::error::{PolyError, Result};
use ndarray::Array2;
use rustfft::num_complex::Complex64;
use std::f64::consts::PI;

/// Default CQT bin count.
pub const DEFAULT_CQT_BINS: usize = 128;
/// Default bins per octave.
pub const DEFAULT_CQT_BPO: usize = 24;
/// Default lowest center frequency, C1.
pub const DEFAULT_CQT_FMIN: f64 = 32.7;
/// Hop between frame centers, in samples.
pub const DEFAULT_CQT_HOP: usize = 512;

/// Per-frame constant-Q magnitudes, `(1 + len/hop) x n_bins`.
///
/// Kernels are normalized so a unit-amplitude sine at a bin's center
/// frequency produces a magnitude near 1.0 at that bin; the transform is
/// positively homogeneous of degree 1 in the input.
pub fn cqt(w: &Waveform, n_bins: usize, bins_per_octave: usize, f_min: f64) -> Result<Array2<f64>> {
    if w.channels() != 1 {
        return Err(PolyError::InvalidInput(
            "cqt expects mono input; downmix first".into(),
        ));
    }
    if n_bins == 0 || bins_per_octave == 0 {
        return Err(PolyError::InvalidInput(
            "n_bins and bins_per_octave must be positive".into(),
        ));
    }
    if f_min <= 0.0 {
        return Err(PolyError::InvalidInput("f_min must be positive".into()));
    }
    let sr = w.sample_rate() as f64;
    let top = f_min * 2f64.powf(n_bins as f64 / bins_per_octave as f64);
    if top > sr / 2.0 {
        return Err(PolyError::InvalidInput(format!(
            "cqt range tops out at {top:.1} Hz, beyond Nyquist {:.1} Hz",
            sr / 2.0
        )));
    }

    let q = 1.0 / (2f64.powf(1.0 / bins_per_octave as f64) - 1.0);
    let hop = DEFAULT_CQT_HOP;
    let x = w.samples();
    let num_frames = 1 + x.len() / hop;

    // precompute one kernel per bin: hann(n) * exp(-2 pi i f (n - N/2) / sr) * 2/sum(hann)
    let kernels: Vec<Vec<Complex64>> = (0..n_bins)
        .map(|k| {
            let f_k = f_min * 2f64.powf(k as f64 / bins_per_octave as f64);
            let n_k = (q * sr / f_k).ceil() as usize;
            let mut kernel = Vec::with_capacity(n_k);
            let mut win_sum = 0.0;
            for n in 0..n_k {
                let win = 0.5 - 0.5 * (2.0 * PI * n as f64 / n_k as f64).cos();
                win_sum += win;
                let phase = -2.0 * PI * f_k * (n as f64 - n_k as f64 / 2.0) / sr;
                kernel.push(Complex64::new(phase.cos(), phase.sin()) * win);
            }
            let norm = 2.0 / win_sum;
            kernel.iter_mut().for_each(|c| *c *= norm);
            kernel
        })
        .collect();

    let mut out = Array2::<f64>::zeros((num_frames, n_bins));
    for t in 0..num_frames {
        let center = (t * hop) as isize;
        for (k, kernel) in kernels.iter().enumerate() {
            let half = kernel.len() as isize / 2;
            let start = center - half;
            let mut acc = Complex64::new(0.0, 0.0);
            let lo = (-start).max(0) as usize;
            let hi = kernel.len().min((x.len() as isize - start).max(0) as usize);
            for (n, c) in kernel.iter().enumerate().take(hi).skip(lo) {
                acc += c * x[(start + n as isize) as usize];
            }
            out[(t, k)] = acc.norm();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, secs: f64, sr: u32) -> Waveform {
        let n = (secs * sr as f64) as usize;
        Waveform::mono(
            (0..n)
                .map(|i| (2.0 * PI * freq * i as f64 / sr as f64).sin())
                .collect(),
            sr,
        )
        .unwrap()
    }

    #[test]
    fn zero_signal_gives_zero_matrix() {
        let w = Waveform::mono(vec![0.0; 16_000], 16_000).unwrap();
        let m = cqt(&w, 48, 12, 55.0).unwrap();
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positive_homogeneity() {
        let w = sine(440.0, 0.6, 16_000);
        let scaled = Waveform::mono(w.samples().iter().map(|v| 2.0 * v).collect(), 16_000).unwrap();
        let a = cqt(&w, 48, 12, 55.0).unwrap();
        let b = cqt(&scaled, 48, 12, 55.0).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            let rel = (y - 2.0 * x).abs() / (1.0 + 2.0 * x);
            assert!(rel < 1e-6, "{y} vs 2*{x}");
        }
    }

    #[test]
    fn sine_at_bin_center_wins_argmax_on_interior_frames() {
        let (n_bins, bpo, f_min, sr) = (48usize, 12usize, 55.0f64, 16_000u32);
        let bin = 26usize; // 55 * 2^(26/12) ~ 247.5 Hz
        let freq = f_min * 2f64.powf(bin as f64 / bpo as f64);
        let w = sine(freq, 1.2, sr);
        let m = cqt(&w, n_bins, bpo, f_min).unwrap();

        // interior frames: longest kernel (bin 0) fully inside the signal
        let q = 1.0 / (2f64.powf(1.0 / bpo as f64) - 1.0);
        let longest = (q * sr as f64 / f_min).ceil() as usize;
        let guard = longest / (2 * DEFAULT_CQT_HOP) + 1;
        let frames = m.nrows();
        assert!(frames > 2 * guard + 2, "signal too short for interior test");
        for t in guard..frames - guard {
            let row = m.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, bin, "frame {t}");
            // unit sine at center should respond near 1.0
            assert!((row[bin] - 1.0).abs() < 0.05, "response {}", row[bin]);
        }
    }

    #[test]
    fn matches_brute_force_inner_products() {
        // oracle: recompute a few frames with plain loops and textbook formulas
        let (n_bins, bpo, f_min, sr) = (24usize, 12usize, 110.0f64, 16_000u32);
        let w = sine(220.0, 0.5, sr);
        let m = cqt(&w, n_bins, bpo, f_min).unwrap();
        let x = w.samples();
        let q = 1.0 / (2f64.powf(1.0 / bpo as f64) - 1.0);
        for &t in &[3usize, 5, 7] {
            let center = (t * DEFAULT_CQT_HOP) as isize;
            for k in 0..n_bins {
                let f_k = f_min * 2f64.powf(k as f64 / bpo as f64);
                let n_k = (q * sr as f64 / f_k).ceil() as usize;
                let mut re = 0.0;
                let mut im = 0.0;
                let mut win_sum = 0.0;
                for n in 0..n_k {
                    let win = 0.5 - 0.5 * (2.0 * PI * n as f64 / n_k as f64).cos();
                    win_sum += win;
                    let idx = center - n_k as isize / 2 + n as isize;
                    if idx < 0 || idx >= x.len() as isize {
                        continue;
                    }
                    let ph = -2.0 * PI * f_k * (n as f64 - n_k as f64 / 2.0) / sr as f64;
                    re += win * ph.cos() * x[idx as usize];
                    im += win * ph.sin() * x[idx as usize];
                }
                let expect = 2.0 / win_sum * (re * re + im * im).sqrt();
                let got = m[(t, k)];
                assert!(
                    (got - expect).abs() < 1e-9,
                    "frame {t} bin {k}: {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn range_beyond_nyquist_rejected() {
        let w = sine(440.0, 0.2, 16_000);
        assert!(cqt(&w, 128, 12, 32.7).is_err()); // 32.7 * 2^(128/12) >> 8 kHz
        assert!(cqt(&w, DEFAULT_CQT_BINS, DEFAULT_CQT_BPO, DEFAULT_CQT_FMIN).is_ok());
    }
}
