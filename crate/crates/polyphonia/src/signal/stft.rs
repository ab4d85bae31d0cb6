//! Short-time Fourier transform and its inverse.
//!
//! Frames are centered: the signal is reflect-padded by `window_size / 2` on
//! both sides, so frame `t` is centered on sample `t * hop`. With a periodic
//! Hann window the weighted overlap-add inverse reconstructs the interior of
//! the signal to floating-point accuracy for any hop <= window.

use super::{ComplexSpectrogram, Waveform};
use crate::error::{PolyError, Result};
use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Periodic Hann window of length `n`.
pub(crate) fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Fold an arbitrary index into [0, n) by reflection (no edge repeat),
/// matching reflect padding semantics.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Compute the centered STFT of a mono waveform.
///
/// The output has `1 + len / hop` frames and `window_size / 2 + 1` bins.
pub fn stft(w: &Waveform, window_size: usize, hop: usize) -> Result<ComplexSpectrogram> {
    if w.channels() != 1 {
        return Err(PolyError::InvalidInput(
            "stft expects mono input; downmix first".into(),
        ));
    }
    if hop == 0 || window_size < hop {
        return Err(PolyError::InvalidInput(format!(
            "need window_size >= hop > 0, got window {window_size} hop {hop}"
        )));
    }
    let x = w.samples();
    let len = x.len();
    let pad = window_size / 2;
    let num_frames = 1 + len / hop;
    let num_bins = window_size / 2 + 1;
    let window = hann_window(window_size);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(window_size);
    let mut buf = vec![Complex64::ZERO; window_size];
    let mut bins = Array2::<Complex64>::zeros((num_frames, num_bins));

    for t in 0..num_frames {
        let start = t as isize * hop as isize - pad as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            let src = reflect_index(start + i as isize, len);
            *b = Complex64::new(x[src] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, b) in buf.iter().take(num_bins).enumerate() {
            bins[(t, k)] = *b;
        }
    }

    ComplexSpectrogram::from_parts(bins, hop, window_size, w.sample_rate(), len)
}

/// Invert a centered STFT by weighted overlap-add.
///
/// Reconstruction divides by the accumulated squared window, then trims the
/// center padding so the output length equals the source length.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let window_size = s.window_size();
    let hop = s.frame_hop();
    let num_frames = s.num_frames();
    let num_bins = s.num_bins();
    if num_bins != window_size / 2 + 1 {
        return Err(PolyError::ShapeMismatch(
            "bin count inconsistent with window size".into(),
        ));
    }
    let pad = window_size / 2;
    let padded_len = (num_frames - 1) * hop + window_size;
    if s.source_len() + 2 * pad > padded_len + hop {
        return Err(PolyError::ShapeMismatch(
            "frame count inconsistent with source length".into(),
        ));
    }
    let window = hann_window(window_size);

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(window_size);
    let mut buf = vec![Complex64::ZERO; window_size];
    let mut acc = vec![0.0f64; padded_len];
    let mut norm = vec![0.0f64; padded_len];
    let scale = 1.0 / window_size as f64;

    for t in 0..num_frames {
        buf[..num_bins]
            .iter_mut()
            .enumerate()
            .for_each(|(k, b)| *b = s.bins()[(t, k)]);
        // rebuild the negative frequencies by conjugate symmetry
        for k in 1..num_bins - 1 {
            buf[window_size - k] = buf[k].conj();
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..window_size {
            let y = buf[i].re * scale;
            acc[start + i] += y * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }

    let mut out = Vec::with_capacity(s.source_len());
    for i in 0..s.source_len() {
        let j = pad + i;
        let n = norm[j];
        out.push(if n > 1e-12 { acc[j] / n } else { 0.0 });
    }
    Waveform::mono(out, s.sample_rate())
}
