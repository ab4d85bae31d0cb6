//! Harmonic/percussive separation by median filtering with hard masks.
//!
//! The magnitude spectrogram is median-filtered along time (harmonic
//! enhancement) and along frequency (percussive enhancement); hard masks
//! `M_h = [H >= margin * P]` and `M_p = [P >= margin * H]` gate the complex
//! bins, which are then inverted back to waveforms. With margin > 1 the two
//! masks are disjoint except where both enhanced magnitudes are zero.

use super::super::signal::{istft, ComplexSpectrogram, Waveform};
use crate::error::{PolyError, Result};
use ndarray::Array2;

/// Median filter lengths in frames (time axis) and bins (frequency axis).
#[derive(Debug, Clone, Copy)]
pub struct MedianWidths {
    pub time: usize,
    pub frequency: usize,
}

impl Default for MedianWidths {
    fn default() -> Self {
        Self {
            time: 31,
            frequency: 31,
        }
    }
}

/// Split into (harmonic, percussive) waveforms with default 31x31 medians.
pub fn hpss(s: &ComplexSpectrogram, margin: f64) -> Result<(Waveform, Waveform)> {
    hpss_with(s, margin, MedianWidths::default())
}

/// Split with explicit median widths.
pub fn hpss_with(
    s: &ComplexSpectrogram,
    margin: f64,
    widths: MedianWidths,
) -> Result<(Waveform, Waveform)> {
    if margin < 1.0 {
        return Err(PolyError::InvalidInput(format!(
            "margin must be >= 1, got {margin}"
        )));
    }
    if widths.time == 0 || widths.frequency == 0 {
        return Err(PolyError::InvalidInput("median widths must be >= 1".into()));
    }
    let (t, f) = s.bins().dim();
    if t < widths.time || f < widths.frequency {
        return Err(PolyError::Degenerate(format!(
            "spectrogram {t}x{f} smaller than median widths {}x{}",
            widths.time, widths.frequency
        )));
    }

    let mag = s.magnitude();
    let harmonic_mag = median_along_time(&mag, widths.time);
    let percussive_mag = median_along_frequency(&mag, widths.frequency);

    let mut h_bins = s.bins().clone();
    let mut p_bins = s.bins().clone();
    for i in 0..t {
        for j in 0..f {
            let h = harmonic_mag[(i, j)];
            let p = percussive_mag[(i, j)];
            if h < margin * p {
                h_bins[(i, j)] *= 0.0;
            }
            if p < margin * h {
                p_bins[(i, j)] *= 0.0;
            }
        }
    }

    let harmonic = istft(&s.with_bins(h_bins)?)?;
    let percussive = istft(&s.with_bins(p_bins)?)?;
    Ok((harmonic, percussive))
}

/// Binary masks as produced by the hard-margin rule, for inspection/tests.
pub fn hpss_masks(
    s: &ComplexSpectrogram,
    margin: f64,
    widths: MedianWidths,
) -> Result<(Array2<u8>, Array2<u8>)> {
    if margin < 1.0 {
        return Err(PolyError::InvalidInput(format!(
            "margin must be >= 1, got {margin}"
        )));
    }
    let mag = s.magnitude();
    let h = median_along_time(&mag, widths.time);
    let p = median_along_frequency(&mag, widths.frequency);
    let mut mh = Array2::<u8>::zeros(mag.dim());
    let mut mp = Array2::<u8>::zeros(mag.dim());
    for ((i, j), _) in mag.indexed_iter() {
        mh[(i, j)] = u8::from(h[(i, j)] >= margin * p[(i, j)]);
        mp[(i, j)] = u8::from(p[(i, j)] >= margin * h[(i, j)]);
    }
    Ok((mh, mp))
}

fn median_of(scratch: &mut [f64]) -> f64 {
    scratch.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    scratch[scratch.len() / 2]
}

/// Median over a truncated window of `width` frames centered per bin.
fn median_along_time(mag: &Array2<f64>, width: usize) -> Array2<f64> {
    let (t, f) = mag.dim();
    let half = width / 2;
    let mut out = Array2::<f64>::zeros((t, f));
    let mut scratch = Vec::with_capacity(width);
    for j in 0..f {
        for i in 0..t {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(t);
            scratch.clear();
            for k in lo..hi {
                scratch.push(mag[(k, j)]);
            }
            out[(i, j)] = median_of(&mut scratch);
        }
    }
    out
}

/// Median over a truncated window of `width` bins centered per frame.
fn median_along_frequency(mag: &Array2<f64>, width: usize) -> Array2<f64> {
    let (t, f) = mag.dim();
    let half = width / 2;
    let mut out = Array2::<f64>::zeros((t, f));
    let mut scratch = Vec::with_capacity(width);
    for i in 0..t {
        for j in 0..f {
            let lo = j.saturating_sub(half);
            let hi = (j + half + 1).min(f);
            scratch.clear();
            for k in lo..hi {
                scratch.push(mag[(i, k)]);
            }
            out[(i, j)] = median_of(&mut scratch);
        }
    }
    out
}
