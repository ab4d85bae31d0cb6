//! Mel filterbanks and log-mel spectra.
//!
//! Filters are triangles with corners at mel-equally-spaced frequencies (HTK
//! mel formula), peak-normalized to 1 (no area normalization). Because a
//! frequency is covered by at most two adjacent triangles whose ramps sum to
//! one, every column of the weight matrix sums to at most 1.

use super::ComplexSpectrogram;
use crate::error::{PolyError, Result};
use ndarray::Array2;

/// HTK mel scale: m = 2595 log10(1 + f / 700).
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

/// Inverse of [`hz_to_mel`].
pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank: an M x F non-negative weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Array2<f64>,
    centers_hz: Vec<f64>,
    f_min: f64,
    f_max: f64,
    sample_rate: u32,
    window_size: usize,
}

impl MelFilterbank {
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn mel_bins(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_freq_bins(&self) -> usize {
        self.weights.ncols()
    }

    /// Filter center frequencies in Hz, strictly increasing.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn f_min(&self) -> f64 {
        self.f_min
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    /// Pool a T x F nonnegative frame matrix (magnitude or power) into T x M.
    pub fn apply(&self, frames: &Array2<f64>) -> Result<Array2<f64>> {
        if frames.ncols() != self.num_freq_bins() {
            return Err(PolyError::ShapeMismatch(format!(
                "spectrogram has {} bins, filterbank expects {}",
                frames.ncols(),
                self.num_freq_bins()
            )));
        }
        Ok(frames.dot(&self.weights.t()))
    }
}

/// Design a triangular mel filterbank for an STFT with `window_size` samples
/// at `sample_rate`.
pub fn mel_filterbank(
    sample_rate: u32,
    window_size: usize,
    mel_bins: usize,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(0.0..nyquist).contains(&f_min) || f_max <= f_min || f_max > nyquist {
        return Err(PolyError::Degenerate(format!(
            "need 0 <= f_min < f_max <= {nyquist}, got [{f_min}, {f_max}]"
        )));
    }
    if mel_bins < 2 {
        return Err(PolyError::InvalidInput("mel_bins must be >= 2".into()));
    }
    if window_size < 2 {
        return Err(PolyError::InvalidInput("window_size must be >= 2".into()));
    }
    let num_bins = window_size / 2 + 1;

    // M + 2 corner frequencies, equally spaced on the mel axis
    let mel_lo = hz_to_mel(f_min);
    let mel_hi = hz_to_mel(f_max);
    let corners: Vec<f64> = (0..mel_bins + 2)
        .map(|j| mel_to_hz(mel_lo + (mel_hi - mel_lo) * j as f64 / (mel_bins + 1) as f64))
        .collect();

    let bin_hz: Vec<f64> = (0..num_bins)
        .map(|k| k as f64 * sample_rate as f64 / window_size as f64)
        .collect();

    let mut weights = Array2::<f64>::zeros((mel_bins, num_bins));
    for m in 0..mel_bins {
        let (left, center, right) = (corners[m], corners[m + 1], corners[m + 2]);
        if center - left <= 0.0 || right - center <= 0.0 {
            return Err(PolyError::Degenerate(format!(
                "mel corners collapse near {center} Hz; range too narrow for {mel_bins} bins"
            )));
        }
        for (k, &f) in bin_hz.iter().enumerate() {
            let rising = (f - left) / (center - left);
            let falling = (right - f) / (right - center);
            let w = rising.min(falling).max(0.0);
            weights[(m, k)] = w;
        }
        if weights.row(m).iter().all(|&w| w == 0.0) {
            return Err(PolyError::Degenerate(format!(
                "mel filter {m} covers no FFT bin; widen the range or reduce mel_bins"
            )));
        }
    }

    Ok(MelFilterbank {
        weights,
        centers_hz: corners[1..=mel_bins].to_vec(),
        f_min,
        f_max,
        sample_rate,
        window_size,
    })
}

/// A T x M mel-domain spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Array2<f64>,
    log_scaled: bool,
    epsilon: f64,
}

impl MelSpectrogram {
    pub fn new(values: Array2<f64>, log_scaled: bool, epsilon: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(PolyError::Degenerate("empty mel spectrogram".into()));
        }
        if epsilon <= 0.0 {
            return Err(PolyError::InvalidInput("epsilon must be > 0".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PolyError::InvalidInput(
                "mel spectrogram contains non-finite values".into(),
            ));
        }
        if log_scaled {
            let floor = epsilon.ln() - 1e-9;
            if values.iter().any(|&v| v < floor) {
                return Err(PolyError::InvalidInput(
                    "log-scaled values fall below log(epsilon)".into(),
                ));
            }
        }
        Ok(Self {
            values,
            log_scaled,
            epsilon,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mel_bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn log_scaled(&self) -> bool {
        self.log_scaled
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Log-mel spectrogram: `ln(filterbank . |S| + epsilon)` per frame.
pub fn log_mel(
    s: &ComplexSpectrogram,
    fb: &MelFilterbank,
    epsilon: f64,
) -> Result<MelSpectrogram> {
    if epsilon <= 0.0 {
        return Err(PolyError::InvalidInput("epsilon must be > 0".into()));
    }
    let pooled = fb.apply(&s.magnitude())?;
    MelSpectrogram::new(pooled.mapv(|v| (v + epsilon).ln()), true, epsilon)
}
