//! Waveform I/O and time-frequency transforms.

mod cqt;
mod mel;
mod stft;
mod wav;

pub use cqt::{cqt, DEFAULT_CQT_BINS, DEFAULT_CQT_BPO, DEFAULT_CQT_FMIN, DEFAULT_CQT_HOP};
pub use mel::{log_mel, mel_filterbank, MelFilterbank, MelSpectrogram};
pub use stft::{istft, stft};
pub use wav::{read_wav, write_wav, SampleEncoding};

use crate::error::{PolyError, Result};
use ndarray::Array2;
use rustfft::num_complex::Complex64;

/// STFT window length used for acoustic-prior extraction.
pub const PRIOR_WINDOW: usize = 1024;
/// STFT hop used for acoustic-prior extraction.
pub const PRIOR_HOP: usize = 160;
/// Mel band count used for acoustic-prior extraction.
pub const PRIOR_MEL_BINS: usize = 64;
/// Log offset used when compressing mel spectra.
pub const LOG_MEL_EPSILON: f64 = 1e-5;

/// A PCM audio buffer. Stereo data is interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
    channels: u16,
}

impl Waveform {
    /// Build a waveform, enforcing: positive rate, 1 or 2 channels, nonempty
    /// finite samples, length divisible by the channel count.
    pub fn new(samples: Vec<f64>, sample_rate: u32, channels: u16) -> Result<Self> {
        if sample_rate == 0 {
            return Err(PolyError::InvalidInput("sample_rate must be > 0".into()));
        }
        if channels != 1 && channels != 2 {
            return Err(PolyError::InvalidInput(format!(
                "channels must be 1 or 2, got {channels}"
            )));
        }
        if samples.is_empty() {
            return Err(PolyError::InvalidInput("empty waveform".into()));
        }
        if !samples.len().is_multiple_of(channels as usize) {
            return Err(PolyError::InvalidInput(format!(
                "{} samples do not divide into {} channels",
                samples.len(),
                channels
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(PolyError::InvalidInput(
                "waveform contains non-finite samples".into(),
            ));
        }
        Ok(Self {
            samples,
            sample_rate,
            channels,
        })
    }

    /// Mono constructor, the common case throughout the pipeline.
    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(samples, sample_rate, 1)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channels(&self) -> u16 {
        self.channels
    }

    /// Frames per channel.
    pub fn len(&self) -> usize {
        self.samples.len() / self.channels as usize
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Channel-average downmix. Mono input is returned unchanged.
    pub fn to_mono(&self) -> Waveform {
        if self.channels == 1 {
            return self.clone();
        }
        let mono: Vec<f64> = self
            .samples
            .chunks_exact(2)
            .map(|lr| 0.5 * (lr[0] + lr[1]))
            .collect();
        Waveform {
            samples: mono,
            sample_rate: self.sample_rate,
            channels: 1,
        }
    }

    /// Linear-interpolation resampler. Lossy: no band limiting is applied.
    pub fn resampled(&self, target_rate: u32) -> Result<Waveform> {
        if target_rate == 0 {
            return Err(PolyError::InvalidInput("target rate must be > 0".into()));
        }
        if target_rate == self.sample_rate {
            return Ok(self.clone());
        }
        let ratio = target_rate as f64 / self.sample_rate as f64;
        let src_frames = self.len();
        let dst_frames = ((src_frames as f64) * ratio).round().max(1.0) as usize;
        let ch = self.channels as usize;
        let mut out = Vec::with_capacity(dst_frames * ch);
        for i in 0..dst_frames {
            let pos = i as f64 / ratio;
            let i0 = pos.floor() as usize;
            let frac = pos - i0 as f64;
            let i1 = (i0 + 1).min(src_frames - 1);
            let i0 = i0.min(src_frames - 1);
            for c in 0..ch {
                let a = self.samples[i0 * ch + c];
                let b = self.samples[i1 * ch + c];
                out.push(a + (b - a) * frac);
            }
        }
        Waveform::new(out, target_rate, self.channels)
    }

    /// Truncate or zero-pad to exactly `frames` frames per channel.
    pub fn fit_length(&self, frames: usize) -> Result<Waveform> {
        if frames == 0 {
            return Err(PolyError::InvalidInput("cannot fit to zero length".into()));
        }
        let ch = self.channels as usize;
        let mut samples = self.samples.clone();
        samples.resize(frames * ch, 0.0);
        Waveform::new(samples, self.sample_rate, self.channels)
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn rms(&self) -> f64 {
        (self.energy() / self.samples.len() as f64).sqrt()
    }
}

/// A T x F matrix of complex STFT bins plus the transform metadata needed to
/// invert it.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    bins: Array2<Complex64>,
    frame_hop: usize,
    window_size: usize,
    sample_rate: u32,
    source_len: usize,
}

impl ComplexSpectrogram {
    /// Assemble a spectrogram from raw bins plus transform metadata.
    pub fn from_parts(
        bins: Array2<Complex64>,
        frame_hop: usize,
        window_size: usize,
        sample_rate: u32,
        source_len: usize,
    ) -> Result<Self> {
        let (t, f) = bins.dim();
        if t == 0 || f == 0 {
            return Err(PolyError::Degenerate("empty spectrogram".into()));
        }
        if f != window_size / 2 + 1 {
            return Err(PolyError::ShapeMismatch(format!(
                "{f} bins inconsistent with window {window_size} (expect {})",
                window_size / 2 + 1
            )));
        }
        if bins.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(PolyError::InvalidInput(
                "spectrogram contains non-finite bins".into(),
            ));
        }
        Ok(Self {
            bins,
            frame_hop,
            window_size,
            sample_rate,
            source_len,
        })
    }

    /// Frames x bins.
    pub fn bins(&self) -> &Array2<Complex64> {
        &self.bins
    }

    pub fn num_frames(&self) -> usize {
        self.bins.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.bins.ncols()
    }

    pub fn frame_hop(&self) -> usize {
        self.frame_hop
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    /// Per-bin magnitudes |S|.
    pub fn magnitude(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.norm())
    }

    /// Per-bin power |S|^2.
    pub fn power(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.norm_sqr())
    }

    /// Keep metadata, replace bins (shape must be unchanged).
    pub fn with_bins(&self, bins: Array2<Complex64>) -> Result<Self> {
        if bins.dim() != self.bins.dim() {
            return Err(PolyError::ShapeMismatch(
                "replacement bins change spectrogram shape".into(),
            ));
        }
        Self::from_parts(
            bins,
            self.frame_hop,
            self.window_size,
            self.sample_rate,
            self.source_len,
        )
    }
}
