//! Butterworth low-pass filtering as a cascade of second-order sections.
//!
//! The analog prototype poles sit on the circle of radius `wc` at angles
//! `pi/2 + pi(2j+1)/(2n)`; conjugate pairs map to one biquad each via the
//! bilinear transform with frequency pre-warping, so the digital -3 dB point
//! lands exactly on the requested cutoff. Odd orders add one first-order
//! section. Cascading second-order sections avoids the coefficient blow-up
//! of high-order direct forms.

use super::super::signal::Waveform;
use crate::error::{PolyError, Result};
use std::f64::consts::PI;

/// One filter section, normalized to a0 = 1. First-order sections carry
/// b2 = a2 = 0.
#[derive(Debug, Clone, Copy)]
pub struct Section {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Section {
    /// Complex gain at normalized angular frequency `omega` (rad/sample).
    pub fn gain_at(&self, omega: f64) -> (f64, f64) {
        let (s1, c1) = (-omega).sin_cos();
        let (s2, c2) = (-2.0 * omega).sin_cos();
        let num = (
            self.b0 + self.b1 * c1 + self.b2 * c2,
            self.b1 * s1 + self.b2 * s2,
        );
        let den = (1.0 + self.a1 * c1 + self.a2 * c2, self.a1 * s1 + self.a2 * s2);
        let d = den.0 * den.0 + den.1 * den.1;
        (
            (num.0 * den.0 + num.1 * den.1) / d,
            (num.1 * den.0 - num.0 * den.1) / d,
        )
    }
}

/// Design the SOS cascade for a Butterworth low-pass.
pub fn lowpass_sections(cutoff_hz: f64, sample_rate: u32, order: usize) -> Result<Vec<Section>> {
    let fs = sample_rate as f64;
    if !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
        return Err(PolyError::InvalidInput(format!(
            "cutoff must lie in (0, {}), got {cutoff_hz}",
            fs / 2.0
        )));
    }
    if order == 0 {
        return Err(PolyError::InvalidInput("order must be >= 1".into()));
    }

    let k = 2.0 * fs;
    let wc = k * (PI * cutoff_hz / fs).tan(); // pre-warped analog cutoff

    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for j in 0..order / 2 {
        // conjugate pole pair: s^2 + 2 zeta wc s + wc^2
        let phi = PI / 2.0 + PI * (2 * j + 1) as f64 / (2 * order) as f64;
        let zeta = -phi.cos();
        let a0 = k * k + 2.0 * zeta * wc * k + wc * wc;
        sections.push(Section {
            b0: wc * wc / a0,
            b1: 2.0 * wc * wc / a0,
            b2: wc * wc / a0,
            a1: 2.0 * (wc * wc - k * k) / a0,
            a2: (k * k - 2.0 * zeta * wc * k + wc * wc) / a0,
        });
    }
    if order % 2 == 1 {
        // real pole at s = -wc
        let a0 = k + wc;
        sections.push(Section {
            b0: wc / a0,
            b1: wc / a0,
            b2: 0.0,
            a1: (wc - k) / a0,
            a2: 0.0,
        });
    }
    Ok(sections)
}

/// Magnitude response of a cascade at `freq_hz`.
pub fn cascade_magnitude(sections: &[Section], freq_hz: f64, sample_rate: u32) -> f64 {
    let omega = 2.0 * PI * freq_hz / sample_rate as f64;
    sections
        .iter()
        .map(|s| {
            let (re, im) = s.gain_at(omega);
            (re * re + im * im).sqrt()
        })
        .product()
}

/// Single-pass causal Butterworth low-pass (not zero-phase).
pub fn butterworth_lowpass(w: &Waveform, cutoff_hz: f64, order: usize) -> Result<Waveform> {
    let sections = lowpass_sections(cutoff_hz, w.sample_rate(), order)?;
    let ch = w.channels() as usize;
    let mut out = w.samples().to_vec();
    for c in 0..ch {
        for section in &sections {
            // direct form II transposed
            let (mut s1, mut s2) = (0.0f64, 0.0f64);
            let mut i = c;
            while i < out.len() {
                let x = out[i];
                let y = section.b0 * x + s1;
                s1 = section.b1 * x - section.a1 * y + s2;
                s2 = section.b2 * x - section.a2 * y;
                out[i] = y;
                i += ch;
            }
        }
    }
    Waveform::new(out, w.sample_rate(), w.channels())
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

    /// Steady-state RMS after discarding the leading transient.
    fn settled_rms(w: &Waveform, skip: usize) -> f64 {
        let s = &w.samples()[skip..];
        (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt()
    }

    #[test]
    fn dc_gain_is_unity() {
        let w = Waveform::mono(vec![1.0; 8000], 16_000).unwrap();
        let y = butterworth_lowpass(&w, 300.0, 4).unwrap();
        let tail = y.samples().last().unwrap();
        assert!((tail - 1.0).abs() < 1e-3, "DC converges to {tail}");
    }

    #[test]
    fn cutoff_sine_attenuated_three_db() {
        let sr = 16_000;
        let w = sine(300.0, 1.5, sr);
        let y = butterworth_lowpass(&w, 300.0, 4).unwrap();
        let skip = sr as usize / 2;
        let db = 20.0 * (settled_rms(&y, skip) / settled_rms(&w, skip)).log10();
        assert!((db + 3.0103).abs() < 0.5, "cutoff gain {db} dB");
    }

    #[test]
    fn stopband_attenuation_matches_analytic_magnitude() {
        // analytic oracle with pre-warped frequencies:
        // |H(f)| = 1 / sqrt(1 + (tan(pi f/fs)/tan(pi fc/fs))^(2n))
        let (sr, fc, order) = (16_000u32, 300.0f64, 4usize);
        let sections = lowpass_sections(fc, sr, order).unwrap();
        for &f in &[50.0, 150.0, 300.0, 600.0, 1200.0, 3000.0, 6000.0] {
            let got = cascade_magnitude(&sections, f, sr);
            let warp = (PI * f / sr as f64).tan() / (PI * fc / sr as f64).tan();
            let expect = 1.0 / (1.0 + warp.powi(2 * order as i32)).sqrt();
            assert!(
                (got - expect).abs() < 1e-9 * (1.0 + expect),
                "{f} Hz: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn three_khz_sine_attenuated_sixty_db() {
        let sr = 16_000;
        let w = sine(3000.0, 1.5, sr);
        let y = butterworth_lowpass(&w, 300.0, 4).unwrap();
        let skip = sr as usize / 2;
        let db = 20.0 * (settled_rms(&y, skip) / settled_rms(&w, skip)).log10();
        assert!(db < -60.0, "stopband attenuation only {db} dB");
    }

    #[test]
    fn rejects_out_of_range_cutoff() {
        let w = sine(100.0, 0.1, 16_000);
        assert!(butterworth_lowpass(&w, 0.0, 4).is_err());
        assert!(butterworth_lowpass(&w, 8000.0, 4).is_err());
        assert!(butterworth_lowpass(&w, 300.0, 0).is_err());
    }

    #[test]
    fn odd_order_design_works() {
        let sections = lowpass_sections(1000.0, 16_000, 5).unwrap();
        assert_eq!(sections.len(), 3);
        let dc = cascade_magnitude(&sections, 0.0, 16_000);
        assert!((dc - 1.0).abs() < 1e-12);
        let cut = cascade_magnitude(&sections, 1000.0, 16_000);
        assert!((cut - 1.0 / 2f64.sqrt()).abs() < 1e-9);
    }
}
