//! RIFF/WAV reading and writing via hound.
//!
//! Supported encodings: 16-bit PCM and 32-bit IEEE float, mono or stereo,
//! any sample rate. Files are written atomically.

use super::Waveform;
use crate::container::atomic_write;
use crate::error::{PolyError, Result};
use std::io::Cursor;
use std::path::Path;

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleEncoding {
    Pcm16,
    Float32,
}

/// Read a WAV file into a waveform. 16-bit PCM is scaled by 1/32768.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(PolyError::InvalidInput(format!(
            "{}: unsupported channel count {}",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(PolyError::InvalidInput(format!(
                "{}: unsupported encoding {fmt:?}/{bits}-bit (want PCM16 or float32)",
                path.display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate, spec.channels)
}

/// Write a waveform as WAV with the requested encoding.
pub fn write_wav(path: &Path, w: &Waveform, encoding: SampleEncoding) -> Result<()> {
    let spec = hound::WavSpec {
        channels: w.channels(),
        sample_rate: w.sample_rate(),
        bits_per_sample: match encoding {
            SampleEncoding::Pcm16 => 16,
            SampleEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            SampleEncoding::Pcm16 => hound::SampleFormat::Int,
            SampleEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut cursor = Cursor::new(Vec::<u8>::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec)?;
        match encoding {
            SampleEncoding::Pcm16 => {
                for &s in w.samples() {
                    let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(v)?;
                }
            }
            SampleEncoding::Float32 => {
                for &s in w.samples() {
                    writer.write_sample(s as f32)?;
                }
            }
        }
        writer.finalize()?;
    }
    atomic_write(path, cursor.get_ref())
}
