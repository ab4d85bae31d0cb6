//! Blind source separation and stem bookkeeping.
//!
//! The naive DSP separator is deliberately crude: HPSS isolates drums, a
//! Butterworth low-pass on the harmonic part isolates bass, and the leftover
//! harmonic residual is assigned to both vocals and others (others scaled by
//! 0.8), which makes it a maximal-leakage worst case for downstream priors.

mod butterworth;
mod hpss;

pub use butterworth::{butterworth_lowpass, cascade_magnitude, lowpass_sections, Section};
pub use hpss::{hpss, hpss_masks, hpss_with, MedianWidths};

use crate::error::{PolyError, Result};
use crate::signal::{read_wav, stft, Waveform};
use std::fmt;
use std::path::Path;

/// STFT window used for harmonic/percussive separation.
pub const HPSS_WINDOW: usize = 2048;
/// STFT hop used for harmonic/percussive separation.
pub const HPSS_HOP: usize = 512;
/// Hard mask margin for the naive separator.
pub const NAIVE_HPSS_MARGIN: f64 = 3.0;
/// Bass low-pass cutoff for the naive separator, Hz.
pub const NAIVE_BASS_CUTOFF_HZ: f64 = 300.0;
/// Bass low-pass order for the naive separator.
pub const NAIVE_BASS_ORDER: usize = 4;
/// Residual weight assigned to the others stem.
pub const NAIVE_OTHERS_WEIGHT: f64 = 0.8;

/// The four-stem taxonomy shared by every separator in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StemCategory {
    Vocals,
    Bass,
    Drums,
    Others,
}

impl StemCategory {
    pub const ALL: [StemCategory; 4] = [
        StemCategory::Vocals,
        StemCategory::Bass,
        StemCategory::Drums,
        StemCategory::Others,
    ];

    pub fn file_name(&self) -> &'static str {
        match self {
            StemCategory::Vocals => "vocals.wav",
            StemCategory::Bass => "bass.wav",
            StemCategory::Drums => "drums.wav",
            StemCategory::Others => "others.wav",
        }
    }
}

impl fmt::Display for StemCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            StemCategory::Vocals => "vocals",
            StemCategory::Bass => "bass",
            StemCategory::Drums => "drums",
            StemCategory::Others => "others",
        };
        write!(f, "{name}")
    }
}

/// Where a stem set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StemOrigin {
    NaiveDsp,
    Ingested,
}

impl fmt::Display for StemOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StemOrigin::NaiveDsp => write!(f, "naive_dsp"),
            StemOrigin::Ingested => write!(f, "ingested"),
        }
    }
}

/// Exactly four stems sharing one sample rate and length.
#[derive(Debug, Clone)]
pub struct StemSet {
    vocals: Waveform,
    bass: Waveform,
    drums: Waveform,
    others: Waveform,
    origin: StemOrigin,
}

impl StemSet {
    pub fn new(
        vocals: Waveform,
        bass: Waveform,
        drums: Waveform,
        others: Waveform,
        origin: StemOrigin,
    ) -> Result<Self> {
        let head = &vocals;
        for (name, w) in [("bass", &bass), ("drums", &drums), ("others", &others)] {
            if w.sample_rate() != head.sample_rate() {
                return Err(PolyError::InvalidInput(format!(
                    "{name} stem sample rate {} differs from vocals {}",
                    w.sample_rate(),
                    head.sample_rate()
                )));
            }
            if w.len() != head.len() || w.channels() != head.channels() {
                return Err(PolyError::InvalidInput(format!(
                    "{name} stem length/channels disagree with vocals"
                )));
            }
        }
        Ok(Self {
            vocals,
            bass,
            drums,
            others,
            origin,
        })
    }

    pub fn get(&self, category: StemCategory) -> &Waveform {
        match category {
            StemCategory::Vocals => &self.vocals,
            StemCategory::Bass => &self.bass,
            StemCategory::Drums => &self.drums,
            StemCategory::Others => &self.others,
        }
    }

    pub fn origin(&self) -> StemOrigin {
        self.origin
    }

    pub fn sample_rate(&self) -> u32 {
        self.vocals.sample_rate()
    }

    pub fn len(&self) -> usize {
        self.vocals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocals.is_empty()
    }
}

/// A raw instrument label resolved onto the stem taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StemTarget {
    pub category: StemCategory,
    pub raw_label: String,
}

/// Map an instrument label onto a stem. Labels naming voices, drums, or bass
/// instruments route to those stems; every other instrument routes to the
/// generic others stem, which then serves whole as the target reference
/// (hybrid localization). Matching is word-based and case-insensitive; no
/// external synonym dictionary is consulted.
pub fn map_target(raw_label: &str) -> Result<StemTarget> {
    const VOCAL_WORDS: &[&str] = &[
        "voice", "voices", "vocal", "vocals", "singer", "singers", "singing", "sing", "choir",
        "acapella", "rap", "rapper", "soprano", "alto", "tenor", "baritone", "hum", "humming",
        "speech", "spoken",
    ];
    const DRUM_WORDS: &[&str] = &[
        "drum",
        "drums",
        "percussion",
        "percussive",
        "kick",
        "snare",
        "hihat",
        "hat",
        "cymbal",
        "cymbals",
        "tom",
        "toms",
        "tambourine",
        "conga",
        "bongo",
        "timpani",
    ];
    const BASS_WORDS: &[&str] = &["bass", "sub", "subbass", "contrabass"];

    let label = raw_label.trim();
    if label.is_empty() {
        return Err(PolyError::InvalidInput("empty target label".into()));
    }
    let lower = label.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();

    let has = |set: &[&str]| words.iter().any(|w| set.contains(w));
    let category = if has(VOCAL_WORDS) {
        StemCategory::Vocals
    } else if has(DRUM_WORDS) {
        StemCategory::Drums
    } else if has(BASS_WORDS) {
        StemCategory::Bass
    } else {
        StemCategory::Others
    };
    Ok(StemTarget {
        category,
        raw_label: label.to_string(),
    })
}

/// Decompose a mono mixture with signal-processing heuristics only, using
/// the default margin/cutoff/order.
///
/// drums = percussive HPSS output; bass = low-passed harmonic; the harmonic
/// residual above the cutoff goes to vocals unweighted and to others scaled
/// by 0.8.
pub fn naive_separate(mix: &Waveform) -> Result<StemSet> {
    naive_separate_with(mix, NAIVE_HPSS_MARGIN, NAIVE_BASS_CUTOFF_HZ, NAIVE_BASS_ORDER)
}

/// [`naive_separate`] with explicit HPSS margin and bass filter parameters.
pub fn naive_separate_with(
    mix: &Waveform,
    margin: f64,
    bass_cutoff_hz: f64,
    bass_order: usize,
) -> Result<StemSet> {
    if mix.channels() != 1 {
        return Err(PolyError::InvalidInput(
            "naive_separate expects mono input; downmix first".into(),
        ));
    }
    let spec = stft(mix, HPSS_WINDOW, HPSS_HOP)?;
    let (harmonic, percussive) = hpss(&spec, margin)?;

    let bass = butterworth_lowpass(&harmonic, bass_cutoff_hz, bass_order)?;
    let residual: Vec<f64> = harmonic
        .samples()
        .iter()
        .zip(bass.samples())
        .map(|(h, b)| h - b)
        .collect();
    let vocals = Waveform::mono(residual.clone(), mix.sample_rate())?;
    let others = Waveform::mono(
        residual.iter().map(|v| NAIVE_OTHERS_WEIGHT * v).collect(),
        mix.sample_rate(),
    )?;

    StemSet::new(vocals, bass, percussive, others, StemOrigin::NaiveDsp)
}

/// Load externally separated stems from `dir` and align them to `mix`.
///
/// Expects vocals.wav, bass.wav, drums.wav, others.wav. Stems are downmixed,
/// resampled to the mix rate if needed, and truncated/zero-padded to the mix
/// length.
pub fn ingest_stems(dir: &Path, mix: &Waveform) -> Result<StemSet> {
    let mut loaded = Vec::with_capacity(4);
    for category in StemCategory::ALL {
        let path = dir.join(category.file_name());
        if !path.exists() {
            return Err(PolyError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing stem file {}", path.display()),
            )));
        }
        let w = read_wav(&path)?
            .to_mono()
            .resampled(mix.sample_rate())?
            .fit_length(mix.len())?;
        loaded.push(w);
    }
    let mut it = loaded.into_iter();
    StemSet::new(
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        StemOrigin::Ingested,
    )
}

/// Split a stem set into (target, non-target) waveforms; the non-target side
/// is the samplewise sum of the three remaining stems.
pub fn aggregate(stems: &StemSet, target: &StemTarget) -> (Waveform, Waveform) {
    let tgt = stems.get(target.category).clone();
    let mut con = vec![0.0f64; stems.get(StemCategory::Vocals).samples().len()];
    for category in StemCategory::ALL {
        if category == target.category {
            continue;
        }
        for (acc, s) in con.iter_mut().zip(stems.get(category).samples()) {
            *acc += s;
        }
    }
    let con = Waveform::new(con, stems.sample_rate(), tgt.channels())
        .expect("stem invariants guarantee a valid sum");
    (tgt, con)
}
