//! Command implementations behind the CLI: each takes explicit arguments,
//! writes its artifacts, and returns the manifest where one is produced.

use crate::calibration::{build_token_mask, CalibrationConfig};
use crate::container::atomic_write;
use crate::error::{PolyError, Result};
use crate::harness::{edit, invert, EditTrace, LayerSelection, RunConfig, ToyModel};
use crate::manifest::RunManifest;
use crate::metrics::{composite_table, cqt1_pcc, parse_scores_csv, report_csv, report_text};
use crate::prior::{g_norm, irm, irm_mel, AcousticPrior, PriorKind};
use crate::separation::{
    aggregate, ingest_stems, map_target, naive_separate_with, StemCategory, StemSet,
    NAIVE_BASS_CUTOFF_HZ, NAIVE_BASS_ORDER, NAIVE_HPSS_MARGIN,
};
use crate::signal::{
    log_mel, mel_filterbank, read_wav, stft, write_wav, MelSpectrogram, SampleEncoding, Waveform,
    LOG_MEL_EPSILON, PRIOR_HOP, PRIOR_MEL_BINS, PRIOR_WINDOW,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Load a mixture WAV, downmix to mono, resample to the working rate.
pub fn load_working_mix(path: &Path, working_sr: u32) -> Result<Waveform> {
    read_wav(path)?.to_mono().resampled(working_sr)
}

pub struct SeparateArgs {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub margin: f64,
    pub cutoff: f64,
    pub order: usize,
    pub working_sr: u32,
}

impl SeparateArgs {
    pub fn new(input: PathBuf, out_dir: PathBuf, working_sr: u32) -> Self {
        Self {
            input,
            out_dir,
            margin: NAIVE_HPSS_MARGIN,
            cutoff: NAIVE_BASS_CUTOFF_HZ,
            order: NAIVE_BASS_ORDER,
            working_sr,
        }
    }
}

/// Split a mixture into four stem WAVs plus a manifest.
pub fn run_separate(args: &SeparateArgs) -> Result<RunManifest> {
    let mix = load_working_mix(&args.input, args.working_sr)?;
    let stems = naive_separate_with(&mix, args.margin, args.cutoff, args.order)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let mut manifest = RunManifest::new("separate", args.working_sr);
    manifest.add_input(&args.input)?;
    manifest.separator_origin = Some(stems.origin().to_string());
    manifest
        .config_echo
        .insert("margin".into(), args.margin.to_string());
    manifest
        .config_echo
        .insert("cutoff".into(), args.cutoff.to_string());
    manifest
        .config_echo
        .insert("order".into(), args.order.to_string());

    for category in StemCategory::ALL {
        let path = args.out_dir.join(category.file_name());
        write_wav(&path, stems.get(category), SampleEncoding::Float32)?;
        manifest.add_output(&path)?;
    }
    manifest.write_to(&args.out_dir.join("manifest.json"))?;
    Ok(manifest)
}

pub struct PriorArgs {
    pub mix: PathBuf,
    pub target: String,
    pub stems: Option<PathBuf>,
    pub kind: PriorKind,
    pub out: PathBuf,
    pub working_sr: u32,
}

/// Compute an acoustic prior for a labeled target within a mixture and write
/// it as a kind-tagged tensor container.
pub fn run_prior(args: &PriorArgs) -> Result<AcousticPrior> {
    let mix = load_working_mix(&args.mix, args.working_sr)?;
    let stems: StemSet = match &args.stems {
        Some(dir) => ingest_stems(dir, &mix)?,
        None => naive_separate_with(&mix, NAIVE_HPSS_MARGIN, NAIVE_BASS_CUTOFF_HZ, NAIVE_BASS_ORDER)?,
    };
    let target = map_target(&args.target)?;
    let (tgt, con) = aggregate(&stems, &target);
    let s_tgt = stft(&tgt, PRIOR_WINDOW, PRIOR_HOP)?;
    let s_con = stft(&con, PRIOR_WINDOW, PRIOR_HOP)?;
    let prior = match args.kind {
        PriorKind::Irm => irm(&s_tgt, &s_con)?,
        PriorKind::IrmMel => {
            let fb = mel_filterbank(
                args.working_sr,
                PRIOR_WINDOW,
                PRIOR_MEL_BINS,
                0.0,
                args.working_sr as f64 / 2.0,
            )?;
            irm_mel(&s_tgt, &s_con, &fb)?
        }
        PriorKind::Norm => g_norm(&s_tgt)?,
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    prior.write_to(&args.out)?;
    Ok(prior)
}

/// Seeded synthetic stand-in for an input spectrogram, used when a run config
/// names no mixture.
pub fn synthetic_mel(seed: u64, frames: usize, bins: usize) -> MelSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    MelSpectrogram::new(
        Array2::from_shape_fn((frames, bins), |_| rng.random_range(-1.0..1.0)),
        false,
        LOG_MEL_EPSILON,
    )
    .expect("synthetic spectrogram is finite by construction")
}

/// Execute a run config end to end: inversion with logit caching, calibrated
/// editing, trace + entropy CSV + manifest under the output directory.
pub fn run_edit_pipeline(config_path: &Path, working_sr: u32) -> Result<RunManifest> {
    let config = RunConfig::from_file(config_path)?;
    let out_dir = config.out.clone().unwrap_or_else(|| {
        let stem = config_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_string());
        config_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(format!("{stem}.out"))
    });

    let model = ToyModel::standard(config.seed);
    let x0 = match &config.mix {
        Some(path) => {
            let mix = load_working_mix(path, working_sr)?;
            let spec = stft(&mix, PRIOR_WINDOW, PRIOR_HOP)?;
            let fb = mel_filterbank(
                working_sr,
                PRIOR_WINDOW,
                PRIOR_MEL_BINS,
                0.0,
                working_sr as f64 / 2.0,
            )?;
            log_mel(&spec, &fb, LOG_MEL_EPSILON)?
        }
        None => synthetic_mel(config.seed, 32, PRIOR_MEL_BINS),
    };
    let prior = AcousticPrior::read_from(&config.prior)?;
    let mask = build_token_mask(model.text_len(), config.mask_span.0, config.mask_span.1)?;
    let layer_set = match &config.layers {
        LayerSelection::Down => model.down_layers(),
        LayerSelection::Ids(ids) => ids.clone(),
    };
    let calibration = CalibrationConfig::new(
        config.lambda_max,
        config.schedule,
        layer_set,
        config.guidance_scale,
    )?;

    let (z_top, cache) = invert(&x0, &model, config.steps)?;
    let trace = edit(&z_top, &cache, &prior, &mask, &calibration, &model)?;

    std::fs::create_dir_all(&out_dir)?;
    let trace_dir = out_dir.join("trace");
    trace.save_dir(&trace_dir)?;

    let mut manifest = RunManifest::new("run", working_sr);
    manifest.add_input(config_path)?;
    manifest.add_input(&config.prior)?;
    if let Some(mix) = &config.mix {
        manifest.add_input(mix)?;
    }
    manifest.prior_kind = Some(prior.kind().tag().to_string());
    manifest.config_echo = config.echo();
    for entry in sorted_files(&trace_dir)? {
        manifest.add_output(&entry)?;
    }
    manifest.write_to(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Melodic-consistency correlation between two WAV files.
pub fn run_cqt_pcc(a: &Path, b: &Path) -> Result<f64> {
    cqt1_pcc(&read_wav(a)?, &read_wav(b)?)
}

/// Build the composite report from an ingested scores CSV; returns the text
/// table and writes `report.csv` / `report.txt` into `out_dir` (defaulting to
/// the table's directory).
pub fn run_composite(table: &Path, out_dir: Option<&Path>) -> Result<String> {
    let rows = parse_scores_csv(&std::fs::read_to_string(table)?)?;
    let computed = composite_table(&rows)?;
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => table.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
    };
    std::fs::create_dir_all(&dir)?;
    let text = report_text(&computed);
    atomic_write(&dir.join("report.csv"), report_csv(&computed).as_bytes())?;
    atomic_write(&dir.join("report.txt"), text.as_bytes())?;
    Ok(text)
}

/// Re-derive the per-step entropy CSV from a saved trace.
pub fn run_entropy(trace_dir: &Path, out: &Path) -> Result<()> {
    let trace = EditTrace::load_dir(trace_dir)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    atomic_write(out, trace.entropy_csv().as_bytes())
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<std::result::Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

/// Parse the working sample rate from an optional env-var string.
pub fn working_sr_from_env(value: Option<String>) -> Result<u32> {
    match value {
        None => Ok(crate::DEFAULT_WORKING_SR),
        Some(s) => {
            let sr: u32 = s.parse().map_err(|_| {
                PolyError::InvalidInput(format!("POLY_WORKING_SR must be a positive integer, got {s:?}"))
            })?;
            if sr == 0 {
                return Err(PolyError::InvalidInput(
                    "POLY_WORKING_SR must be positive".into(),
                ));
            }
            Ok(sr)
        }
    }
}
