//! Dual-path inversion/editing harness.
//!
//! `invert` walks a latent forward through a deterministic noising schedule,
//! running the toy attention stack at every step and caching the raw self-
//! and acoustic-style cross-attention logits (never post-softmax maps).
//! `edit` walks back down from the noised latent consuming those caches: in
//! selected layers, self and acoustic-style attention blend cached logits
//! with current ones per query (gated by the resized acoustic prior), and
//! text cross-attention receives the spatio-textual bias. An uncalibrated
//! reference trajectory advances alongside the edited one, so every trace
//! carries both paths plus per-layer entropy snapshots.

mod model;
mod runconfig;

pub use model::{AttentionBlock, LayerSpec, ToyModel};
pub use runconfig::{LayerSelection, RunConfig};

use crate::calibration::{
    acoustic_modulate, softmax_rows, source_interpolate, AttentionLogits, AttentionMap,
    CalibrationConfig, TokenMask, DEFAULT_GUIDANCE,
};
use crate::container::{atomic_write, TensorContainer};
use crate::error::{PolyError, Result};
use crate::metrics::{attention_entropy, ENTROPY_EPSILON};
use crate::prior::{area_resize, resize, AcousticPrior, PriorKind};
use crate::signal::MelSpectrogram;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Fraction of the previous latent kept per noising step.
pub const NOISE_KEEP: f64 = 0.95;
/// Weight of the model output added per noising step.
pub const NOISE_SCALE: f64 = 0.25;

/// Cached raw logits for one inversion step.
pub struct StepCache {
    /// Per layer: self-attention and acoustic-style cross-attention logits.
    pub layers: Vec<BlockCache>,
}

/// Cached logits of the two source-interpolated blocks in one layer.
pub struct BlockCache {
    pub sa: AttentionLogits,
    pub loa: AttentionLogits,
}

/// Per-(step, layer) raw logits captured during inversion.
pub struct LogitCache {
    steps: Vec<StepCache>,
    layer_grids: Vec<(usize, usize)>,
}

impl LogitCache {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_grids.len()
    }

    pub fn layer_grids(&self) -> &[(usize, usize)] {
        &self.layer_grids
    }

    pub fn step(&self, t: usize) -> &StepCache {
        &self.steps[t]
    }

    /// Persist as one tensor container per (step, layer, block) plus a meta
    /// file. Logits are f32-snapped at creation, so this is lossless.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = CacheMeta {
            steps: self.steps.len(),
            layer_grids: self.layer_grids.clone(),
        };
        atomic_write(&dir.join("cache_meta.json"), &serde_json::to_vec_pretty(&meta)?)?;
        for (t, step) in self.steps.iter().enumerate() {
            for (l, block) in step.layers.iter().enumerate() {
                logits_container(&block.sa, "sa_logits")?
                    .write_to(&dir.join(format!("t{t:03}_l{l:02}_sa.tns")))?;
                logits_container(&block.loa, "loa_logits")?
                    .write_to(&dir.join(format!("t{t:03}_l{l:02}_loa.tns")))?;
            }
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let meta: CacheMeta =
            serde_json::from_slice(&std::fs::read(dir.join("cache_meta.json"))?)?;
        let mut steps = Vec::with_capacity(meta.steps);
        for t in 0..meta.steps {
            let mut layers = Vec::with_capacity(meta.layer_grids.len());
            for l in 0..meta.layer_grids.len() {
                let sa = logits_from_container(
                    &TensorContainer::read_from(&dir.join(format!("t{t:03}_l{l:02}_sa.tns")))?,
                )?;
                let loa = logits_from_container(
                    &TensorContainer::read_from(&dir.join(format!("t{t:03}_l{l:02}_loa.tns")))?,
                )?;
                layers.push(BlockCache { sa, loa });
            }
            steps.push(StepCache { layers });
        }
        Ok(Self {
            steps,
            layer_grids: meta.layer_grids,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    steps: usize,
    layer_grids: Vec<(usize, usize)>,
}

fn logits_container(logits: &AttentionLogits, kind: &str) -> Result<TensorContainer> {
    let (h, q, k) = logits.energies().dim();
    TensorContainer::new(
        vec![h, q, k],
        logits.energies().iter().map(|&v| v as f32).collect(),
        Some(kind.to_string()),
    )
}

fn logits_from_container(t: &TensorContainer) -> Result<AttentionLogits> {
    if t.shape().len() != 3 {
        return Err(PolyError::Format(format!(
            "logit tensor must be 3-D, got {:?}",
            t.shape()
        )));
    }
    let (h, q, k) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let data: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
    AttentionLogits::new(
        Array3::from_shape_vec((h, q, k), data)
            .map_err(|e| PolyError::Format(e.to_string()))?,
    )
}

fn latent_container(latent: &Array2<f64>, kind: &str) -> Result<TensorContainer> {
    let (r, c) = latent.dim();
    TensorContainer::new(
        vec![r, c],
        latent.iter().map(|&v| v as f32).collect(),
        Some(kind.to_string()),
    )
}

fn latent_from_container(t: &TensorContainer) -> Result<Array2<f64>> {
    if t.shape().len() != 2 {
        return Err(PolyError::Format(format!(
            "latent tensor must be 2-D, got {:?}",
            t.shape()
        )));
    }
    Array2::from_shape_vec(
        (t.shape()[0], t.shape()[1]),
        t.data().iter().map(|&v| v as f64).collect(),
    )
    .map_err(|e| PolyError::Format(e.to_string()))
}

/// Mean row entropies of the three map variants of one calibrated block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixEntropy {
    /// Softmax of the cached source logits.
    pub source: f64,
    /// Softmax of the pre-softmax logit mixture (the operative map).
    pub premix: f64,
    /// Convex combination of the two softmaxed maps (the rejected variant).
    pub postmix: f64,
}

/// Entropy snapshot of one calibrated layer at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntropy {
    pub layer: usize,
    pub sa: MixEntropy,
    pub loa: MixEntropy,
    /// Entropy of the biased text cross-attention map.
    pub text_modulated: f64,
}

/// One editing step: both latent paths plus entropy snapshots.
pub struct TraceStep {
    /// Editing step index; 0 is the first (highest-noise) step.
    pub step: usize,
    pub edited: Array2<f64>,
    pub reference: Array2<f64>,
    pub entropies: Vec<LayerEntropy>,
}

/// Full record of one editing run.
pub struct EditTrace {
    steps: Vec<TraceStep>,
    final_latent: Array2<f64>,
    layer_grids: Vec<(usize, usize)>,
    head_count: usize,
}

impl EditTrace {
    pub fn steps(&self) -> &[TraceStep] {
        &self.steps
    }

    pub fn final_latent(&self) -> &Array2<f64> {
        &self.final_latent
    }

    /// Grid shapes the prior was aligned to, recorded per layer.
    pub fn layer_grids(&self) -> &[(usize, usize)] {
        &self.layer_grids
    }

    pub fn head_count(&self) -> usize {
        self.head_count
    }

    /// Collapse the per-step snapshots into a per-step entropy report over
    /// the operative maps (sa premix, loa premix, biased text).
    pub fn entropy_report(&self) -> Result<crate::metrics::EntropyReport> {
        let mut per_step = Vec::new();
        let mut layers: Vec<usize> = Vec::new();
        for step in &self.steps {
            if step.entropies.is_empty() {
                continue;
            }
            let mut total = 0.0;
            for e in &step.entropies {
                total += (e.sa.premix + e.loa.premix + e.text_modulated) / 3.0;
                if !layers.contains(&e.layer) {
                    layers.push(e.layer);
                }
            }
            per_step.push((step.step, total / step.entropies.len() as f64));
        }
        layers.sort_unstable();
        crate::metrics::EntropyReport::new(
            per_step,
            layers,
            self.head_count,
            ENTROPY_EPSILON,
            None,
        )
    }

    /// Per-step entropy CSV. The `entropy` column aggregates the operative
    /// maps (sa premix, loa premix, biased text) over calibrated layers.
    pub fn entropy_csv(&self) -> String {
        let mut out = String::from(
            "step,entropy,sa_source,sa_premix,sa_postmix,loa_source,loa_premix,loa_postmix,text_modulated\n",
        );
        for step in &self.steps {
            if step.entropies.is_empty() {
                continue;
            }
            let n = step.entropies.len() as f64;
            let mean = |f: fn(&LayerEntropy) -> f64| -> f64 {
                step.entropies.iter().map(f).sum::<f64>() / n
            };
            let sa_src = mean(|e| e.sa.source);
            let sa_pre = mean(|e| e.sa.premix);
            let sa_post = mean(|e| e.sa.postmix);
            let loa_src = mean(|e| e.loa.source);
            let loa_pre = mean(|e| e.loa.premix);
            let loa_post = mean(|e| e.loa.postmix);
            let text = mean(|e| e.text_modulated);
            let operative = (sa_pre + loa_pre + text) / 3.0;
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
                step.step, operative, sa_src, sa_pre, sa_post, loa_src, loa_pre, loa_post, text
            ));
        }
        out
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = TraceMeta {
            steps: self.steps.len(),
            latent_grid: self.final_latent.dim(),
            layer_grids: self.layer_grids.clone(),
            head_count: self.head_count,
        };
        atomic_write(&dir.join("trace_meta.json"), &serde_json::to_vec_pretty(&meta)?)?;
        for step in &self.steps {
            latent_container(&step.edited, "latent_edited")?
                .write_to(&dir.join(format!("step{:03}_edited.tns", step.step)))?;
            latent_container(&step.reference, "latent_reference")?
                .write_to(&dir.join(format!("step{:03}_reference.tns", step.step)))?;
        }
        latent_container(&self.final_latent, "latent_final")?.write_to(&dir.join("final.tns"))?;
        let entropies: Vec<StepEntropies> = self
            .steps
            .iter()
            .map(|s| StepEntropies {
                step: s.step,
                entropies: s.entropies.clone(),
            })
            .collect();
        atomic_write(
            &dir.join("entropies.json"),
            &serde_json::to_vec_pretty(&entropies)?,
        )?;
        atomic_write(&dir.join("entropy.csv"), self.entropy_csv().as_bytes())?;
        Ok(())
    }

    /// Reload a saved trace (latents at f32 precision).
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let meta: TraceMeta =
            serde_json::from_slice(&std::fs::read(dir.join("trace_meta.json"))?)?;
        let entropies: Vec<StepEntropies> =
            serde_json::from_slice(&std::fs::read(dir.join("entropies.json"))?)?;
        if entropies.len() != meta.steps {
            return Err(PolyError::Format(
                "entropy record count disagrees with trace meta".into(),
            ));
        }
        let mut steps = Vec::with_capacity(meta.steps);
        for rec in entropies {
            let edited = latent_from_container(&TensorContainer::read_from(
                &dir.join(format!("step{:03}_edited.tns", rec.step)),
            )?)?;
            let reference = latent_from_container(&TensorContainer::read_from(
                &dir.join(format!("step{:03}_reference.tns", rec.step)),
            )?)?;
            steps.push(TraceStep {
                step: rec.step,
                edited,
                reference,
                entropies: rec.entropies,
            });
        }
        let final_latent =
            latent_from_container(&TensorContainer::read_from(&dir.join("final.tns"))?)?;
        Ok(Self {
            steps,
            final_latent,
            layer_grids: meta.layer_grids,
            head_count: meta.head_count,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TraceMeta {
    steps: usize,
    latent_grid: (usize, usize),
    layer_grids: Vec<(usize, usize)>,
    head_count: usize,
}

#[derive(Serialize, Deserialize)]
struct StepEntropies {
    step: usize,
    entropies: Vec<LayerEntropy>,
}

/// Embed a mel spectrogram into the model's latent grid: area-resize, then
/// standardize to zero mean and unit-ish variance.
pub fn encode_latent(x0: &MelSpectrogram, model: &ToyModel) -> Result<Array2<f64>> {
    let resized = area_resize(x0.values(), model.latent_grid())?;
    let n = resized.len() as f64;
    let mean = resized.iter().sum::<f64>() / n;
    let var = resized.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(resized.mapv(|v| (v - mean) / (std + 1e-8)))
}

/// Deterministic forward noising with per-step logit caching.
///
/// Returns the noised latent and a cache holding, for every (step, layer),
/// the raw self- and acoustic-style cross-attention logits of that step's
/// forward pass.
pub fn invert(
    x0: &MelSpectrogram,
    model: &ToyModel,
    steps: usize,
) -> Result<(Array2<f64>, LogitCache)> {
    if steps == 0 {
        return Err(PolyError::InvalidInput("steps must be >= 1".into()));
    }
    let mut z = encode_latent(x0, model)?;
    let mut cache_steps = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (eps, layers) = forward_vanilla(model, &z)?;
        cache_steps.push(StepCache { layers });
        z = &z * NOISE_KEEP + &eps * NOISE_SCALE;
    }
    Ok((
        z,
        LogitCache {
            steps: cache_steps,
            layer_grids: model.layer_grids(),
        },
    ))
}

/// Run the editing loop from a noised latent under attention calibration.
///
/// Per step (walking the cached schedule backwards) and per layer in the
/// config's layer set: the prior is resized to the layer grid and flattened;
/// self/acoustic-style blocks source-interpolate against the step's cached
/// logits; text cross-attention receives the `lambda_at` bias. Layers outside
/// the set run vanilla attention. A zero-prior reference path advances in
/// parallel and is recorded alongside.
pub fn edit(
    z_top: &Array2<f64>,
    cache: &LogitCache,
    prior: &AcousticPrior,
    mask: &TokenMask,
    config: &CalibrationConfig,
    model: &ToyModel,
) -> Result<EditTrace> {
    if cache.layer_grids != model.layer_grids() {
        return Err(PolyError::ShapeMismatch(
            "cache layer grids disagree with model".into(),
        ));
    }
    if cache.num_steps() == 0 {
        return Err(PolyError::InvalidInput("cache holds no steps".into()));
    }
    if z_top.dim() != model.latent_grid() {
        return Err(PolyError::ShapeMismatch(format!(
            "latent {:?} vs model grid {:?}",
            z_top.dim(),
            model.latent_grid()
        )));
    }
    if mask.len() != model.text_len() {
        return Err(PolyError::ShapeMismatch(format!(
            "token mask length {} vs model text length {}",
            mask.len(),
            model.text_len()
        )));
    }
    if let Some(&bad) = config.layer_set.iter().find(|&&l| l >= model.num_layers()) {
        return Err(PolyError::InvalidInput(format!(
            "layer {bad} outside the model's {} layers",
            model.num_layers()
        )));
    }
    for (l, step) in cache.steps[0].layers.iter().enumerate() {
        let cells = model.layer_spec(l).grid.0 * model.layer_spec(l).grid.1;
        let heads = model.layer_spec(l).heads;
        if step.sa.energies().dim() != (heads, cells, cells)
            || step.loa.energies().dim() != (heads, cells, model.loa_len())
        {
            return Err(PolyError::ShapeMismatch(format!(
                "cached logits of layer {l} disagree with model geometry"
            )));
        }
    }

    // per-layer gates: flattened prior at layer resolution for calibrated
    // layers, None for vanilla ones; the reference path gates everything at 0
    let mut gates: Vec<Option<Vec<f64>>> = Vec::with_capacity(model.num_layers());
    let mut ref_gates: Vec<Option<Vec<f64>>> = Vec::with_capacity(model.num_layers());
    for l in 0..model.num_layers() {
        if config.layer_set.contains(&l) {
            let grid = model.layer_spec(l).grid;
            gates.push(Some(resize(prior, grid)?.flatten()));
            ref_gates.push(Some(vec![0.0; grid.0 * grid.1]));
        } else {
            gates.push(None);
            ref_gates.push(None);
        }
    }

    let total = cache.num_steps();
    let mut z_edit = z_top.clone();
    let mut z_ref = z_top.clone();
    let mut trace_steps = Vec::with_capacity(total);
    for step_idx in 0..total {
        let t = total - 1 - step_idx;
        let lambda = crate::calibration::lambda_at(config, step_idx, total)?;
        let (eps_edit, entropies) = forward_calibrated(
            model,
            &z_edit,
            cache.step(t),
            &gates,
            mask,
            lambda,
            config.guidance_scale,
            true,
        )?;
        let (eps_ref, _) = forward_calibrated(
            model,
            &z_ref,
            cache.step(t),
            &ref_gates,
            mask,
            0.0,
            config.guidance_scale,
            false,
        )?;
        z_edit = (&z_edit - &(&eps_edit * NOISE_SCALE)) / NOISE_KEEP;
        z_ref = (&z_ref - &(&eps_ref * NOISE_SCALE)) / NOISE_KEEP;
        trace_steps.push(TraceStep {
            step: step_idx,
            edited: z_edit.clone(),
            reference: z_ref.clone(),
            entropies,
        });
    }

    Ok(EditTrace {
        final_latent: z_edit,
        steps: trace_steps,
        layer_grids: model.layer_grids(),
        head_count: model.layer_spec(0).heads,
    })
}

/// The uncalibrated reference trajectory: editing with an all-zero prior and
/// zero modulation strength over the model's default (down) layer set.
pub fn reconstruct(
    z_top: &Array2<f64>,
    cache: &LogitCache,
    model: &ToyModel,
) -> Result<EditTrace> {
    let (rows, cols) = model.latent_grid();
    let zero = AcousticPrior::new(Array2::zeros((rows, cols)), PriorKind::Irm)?;
    let mask = crate::calibration::build_token_mask(model.text_len(), 0, 0)?;
    let config = CalibrationConfig::new(
        0.0,
        crate::calibration::LambdaSchedule::Constant,
        model.down_layers(),
        DEFAULT_GUIDANCE,
    )?;
    edit(z_top, cache, &zero, &mask, &config, model)
}

/// One vanilla forward pass: model output plus the cacheable block logits.
fn forward_vanilla(model: &ToyModel, z: &Array2<f64>) -> Result<(Array2<f64>, Vec<BlockCache>)> {
    let mut eps = Array2::<f64>::zeros(model.latent_grid());
    let mut blocks = Vec::with_capacity(model.num_layers());
    for layer in 0..model.num_layers() {
        let feat = model.layer_features(layer, z)?;
        let sa = model.block_logits(layer, AttentionBlock::SelfAttn, &feat)?;
        let text = model.block_logits(layer, AttentionBlock::TextCross, &feat)?;
        let loa = model.block_logits(layer, AttentionBlock::LoaCross, &feat)?;
        let contribution = layer_contribution(model, layer, &feat, &sa, &text, &loa, 1.0)?;
        eps = eps + contribution;
        blocks.push(BlockCache { sa, loa });
    }
    Ok((eps / model.num_layers() as f64, blocks))
}

/// One calibrated forward pass; returns the model output and, when asked,
/// entropy snapshots for every calibrated layer.
#[allow(clippy::too_many_arguments)]
fn forward_calibrated(
    model: &ToyModel,
    z: &Array2<f64>,
    cached: &StepCache,
    gates: &[Option<Vec<f64>>],
    mask: &TokenMask,
    lambda: f64,
    guidance: f64,
    want_entropy: bool,
) -> Result<(Array2<f64>, Vec<LayerEntropy>)> {
    let mut eps = Array2::<f64>::zeros(model.latent_grid());
    let mut entropies = Vec::new();
    for (layer, layer_gate) in gates.iter().enumerate() {
        let feat = model.layer_features(layer, z)?;
        let sa_curr = model.block_logits(layer, AttentionBlock::SelfAttn, &feat)?;
        let text_curr = model.block_logits(layer, AttentionBlock::TextCross, &feat)?;
        let loa_curr = model.block_logits(layer, AttentionBlock::LoaCross, &feat)?;

        let (sa_used, text_used, loa_used) = match layer_gate {
            Some(gate) => {
                let block = &cached.layers[layer];
                (
                    source_interpolate(&block.sa, &sa_curr, gate)?,
                    acoustic_modulate(&text_curr, gate, mask, lambda)?,
                    source_interpolate(&block.loa, &loa_curr, gate)?,
                )
            }
            None => (sa_curr.clone(), text_curr.clone(), loa_curr.clone()),
        };

        if want_entropy {
            if let Some(gate) = layer_gate {
                let block = &cached.layers[layer];
                entropies.push(LayerEntropy {
                    layer,
                    sa: mix_entropy(&block.sa, &sa_curr, &sa_used, gate)?,
                    loa: mix_entropy(&block.loa, &loa_curr, &loa_used, gate)?,
                    text_modulated: map_entropy(&softmax_rows(&text_used)?)?,
                });
            }
        }

        let contribution =
            layer_contribution(model, layer, &feat, &sa_used, &text_used, &loa_used, guidance)?;
        eps = eps + contribution;
    }
    Ok((eps / model.num_layers() as f64, entropies))
}

/// Fold the three blocks of one layer into a latent-resolution contribution:
/// `(sa + guidance * text + loa) / 3` per query, resized to the latent grid.
fn layer_contribution(
    model: &ToyModel,
    layer: usize,
    feat: &Array2<f64>,
    sa: &AttentionLogits,
    text: &AttentionLogits,
    loa: &AttentionLogits,
    guidance: f64,
) -> Result<Array2<f64>> {
    let sa_out = model.block_output(
        layer,
        AttentionBlock::SelfAttn,
        softmax_rows(sa)?.probs(),
        feat,
    );
    let text_out = model.block_output(
        layer,
        AttentionBlock::TextCross,
        softmax_rows(text)?.probs(),
        feat,
    );
    let loa_out = model.block_output(
        layer,
        AttentionBlock::LoaCross,
        softmax_rows(loa)?.probs(),
        feat,
    );
    let combined: Vec<f64> = sa_out
        .iter()
        .zip(&text_out)
        .zip(&loa_out)
        .map(|((s, t), l)| (s + guidance * t + l) / 3.0)
        .collect();
    model.fold_to_latent(layer, &combined)
}

fn map_entropy(map: &AttentionMap) -> Result<f64> {
    attention_entropy(std::slice::from_ref(map), ENTROPY_EPSILON)
}

/// Entropies of the source map, the operative pre-softmax mixture, and the
/// post-softmax alternative built from the same gate.
fn mix_entropy(
    src: &AttentionLogits,
    curr: &AttentionLogits,
    used: &AttentionLogits,
    gate: &[f64],
) -> Result<MixEntropy> {
    let src_map = softmax_rows(src)?;
    let curr_map = softmax_rows(curr)?;
    let used_map = softmax_rows(used)?;
    let (h, q, k) = src_map.probs().dim();
    let mut post = Array3::<f64>::zeros((h, q, k));
    for hi in 0..h {
        for (qi, &g) in gate.iter().enumerate() {
            for ki in 0..k {
                post[(hi, qi, ki)] =
                    (1.0 - g) * src_map.probs()[(hi, qi, ki)] + g * curr_map.probs()[(hi, qi, ki)];
            }
        }
    }
    Ok(MixEntropy {
        source: map_entropy(&src_map)?,
        premix: map_entropy(&used_map)?,
        postmix: map_entropy(&AttentionMap::new(post)?)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{build_token_mask, LambdaSchedule};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn synthetic_mel(seed: u64, frames: usize, bins: usize) -> MelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MelSpectrogram::new(
            Array2::from_shape_fn((frames, bins), |_| rng.random_range(-1.0..1.0)),
            false,
            1e-5,
        )
        .unwrap()
    }

    fn default_config(model: &ToyModel, lambda: f64) -> CalibrationConfig {
        CalibrationConfig::new(
            lambda,
            LambdaSchedule::Constant,
            model.down_layers(),
            DEFAULT_GUIDANCE,
        )
        .unwrap()
    }

    fn constant_prior(model: &ToyModel, value: f64) -> AcousticPrior {
        let (r, c) = model.latent_grid();
        AcousticPrior::new(Array2::from_elem((r, c), value), PriorKind::IrmMel).unwrap()
    }

    #[test]
    fn cache_counting_contract() {
        let model = ToyModel::standard(1);
        let x0 = synthetic_mel(2, 32, 64);
        let (_, cache) = invert(&x0, &model, 1).unwrap();
        assert_eq!(cache.num_steps(), 1);
        assert_eq!(cache.num_layers(), 4);
        // exactly 1 x layers x 2 cached tensors
        let tensors: usize = (0..cache.num_steps())
            .map(|t| cache.step(t).layers.len() * 2)
            .sum();
        assert_eq!(tensors, 8);
    }

    #[test]
    fn inversion_deterministic() {
        let model = ToyModel::standard(11);
        let x0 = synthetic_mel(3, 40, 64);
        let (za, ca) = invert(&x0, &model, 4).unwrap();
        let (zb, cb) = invert(&x0, &model, 4).unwrap();
        assert_eq!(za, zb);
        for t in 0..4 {
            for l in 0..4 {
                assert_eq!(
                    ca.step(t).layers[l].sa.energies(),
                    cb.step(t).layers[l].sa.energies()
                );
                assert_eq!(
                    ca.step(t).layers[l].loa.energies(),
                    cb.step(t).layers[l].loa.energies()
                );
            }
        }
    }

    #[test]
    fn cache_round_trips_losslessly() {
        let model = ToyModel::standard(5);
        let x0 = synthetic_mel(6, 32, 64);
        let (_, cache) = invert(&x0, &model, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cache.save_dir(dir.path()).unwrap();
        let back = LogitCache::load_dir(dir.path()).unwrap();
        assert_eq!(back.num_steps(), cache.num_steps());
        assert_eq!(back.layer_grids(), cache.layer_grids());
        for t in 0..cache.num_steps() {
            for l in 0..cache.num_layers() {
                let (a, b) = (&cache.step(t).layers[l], &back.step(t).layers[l]);
                for (x, y) in a.sa.energies().iter().zip(b.sa.energies().iter()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
                for (x, y) in a.loa.energies().iter().zip(b.loa.energies().iter()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn preservation_identity_zero_prior_zero_lambda() {
        for seed in [0u64, 7, 99] {
            let model = ToyModel::standard(seed);
            let x0 = synthetic_mel(seed ^ 0xff, 32, 64);
            let (z_top, cache) = invert(&x0, &model, 4).unwrap();
            let zero = constant_prior(&model, 0.0);
            let mask = build_token_mask(model.text_len(), 2, 4).unwrap();
            let trace = edit(&z_top, &cache, &zero, &mask, &default_config(&model, 0.0), &model)
                .unwrap();
            let recon = reconstruct(&z_top, &cache, &model).unwrap();
            for (a, b) in trace.steps().iter().zip(recon.steps()) {
                let max = a
                    .edited
                    .iter()
                    .zip(b.edited.iter())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0f64, f64::max);
                assert!(max <= 1e-5, "step {}: max diff {max}", a.step);
                // the in-run reference path coincides as well
                let max_ref = a
                    .edited
                    .iter()
                    .zip(a.reference.iter())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0f64, f64::max);
                assert!(max_ref == 0.0, "edited/reference diverged: {max_ref}");
            }
        }
    }

    #[test]
    fn ones_prior_equals_empty_layer_set_at_zero_lambda() {
        let model = ToyModel::standard(21);
        let x0 = synthetic_mel(22, 32, 64);
        let (z_top, cache) = invert(&x0, &model, 3).unwrap();
        let ones = constant_prior(&model, 1.0);
        let mask = build_token_mask(model.text_len(), 1, 3).unwrap();
        let with_ones = edit(&z_top, &cache, &ones, &mask, &default_config(&model, 0.0), &model)
            .unwrap();
        let empty_set = CalibrationConfig::new(
            0.0,
            LambdaSchedule::Constant,
            BTreeSet::new(),
            DEFAULT_GUIDANCE,
        )
        .unwrap();
        let vanilla = edit(&z_top, &cache, &ones, &mask, &empty_set, &model).unwrap();
        for (a, b) in with_ones.steps().iter().zip(vanilla.steps()) {
            let max = a
                .edited
                .iter()
                .zip(b.edited.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            assert!(max < 1e-5, "step {}: {max}", a.step);
        }
    }

    #[test]
    fn entropy_snapshots_cover_layer_set() {
        let model = ToyModel::standard(31);
        let x0 = synthetic_mel(32, 32, 64);
        let (z_top, cache) = invert(&x0, &model, 3).unwrap();
        let prior = constant_prior(&model, 0.5);
        let mask = build_token_mask(model.text_len(), 2, 5).unwrap();
        let trace = edit(&z_top, &cache, &prior, &mask, &default_config(&model, 2.5), &model)
            .unwrap();
        assert_eq!(trace.steps().len(), 3);
        for step in trace.steps() {
            let layers: Vec<usize> = step.entropies.iter().map(|e| e.layer).collect();
            assert_eq!(layers, vec![0, 1]);
            for e in &step.entropies {
                for v in [
                    e.sa.source,
                    e.sa.premix,
                    e.sa.postmix,
                    e.loa.source,
                    e.loa.premix,
                    e.loa.postmix,
                    e.text_modulated,
                ] {
                    assert!(v.is_finite() && v >= 0.0);
                }
            }
        }
        let csv = trace.entropy_csv();
        assert!(csv.lines().count() == 4, "{csv}");
    }

    #[test]
    fn entropy_report_aggregates_operative_maps() {
        let model = ToyModel::standard(71);
        let x0 = synthetic_mel(72, 32, 64);
        let (z_top, cache) = invert(&x0, &model, 3).unwrap();
        let prior = constant_prior(&model, 0.6);
        let mask = build_token_mask(model.text_len(), 1, 3).unwrap();
        let trace = edit(&z_top, &cache, &prior, &mask, &default_config(&model, 2.5), &model)
            .unwrap();
        let report = trace.entropy_report().unwrap();
        assert_eq!(report.per_step.len(), 3);
        assert_eq!(report.layers, vec![0, 1]);
        assert_eq!(report.head_count, 4);
        assert_eq!(report.epsilon, ENTROPY_EPSILON);
        let csv = report.to_csv();
        assert!(csv.starts_with("step,entropy\n"));
        assert_eq!(csv.lines().count(), 4);
        // the aggregate matches the rich CSV's entropy column
        for ((step, h), line) in report.per_step.iter().zip(trace.entropy_csv().lines().skip(1)) {
            let mut cols = line.split(',');
            assert_eq!(cols.next().unwrap(), step.to_string());
            let rich: f64 = cols.next().unwrap().parse().unwrap();
            assert!((rich - h).abs() < 1e-9);
        }
    }

    #[test]
    fn edit_fully_deterministic() {
        let model = ToyModel::standard(41);
        let x0 = synthetic_mel(42, 36, 64);
        let (z_top, cache) = invert(&x0, &model, 4).unwrap();
        let prior = constant_prior(&model, 0.7);
        let mask = build_token_mask(model.text_len(), 0, 2).unwrap();
        let cfg = default_config(&model, 2.5);
        let a = edit(&z_top, &cache, &prior, &mask, &cfg, &model).unwrap();
        let b = edit(&z_top, &cache, &prior, &mask, &cfg, &model).unwrap();
        for (x, y) in a.final_latent().iter().zip(b.final_latent().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn trace_round_trip() {
        let model = ToyModel::standard(51);
        let x0 = synthetic_mel(52, 32, 64);
        let (z_top, cache) = invert(&x0, &model, 2).unwrap();
        let prior = constant_prior(&model, 0.4);
        let mask = build_token_mask(model.text_len(), 1, 2).unwrap();
        let trace = edit(&z_top, &cache, &prior, &mask, &default_config(&model, 1.0), &model)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        trace.save_dir(dir.path()).unwrap();
        let back = EditTrace::load_dir(dir.path()).unwrap();
        assert_eq!(back.steps().len(), trace.steps().len());
        assert_eq!(back.layer_grids(), trace.layer_grids());
        for (a, b) in trace.steps().iter().zip(back.steps()) {
            assert_eq!(a.entropies, b.entropies);
            for (x, y) in a.edited.iter().zip(b.edited.iter()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        assert_eq!(back.entropy_csv(), trace.entropy_csv());
    }

    #[test]
    fn mismatched_cache_rejected() {
        let model = ToyModel::standard(61);
        let other = ToyModel::new(
            61,
            vec![LayerSpec { grid: (8, 8), heads: 2, head_dim: 8 }],
            16,
            8,
            8,
            2.0,
        )
        .unwrap();
        let x0 = synthetic_mel(62, 32, 64);
        let (z_top, cache) = invert(&x0, &model, 2).unwrap();
        let prior = constant_prior(&model, 0.5);
        let mask = build_token_mask(model.text_len(), 0, 1).unwrap();
        let cfg = default_config(&model, 1.0);
        assert!(edit(&z_top, &cache, &prior, &mask, &cfg, &other).is_err());
        // wrong mask length
        let short_mask = build_token_mask(4, 0, 1).unwrap();
        assert!(edit(&z_top, &cache, &prior, &short_mask, &cfg, &model).is_err());
        // out-of-range layer set
        let bad_cfg = CalibrationConfig::new(
            1.0,
            LambdaSchedule::Constant,
            BTreeSet::from([9]),
            DEFAULT_GUIDANCE,
        )
        .unwrap();
        assert!(edit(&z_top, &cache, &prior, &mask, &bad_cfg, &model).is_err());
    }

    #[test]
    fn presoftmax_tracks_source_entropy_closer_than_postsoftmax() {
        // both mixture variants are recorded in the same run; averaged over
        // steps and layers, the operative pre-softmax mixture must stay
        // closer to the source-map entropy than the post-softmax blend
        let mut pre_gap = 0.0;
        let mut post_gap = 0.0;
        let mut count = 0usize;
        for seed in 0..5u64 {
            let model = ToyModel::standard(seed);
            let x0 = synthetic_mel(seed + 100, 40, 64);
            let (z_top, cache) = invert(&x0, &model, 4).unwrap();
            let prior = constant_prior(&model, 0.5);
            let mask = build_token_mask(model.text_len(), 2, 4).unwrap();
            let trace = edit(&z_top, &cache, &prior, &mask, &default_config(&model, 2.5), &model)
                .unwrap();
            for step in trace.steps() {
                for e in &step.entropies {
                    for mix in [&e.sa, &e.loa] {
                        pre_gap += (mix.premix - mix.source).abs();
                        post_gap += (mix.postmix - mix.source).abs();
                        count += 1;
                    }
                }
            }
        }
        let (pre_gap, post_gap) = (pre_gap / count as f64, post_gap / count as f64);
        assert!(
            pre_gap < post_gap,
            "pre-softmax gap {pre_gap} not below post-softmax gap {post_gap}"
        );
    }

    #[test]
    fn localized_prior_changes_stay_localized() {
        // single-layer model; the prior differs from zero only in the
        // top-left quadrant R. Row-gated calibration keeps first-order
        // changes inside R's rows; leakage elsewhere comes only from
        // attention mixing across steps and must stay well below the
        // in-rectangle change.
        let model = ToyModel::new(
            77,
            vec![LayerSpec { grid: (12, 8), heads: 2, head_dim: 8 }],
            16,
            8,
            8,
            3.0,
        )
        .unwrap();
        let x0 = synthetic_mel(78, 24, 48);
        let (z_top, cache) = invert(&x0, &model, 4).unwrap();
        let (rows, cols) = model.latent_grid();
        let mut values = Array2::<f64>::zeros((rows, cols));
        for i in 0..rows / 2 {
            for j in 0..cols / 2 {
                values[(i, j)] = 0.9;
            }
        }
        let local = AcousticPrior::new(values, PriorKind::IrmMel).unwrap();
        let mask = build_token_mask(model.text_len(), 2, 4).unwrap();
        let cfg = CalibrationConfig::new(
            2.5,
            LambdaSchedule::Constant,
            BTreeSet::from([0]),
            DEFAULT_GUIDANCE,
        )
        .unwrap();
        let edited = edit(&z_top, &cache, &local, &mask, &cfg, &model).unwrap();
        let baseline = reconstruct(&z_top, &cache, &model).unwrap();

        let diff = edited.final_latent() - baseline.final_latent();
        let mut inside = 0.0;
        let mut inside_n = 0usize;
        let mut far = 0.0;
        let mut far_n = 0usize;
        for ((i, j), &d) in diff.indexed_iter() {
            if i < rows / 2 && j < cols / 2 {
                inside += d.abs();
                inside_n += 1;
            } else if i >= rows / 2 && j >= cols / 2 {
                // shares neither rows nor columns with R
                far += d.abs();
                far_n += 1;
            }
        }
        let inside_mean = inside / inside_n as f64;
        let far_mean = far / far_n as f64;
        assert!(inside_mean > 0.0, "edit had no effect inside the rectangle");
        assert!(
            far_mean < 10.0 * inside_mean,
            "far leakage {far_mean} vs inside change {inside_mean}"
        );
    }
}
