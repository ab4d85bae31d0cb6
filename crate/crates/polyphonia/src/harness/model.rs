//! A deterministic toy attention stack standing in for a diffusion U-Net.
//!
//! Each layer owns a latent grid, fixed pseudo-random projection weights for
//! three attention blocks (self, text cross, acoustic-style cross), a
//! positional embedding, and an output projection. The latent is a 2-D grid;
//! layer features embed each grid cell as `value * embed + positional`, so
//! attention outputs depend on the latent and the denoiser stays a pure
//! deterministic function of (latent, weights).
//!
//! Attention logits are rounded to f32 precision at creation: caches persist
//! in a binary32 container and must round-trip losslessly.

use crate::calibration::AttentionLogits;
use crate::error::{PolyError, Result};
use crate::prior::area_resize;
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

/// Geometry of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub grid: (usize, usize),
    pub heads: usize,
    pub head_dim: usize,
}

/// Attention block identifier within a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionBlock {
    SelfAttn,
    TextCross,
    LoaCross,
}

struct BlockWeights {
    wq: Vec<Array2<f64>>,
    wk: Vec<Array2<f64>>,
    wv: Vec<Array2<f64>>,
}

struct Layer {
    spec: LayerSpec,
    sa: BlockWeights,
    text: BlockWeights,
    loa: BlockWeights,
    positional: Array2<f64>,
    cell_embed: Array1<f64>,
    out_proj: Array1<f64>,
}

/// The toy model: an ordered stack of attention layers plus fixed
/// conditioning sequences, all derived from one seed.
pub struct ToyModel {
    layers: Vec<Layer>,
    text_context: Array2<f64>,
    loa_context: Array2<f64>,
    feature_dim: usize,
    logit_gain: f64,
    seed: u64,
}

impl ToyModel {
    /// Build a model from explicit geometry. Weight entries are uniform in
    /// [-a, a] with a chosen so logits land at order one before the gain.
    pub fn new(
        seed: u64,
        specs: Vec<LayerSpec>,
        feature_dim: usize,
        text_len: usize,
        loa_len: usize,
        logit_gain: f64,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(PolyError::InvalidInput("model needs >= 1 layer".into()));
        }
        if feature_dim == 0 || text_len == 0 || loa_len == 0 {
            return Err(PolyError::InvalidInput(
                "feature_dim, text_len, loa_len must be positive".into(),
            ));
        }
        for s in &specs {
            if s.grid.0 == 0 || s.grid.1 == 0 || s.heads == 0 || s.head_dim == 0 {
                return Err(PolyError::InvalidInput(
                    "layer dims must be positive".into(),
                ));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proj_scale = (3.0 / feature_dim as f64).sqrt();
        let fill = |rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64| {
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
        };

        let text_context = fill(&mut rng, text_len, feature_dim, 1.0);
        let loa_context = fill(&mut rng, loa_len, feature_dim, 1.0);

        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let cells = spec.grid.0 * spec.grid.1;
            let block = |rng: &mut ChaCha8Rng| BlockWeights {
                wq: (0..spec.heads)
                    .map(|_| fill(rng, feature_dim, spec.head_dim, proj_scale))
                    .collect(),
                wk: (0..spec.heads)
                    .map(|_| fill(rng, feature_dim, spec.head_dim, proj_scale))
                    .collect(),
                wv: (0..spec.heads)
                    .map(|_| fill(rng, feature_dim, spec.head_dim, proj_scale))
                    .collect(),
            };
            let sa = block(&mut rng);
            let text = block(&mut rng);
            let loa = block(&mut rng);
            let positional = fill(&mut rng, cells, feature_dim, 1.0);
            let cell_embed =
                Array1::from_shape_fn(feature_dim, |_| rng.random_range(-1.0..1.0));
            let out_proj =
                Array1::from_shape_fn(spec.head_dim, |_| rng.random_range(-1.0..1.0));
            layers.push(Layer {
                spec,
                sa,
                text,
                loa,
                positional,
                cell_embed,
                out_proj,
            });
        }

        Ok(Self {
            layers,
            text_context,
            loa_context,
            feature_dim,
            logit_gain,
            seed,
        })
    }

    /// The default desk-scale stack: four layers, 16x8 halving to 8x4 grids,
    /// 4 heads of dimension 16, text length 8.
    pub fn standard(seed: u64) -> Self {
        let specs = vec![
            LayerSpec { grid: (16, 8), heads: 4, head_dim: 16 },
            LayerSpec { grid: (16, 8), heads: 4, head_dim: 16 },
            LayerSpec { grid: (8, 4), heads: 4, head_dim: 16 },
            LayerSpec { grid: (8, 4), heads: 4, head_dim: 16 },
        ];
        Self::new(seed, specs, 32, 8, 8, 4.0).expect("standard geometry is valid")
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_grids(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.spec.grid).collect()
    }

    pub fn layer_spec(&self, layer: usize) -> LayerSpec {
        self.layers[layer].spec
    }

    /// Grid of the first layer; latents live at this resolution.
    pub fn latent_grid(&self) -> (usize, usize) {
        self.layers[0].spec.grid
    }

    pub fn text_len(&self) -> usize {
        self.text_context.nrows()
    }

    pub fn loa_len(&self) -> usize {
        self.loa_context.nrows()
    }

    /// The first half of the stack; calibration applies here by default.
    pub fn down_layers(&self) -> BTreeSet<usize> {
        (0..self.layers.len().div_ceil(2)).collect()
    }

    /// Embed a latent grid into one layer's feature space: resize to the
    /// layer grid, then per cell `value * cell_embed + positional`.
    pub(crate) fn layer_features(&self, layer: usize, latent: &Array2<f64>) -> Result<Array2<f64>> {
        let l = &self.layers[layer];
        let resized = area_resize(latent, l.spec.grid)?;
        let cells = l.spec.grid.0 * l.spec.grid.1;
        let mut feat = Array2::<f64>::zeros((cells, self.feature_dim));
        for (i, &v) in resized.iter().enumerate() {
            for f in 0..self.feature_dim {
                feat[(i, f)] = v * l.cell_embed[f] + l.positional[(i, f)];
            }
        }
        Ok(feat)
    }

    fn block_weights(&self, layer: usize, block: AttentionBlock) -> &BlockWeights {
        let l = &self.layers[layer];
        match block {
            AttentionBlock::SelfAttn => &l.sa,
            AttentionBlock::TextCross => &l.text,
            AttentionBlock::LoaCross => &l.loa,
        }
    }

    fn block_context<'a>(&'a self, block: AttentionBlock, feat: &'a Array2<f64>) -> &'a Array2<f64> {
        match block {
            AttentionBlock::SelfAttn => feat,
            AttentionBlock::TextCross => &self.text_context,
            AttentionBlock::LoaCross => &self.loa_context,
        }
    }

    /// Scaled dot-product energies of one block, all heads, snapped to f32.
    pub(crate) fn block_logits(
        &self,
        layer: usize,
        block: AttentionBlock,
        feat: &Array2<f64>,
    ) -> Result<AttentionLogits> {
        let weights = self.block_weights(layer, block);
        let context = self.block_context(block, feat);
        let spec = self.layers[layer].spec;
        let scale = self.logit_gain / (spec.head_dim as f64).sqrt();
        let (lq, lk) = (feat.nrows(), context.nrows());
        let mut energies = Array3::<f64>::zeros((spec.heads, lq, lk));
        for h in 0..spec.heads {
            let q = feat.dot(&weights.wq[h]);
            let k = context.dot(&weights.wk[h]);
            let e = q.dot(&k.t());
            for ((i, j), &v) in e.indexed_iter() {
                // binary32 snap keeps cached logits exactly representable
                energies[(h, i, j)] = (v * scale) as f32 as f64;
            }
        }
        AttentionLogits::new(energies)
    }

    /// Contract one block's attention probabilities back to one scalar per
    /// query: per head `(P V) . out_proj`, averaged over heads.
    pub(crate) fn block_output(
        &self,
        layer: usize,
        block: AttentionBlock,
        probs: &Array3<f64>,
        feat: &Array2<f64>,
    ) -> Vec<f64> {
        let weights = self.block_weights(layer, block);
        let context = self.block_context(block, feat);
        let l = &self.layers[layer];
        let (heads, lq, _lk) = probs.dim();
        let mut out = vec![0.0f64; lq];
        for h in 0..heads {
            let v = context.dot(&weights.wv[h]);
            let p = probs.index_axis(ndarray::Axis(0), h);
            let mixed = p.dot(&v); // lq x head_dim
            for (i, slot) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for d in 0..l.spec.head_dim {
                    acc += mixed[(i, d)] * l.out_proj[d];
                }
                *slot += acc;
            }
        }
        out.iter_mut().for_each(|v| *v /= heads as f64);
        out
    }

    /// Fold per-query block outputs into a latent-resolution contribution.
    pub(crate) fn fold_to_latent(&self, layer: usize, per_query: &[f64]) -> Result<Array2<f64>> {
        let grid = self.layers[layer].spec.grid;
        let as_grid = Array2::from_shape_vec(grid, per_query.to_vec())
            .map_err(|e| PolyError::ShapeMismatch(e.to_string()))?;
        area_resize(&as_grid, self.latent_grid())
    }
}
