//! Acoustic-informed attention calibration.
//!
//! Two mechanisms act on raw attention logits, before the softmax:
//!
//! - **Source interpolation** blends cached inversion-path logits with the
//!   editing-path logits per query row: rows where the acoustic prior is low
//!   replay the source structure, rows where it is high follow the edit.
//!   Operating on logits (not probabilities) keeps the softmax's non-linear
//!   sharpening, so mixed rows stay peaked instead of smearing.
//! - **Acoustic modulation** adds `lambda * g_i * m_j` to text cross-attention
//!   logits, boosting exactly the (latent cell, target token) pairs where the
//!   prior says the target lives.
//!
//! Both reduce to the identity at their endpoints (g in {0,1}, lambda = 0),
//! bitwise; the implementations branch explicitly on those endpoints so the
//! reductions are exact rather than accidental.

use crate::error::{PolyError, Result};
use ndarray::{Array2, Array3};
use std::collections::BTreeSet;
use std::fmt;

/// Raw attention energies, `heads x L_q x L_k`, already scaled by 1/sqrt(d).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLogits {
    energies: Array3<f64>,
}

impl AttentionLogits {
    pub fn new(energies: Array3<f64>) -> Result<Self> {
        let (h, q, k) = energies.dim();
        if h == 0 || q == 0 || k == 0 {
            return Err(PolyError::Degenerate("empty logit tensor".into()));
        }
        if energies.iter().any(|v| !v.is_finite()) {
            return Err(PolyError::InvalidInput(
                "attention logits must be finite".into(),
            ));
        }
        Ok(Self { energies })
    }

    pub fn energies(&self) -> &Array3<f64> {
        &self.energies
    }

    pub fn heads(&self) -> usize {
        self.energies.dim().0
    }

    /// Query count L_q.
    pub fn queries(&self) -> usize {
        self.energies.dim().1
    }

    /// Key count L_k.
    pub fn keys(&self) -> usize {
        self.energies.dim().2
    }
}

/// Row-normalized attention probabilities, `heads x L_q x L_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    probs: Array3<f64>,
}

impl AttentionMap {
    pub fn new(probs: Array3<f64>) -> Result<Self> {
        let (h, q, _) = probs.dim();
        if probs.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(PolyError::InvalidInput(
                "attention probabilities must lie in [0,1]".into(),
            ));
        }
        for hi in 0..h {
            for qi in 0..q {
                let sum: f64 = probs
                    .index_axis(ndarray::Axis(0), hi)
                    .row(qi)
                    .iter()
                    .sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(PolyError::InvalidInput(format!(
                        "row ({hi},{qi}) sums to {sum}, not 1"
                    )));
                }
            }
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &Array3<f64> {
        &self.probs
    }

    pub fn heads(&self) -> usize {
        self.probs.dim().0
    }

    pub fn queries(&self) -> usize {
        self.probs.dim().1
    }

    pub fn keys(&self) -> usize {
        self.probs.dim().2
    }
}

/// Binary token mask marking the target-entity span within the prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    bits: Vec<u8>,
    span: (usize, usize), // inclusive
}

impl TokenMask {
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Inclusive (start, end) indices of the target span.
    pub fn target_span(&self) -> (usize, usize) {
        self.span
    }
}

/// Build a token mask with ones on the inclusive span `[start, end]`.
pub fn build_token_mask(token_count: usize, start: usize, end: usize) -> Result<TokenMask> {
    if token_count == 0 {
        return Err(PolyError::InvalidInput("token_count must be > 0".into()));
    }
    if start > end || end >= token_count {
        return Err(PolyError::InvalidInput(format!(
            "span [{start}, {end}] out of range for {token_count} tokens"
        )));
    }
    let bits = (0..token_count)
        .map(|i| u8::from(i >= start && i <= end))
        .collect();
    Ok(TokenMask {
        bits,
        span: (start, end),
    })
}

/// Time-step schedule for the modulation strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaSchedule {
    Constant,
    LinearDecay,
    CosineDecay,
}

impl LambdaSchedule {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LambdaSchedule::Constant),
            "linear_decay" => Ok(LambdaSchedule::LinearDecay),
            "cosine_decay" => Ok(LambdaSchedule::CosineDecay),
            other => Err(PolyError::Config(format!(
                "unknown schedule {other:?} (want constant|linear_decay|cosine_decay)"
            ))),
        }
    }
}

impl fmt::Display for LambdaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LambdaSchedule::Constant => "constant",
            LambdaSchedule::LinearDecay => "linear_decay",
            LambdaSchedule::CosineDecay => "cosine_decay",
        };
        write!(f, "{s}")
    }
}

/// Everything the editing loop needs to know about calibration strength.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub lambda_max: f64,
    pub schedule: LambdaSchedule,
    /// Layers receiving calibrated attention; one shared lambda for all.
    pub layer_set: BTreeSet<usize>,
    pub guidance_scale: f64,
}

impl CalibrationConfig {
    pub fn new(
        lambda_max: f64,
        schedule: LambdaSchedule,
        layer_set: BTreeSet<usize>,
        guidance_scale: f64,
    ) -> Result<Self> {
        if lambda_max < 0.0 || !lambda_max.is_finite() {
            return Err(PolyError::InvalidInput(
                "lambda_max must be finite and >= 0".into(),
            ));
        }
        if !guidance_scale.is_finite() {
            return Err(PolyError::InvalidInput("guidance_scale must be finite".into()));
        }
        Ok(Self {
            lambda_max,
            schedule,
            layer_set,
            guidance_scale,
        })
    }
}

/// Default modulation strength.
pub const DEFAULT_LAMBDA: f64 = 2.5;
/// Default guidance scale for target alignment.
pub const DEFAULT_GUIDANCE: f64 = 3.5;

/// Modulation strength at editing step `t` of `total`. Step 0 is the first
/// (highest-noise) editing step; decaying schedules start at `lambda_max`
/// there and reach 0 at the final step.
pub fn lambda_at(config: &CalibrationConfig, t: usize, total: usize) -> Result<f64> {
    if total < 1 {
        return Err(PolyError::InvalidInput("total steps must be >= 1".into()));
    }
    if t >= total {
        return Err(PolyError::InvalidInput(format!(
            "step {t} out of range for {total} steps"
        )));
    }
    let progress = if total == 1 {
        0.0
    } else {
        t as f64 / (total - 1) as f64
    };
    Ok(match config.schedule {
        LambdaSchedule::Constant => config.lambda_max,
        LambdaSchedule::LinearDecay => config.lambda_max * (1.0 - progress),
        LambdaSchedule::CosineDecay => {
            config.lambda_max * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0
        }
    })
}

/// Single-head scaled dot-product energies, `E = Q K^T / sqrt(d)`.
pub fn attention_energy(q: &Array2<f64>, k: &Array2<f64>) -> Result<AttentionLogits> {
    if q.ncols() != k.ncols() {
        return Err(PolyError::ShapeMismatch(format!(
            "query dim {} vs key dim {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if q.ncols() == 0 {
        return Err(PolyError::Degenerate("zero head dimension".into()));
    }
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let e = q.dot(&k.t()) * scale;
    let (lq, lk) = e.dim();
    let flat: Vec<f64> = e.iter().copied().collect();
    AttentionLogits::new(
        Array3::from_shape_vec((1, lq, lk), flat)
            .expect("element count matches shape by construction"),
    )
}

/// Numerically stable row softmax (row max subtracted before exponentiation).
pub fn softmax_rows(logits: &AttentionLogits) -> Result<AttentionMap> {
    let e = logits.energies();
    let (h, q, k) = e.dim();
    let mut probs = Array3::<f64>::zeros((h, q, k));
    for hi in 0..h {
        for qi in 0..q {
            let row_max = (0..k).map(|ki| e[(hi, qi, ki)]).fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for ki in 0..k {
                let v = (e[(hi, qi, ki)] - row_max).exp();
                probs[(hi, qi, ki)] = v;
                denom += v;
            }
            for ki in 0..k {
                probs[(hi, qi, ki)] /= denom;
            }
        }
    }
    AttentionMap::new(probs)
}

fn check_gate(g: &[f64], queries: usize) -> Result<()> {
    if g.len() != queries {
        return Err(PolyError::ShapeMismatch(format!(
            "gate length {} vs {queries} queries",
            g.len()
        )));
    }
    if g.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
        return Err(PolyError::InvalidInput(
            "gate values must be finite and in [0,1]".into(),
        ));
    }
    Ok(())
}

/// Per-query pre-softmax blend of cached source logits with current logits:
/// `E_mix[h,i,j] = (1 - g[i]) * E_src[h,i,j] + g[i] * E_curr[h,i,j]`.
///
/// The gate broadcasts over heads and keys. Rows with g = 0 copy the source
/// row bitwise; rows with g = 1 copy the current row bitwise.
pub fn source_interpolate(
    e_src: &AttentionLogits,
    e_curr: &AttentionLogits,
    g: &[f64],
) -> Result<AttentionLogits> {
    if e_src.energies().dim() != e_curr.energies().dim() {
        return Err(PolyError::ShapeMismatch(format!(
            "source {:?} vs current {:?}",
            e_src.energies().dim(),
            e_curr.energies().dim()
        )));
    }
    check_gate(g, e_src.queries())?;

    let (h, q, k) = e_src.energies().dim();
    let src = e_src.energies();
    let curr = e_curr.energies();
    let mut out = Array3::<f64>::zeros((h, q, k));
    for hi in 0..h {
        for (qi, &gate) in g.iter().enumerate() {
            for ki in 0..k {
                out[(hi, qi, ki)] = if gate == 0.0 {
                    src[(hi, qi, ki)]
                } else if gate == 1.0 {
                    curr[(hi, qi, ki)]
                } else {
                    (1.0 - gate) * src[(hi, qi, ki)] + gate * curr[(hi, qi, ki)]
                };
            }
        }
    }
    AttentionLogits::new(out)
}

/// Add the spatio-textual bias `lambda * (g outer m)` to every head:
/// `E_bias[h,i,j] = E[h,i,j] + lambda * g[i] * m[j]`.
///
/// `g` is the flattened prior over latent cells (length L_q), `m` the binary
/// token mask (length L_k). A zero bias term leaves the logit untouched
/// bitwise.
pub fn acoustic_modulate(
    e: &AttentionLogits,
    g: &[f64],
    mask: &TokenMask,
    lambda: f64,
) -> Result<AttentionLogits> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(PolyError::InvalidInput(
            "lambda must be finite and >= 0".into(),
        ));
    }
    check_gate(g, e.queries())?;
    if mask.len() != e.keys() {
        return Err(PolyError::ShapeMismatch(format!(
            "token mask length {} vs {} keys",
            mask.len(),
            e.keys()
        )));
    }

    let (h, q, k) = e.energies().dim();
    let src = e.energies();
    let mut out = Array3::<f64>::zeros((h, q, k));
    for hi in 0..h {
        for (qi, &gate) in g.iter().enumerate() {
            for (ki, &bit) in mask.bits().iter().enumerate() {
                let bias = lambda * gate * bit as f64;
                out[(hi, qi, ki)] = if bias == 0.0 {
                    src[(hi, qi, ki)]
                } else {
                    src[(hi, qi, ki)] + bias
                };
            }
        }
    }
    AttentionLogits::new(out)
}
