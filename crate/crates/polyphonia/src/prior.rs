//! Acoustic priors: soft masks in [0,1] quantifying where the target stem
//! dominates the mixture.
//!
//! The ideal ratio mask is a per-bin energy competition,
//! `sqrt(|tgt|^2 / (|tgt|^2 + |con|^2))`; its mel-domain variant pools the
//! power spectra through a filterbank before taking the ratio, and the
//! min-max magnitude mask is kept as a loudness-only baseline. Priors are
//! aligned to coarser grids by area-average pooling, which preserves their
//! probabilistic reading.

use crate::container::TensorContainer;
use crate::error::{PolyError, Result};
use crate::signal::{ComplexSpectrogram, MelFilterbank};
use ndarray::Array2;
use std::fmt;
use std::path::Path;

/// Which formula produced a prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    /// Linear-frequency ideal ratio mask.
    Irm,
    /// Mel-domain ideal ratio mask (power pooled through the filterbank).
    IrmMel,
    /// Min-max normalized target magnitude, no competition model.
    Norm,
}

impl PriorKind {
    pub fn tag(&self) -> &'static str {
        match self {
            PriorKind::Irm => "irm",
            PriorKind::IrmMel => "irm_mel",
            PriorKind::Norm => "norm",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "irm" => Ok(PriorKind::Irm),
            "irm_mel" => Ok(PriorKind::IrmMel),
            "norm" => Ok(PriorKind::Norm),
            other => Err(PolyError::Format(format!("unknown prior kind {other:?}"))),
        }
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag())
    }
}

/// A matrix of values in [0,1]; rows are time, columns are frequency-like.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticPrior {
    values: Array2<f64>,
    kind: PriorKind,
    source_shape: (usize, usize),
}

impl AcousticPrior {
    pub fn new(values: Array2<f64>, kind: PriorKind) -> Result<Self> {
        let source_shape = values.dim();
        Self::with_source_shape(values, kind, source_shape)
    }

    fn with_source_shape(
        values: Array2<f64>,
        kind: PriorKind,
        source_shape: (usize, usize),
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(PolyError::Degenerate("empty prior".into()));
        }
        if values
            .iter()
            .any(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            return Err(PolyError::InvalidInput(
                "prior values must be finite and in [0,1]".into(),
            ));
        }
        Ok(Self {
            values,
            kind,
            source_shape,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    /// Shape of the spectrogram the prior was computed from, before resizing.
    pub fn source_shape(&self) -> (usize, usize) {
        self.source_shape
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Row-major flattening, length rows * cols.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    pub fn to_container(&self) -> Result<TensorContainer> {
        let (t, f) = self.values.dim();
        TensorContainer::new(
            vec![t, f],
            self.values.iter().map(|&v| v as f32).collect(),
            Some(self.kind.tag().to_string()),
        )
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        self.to_container()?.write_to(path)
    }

    /// Load from a tensor container; the kind tag is mandatory.
    pub fn read_from(path: &Path) -> Result<Self> {
        let t = TensorContainer::read_from(path)?;
        let kind = match t.kind() {
            Some(tag) => PriorKind::from_tag(tag)?,
            None => {
                return Err(PolyError::Format(format!(
                    "{}: container carries no prior kind tag",
                    path.display()
                )))
            }
        };
        if t.shape().len() != 2 {
            return Err(PolyError::Format(format!(
                "{}: prior must be 2-D, got shape {:?}",
                path.display(),
                t.shape()
            )));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let values =
            Array2::from_shape_vec((rows, cols), t.data().iter().map(|&v| v as f64).collect())
                .map_err(|e| PolyError::Format(e.to_string()))?;
        Self::new(values, kind)
    }
}

fn check_same_shape(tgt: &ComplexSpectrogram, con: &ComplexSpectrogram) -> Result<()> {
    if tgt.bins().dim() != con.bins().dim() {
        return Err(PolyError::ShapeMismatch(format!(
            "target {:?} vs non-target {:?}",
            tgt.bins().dim(),
            con.bins().dim()
        )));
    }
    Ok(())
}

/// Ideal ratio mask over linear-frequency spectra. Bins with no energy on
/// either side are treated as non-target territory (0).
pub fn irm(tgt: &ComplexSpectrogram, con: &ComplexSpectrogram) -> Result<AcousticPrior> {
    check_same_shape(tgt, con)?;
    let tp = tgt.power();
    let cp = con.power();
    let mut values = Array2::<f64>::zeros(tp.dim());
    for ((i, j), v) in values.indexed_iter_mut() {
        let total = tp[(i, j)] + cp[(i, j)];
        *v = if total > 0.0 {
            (tp[(i, j)] / total).sqrt()
        } else {
            0.0
        };
    }
    AcousticPrior::new(values, PriorKind::Irm)
}

/// Mel-domain ideal ratio mask: pool power spectra through the filterbank,
/// then take the square-root energy ratio per mel bin.
pub fn irm_mel(
    tgt: &ComplexSpectrogram,
    con: &ComplexSpectrogram,
    fb: &MelFilterbank,
) -> Result<AcousticPrior> {
    check_same_shape(tgt, con)?;
    let tp = fb.apply(&tgt.power())?;
    let cp = fb.apply(&con.power())?;
    let mut values = Array2::<f64>::zeros(tp.dim());
    for ((i, j), v) in values.indexed_iter_mut() {
        let total = tp[(i, j)] + cp[(i, j)];
        *v = if total > 0.0 {
            (tp[(i, j)] / total).sqrt().min(1.0)
        } else {
            0.0
        };
    }
    AcousticPrior::new(values, PriorKind::IrmMel)
}

/// Min-max normalized target magnitude. Constant input maps to all zeros.
pub fn g_norm(tgt: &ComplexSpectrogram) -> Result<AcousticPrior> {
    let mag = tgt.magnitude();
    let min = mag.iter().copied().fold(f64::INFINITY, f64::min);
    let max = mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let values = if span > 0.0 {
        mag.mapv(|v| ((v - min) / span).clamp(0.0, 1.0))
    } else {
        Array2::zeros(mag.dim())
    };
    AcousticPrior::new(values, PriorKind::Norm)
}

/// Area-average pooling of an arbitrary matrix onto a new shape.
///
/// Each output cell averages the input cells its rectangle overlaps, weighted
/// by overlap area, so means (and [0,1] bounds) are preserved under both
/// down- and upsampling.
pub fn area_resize(values: &Array2<f64>, target_shape: (usize, usize)) -> Result<Array2<f64>> {
    let (rows_in, cols_in) = values.dim();
    let (rows_out, cols_out) = target_shape;
    if rows_out == 0 || cols_out == 0 {
        return Err(PolyError::InvalidInput(
            "target shape must be positive".into(),
        ));
    }
    if (rows_in, cols_in) == (rows_out, cols_out) {
        return Ok(values.clone());
    }

    // overlap spans of output cell k against input cells, per axis
    let spans = |n_in: usize, n_out: usize| -> Vec<Vec<(usize, f64)>> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|k| {
                let lo = k as f64 * scale;
                let hi = (k + 1) as f64 * scale;
                let first = lo.floor() as usize;
                let last = (hi.ceil() as usize).min(n_in);
                (first..last)
                    .map(|i| {
                        let cell_lo = i as f64;
                        let cell_hi = cell_lo + 1.0;
                        let overlap = hi.min(cell_hi) - lo.max(cell_lo);
                        (i, overlap.max(0.0))
                    })
                    .filter(|(_, w)| *w > 0.0)
                    .collect()
            })
            .collect()
    };
    let row_spans = spans(rows_in, rows_out);
    let col_spans = spans(cols_in, cols_out);

    let mut out = Array2::<f64>::zeros((rows_out, cols_out));
    for (r, rs) in row_spans.iter().enumerate() {
        for (c, cs) in col_spans.iter().enumerate() {
            let mut acc = 0.0;
            let mut weight = 0.0;
            for &(i, wr) in rs {
                for &(j, wc) in cs {
                    acc += wr * wc * values[(i, j)];
                    weight += wr * wc;
                }
            }
            out[(r, c)] = acc / weight;
        }
    }
    Ok(out)
}

/// Align a prior to a (usually coarser) grid by area-average pooling.
pub fn resize(g: &AcousticPrior, target_shape: (usize, usize)) -> Result<AcousticPrior> {
    let resized = area_resize(g.values(), target_shape)?;
    // pooling a convex combination stays in [0,1]; clamp only sub-ulp noise
    let clamped = resized.mapv(|v| v.clamp(0.0, 1.0));
    AcousticPrior::with_source_shape(clamped, g.kind(), g.source_shape())
}
