//! Analysis metrics: attention entropy, melodic-consistency correlation, and
//! harmonic-mean composites over cohort-normalized scores.

use crate::calibration::AttentionMap;
use crate::error::{PolyError, Result};
use crate::signal::{cqt, Waveform, DEFAULT_CQT_BINS, DEFAULT_CQT_BPO, DEFAULT_CQT_FMIN};
use serde::{Deserialize, Serialize};

/// Numerical-stability offset inside the entropy logarithm.
pub const ENTROPY_EPSILON: f64 = 1e-12;

/// Per-step attention entropies plus the analysis context they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// (step index, mean entropy) pairs in step order.
    pub per_step: Vec<(usize, f64)>,
    /// Layers the analysis covered.
    pub layers: Vec<usize>,
    pub head_count: usize,
    pub epsilon: f64,
}

impl EntropyReport {
    /// Validate bounds: entropies are nonnegative and, when the key count is
    /// known, at most `ln(max_keys)` plus epsilon slack.
    pub fn new(
        per_step: Vec<(usize, f64)>,
        layers: Vec<usize>,
        head_count: usize,
        epsilon: f64,
        max_keys: Option<usize>,
    ) -> Result<Self> {
        if epsilon <= 0.0 {
            return Err(PolyError::InvalidInput("epsilon must be > 0".into()));
        }
        let ceiling = max_keys.map(|k| (k as f64).ln() + epsilon.abs().sqrt());
        for &(step, h) in &per_step {
            if !h.is_finite() || h < 0.0 {
                return Err(PolyError::InvalidInput(format!(
                    "step {step}: entropy {h} out of range"
                )));
            }
            if let Some(max) = ceiling {
                if h > max {
                    return Err(PolyError::InvalidInput(format!(
                        "step {step}: entropy {h} exceeds ln(L_k) bound {max}"
                    )));
                }
            }
        }
        Ok(Self {
            per_step,
            layers,
            head_count,
            epsilon,
        })
    }

    /// Minimal `step,entropy` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,entropy\n");
        for (step, h) in &self.per_step {
            out.push_str(&format!("{step},{h:.9}\n"));
        }
        out
    }
}

/// Shannon entropy of one probability row, `-sum p ln(p + eps)`.
pub fn row_entropy(probs: &[f64], epsilon: f64) -> f64 {
    probs.iter().map(|&p| -p * (p + epsilon).ln()).sum()
}

/// Mean Shannon entropy over every query row, head, and map in the set.
///
/// Rows must be normalized; each (map, head, query) row carries equal weight.
pub fn attention_entropy(maps: &[AttentionMap], epsilon: f64) -> Result<f64> {
    if maps.is_empty() {
        return Err(PolyError::InvalidInput("no attention maps given".into()));
    }
    if epsilon <= 0.0 {
        return Err(PolyError::InvalidInput("epsilon must be > 0".into()));
    }
    let mut total = 0.0;
    let mut rows = 0usize;
    for map in maps {
        let p = map.probs();
        let (h, q, k) = p.dim();
        for hi in 0..h {
            for qi in 0..q {
                let row: Vec<f64> = (0..k).map(|ki| p[(hi, qi, ki)]).collect();
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(PolyError::InvalidInput(format!(
                        "attention row sums to {sum}, not normalized"
                    )));
                }
                total += row_entropy(&row, epsilon);
                rows += 1;
            }
        }
    }
    Ok(total / rows as f64)
}

/// Per-frame magnitude of the dominant constant-Q bin. Ties break toward the
/// lowest bin index.
pub fn top1_cqt_sequence(w: &Waveform) -> Result<Vec<f64>> {
    let m = cqt(w, DEFAULT_CQT_BINS, DEFAULT_CQT_BPO, DEFAULT_CQT_FMIN)?;
    Ok(m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            row[best]
        })
        .collect())
}

/// Pearson correlation coefficient of two equal-length sequences.
///
/// Errors on zero variance rather than defaulting to 0.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(PolyError::InvalidInput(format!(
            "pearson needs two sequences of equal length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(PolyError::Degenerate(
            "zero-variance sequence; correlation undefined".into(),
        ));
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}

/// Melodic-consistency proxy: Pearson correlation of the top-1 constant-Q
/// magnitude sequences of two signals.
///
/// Both are downmixed and resampled to 16 kHz; frame sequences are truncated
/// to the shorter one.
pub fn cqt1_pcc(a: &Waveform, b: &Waveform) -> Result<f64> {
    let rate = 16_000;
    let sa = top1_cqt_sequence(&a.to_mono().resampled(rate)?)?;
    let sb = top1_cqt_sequence(&b.to_mono().resampled(rate)?)?;
    let n = sa.len().min(sb.len());
    pearson(&sa[..n], &sb[..n])
}

/// Min-max normalization over a cohort: minimum -> 0, maximum -> 1.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(PolyError::InvalidInput(
            "min-max normalization needs at least 2 values".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PolyError::InvalidInput("values must be finite".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(PolyError::Degenerate(
            "constant cohort; min-max normalization undefined".into(),
        ));
    }
    Ok(values.iter().map(|v| (v - min) / (max - min)).collect())
}

/// Harmonic mean of a normalized alignment score and a normalized
/// preservation score; 0 when both vanish.
pub fn composite(alignment_norm: f64, preservation_norm: f64) -> Result<f64> {
    for v in [alignment_norm, preservation_norm] {
        if !(0.0..=1.0).contains(&v) {
            return Err(PolyError::InvalidInput(format!(
                "composite inputs must lie in [0,1], got {v}"
            )));
        }
    }
    let sum = alignment_norm + preservation_norm;
    if sum == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * alignment_norm * preservation_norm / sum)
}

/// Raw per-method scores as ingested from an external evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestedScores {
    pub method: String,
    /// Alignment score; higher is better.
    pub clap: f64,
    /// Perceptual distance; lower is better.
    pub lpaps: f64,
    /// Melodic consistency; higher is better.
    pub cqt1_pcc: f64,
}

/// One output row of the composite report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub clap: f64,
    pub lpaps: f64,
    pub cqt1_pcc: f64,
    pub asb: f64,
    pub amb: f64,
}

/// Compute structure- and musicality-balance composites for a cohort.
///
/// CLAP and CQT1-PCC are cohort min-max normalized; LPAPS is inverted
/// (1 - minmax) since lower is better. ASB pairs alignment with the LPAPS
/// preservation, AMB with the CQT1-PCC preservation. The cohort minimum of
/// either axis therefore scores a hard 0 on the matching composite.
pub fn composite_table(rows: &[IngestedScores]) -> Result<Vec<MetricRow>> {
    if rows.len() < 2 {
        return Err(PolyError::InvalidInput(
            "composite table needs at least 2 methods to normalize against".into(),
        ));
    }
    let clap_n = minmax_normalize(&rows.iter().map(|r| r.clap).collect::<Vec<_>>())?;
    let lpaps_n = minmax_normalize(&rows.iter().map(|r| r.lpaps).collect::<Vec<_>>())?;
    let cqt_n = minmax_normalize(&rows.iter().map(|r| r.cqt1_pcc).collect::<Vec<_>>())?;

    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let asb = composite(clap_n[i], 1.0 - lpaps_n[i])?;
            let amb = composite(clap_n[i], cqt_n[i])?;
            Ok(MetricRow {
                method: r.method.clone(),
                clap: r.clap,
                lpaps: r.lpaps,
                cqt1_pcc: r.cqt1_pcc,
                asb,
                amb,
            })
        })
        .collect()
}

/// Parse an ingested-scores CSV with header `method,clap,lpaps,cqt1_pcc`.
pub fn parse_scores_csv(text: &str) -> Result<Vec<IngestedScores>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| PolyError::Format("empty scores CSV".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["method", "clap", "lpaps", "cqt1_pcc"] {
        return Err(PolyError::Format(format!(
            "scores CSV header must be method,clap,lpaps,cqt1_pcc; got {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(PolyError::Format(format!(
                "line {}: expected 4 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let num = |s: &str, name: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| {
                PolyError::Format(format!("line {}: bad {name} value {s:?}", lineno + 2))
            })
        };
        rows.push(IngestedScores {
            method: fields[0].to_string(),
            clap: num(fields[1], "clap")?,
            lpaps: num(fields[2], "lpaps")?,
            cqt1_pcc: num(fields[3], "cqt1_pcc")?,
        });
    }
    Ok(rows)
}

/// Render the composite report as CSV, columns in benchmark-table order.
pub fn report_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("method,clap,cqt1_pcc,lpaps,asb,amb\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.method, r.clap, r.cqt1_pcc, r.lpaps, r.asb, r.amb
        ));
    }
    out
}

/// Render the composite report as an aligned plain-text table.
pub fn report_text(rows: &[MetricRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>8} {:>10} {:>8} {:>8} {:>8}\n",
        "method", "clap", "cqt1_pcc", "lpaps", "asb", "amb"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:>8.3} {:>10.3} {:>8.3} {:>8.3} {:>8.3}\n",
            r.method, r.clap, r.cqt1_pcc, r.lpaps, r.asb, r.amb
        ));
    }
    out.push_str("normalization: cohort-relative min-max over the listed methods\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::AttentionLogits;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn uniform_map(keys: usize) -> AttentionMap {
        AttentionMap::new(Array3::from_elem((1, 2, keys), 1.0 / keys as f64)).unwrap()
    }

    fn one_hot_map(keys: usize) -> AttentionMap {
        let mut p = Array3::zeros((1, 2, keys));
        p[(0, 0, 0)] = 1.0;
        p[(0, 1, keys - 1)] = 1.0;
        AttentionMap::new(p).unwrap()
    }

    #[test]
    fn entropy_extremes() {
        let h_max = attention_entropy(&[uniform_map(16)], ENTROPY_EPSILON).unwrap();
        assert!((h_max - 16f64.ln()).abs() < 1e-6, "{h_max}");
        let h_min = attention_entropy(&[one_hot_map(16)], ENTROPY_EPSILON).unwrap();
        assert!(h_min.abs() < 1e-6, "{h_min}");
        let mixed =
            attention_entropy(&[uniform_map(16), one_hot_map(16)], ENTROPY_EPSILON).unwrap();
        assert!((mixed - 16f64.ln() / 2.0).abs() < 1e-6);
    }

    #[test]
    fn entropy_bounded_by_log_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let keys = rng.random_range(2..20);
            let logits = AttentionLogits::new(Array3::from_shape_fn((2, 3, keys), |_| {
                rng.random_range(-4.0..4.0)
            }))
            .unwrap();
            let map = crate::calibration::softmax_rows(&logits).unwrap();
            let h = attention_entropy(&[map], ENTROPY_EPSILON).unwrap();
            assert!(h >= 0.0);
            assert!(h <= (keys as f64).ln() + 1e-9);
        }
    }

    #[test]
    fn entropy_rejects_unnormalized_rows() {
        let p = Array3::from_elem((1, 1, 4), 0.3);
        // bypass AttentionMap validation via a handmade unnormalized map
        assert!(AttentionMap::new(p).is_err());
    }

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

    fn sweep(f0: f64, f1: f64, secs: f64, sr: u32) -> Waveform {
        let n = (secs * sr as f64) as usize;
        Waveform::mono(
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr as f64;
                    let f = f0 + (f1 - f0) * t / secs;
                    (2.0 * PI * f * t).sin()
                })
                .collect(),
            sr,
        )
        .unwrap()
    }

    #[test]
    fn cqt1_pcc_self_and_scale() {
        let x = sweep(200.0, 800.0, 1.0, 16_000);
        let self_corr = cqt1_pcc(&x, &x).unwrap();
        assert!((self_corr - 1.0).abs() < 1e-9, "{self_corr}");
        let doubled =
            Waveform::mono(x.samples().iter().map(|v| 2.0 * v).collect(), 16_000).unwrap();
        let scaled = cqt1_pcc(&x, &doubled).unwrap();
        assert!((scaled - 1.0).abs() < 1e-6, "{scaled}");
    }

    #[test]
    fn cqt1_pcc_symmetric_and_alignment_truncates() {
        let a = sweep(150.0, 500.0, 0.8, 16_000);
        let b = sine(330.0, 1.1, 16_000);
        let ab = cqt1_pcc(&a, &b).unwrap();
        let ba = cqt1_pcc(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn cqt1_pcc_noise_uncorrelated_with_sweep() {
        // empirical bound over seeded noise draws
        let x = sweep(220.0, 880.0, 3.0, 16_000);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Waveform::mono(
                (0..48_000).map(|_| rng.random_range(-1.0..1.0)).collect(),
                16_000,
            )
            .unwrap();
            let r = cqt1_pcc(&x, &noise).unwrap();
            assert!(r.abs() < 0.3, "seed {seed}: |pcc| = {}", r.abs());
        }
    }

    #[test]
    fn cqt1_pcc_zero_variance_is_an_error() {
        let silence = Waveform::mono(vec![0.0; 16_000], 16_000).unwrap();
        let x = sine(440.0, 1.0, 16_000);
        assert!(cqt1_pcc(&silence, &x).is_err());
    }

    #[test]
    fn minmax_endpoints_and_affine_invariance() {
        let v = minmax_normalize(&[0.119, 0.437]).unwrap();
        assert_eq!(v, vec![0.0, 1.0]);
        let raw = [3.0, -1.0, 0.5, 9.0];
        let base = minmax_normalize(&raw).unwrap();
        let affine: Vec<f64> = raw.iter().map(|x| 2.5 * x + 7.0).collect();
        let mapped = minmax_normalize(&affine).unwrap();
        for (a, b) in base.iter().zip(&mapped) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(base[1], 0.0); // cohort minimum
        assert!(minmax_normalize(&[1.0, 1.0]).is_err());
        assert!(minmax_normalize(&[1.0]).is_err());
    }

    #[test]
    fn harmonic_mean_identities() {
        assert_eq!(composite(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(composite(0.7, 0.0).unwrap(), 0.0);
        assert_eq!(composite(0.0, 0.0).unwrap(), 0.0);
        assert!((composite(0.5, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!(composite(1.2, 0.5).is_err());
        // HM <= GM <= AM
        let cases = [(0.3, 0.9), (0.5, 0.1), (0.8, 0.7)];
        for (x, y) in cases {
            let hm = composite(x, y).unwrap();
            let gm = (x * y).sqrt();
            let am = (x + y) / 2.0;
            assert!(hm <= gm + 1e-15 && gm <= am + 1e-15);
        }
    }

    /// Published benchmark rows (one dataset, eight methods): recomputing the
    /// composites from the raw columns must reproduce the published ASB/AMB
    /// within the rounding of the 3-decimal inputs.
    #[test]
    fn composite_table_reproduces_published_composites() {
        let rows = vec![
            IngestedScores { method: "SDEdit".into(), clap: 0.119, lpaps: 6.907, cqt1_pcc: 0.090 },
            IngestedScores { method: "DDIM".into(), clap: 0.353, lpaps: 5.586, cqt1_pcc: 0.253 },
            IngestedScores { method: "DDPM".into(), clap: 0.351, lpaps: 5.490, cqt1_pcc: 0.274 },
            IngestedScores { method: "Melodia".into(), clap: 0.380, lpaps: 3.540, cqt1_pcc: 0.513 },
            IngestedScores { method: "SteerMusic".into(), clap: 0.317, lpaps: 3.614, cqt1_pcc: 0.556 },
            IngestedScores { method: "MusicMagus".into(), clap: 0.238, lpaps: 4.690, cqt1_pcc: 0.361 },
            IngestedScores { method: "MusicGen".into(), clap: 0.377, lpaps: 6.142, cqt1_pcc: 0.069 },
            IngestedScores { method: "Polyphonia".into(), clap: 0.437, lpaps: 4.096, cqt1_pcc: 0.547 },
        ];
        let expected_asb = [0.000, 0.512, 0.534, 0.903, 0.761, 0.479, 0.355, 0.910];
        let expected_amb = [0.000, 0.500, 0.533, 0.864, 0.767, 0.462, 0.000, 0.991];
        let table = composite_table(&rows).unwrap();
        for (i, row) in table.iter().enumerate() {
            assert!(
                (row.asb - expected_asb[i]).abs() < 2e-3,
                "{}: asb {} vs {}",
                row.method,
                row.asb,
                expected_asb[i]
            );
            assert!(
                (row.amb - expected_amb[i]).abs() < 2e-3,
                "{}: amb {} vs {}",
                row.method,
                row.amb,
                expected_amb[i]
            );
        }
        // cohort minima score exact zeros
        assert_eq!(table[0].asb, 0.0);
        assert_eq!(table[0].amb, 0.0);
        assert_eq!(table[6].amb, 0.0);
    }

    #[test]
    fn scores_csv_round_trip() {
        let csv = "method,clap,lpaps,cqt1_pcc\nA,0.1,5.0,0.2\nB,0.4,3.0,0.5\n";
        let rows = parse_scores_csv(csv).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].method, "B");
        assert_eq!(rows[1].clap, 0.4);
        assert!(parse_scores_csv("clap,method\n").is_err());
        assert!(parse_scores_csv("method,clap,lpaps,cqt1_pcc\nA,x,1,2\n").is_err());
        let table = composite_table(&rows).unwrap();
        let rendered = report_csv(&table);
        assert!(rendered.starts_with("method,clap,cqt1_pcc,lpaps,asb,amb\n"));
        assert!(report_text(&table).contains("cohort-relative"));
    }
}
