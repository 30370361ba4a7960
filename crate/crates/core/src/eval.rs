//! RMSE and per-height-bin error statistics.
//!
//! Per-bin figures are statistics of per-building absolute errors
//! `|pred − gt|`, binned by the ground-truth label.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{height_bin, AnnotationRecord, CleaningRules};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no values to evaluate")]
    EmptyInput,
    #[error("{preds} predictions for {gts} ground-truth values")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("plot data line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{0}")]
    Record(String),
}

pub fn rmse<T: Scalar>(preds: &[T], gts: &[T]) -> Result<T, EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            gts: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut ss = T::zero();
    for (i, (&p, &g)) in preds.iter().zip(gts).enumerate() {
        if !(p.is_finite() && g.is_finite()) {
            return Err(EvalError::NonFinite(i));
        }
        ss = ss + (p - g) * (p - g);
    }
    Ok((ss / T::lit(preds.len() as f64)).sqrt())
}

/// Absolute-error statistics for one ground-truth bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats<T> {
    pub bin: u32,
    pub n: usize,
    pub mean: T,
    pub min: T,
    pub q1: T,
    pub median: T,
    pub q3: T,
    pub max: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<T> {
    pub overall_rmse_m: T,
    pub n: usize,
    /// Populated bins only, ascending.
    pub per_bin: Vec<BinStats<T>>,
}

/// Linear-interpolation quantile of sorted data (the common "type 7").
fn quantile<T: Scalar>(sorted: &[T], q: f64) -> T {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, frac) = (pos.floor() as usize, pos - pos.floor());
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (sorted[lo + 1] - sorted[lo]) * T::lit(frac)
}

/// `(pred, gt)` height pairs → overall RMSE plus per-bin statistics.
pub fn per_bin_stats<T: Scalar>(pairs: &[(T, T)]) -> Result<EvalReport<T>, EvalError> {
    let (preds, gts): (Vec<T>, Vec<T>) = pairs.iter().copied().unzip();
    let overall = rmse(&preds, &gts)?;
    let mut bins: BTreeMap<u32, Vec<T>> = BTreeMap::new();
    for &(p, g) in pairs {
        bins.entry(height_bin(g.as_f64()))
            .or_default()
            .push((p - g).abs());
    }
    let per_bin = bins
        .into_iter()
        .map(|(bin, mut errs)| {
            errs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let n = errs.len();
            BinStats {
                bin,
                n,
                mean: errs.iter().copied().sum::<T>() / T::lit(n as f64),
                min: errs[0],
                q1: quantile(&errs, 0.25),
                median: quantile(&errs, 0.5),
                q3: quantile(&errs, 0.75),
                max: errs[n - 1],
            }
        })
        .collect();
    Ok(EvalReport {
        overall_rmse_m: overall,
        n: pairs.len(),
        per_bin,
    })
}

/// Analytic height vs ground truth for annotated records. With
/// `exclude_capped`, records carrying the cap label are left out.
pub fn evaluate_records(
    records: &[AnnotationRecord],
    exclude_capped: bool,
) -> Result<EvalReport<f64>, EvalError> {
    let cap = CleaningRules::default().cap_label_m;
    let mut pairs = Vec::with_capacity(records.len());
    for rec in records {
        let gt = rec.ground_truth_height().ok_or_else(|| {
            EvalError::Record(format!(
                "{}#{} has no ground truth",
                rec.image_id, rec.box_index
            ))
        })?;
        if exclude_capped && gt == cap {
            continue;
        }
        let pred = rec
            .analytic_height()
            .map_err(|e| EvalError::Record(e.to_string()))?;
        pairs.push((pred.value.meters(), gt));
    }
    per_bin_stats(&pairs)
}

pub const PLOT_DATA_HEADER: &str = "bin,n,mean,min,q1,median,q3,max";

impl<T: Scalar> EvalReport<T> {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(PLOT_DATA_HEADER);
        s.push('\n');
        for b in &self.per_bin {
            // `{:?}` prints the shortest representation that round-trips.
            writeln!(
                s,
                "{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
                b.bin,
                b.n,
                b.mean.as_f64(),
                b.min.as_f64(),
                b.q1.as_f64(),
                b.median.as_f64(),
                b.q3.as_f64(),
                b.max.as_f64()
            )
            .unwrap();
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "overall_rmse_m: {:.3}\nn: {}\n",
            self.overall_rmse_m.as_f64(),
            self.n
        );
        s.push_str(
            "bin_m     n    mean    min     q1      median  q3      max   (absolute error, m)\n",
        );
        for b in &self.per_bin {
            writeln!(
                s,
                "{:<5} {:>5} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
                b.bin,
                b.n,
                b.mean.as_f64(),
                b.min.as_f64(),
                b.q1.as_f64(),
                b.median.as_f64(),
                b.q3.as_f64(),
                b.max.as_f64()
            )
            .unwrap();
        }
        s
    }
}

pub fn export_plot_data<T: Scalar>(report: &EvalReport<T>, path: &Path) -> Result<(), EvalError> {
    std::fs::write(path, report.to_csv()).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Parse CSV written by [`export_plot_data`].
pub fn parse_plot_data(text: &str) -> Result<Vec<BinStats<f64>>, EvalError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == PLOT_DATA_HEADER => {}
        _ => {
            return Err(EvalError::Parse {
                line: 1,
                reason: "missing header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let err = |reason: String| EvalError::Parse {
                line: i + 1,
                reason,
            };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(err(format!("{} fields", f.len())));
            }
            let num = |k: usize| {
                f[k].parse::<f64>()
                    .map_err(|e| err(format!("{}: {e}", f[k])))
            };
            Ok(BinStats {
                bin: f[0].parse().map_err(|e| err(format!("bin: {e}")))?,
                n: f[1].parse().map_err(|e| err(format!("n: {e}")))?,
                mean: num(2)?,
                min: num(3)?,
                q1: num(4)?,
                median: num(5)?,
                q3: num(6)?,
                max: num(7)?,
            })
        })
        .collect()
}

/// Published RMSEs (m) of other methods and of the original model on real
/// imagery. Printed beside reports for context; none is reproduced here.
pub const REPORTED_RMSE_M: [(&str, &str, f64); 5] = [
    ("RF", "multi-view, multi-spectral", 7.46),
    ("MM3Net", "multi-view, multi-spectral", 6.26),
    ("Stereoential Net", "multi-view", 5.95),
    ("Stereollax Net", "multi-view", 5.74),
    ("shadow regressor (original)", "monocular", 3.84),
];

pub fn reported_reference_table() -> String {
    let mut s = String::from("reported RMSE on real imagery (not reproduced):\n");
    for (name, imagery, v) in REPORTED_RMSE_M {
        writeln!(s, "  {name:<28} {imagery:<28} {v:.2} m").unwrap();
    }
    s
}
