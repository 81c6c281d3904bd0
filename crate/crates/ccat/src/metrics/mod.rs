//! Evaluation metrics: Pearson correlation, RMSE, and epsilon-insensitive
//! RMSE after a monotonic third-order polynomial mapping.

mod monotonic;

pub use monotonic::{cubic, cubic_deriv, fit_monotonic_cubic, monotonicity_grid, GRID_SLACK};

use serde::{Deserialize, Serialize};

use crate::error::{CcatError, Result};

/// One prediction/label pair; `ci95` is the half-width of the label's 95%
/// confidence interval when known.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EvalPair {
    pub predicted: f64,
    pub label: f64,
    pub ci95: Option<f64>,
}

impl EvalPair {
    pub fn new(predicted: f64, label: f64) -> Self {
        EvalPair {
            predicted,
            label,
            ci95: None,
        }
    }
}

/// Sample Pearson correlation coefficient.
pub fn pearson(pred: &[f64], label: &[f64]) -> Result<f64> {
    if pred.len() != label.len() {
        return Err(CcatError::Shape(format!(
            "{} predictions vs {} labels",
            pred.len(),
            label.len()
        )));
    }
    if pred.len() < 2 {
        return Err(CcatError::DegenerateInput(
            "pearson needs at least two points".into(),
        ));
    }
    let n = pred.len() as f64;
    let mx = pred.iter().sum::<f64>() / n;
    let my = label.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in pred.iter().zip(label) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CcatError::DegenerateInput(
            "zero variance in predictions or labels".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], label: &[f64]) -> Result<f64> {
    if pred.len() != label.len() {
        return Err(CcatError::Shape(format!(
            "{} predictions vs {} labels",
            pred.len(),
            label.len()
        )));
    }
    if pred.is_empty() {
        return Err(CcatError::DegenerateInput("rmse of an empty set".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(label)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// Epsilon-insensitive RMSE after the monotonic cubic mapping, with the
/// degrees-of-freedom-corrected denominator `n - 4`. Returns the value and
/// the fitted mapping.
pub fn rmse_3rd(pairs: &[EvalPair]) -> Result<(f64, [f64; 4])> {
    if pairs.len() <= 4 {
        return Err(CcatError::TooFewPoints(format!(
            "rmse_3rd needs more than 4 points, got {}",
            pairs.len()
        )));
    }
    let pred: Vec<f64> = pairs.iter().map(|p| p.predicted).collect();
    let label: Vec<f64> = pairs.iter().map(|p| p.label).collect();
    let coeffs = fit_monotonic_cubic(&pred, &label)?;
    let sum: f64 = pairs
        .iter()
        .map(|p| {
            let eps = p.ci95.unwrap_or(0.0);
            let r = ((cubic(&coeffs, p.predicted) - p.label).abs() - eps).max(0.0);
            r * r
        })
        .sum();
    Ok(((sum / (pairs.len() - 4) as f64).sqrt(), coeffs))
}

/// Conventions baked into a report, recorded because the evaluation
/// recommendation leaves them open.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Conventions {
    pub epsilon_without_ci: f64,
    pub dof_correction: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            epsilon_without_ci: 0.0,
            dof_correction: "n-4".into(),
        }
    }
}

/// Per-dataset evaluation summary. `pcc`/`rmse_3rd` are absent when the
/// input is degenerate or too small, with the reason in `notes`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub n: usize,
    pub pcc: Option<f64>,
    pub rmse: f64,
    pub rmse_3rd: Option<f64>,
    pub mapping: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub conventions: Conventions,
}

/// Compute all metrics for one dataset.
pub fn evaluate_pairs(dataset: &str, pairs: &[EvalPair]) -> Result<MetricsReport> {
    let pred: Vec<f64> = pairs.iter().map(|p| p.predicted).collect();
    let label: Vec<f64> = pairs.iter().map(|p| p.label).collect();
    let rmse_value = rmse(&pred, &label)?;
    let mut notes = Vec::new();
    let pcc = match pearson(&pred, &label) {
        Ok(v) => Some(v),
        Err(CcatError::DegenerateInput(msg)) => {
            notes.push(format!("pcc unavailable: {msg}"));
            None
        }
        Err(e) => return Err(e),
    };
    let (rmse_3rd_value, mapping) = match rmse_3rd(pairs) {
        Ok((v, coeffs)) => (Some(v), Some(coeffs)),
        Err(CcatError::TooFewPoints(msg)) => {
            notes.push(format!("rmse_3rd unavailable: {msg}"));
            (None, None)
        }
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        dataset: dataset.to_string(),
        n: pairs.len(),
        pcc,
        rmse: rmse_value,
        rmse_3rd: rmse_3rd_value,
        mapping,
        notes,
        conventions: Conventions::default(),
    })
}

/// Unweighted mean across reports (each dataset counts once, regardless of
/// size). Absent member metrics are skipped.
pub fn average_reports(reports: &[MetricsReport]) -> MetricsReport {
    let mean_opt = |values: Vec<f64>| -> Option<f64> {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };
    let pcc = mean_opt(reports.iter().filter_map(|r| r.pcc).collect());
    let rmse = reports.iter().map(|r| r.rmse).sum::<f64>() / reports.len().max(1) as f64;
    let rmse_3rd = mean_opt(reports.iter().filter_map(|r| r.rmse_3rd).collect());
    MetricsReport {
        dataset: "average".into(),
        n: reports.iter().map(|r| r.n).sum(),
        pcc,
        rmse,
        rmse_3rd,
        mapping: None,
        notes: Vec::new(),
        conventions: Conventions::default(),
    }
}

/// CSV form of a report list, same columns as the JSON.
pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from("dataset,n,pcc,rmse,rmse_3rd,map_a,map_b,map_c,map_d\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in reports {
        let m = r.mapping.unwrap_or([f64::NAN; 4]);
        let coeffs = if r.mapping.is_some() {
            format!("{},{},{},{}", m[0], m[1], m[2], m[3])
        } else {
            ",,,".into()
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.dataset,
            r.n,
            opt(r.pcc),
            r.rmse,
            opt(r.rmse_3rd),
            coeffs
        ));
    }
    out
}
