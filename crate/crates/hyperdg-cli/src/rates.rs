//! Least-squares rate fits of log(error) against log(p).

use crate::error::{HarnessError, Result};
use crate::study::ConvergenceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorColumn {
    L2,
    Dg,
}

/// Ordinary least squares of ln(error) on ln(p) over an inclusive p window.
#[derive(Debug, Clone)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (usize, usize),
}

/// Fit a power law error ≈ C p^slope from (p, error) samples inside the
/// window. Needs at least three samples with positive errors.
pub fn fit_rate_pairs(pairs: &[(usize, f64)], p_min: usize, p_max: usize) -> Result<RateFit> {
    let selected: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(p, _)| *p >= p_min && *p <= p_max)
        .map(|&(p, e)| (p as f64, e))
        .collect();
    if selected.len() < 3 {
        return Err(HarnessError::RateFit(format!(
            "need at least 3 records in [{p_min}, {p_max}], found {}",
            selected.len()
        )));
    }
    for &(p, e) in &selected {
        if !(e > 0.0) {
            return Err(HarnessError::RateFit(format!(
                "nonpositive error {e} at p = {p} cannot enter a log fit"
            )));
        }
    }
    let n = selected.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(p, e) in &selected {
        let (x, y) = (p.ln(), e.ln());
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for &(p, e) in &selected {
        let (x, y) = (p.ln(), e.ln());
        ss_res += (y - slope * x - intercept).powi(2);
        ss_tot += (y - mean_y).powi(2);
    }
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        window: (p_min, p_max),
    })
}

/// Fit one error column of a convergence table.
pub fn fit_rate(
    records: &[ConvergenceRecord],
    which: ErrorColumn,
    p_min: usize,
    p_max: usize,
) -> Result<RateFit> {
    let pairs: Vec<(usize, f64)> = records
        .iter()
        .map(|r| {
            (
                r.p,
                match which {
                    ErrorColumn::L2 => r.error_l2,
                    ErrorColumn::Dg => r.error_dg,
                },
            )
        })
        .collect();
    fit_rate_pairs(&pairs, p_min, p_max)
}
