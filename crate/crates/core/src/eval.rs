//! Positioning error statistics and trajectory alignment error.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::positioning::Location;

/// Planar error and floor hit for each estimate/truth pair.
pub fn positioning_errors(
    estimates: &[Location],
    truths: &[Location],
) -> Result<(Vec<f64>, Vec<bool>)> {
    if estimates.len() != truths.len() {
        return Err(Error::InvalidInput(format!(
            "{} estimates for {} ground-truth positions",
            estimates.len(),
            truths.len()
        )));
    }
    Ok(estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| ((e.x - t.x).hypot(e.y - t.y), e.floor == t.floor))
        .unzip())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub floor_accuracy: f64,
    pub min: f64,
    pub mean: f64,
    pub cep68: f64,
    pub cep95: f64,
    /// `(error, fraction of errors ≤ error)`, one point per query.
    #[serde(skip)]
    pub ecdf: Vec<(f64, f64)>,
}

/// Nearest-rank percentile of ascending `sorted`: the value at rank `⌈qN⌉`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    // q·N is often an integer spoiled by rounding (0.68·100 = 68.00000000000001)
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

pub fn summarize(errors: &[f64], hits: &[bool]) -> Result<ErrorSummary> {
    if errors.is_empty() {
        return Err(Error::InsufficientData(
            "no positioning errors to summarize".into(),
        ));
    }
    if errors.len() != hits.len() {
        return Err(Error::InvalidInput(
            "errors and floor hits differ in length".into(),
        ));
    }
    if errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::InvalidInput(
            "positioning errors must be finite and non-negative".into(),
        ));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let ecdf = sorted
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, (i + 1) as f64 / n as f64))
        .collect();
    Ok(ErrorSummary {
        count: n,
        floor_accuracy: hits.iter().filter(|&&h| h).count() as f64 / n as f64,
        min: sorted[0],
        mean: sorted.iter().sum::<f64>() / n as f64,
        cep68: nearest_rank(&sorted, 0.68),
        cep95: nearest_rank(&sorted, 0.95),
        ecdf,
    })
}

/// Two-column CSV `error,fraction`.
pub fn write_ecdf_csv<W: Write>(summary: &ErrorSummary, mut w: W) -> Result<()> {
    writeln!(w, "error,fraction")?;
    for (e, f) in &summary.ecdf {
        writeln!(w, "{e},{f}")?;
    }
    Ok(())
}

/// Rigid transform taking one point set onto another: rotate by `angle`, then add
/// `translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidAlignment {
    pub angle: f64,
    pub translation: [f64; 2],
}

impl RigidAlignment {
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        [
            c * p[0] - s * p[1] + self.translation[0],
            s * p[0] + c * p[1] + self.translation[1],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteResult {
    pub rmse: f64,
    pub alignment: RigidAlignment,
}

/// Least-squares rigid alignment of `aligned` onto `truth` (closed form).
pub fn rigid_align(aligned: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<RigidAlignment> {
    if aligned.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} estimated positions for {} true positions",
            aligned.len(),
            truth.len()
        )));
    }
    if aligned.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "alignment needs at least 3 points, got {}",
            aligned.len()
        )));
    }
    let n = aligned.len() as f64;
    let centroid = |pts: &[[f64; 2]]| {
        let (sx, sy) = pts
            .iter()
            .fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
        [sx / n, sy / n]
    };
    let ca = centroid(aligned);
    let ct = centroid(truth);
    let (mut dot, mut cross) = (0.0, 0.0);
    for (a, t) in aligned.iter().zip(truth) {
        let (ax, ay) = (a[0] - ca[0], a[1] - ca[1]);
        let (tx, ty) = (t[0] - ct[0], t[1] - ct[1]);
        dot += ax * tx + ay * ty;
        cross += ax * ty - ay * tx;
    }
    let angle = cross.atan2(dot);
    let (s, c) = angle.sin_cos();
    Ok(RigidAlignment {
        angle,
        translation: [
            ct[0] - (c * ca[0] - s * ca[1]),
            ct[1] - (s * ca[0] + c * ca[1]),
        ],
    })
}

/// RMSE between `aligned` and `truth` after the best rigid alignment.
pub fn ate(aligned: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<AteResult> {
    let alignment = rigid_align(aligned, truth)?;
    let sq: f64 = aligned
        .iter()
        .zip(truth)
        .map(|(a, t)| {
            let p = alignment.apply(*a);
            (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)
        })
        .sum();
    Ok(AteResult {
        rmse: (sq / aligned.len() as f64).sqrt(),
        alignment,
    })
}
