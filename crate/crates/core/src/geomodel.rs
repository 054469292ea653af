//! Self-supervised similarity → distance model.
//!
//! Pairs of radio scans are drawn from within single trajectories, where the
//! dead-reckoned frame is locally consistent, so each pair yields a (distance,
//! similarity) sample. Samples are binned by similarity, each bin's distances are
//! summarized by a Rayleigh scale ζ, and `ln ζ` is fitted as an affine function of
//! similarity. The fitted model turns any similarity into an expected distance and a
//! variance via the Rayleigh moments.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{euclidean_distance, Trajectory};
use crate::rng;
use crate::similarity::{Interner, SimilarityConfig};

/// One sampled pair of scans from a single trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSample {
    pub distance: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBin {
    pub center: f64,
    pub half_width: f64,
    pub distances: Vec<f64>,
}

impl SimilarityBin {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

/// How a bin's Rayleigh scale is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZetaMethod {
    /// Closed-form maximum likelihood, √(Σd²/2N).
    #[default]
    Mle,
    /// Mode of a Gaussian kernel density estimate (the Rayleigh mode is ζ).
    Kde,
}

impl fmt::Display for ZetaMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZetaMethod::Mle => "mle",
            ZetaMethod::Kde => "kde",
        })
    }
}

impl FromStr for ZetaMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mle" => Ok(ZetaMethod::Mle),
            "kde" => Ok(ZetaMethod::Kde),
            other => Err(Error::InvalidInput(format!(
                "unknown estimation method {other:?}"
            ))),
        }
    }
}

/// Expected distance and its variance for one similarity value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistancePrior {
    pub mu: f64,
    pub var: f64,
}

impl DistancePrior {
    /// Rayleigh mean and variance for scale `zeta`.
    pub fn from_zeta(zeta: f64) -> Self {
        Self {
            mu: zeta * (PI / 2.0).sqrt(),
            var: (4.0 - PI) / 2.0 * zeta * zeta,
        }
    }

    pub fn info(&self) -> f64 {
        1.0 / self.var
    }
}

/// Log-linear map from similarity to Rayleigh scale, `ζ(s) = exp(w0 + w1·s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoModel {
    pub w0: f64,
    pub w1: f64,
    /// Number of similarity bins the fit was run with.
    #[serde(rename = "C")]
    pub bins: usize,
    /// Number of pair samples that fed the fit.
    #[serde(rename = "N")]
    pub samples: usize,
    pub method: ZetaMethod,
    pub beta: f64,
    pub sigma_kernel: f64,
    #[serde(default = "default_missing_value")]
    pub missing_value: f64,
}

fn default_missing_value() -> f64 {
    SimilarityConfig::default().missing_value
}

impl GeoModel {
    pub fn zeta(&self, s: f64) -> f64 {
        (self.w0 + self.w1 * s).exp()
    }

    pub fn predict(&self, s: f64) -> DistancePrior {
        DistancePrior::from_zeta(self.zeta(s))
    }

    /// The similarity settings the model was fitted under.
    pub fn similarity_config(&self) -> SimilarityConfig {
        SimilarityConfig {
            beta: self.beta,
            sigma_kernel: self.sigma_kernel,
            missing_value: self.missing_value,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: GeoModel = serde_json::from_str(s)?;
        if !(m.w0.is_finite() && m.w1.is_finite()) {
            return Err(Error::InvalidInput("model weights must be finite".into()));
        }
        Ok(m)
    }
}

/// `predict` as a free function: (μ_d, σ_d²) at similarity `s`.
pub fn predict(model: &GeoModel, s: f64) -> DistancePrior {
    model.predict(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoModelConfig {
    pub bins: usize,
    pub min_count: usize,
    pub n_per_traj: usize,
    pub method: ZetaMethod,
    pub seed: u64,
    /// Pairs farther apart than this are not used; `None` keeps all.
    pub max_pair_gap: Option<f64>,
}

impl Default for GeoModelConfig {
    fn default() -> Self {
        Self {
            bins: 20,
            min_count: 30,
            n_per_traj: 100,
            method: ZetaMethod::Mle,
            seed: 0,
            max_pair_gap: None,
        }
    }
}

impl GeoModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidInput(
                "need at least 2 similarity bins".into(),
            ));
        }
        if self.n_per_traj == 0 {
            return Err(Error::InvalidInput("n_per_traj must be at least 1".into()));
        }
        if let Some(g) = self.max_pair_gap {
            if !(g > 0.0) {
                return Err(Error::InvalidInput("max_pair_gap must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Draws `n_per_traj` random pairs of scan-bearing steps from every trajectory.
///
/// Pairs are unordered, never degenerate, and drawn with replacement. Trajectory `k`
/// uses its own random stream derived from `seed`, so the output does not depend on
/// evaluation order.
pub fn sample_pairs(
    trajectories: &[Trajectory],
    n_per_traj: usize,
    seed: u64,
    simcfg: &SimilarityConfig,
    max_pair_gap: Option<f64>,
) -> Vec<PairSample> {
    let mut out = Vec::with_capacity(trajectories.len() * n_per_traj);
    for (k, traj) in trajectories.iter().enumerate() {
        let idx = traj.rf_indices();
        if idx.len() < 2 {
            warn!(
                "trajectory {} has {} scan-bearing steps; skipped for pair sampling",
                traj.id,
                idx.len()
            );
            continue;
        }
        let mut interner = Interner::new();
        let prints: Vec<_> = idx
            .iter()
            .map(|&i| interner.fingerprint(traj.steps()[i].rf().unwrap()))
            .collect();
        let mut rng = rng::stream(seed, k as u64);
        let m = idx.len();
        for _ in 0..n_per_traj {
            let a = rng.gen_range(0..m);
            let mut b = rng.gen_range(0..m - 1);
            if b >= a {
                b += 1;
            }
            let distance =
                euclidean_distance(&traj.steps()[idx[a]].pose, &traj.steps()[idx[b]].pose);
            if max_pair_gap.is_some_and(|g| distance > g) {
                continue;
            }
            out.push(PairSample {
                distance,
                similarity: prints[a].compound(&prints[b], simcfg),
            });
        }
    }
    out
}

/// Partitions [0, 1] into `count` equal bins and drops bins with fewer than
/// `min_count` members. A similarity of exactly 1 lands in the last bin.
pub fn bin_samples(
    samples: &[PairSample],
    count: usize,
    min_count: usize,
) -> Result<Vec<SimilarityBin>> {
    if count < 2 {
        return Err(Error::InvalidInput(
            "need at least 2 similarity bins".into(),
        ));
    }
    let half_width = 0.5 / count as f64;
    let mut bins: Vec<SimilarityBin> = (0..count)
        .map(|i| SimilarityBin {
            center: (i as f64 + 0.5) / count as f64,
            half_width,
            distances: Vec::new(),
        })
        .collect();
    for s in samples {
        if !(0.0..=1.0).contains(&s.similarity) {
            return Err(Error::InvalidInput(format!(
                "similarity {} outside [0, 1]",
                s.similarity
            )));
        }
        let i = ((s.similarity * count as f64) as usize).min(count - 1);
        bins[i].distances.push(s.distance);
    }
    let kept: Vec<_> = bins
        .into_iter()
        .filter(|b| b.len() >= min_count.max(1))
        .collect();
    if kept.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no similarity bin reached {min_count} samples ({} samples total)",
            samples.len()
        )));
    }
    Ok(kept)
}

/// Rayleigh scale of a set of non-negative distances.
pub fn estimate_zeta(distances: &[f64], method: ZetaMethod) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::InsufficientData(
            "no distances to estimate from".into(),
        ));
    }
    if let Some(d) = distances.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::InvalidInput(format!("invalid distance {d}")));
    }
    if distances.iter().all(|&d| d == 0.0) {
        warn!("degenerate bin: all {} distances are zero", distances.len());
        return Ok(0.0);
    }
    Ok(match method {
        ZetaMethod::Mle => {
            let ss: f64 = distances.iter().map(|d| d * d).sum();
            (ss / (2.0 * distances.len() as f64)).sqrt()
        }
        ZetaMethod::Kde => kde_mode(distances),
    })
}

const KDE_GRID: usize = 512;

fn kde_mode(distances: &[f64]) -> f64 {
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let sd = if distances.len() > 1 {
        (distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, true) => iqr / 1.34,
        (false, false) => return sorted[0],
    };
    let h = 0.9 * spread * n.powf(-0.2);
    let max_d = sorted[sorted.len() - 1];
    let mut best = (f64::NEG_INFINITY, 0.0);
    for g in 0..KDE_GRID {
        let x = max_d * g as f64 / (KDE_GRID - 1) as f64;
        let density: f64 = sorted
            .iter()
            .map(|d| {
                let u = (x - d) / h;
                (-0.5 * u * u).exp()
            })
            .sum();
        if density > best.0 {
            best = (density, x);
        }
    }
    best.1
}

/// Linear-interpolated quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-bin result of the Rayleigh estimation, kept for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinEstimate {
    pub center: f64,
    pub zeta: f64,
    pub count: usize,
}

pub fn estimate_bins(bins: &[SimilarityBin], method: ZetaMethod) -> Result<Vec<BinEstimate>> {
    bins.iter()
        .map(|b| {
            Ok(BinEstimate {
                center: b.center,
                zeta: estimate_zeta(&b.distances, method)?,
                count: b.len(),
            })
        })
        .collect()
}

/// Fits `ln ζ = w0 + w1·s` through per-bin estimates by count-weighted least squares.
pub fn fit_log_linear(
    bins: &[SimilarityBin],
    method: ZetaMethod,
    simcfg: &SimilarityConfig,
) -> Result<GeoModel> {
    let estimates = estimate_bins(bins, method)?;
    let count = bins
        .first()
        .map(|b| (0.5 / b.half_width).round() as usize)
        .unwrap_or(0);
    fit_estimates(&estimates, count, method, simcfg)
}

pub(crate) fn fit_estimates(
    estimates: &[BinEstimate],
    bin_count: usize,
    method: ZetaMethod,
    simcfg: &SimilarityConfig,
) -> Result<GeoModel> {
    let usable: Vec<_> = estimates.iter().filter(|e| e.zeta > 0.0).collect();
    if usable.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} usable bins, need at least 2",
            usable.len()
        )));
    }
    let wsum: f64 = usable.iter().map(|e| e.count as f64).sum();
    let cbar = usable
        .iter()
        .map(|e| e.count as f64 * e.center)
        .sum::<f64>()
        / wsum;
    let ybar = usable
        .iter()
        .map(|e| e.count as f64 * e.zeta.ln())
        .sum::<f64>()
        / wsum;
    let (sxy, sxx) = usable.iter().fold((0.0, 0.0), |(sxy, sxx), e| {
        let w = e.count as f64;
        let dc = e.center - cbar;
        (sxy + w * dc * (e.zeta.ln() - ybar), sxx + w * dc * dc)
    });
    if sxx <= 0.0 {
        return Err(Error::InsufficientData(
            "all usable bins share one center".into(),
        ));
    }
    let w1 = sxy / sxx;
    let w0 = ybar - w1 * cbar;
    debug!(
        "log-linear fit over {} bins: w0 = {w0:.4}, w1 = {w1:.4}",
        usable.len()
    );
    Ok(GeoModel {
        w0,
        w1,
        bins: bin_count,
        samples: estimates.iter().map(|e| e.count).sum(),
        method,
        beta: simcfg.beta,
        sigma_kernel: simcfg.sigma_kernel,
        missing_value: simcfg.missing_value,
    })
}

/// The whole sampling → binning → estimation → fitting chain.
pub fn fit_geomodel(
    trajectories: &[Trajectory],
    simcfg: &SimilarityConfig,
    cfg: &GeoModelConfig,
) -> Result<(GeoModel, Vec<BinEstimate>)> {
    simcfg.validate()?;
    cfg.validate()?;
    let samples = sample_pairs(
        trajectories,
        cfg.n_per_traj,
        cfg.seed,
        simcfg,
        cfg.max_pair_gap,
    );
    let bins = bin_samples(&samples, cfg.bins, cfg.min_count)?;
    let estimates = estimate_bins(&bins, cfg.method)?;
    let mut model = fit_estimates(&estimates, cfg.bins, cfg.method, simcfg)?;
    model.samples = samples.len();
    Ok((model, estimates))
}
