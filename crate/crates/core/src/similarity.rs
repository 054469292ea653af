//! Similarity between radio observations.
//!
//! Three measures are provided: the Jaccard index of the heard source sets, a
//! kernelized mean absolute strength difference over the union of sources (absent
//! sources take a fixed "missing" strength), and their weighted harmonic mean.
//!
//! The measures operate on any pair of identifier-sorted reading sequences so the
//! same code serves string-keyed [`RfObservation`]s and the interned fingerprints
//! used for bulk scoring.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RfObservation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    /// Weight of the harmonic mean; 1 gives the plain harmonic mean.
    pub beta: f64,
    /// Width of the Gaussian kernel applied to the mean absolute difference (dBm).
    pub sigma_kernel: f64,
    /// Strength substituted for a source heard on one side only (dBm).
    pub missing_value: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            sigma_kernel: 10.0,
            missing_value: -100.0,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if !(self.sigma_kernel > 0.0 && self.sigma_kernel.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sigma_kernel must be > 0, got {}",
                self.sigma_kernel
            )));
        }
        if !self.missing_value.is_finite() {
            return Err(Error::InvalidInput("missing_value must be finite".into()));
        }
        Ok(())
    }
}

/// Per-pair overlap statistics gathered in one merge pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Overlap {
    pub common: usize,
    pub union: usize,
    pub abs_diff_sum: f64,
}

pub(crate) fn overlap<K, A, B>(a: A, b: B, missing: f64) -> Overlap
where
    K: Ord,
    A: IntoIterator<Item = (K, f64)>,
    B: IntoIterator<Item = (K, f64)>,
{
    let mut a = a.into_iter().peekable();
    let mut b = b.into_iter().peekable();
    let mut out = Overlap {
        common: 0,
        union: 0,
        abs_diff_sum: 0.0,
    };
    loop {
        let ord = match (a.peek(), b.peek()) {
            (None, None) => break,
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (Some((ka, _)), Some((kb, _))) => ka.cmp(kb),
        };
        out.union += 1;
        match ord {
            Ordering::Less => {
                let (_, va) = a.next().unwrap();
                out.abs_diff_sum += (va - missing).abs();
            }
            Ordering::Greater => {
                let (_, vb) = b.next().unwrap();
                out.abs_diff_sum += (vb - missing).abs();
            }
            Ordering::Equal => {
                let (_, va) = a.next().unwrap();
                let (_, vb) = b.next().unwrap();
                out.common += 1;
                out.abs_diff_sum += (va - vb).abs();
            }
        }
    }
    out
}

impl Overlap {
    pub fn jaccard(&self) -> f64 {
        if self.union == 0 {
            0.0
        } else {
            self.common as f64 / self.union as f64
        }
    }

    pub fn kernelized_l1(&self, sigma: f64) -> Option<f64> {
        if self.union == 0 {
            return None;
        }
        let m = self.abs_diff_sum / self.union as f64;
        Some((-m * m / (2.0 * sigma * sigma)).exp())
    }

    pub fn compound(&self, cfg: &SimilarityConfig) -> f64 {
        match self.kernelized_l1(cfg.sigma_kernel) {
            Some(l1) => harmonic_combine(self.jaccard(), l1, cfg.beta),
            None => 0.0,
        }
    }
}

/// Weighted harmonic mean of a Jaccard and a kernelized-L1 similarity; 0 when the
/// denominator vanishes.
pub fn harmonic_combine(g_jac: f64, g_l1: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * g_jac + g_l1;
    if den <= 0.0 {
        0.0
    } else {
        (1.0 + b2) * g_jac * g_l1 / den
    }
}

fn overlap_obs(oi: &RfObservation, oj: &RfObservation, missing: f64) -> Overlap {
    overlap(oi.iter(), oj.iter(), missing)
}

/// |A_i ∩ A_j| / |A_i ∪ A_j|, or 0 when both source sets are empty.
pub fn jaccard(oi: &RfObservation, oj: &RfObservation) -> f64 {
    overlap_obs(oi, oj, 0.0).jaccard()
}

/// Gaussian kernel of the mean absolute strength difference over the union of sources.
pub fn kernelized_l1(
    oi: &RfObservation,
    oj: &RfObservation,
    cfg: &SimilarityConfig,
) -> Result<f64> {
    overlap_obs(oi, oj, cfg.missing_value)
        .kernelized_l1(cfg.sigma_kernel)
        .ok_or(Error::NoCommonSupport)
}

/// Harmonic-mean combination of [`jaccard`] and [`kernelized_l1`]. Empty-vs-empty is 0.
pub fn compound_similarity(oi: &RfObservation, oj: &RfObservation, cfg: &SimilarityConfig) -> f64 {
    overlap_obs(oi, oj, cfg.missing_value).compound(cfg)
}

/// Observation with identifiers interned to dense integers, sorted by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fingerprint {
    readings: Vec<(u32, f64)>,
}

impl Fingerprint {
    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.readings.iter().copied()
    }

    pub fn jaccard(&self, other: &Fingerprint) -> f64 {
        overlap(self.iter(), other.iter(), 0.0).jaccard()
    }

    pub fn compound(&self, other: &Fingerprint, cfg: &SimilarityConfig) -> f64 {
        overlap(self.iter(), other.iter(), cfg.missing_value).compound(cfg)
    }
}

/// Interns source identifiers so many observations can be compared without string work.
#[derive(Debug, Default)]
pub struct Interner {
    ids: std::collections::HashMap<String, u32>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fingerprint(&mut self, obs: &RfObservation) -> Fingerprint {
        let mut readings: Vec<(u32, f64)> = obs
            .iter()
            .map(|(id, v)| {
                let next = self.ids.len() as u32;
                (*self.ids.entry(id.to_owned()).or_insert(next), v)
            })
            .collect();
        readings.sort_by_key(|&(k, _)| k);
        Fingerprint { readings }
    }
}
