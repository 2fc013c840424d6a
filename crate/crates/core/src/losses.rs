//! The unsupervised training objective.
//!
//! With `p_i` the probability that live point `i` is Changed and `d_i` its
//! nearest-neighbour distance:
//!
//! ```text
//! chamfer  = 1/n  Σ (1 − p_i) · d(s_i, M)
//! class    = 1/n  Σ p_i
//! temporal = 1/n0 Σ p0_i · d(s0_i, S1) + 1/n1 Σ p1_i · d(s1_i, S0)
//! total    = chamfer + λ1 · class + λ2 · temporal
//! ```
//!
//! Distances are plain Euclidean metres and are treated as constants: every
//! gradient here is with respect to the probabilities only. For a temporal
//! batch of two (map, scan) pairs the chamfer and class terms are the mean
//! over both pairs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{PointCloud, SpatialIndex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the class-balance term.
    pub lambda1: f64,
    /// Weight of the temporal-consistency term.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 15.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
            return invalid(format!("loss weights must be non-negative, got ({lambda1}, {lambda2})"));
        }
        Ok(Self { lambda1, lambda2 })
    }
}

/// Per-point probability of the Changed class.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeProbabilities(Vec<f64>);

impl ChangeProbabilities {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if let Some(bad) = p.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return invalid(format!("probability {bad} outside [0, 1]"));
        }
        Ok(Self(p))
    }

    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A scalar loss and its gradient with respect to each probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalTerm {
    pub value: f64,
    pub gradient0: Vec<f64>,
    pub gradient1: Vec<f64>,
}

/// Chamfer loss from precomputed scan → map distances.
pub fn chamfer_from_distances(distances: &[f64], p: &ChangeProbabilities) -> Result<LossTerm> {
    if distances.len() != p.len() {
        return invalid(format!("{} distances for {} probabilities", distances.len(), p.len()));
    }
    if distances.is_empty() {
        return invalid("chamfer loss of an empty scan");
    }
    let n = distances.len() as f64;
    let value = distances
        .iter()
        .zip(p.as_slice())
        .map(|(d, pi)| (1.0 - pi) * d)
        .sum::<f64>()
        / n;
    let gradient = distances.iter().map(|d| -d / n).collect();
    Ok(LossTerm { value, gradient })
}

pub fn chamfer_loss(scan: &PointCloud, map: &SpatialIndex, p: &ChangeProbabilities) -> Result<LossTerm> {
    if scan.len() != p.len() {
        return invalid(format!("scan has {} points but {} probabilities", scan.len(), p.len()));
    }
    let d = map.nearest_distances(scan.points())?;
    chamfer_from_distances(&d, p)
}

pub fn class_balance_loss(p: &ChangeProbabilities) -> Result<LossTerm> {
    if p.is_empty() {
        return invalid("class-balance loss of an empty scan");
    }
    let n = p.len() as f64;
    Ok(LossTerm {
        value: p.as_slice().iter().sum::<f64>() / n,
        gradient: vec![1.0 / n; p.len()],
    })
}

fn weighted_mean(distances: &[f64], p: &[f64]) -> (f64, Vec<f64>) {
    let n = distances.len() as f64;
    let value = distances.iter().zip(p).map(|(d, pi)| pi * d).sum::<f64>() / n;
    (value, distances.iter().map(|d| d / n).collect())
}

/// Temporal term from precomputed S0 → S1 and S1 → S0 distances.
pub fn temporal_from_distances(
    d01: &[f64],
    p0: &ChangeProbabilities,
    d10: &[f64],
    p1: &ChangeProbabilities,
) -> Result<TemporalTerm> {
    if d01.is_empty() || d10.is_empty() {
        return invalid("temporal loss needs two non-empty scans");
    }
    if d01.len() != p0.len() || d10.len() != p1.len() {
        return invalid("temporal distances and probabilities differ in length");
    }
    let (v0, gradient0) = weighted_mean(d01, p0.as_slice());
    let (v1, gradient1) = weighted_mean(d10, p1.as_slice());
    Ok(TemporalTerm {
        value: v0 + v1,
        gradient0,
        gradient1,
    })
}

pub fn temporal_loss(
    s0: &PointCloud,
    p0: &ChangeProbabilities,
    s1: &PointCloud,
    p1: &ChangeProbabilities,
) -> Result<TemporalTerm> {
    if s0.is_empty() || s1.is_empty() {
        return invalid("temporal loss needs two non-empty scans");
    }
    if s0.len() != p0.len() || s1.len() != p1.len() {
        return invalid("scan sizes and probability counts differ");
    }
    let d01 = SpatialIndex::new(s1).nearest_distances(s0.points())?;
    let d10 = SpatialIndex::new(s0).nearest_distances(s1.points())?;
    temporal_from_distances(&d01, p0, &d10, p1)
}

/// Weighted objective with its components and per-point gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub chamfer: f64,
    pub class_balance: f64,
    pub temporal: f64,
    pub total: f64,
    /// ∂total/∂p for the first scan.
    pub gradient0: Vec<f64>,
    /// ∂total/∂p for the second scan.
    pub gradient1: Vec<f64>,
}

/// Two (map, scan) pairs in one common frame.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub map0: &'a SpatialIndex,
    pub scan0: &'a PointCloud,
    pub map1: &'a SpatialIndex,
    pub scan1: &'a PointCloud,
}

/// Geometry of a temporal batch reduced to the distances the loss needs.
///
/// The distances do not depend on the network, so they are computed once
/// and the objective is re-evaluated cheaply for new probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDistances {
    /// Scan 0 → map 0.
    pub chamfer0: Vec<f64>,
    /// Scan 1 → map 1.
    pub chamfer1: Vec<f64>,
    /// Scan 0 → scan 1.
    pub temporal0: Vec<f64>,
    /// Scan 1 → scan 0.
    pub temporal1: Vec<f64>,
}

impl BatchDistances {
    pub fn compute(inputs: &LossInputs<'_>) -> Result<Self> {
        if inputs.scan0.is_empty() || inputs.scan1.is_empty() {
            return invalid("temporal batch contains an empty scan");
        }
        let chamfer0 = inputs.map0.nearest_distances(inputs.scan0.points())?;
        let chamfer1 = inputs.map1.nearest_distances(inputs.scan1.points())?;
        let temporal0 = SpatialIndex::new(inputs.scan1).nearest_distances(inputs.scan0.points())?;
        let temporal1 = SpatialIndex::new(inputs.scan0).nearest_distances(inputs.scan1.points())?;
        Ok(Self {
            chamfer0,
            chamfer1,
            temporal0,
            temporal1,
        })
    }

    pub fn evaluate(&self, p0: &ChangeProbabilities, p1: &ChangeProbabilities, w: &LossWeights) -> Result<LossBreakdown> {
        let c0 = chamfer_from_distances(&self.chamfer0, p0)?;
        let c1 = chamfer_from_distances(&self.chamfer1, p1)?;
        let b0 = class_balance_loss(p0)?;
        let b1 = class_balance_loss(p1)?;
        let t = temporal_from_distances(&self.temporal0, p0, &self.temporal1, p1)?;
        let chamfer = 0.5 * (c0.value + c1.value);
        let class_balance = 0.5 * (b0.value + b1.value);
        let combine = |c: &[f64], b: &[f64], tg: &[f64]| -> Vec<f64> {
            c.iter()
                .zip(b)
                .zip(tg)
                .map(|((c, b), t)| 0.5 * c + w.lambda1 * 0.5 * b + w.lambda2 * t)
                .collect()
        };
        Ok(LossBreakdown {
            chamfer,
            class_balance,
            temporal: t.value,
            total: chamfer + w.lambda1 * class_balance + w.lambda2 * t.value,
            gradient0: combine(&c0.gradient, &b0.gradient, &t.gradient0),
            gradient1: combine(&c1.gradient, &b1.gradient, &t.gradient1),
        })
    }
}

pub fn total_loss(
    inputs: &LossInputs<'_>,
    p0: &ChangeProbabilities,
    p1: &ChangeProbabilities,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    BatchDistances::compute(inputs)?.evaluate(p0, p1, w)
}
