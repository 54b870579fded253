//! Dirichlet evidence model and the class-weighted digamma loss.
//!
//! Non-negative evidence e_j parameterizes a Dirichlet with α_j = e_j + 1.
//! Strength S = Σ α_j, expected class probabilities α_j / S, and the
//! uncertainty mass u = K / S. The training loss for a subject of class c is
//!
//! ```text
//! L = w_c · (ψ(S) − ψ(α_c))
//! ```
//!
//! with class weights w_j = 1 / n_j taken from the training split.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::specfun::{digamma_unchecked, trigamma_unchecked};

/// Number of uncertainty grades; grade g covers [0.2·(g−1), 0.2·g).
pub const NUM_GRADES: usize = 5;

/// Evidence together with every Dirichlet quantity derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidentialOutput {
    pub evidence: Vec<f64>,
    pub alpha: Vec<f64>,
    pub strength: f64,
    pub probs: Vec<f64>,
    pub uncertainty: f64,
    pub grade: u8,
}

impl EvidentialOutput {
    /// Builds the Dirichlet view of a raw evidence vector.
    pub fn from_evidence(evidence: &[f64]) -> Result<Self> {
        validate_evidence(evidence)?;
        let k = evidence.len();
        let alpha: Vec<f64> = evidence.iter().map(|e| e + 1.0).collect();
        let strength: f64 = alpha.iter().sum();
        let probs = alpha.iter().map(|a| a / strength).collect();
        let uncertainty = k as f64 / strength;
        Ok(Self {
            evidence: evidence.to_vec(),
            alpha,
            strength,
            probs,
            uncertainty,
            grade: grade_of(uncertainty)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.evidence.len()
    }

    /// Predicted class: argmax of the evidence, lowest index on ties.
    pub fn predicted_class(&self) -> usize {
        argmax(&self.evidence)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn validate_evidence(evidence: &[f64]) -> Result<()> {
    if evidence.len() < 2 {
        return Err(Error::Invalid(format!(
            "evidence needs at least 2 classes, got {}",
            evidence.len()
        )));
    }
    if let Some((j, e)) = evidence
        .iter()
        .enumerate()
        .find(|(_, e)| !e.is_finite() || **e < 0.0)
    {
        return Err(Error::Invalid(format!("evidence[{j}] = {e} is not a finite non-negative value")));
    }
    Ok(())
}

/// Maps an uncertainty in [0, 1] to its grade 1..=5.
///
/// Bin edges are compared directly so that 0.2, 0.4, 0.6 and 0.8 open the
/// next grade; 1.0 belongs to grade 5.
pub fn grade_of(u: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Invalid(format!("uncertainty {u} is outside [0, 1]")));
    }
    const EDGES: [f64; NUM_GRADES - 1] = [0.2, 0.4, 0.6, 0.8];
    Ok(1 + EDGES.iter().filter(|edge| u >= **edge).count() as u8)
}

/// Per-class loss weights.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some((j, w)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Invalid(format!("class weight {j} = {w} must be positive")));
        }
        Ok(Self(weights))
    }

    /// Uniform unit weights for `k` classes.
    pub fn uniform(k: usize) -> Self {
        Self(alloc::vec![1.0; k])
    }

    /// Reciprocal class frequencies: w_j = 1 / counts_j.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if let Some(j) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Config(format!(
                "class {j} has no training samples; its loss weight is undefined (counts {counts:?})"
            )));
        }
        Ok(Self(counts.iter().map(|&n| 1.0 / n as f64).collect()))
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

/// Per-subject loss value and its gradient with respect to the evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_evidence: Vec<f64>,
}

/// Class-weighted evidential loss for one subject.
///
/// Only the true class survives the one-hot sum, so the value is
/// `w_c (ψ(S) − ψ(α_c))`. Since ∂S/∂e_j = 1 for every j, the gradient is
/// `w_c ψ′(S)` off the true class and `w_c (ψ′(S) − ψ′(α_c))` on it.
pub fn evidential_loss(evidence: &[f64], true_class: usize, weights: &ClassWeights) -> Result<LossResult> {
    validate_evidence(evidence)?;
    let k = evidence.len();
    if true_class >= k {
        return Err(Error::Invalid(format!("class index {true_class} out of range for {k} classes")));
    }
    if weights.len() != k {
        return Err(Error::Shape {
            context: "class weights",
            expected: k,
            found: weights.len(),
        });
    }
    let w = weights.as_slice()[true_class];
    let strength: f64 = evidence.iter().map(|e| e + 1.0).sum();
    let alpha_c = evidence[true_class] + 1.0;

    let value = w * (digamma_unchecked(strength) - digamma_unchecked(alpha_c));
    let off = w * trigamma_unchecked(strength);
    let mut grad_evidence = alloc::vec![off; k];
    grad_evidence[true_class] = w * (trigamma_unchecked(strength) - trigamma_unchecked(alpha_c));
    Ok(LossResult { value, grad_evidence })
}
