//! Training objectives on a [`Graph`]: cross-entropy, cross-entropy plus an
//! entropy penalty, and cross-entropy on Gaussian-perturbed logits.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Var};
use crate::peptide::Token;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    WeightedEntropy,
    Dinoiser,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::CrossEntropy, LossKind::WeightedEntropy, LossKind::Dinoiser];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::WeightedEntropy => "weighted_entropy",
            LossKind::Dinoiser => "dinoiser",
        }
    }

    /// Column label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "Cross-entropy",
            LossKind::WeightedEntropy => "Weighted entropy",
            LossKind::Dinoiser => "DINOISER",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_").to_ascii_lowercase();
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss {s:?}")))
    }
}

/// Which canvas positions a diffusion loss scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossPositions {
    MaskedOnly,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub lambda_entropy: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub positions: LossPositions,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::CrossEntropy,
            lambda_entropy: 0.1,
            sigma_min: 0.3,
            sigma_max: 1.0,
            positions: LossPositions::MaskedOnly,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_entropy >= 0.0) {
            return Err(Error::Config("train.loss.lambda_entropy must be >= 0".into()));
        }
        if !(self.sigma_min >= 0.0 && self.sigma_min <= self.sigma_max) {
            return Err(Error::Config("train.loss requires 0 <= sigma_min <= sigma_max".into()));
        }
        Ok(())
    }
}

/// Scored positions: logits row `rows[i]` should predict `targets[i]`.
fn scored<T: Scalar>(g: &mut Graph<'_, T>, logits: Var, rows: &[usize], targets: &[Token]) -> Result<Var> {
    if rows.is_empty() {
        return Err(Error::Domain("loss has no scored positions".into()));
    }
    if rows.len() != targets.len() {
        return Err(Error::Shape {
            op: "loss targets",
            left: [rows.len(), 1],
            right: [targets.len(), 1],
        });
    }
    g.gather_rows(logits, rows)
}

fn ce_on<T: Scalar>(g: &mut Graph<'_, T>, x: Var, targets: &[Token]) -> Result<Var> {
    let lp = g.log_softmax(x);
    let ids: Vec<usize> = targets.iter().map(|t| t.index()).collect();
    let picked = g.pick(lp, &ids)?;
    let m = g.mean(picked);
    Ok(g.scale(m, -T::one()))
}

/// Mean `-log softmax(logits[row])[target]`.
pub fn cross_entropy<T: Scalar>(g: &mut Graph<'_, T>, logits: Var, rows: &[usize], targets: &[Token]) -> Result<Var> {
    let x = scored(g, logits, rows, targets)?;
    ce_on(g, x, targets)
}

/// Mean Shannon entropy (nats) of the softmax of each row of `x`.
fn mean_entropy<T: Scalar>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    let n = g.shape(x)[0];
    let p = g.softmax(x);
    let lp = g.log_softmax(x);
    let plp = g.mul(p, lp)?;
    let s = g.sum(plp);
    Ok(g.scale(s, -T::one() / T::of(n as f64)))
}

pub fn weighted_entropy<T: Scalar>(
    g: &mut Graph<'_, T>,
    logits: Var,
    rows: &[usize],
    targets: &[Token],
    lambda: f64,
) -> Result<Var> {
    let x = scored(g, logits, rows, targets)?;
    let ce = ce_on(g, x, targets)?;
    let h = mean_entropy(g, x)?;
    let h = g.scale(h, T::of(lambda));
    g.add(ce, h)
}

/// Cross-entropy after adding `σ·ε` to the scored logits, `σ ~ U[sigma_min, sigma_max]`
/// drawn once per call and `ε` standard normal per element.
pub fn dinoiser_loss<T: Scalar, R: Rng>(
    g: &mut Graph<'_, T>,
    logits: Var,
    rows: &[usize],
    targets: &[Token],
    sigma_min: f64,
    sigma_max: f64,
    rng: &mut R,
) -> Result<Var> {
    let x = scored(g, logits, rows, targets)?;
    let sigma = if sigma_max > sigma_min {
        rng.random_range(sigma_min..=sigma_max)
    } else {
        sigma_min
    };
    let shape = g.shape(x);
    let noise: Vec<T> = (0..shape[0] * shape[1])
        .map(|_| T::of(sigma * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let noise = g.constant(Tensor::new(shape, noise)?);
    let noisy = g.add(x, noise)?;
    ce_on(g, noisy, targets)
}

/// Dispatch on `cfg.kind`.
pub fn apply_loss<T: Scalar, R: Rng>(
    g: &mut Graph<'_, T>,
    cfg: &LossConfig,
    logits: Var,
    rows: &[usize],
    targets: &[Token],
    rng: &mut R,
) -> Result<Var> {
    match cfg.kind {
        LossKind::CrossEntropy => cross_entropy(g, logits, rows, targets),
        LossKind::WeightedEntropy => weighted_entropy(g, logits, rows, targets, cfg.lambda_entropy),
        LossKind::Dinoiser => dinoiser_loss(g, logits, rows, targets, cfg.sigma_min, cfg.sigma_max, rng),
    }
}
