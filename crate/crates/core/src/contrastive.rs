//! Positive/negative pairing and the distance-based contrastive losses.

use crate::error::{GscError, Result};
use crate::sampler::RngStream;
use crate::tensor::{Tape, Var};

/// Upper bound on `exp(-D / tau)` inside `log(1 - .)`.
pub const NEGATIVE_CLAMP: f64 = 1.0 - 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    Sampled,
    Generated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Negative {
    pub pool: Pool,
    pub index: usize,
}

/// Negative assignments for a batch of aligned sampled/generated subgraphs.
/// Anchor `i`'s positive is `generated[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastBatch {
    pub centers: Vec<usize>,
    pub negatives: Vec<Vec<Negative>>,
}

impl ContrastBatch {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Draws `m` negatives per anchor, alternating sampled and generated pools,
/// each uniformly among subgraphs with a different center.
pub fn build_pairs(centers: &[usize], m: usize, rng: &mut RngStream) -> Result<ContrastBatch> {
    if centers.len() < 2 {
        return Err(GscError::contract(format!("need at least 2 subgraphs to draw negatives, got {}", centers.len())));
    }
    let mut negatives = Vec::with_capacity(centers.len());
    for (i, &c) in centers.iter().enumerate() {
        let others: Vec<usize> = (0..centers.len()).filter(|&j| j != i && centers[j] != c).collect();
        if others.is_empty() {
            return Err(GscError::contract(format!("no subgraph with a center other than {c}")));
        }
        let negs = (0..m)
            .map(|k| Negative {
                pool: if k % 2 == 0 { Pool::Sampled } else { Pool::Generated },
                index: others[rng.index(others.len())],
            })
            .collect();
        negatives.push(negs);
    }
    Ok(ContrastBatch { centers: centers.to_vec(), negatives })
}

/// Distances feeding one contrastive loss: per anchor, its positive
/// distances and its negative distances.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairDistances {
    pub positive: Vec<Vec<f64>>,
    pub negative: Vec<Vec<f64>>,
}

/// `-1/(N(M+P)) sum_i [ sum_p log exp(-D_p/tau) + sum_j log(1 - exp(-D_j/tau)) ]`
/// with the negative similarity clamped to [`NEGATIVE_CLAMP`]. Used for both
/// the Wasserstein and the Gromov-Wasserstein loss.
pub fn contrastive_loss(d: &PairDistances, tau: f64) -> Result<f64> {
    let per_anchor = check(d, tau)?;
    let mut total = 0.0;
    for (pos, neg) in d.positive.iter().zip(&d.negative) {
        total += pos.iter().map(|p| -p / tau).sum::<f64>();
        total += neg.iter().map(|n| (1.0 - (-n / tau).exp().min(NEGATIVE_CLAMP)).ln()).sum::<f64>();
    }
    Ok(-total / (d.positive.len() * per_anchor) as f64)
}

fn check(d: &PairDistances, tau: f64) -> Result<usize> {
    if !(tau > 0.0) {
        return Err(GscError::contract(format!("temperature must be positive, got {tau}")));
    }
    if d.positive.is_empty() || d.positive.len() != d.negative.len() {
        return Err(GscError::contract("loss needs one positive and one negative list per anchor"));
    }
    let per_anchor = d.positive[0].len() + d.negative[0].len();
    if d.positive.iter().zip(&d.negative).any(|(p, n)| p.len() + n.len() != per_anchor) {
        return Err(GscError::contract("anchors have different pair counts"));
    }
    Ok(per_anchor)
}

/// Wasserstein-based loss.
pub fn wd_loss(d: &PairDistances, tau: f64) -> Result<f64> {
    contrastive_loss(d, tau)
}

/// Gromov-Wasserstein-based loss.
pub fn gwd_loss(d: &PairDistances, tau: f64) -> Result<f64> {
    contrastive_loss(d, tau)
}

/// `lambda * l1 + (1 - lambda) * l2`.
pub fn total_loss(l1: f64, l2: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * l1 + (1.0 - lambda) * l2)
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(GscError::config("lambda", format!("must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

/// Tape version of [`contrastive_loss`] over one-element distance vars.
pub fn contrastive_loss_on(tape: &mut Tape, positive: &[Vec<Var>], negative: &[Vec<Var>], tau: f64) -> Result<Var> {
    let shape = PairDistances {
        positive: positive.iter().map(|p| vec![0.0; p.len()]).collect(),
        negative: negative.iter().map(|n| vec![0.0; n.len()]).collect(),
    };
    let per_anchor = check(&shape, tau)?;
    let mut terms = Vec::new();
    for (pos, neg) in positive.iter().zip(negative) {
        for &p in pos {
            // log(exp(-D/tau)) == -D/tau
            terms.push(tape.scale(p, -1.0 / tau));
        }
        for &n in neg {
            let s = tape.scale(n, -1.0 / tau);
            let s = tape.exp(s);
            let s = tape.clamp(s, f64::NEG_INFINITY, NEGATIVE_CLAMP);
            let s = tape.scale(s, -1.0);
            let s = tape.add_scalar(s, 1.0);
            terms.push(tape.log(s));
        }
    }
    let sum = tape.add_n(&terms)?;
    Ok(tape.scale(sum, -1.0 / (positive.len() * per_anchor) as f64))
}
