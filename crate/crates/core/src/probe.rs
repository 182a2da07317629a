//! Logistic-regression probe on frozen embeddings.

use crate::error::{GscError, Result};
use crate::graph::Split;
use crate::tensor::{Adam, Tensor};

/// Fixed probe hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub lr: f64,
    pub steps: usize,
    pub weight_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { lr: 0.01, steps: 300, weight_decay: 1e-4 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub support: usize,
    pub predicted: usize,
    pub correct: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub accuracy: f64,
    /// Micro-averaged F1; equals accuracy for single-label prediction.
    pub micro_f1: f64,
    pub per_class: Vec<ClassCounts>,
    pub evaluated: usize,
}

/// Multinomial logistic regression, trained on the `train` split.
#[derive(Clone, Debug)]
pub struct LinearProbe {
    weight: Tensor,
    bias: Tensor,
    classes: usize,
}

fn softmax_rows(logits: &mut [f64], classes: usize) {
    for row in logits.chunks_mut(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
}

impl LinearProbe {
    pub fn fit(x: &Tensor, labels: &[usize], train: &[usize], cfg: &ProbeConfig) -> Result<Self> {
        let (n, f) = x.dims2();
        if labels.len() != n {
            return Err(GscError::Probe(format!("{} labels for {n} embedding rows", labels.len())));
        }
        if train.is_empty() {
            return Err(GscError::Probe("empty training split".into()));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; classes];
        for &i in train {
            seen[labels[i]] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(GscError::Probe(format!("class {c} has no training examples")));
        }

        let mut weight = Tensor::zeros(f, classes).with_grad();
        let mut bias = Tensor::zeros(1, classes).with_grad();
        let mut wd = Adam::new(cfg.lr).with_weight_decay(cfg.weight_decay);
        let mut plain = Adam::new(cfg.lr);
        let m = train.len() as f64;
        let mut xs = Vec::with_capacity(train.len() * f);
        for &i in train {
            xs.extend_from_slice(x.row(i));
        }
        let xt = Tensor::matrix(train.len(), f, xs)?;
        for _ in 0..cfg.steps {
            let mut p = xt.matmul(&weight)?.into_data();
            for row in p.chunks_mut(classes) {
                row.iter_mut().zip(bias.data()).for_each(|(v, b)| *v += b);
            }
            softmax_rows(&mut p, classes);
            // d(mean CE)/dlogits = p - onehot
            for (r, &i) in train.iter().enumerate() {
                p[r * classes + labels[i]] -= 1.0;
            }
            p.iter_mut().for_each(|v| *v /= m);
            let dlogits = Tensor::matrix(train.len(), classes, p)?;
            weight.grad = Some(xt.transpose().matmul(&dlogits)?.into_data());
            let mut gb = vec![0.0; classes];
            for row in dlogits.data().chunks(classes) {
                gb.iter_mut().zip(row).for_each(|(g, v)| *g += v);
            }
            bias.grad = Some(gb);
            wd.step(&mut [&mut weight])?;
            plain.step(&mut [&mut bias])?;
        }
        Ok(LinearProbe { weight, bias, classes })
    }

    /// Argmax class per row; ties go to the lowest class id.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = x.matmul(&self.weight)?;
        Ok((0..logits.rows())
            .map(|r| {
                let mut best = 0;
                for (c, (v, b)) in logits.row(r).iter().zip(self.bias.data()).enumerate() {
                    let best_v = logits.get(r, best) + self.bias.data()[best];
                    if v + b > best_v {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    pub fn evaluate(&self, x: &Tensor, labels: &[usize], nodes: &[usize]) -> Result<ProbeResult> {
        if nodes.is_empty() {
            return Err(GscError::Probe("empty evaluation split".into()));
        }
        let pred = self.predict(x)?;
        let mut per_class = vec![ClassCounts::default(); self.classes];
        let mut correct = 0;
        for &i in nodes {
            let (y, p) = (labels[i], pred[i]);
            if y >= self.classes {
                return Err(GscError::Probe(format!("class {y} unseen during training")));
            }
            per_class[y].support += 1;
            per_class[p].predicted += 1;
            if y == p {
                per_class[y].correct += 1;
                correct += 1;
            }
        }
        let tp: usize = per_class.iter().map(|c| c.correct).sum();
        let fp: usize = per_class.iter().map(|c| c.predicted - c.correct).sum();
        let fn_: usize = per_class.iter().map(|c| c.support - c.correct).sum();
        let micro_f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        Ok(ProbeResult { accuracy: correct as f64 / nodes.len() as f64, micro_f1, per_class, evaluated: nodes.len() })
    }
}

/// Node ids tagged with `which`.
pub fn split_nodes(splits: &[Split], which: Split) -> Vec<usize> {
    splits.iter().enumerate().filter(|(_, s)| **s == which).map(|(i, _)| i).collect()
}

/// Trains on `train`, reports on `test`.
pub fn linear_probe(x: &Tensor, labels: &[usize], splits: &[Split], cfg: &ProbeConfig) -> Result<ProbeResult> {
    probe_on(x, labels, splits, Split::Test, cfg)
}

/// Trains on `train`, reports on `eval_split`.
pub fn probe_on(x: &Tensor, labels: &[usize], splits: &[Split], eval_split: Split, cfg: &ProbeConfig) -> Result<ProbeResult> {
    if splits.len() != x.rows() {
        return Err(GscError::Probe(format!("{} splits for {} embedding rows", splits.len(), x.rows())));
    }
    let probe = LinearProbe::fit(x, labels, &split_nodes(splits, Split::Train), cfg)?;
    probe.evaluate(x, labels, &split_nodes(splits, eval_split))
}
