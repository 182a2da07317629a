//! One-layer GCN encoder, `H = PReLU(Â X W)`.

use crate::error::{GscError, Result};
use crate::graph::NormAdj;
use crate::sampler::RngStream;
use crate::tensor::{Tape, Tensor, Var};

/// Learned encoder state.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `C x F`.
    pub weight: Tensor,
    /// Single-element PReLU slope.
    pub prelu_slope: Tensor,
}

/// Encoder parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub weight: Var,
    pub prelu_slope: Var,
}

impl EncoderParams {
    /// Glorot-uniform weight, slope 0.25.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect();
        EncoderParams {
            weight: Tensor::matrix(in_dim, out_dim, data).expect("sized above").with_grad(),
            prelu_slope: Tensor::scalar(0.25).with_grad(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn record(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars { weight: tape.param(self.weight.clone()), prelu_slope: tape.param(self.prelu_slope.clone()) }
    }
}

/// Propagated features `Â X`, constant across training.
pub fn propagate(adj: &NormAdj, x: &Tensor) -> Result<Tensor> {
    adj.matmul_dense(x)
}

impl EncoderVars {
    /// `PReLU(ax · W)` where `ax` is the propagated feature matrix.
    pub fn forward(&self, tape: &mut Tape, ax: Var) -> Result<Var> {
        let z = tape.matmul(ax, self.weight)?;
        tape.prelu(z, self.prelu_slope)
    }
}

/// Plain forward pass without gradient tracking.
pub fn encode(adj: &NormAdj, x: &Tensor, params: &EncoderParams) -> Result<Tensor> {
    if x.rows() != adj.n_nodes() {
        return Err(GscError::dim("encode", format!("{} feature rows for {} nodes", x.rows(), adj.n_nodes())));
    }
    if x.cols() != params.in_dim() {
        return Err(GscError::dim("encode", format!("features have {} columns, weight expects {}", x.cols(), params.in_dim())));
    }
    let mut tape = Tape::new();
    let ax = tape.constant(propagate(adj, x)?);
    let vars = EncoderVars { weight: tape.constant(params.weight.clone()), prelu_slope: tape.constant(params.prelu_slope.clone()) };
    let h = vars.forward(&mut tape, ax)?;
    Ok(tape.value(h).clone())
}
