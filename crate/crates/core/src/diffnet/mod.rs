//! Fully-connected tanh surrogate with exact first and second input
//! derivatives.
//!
//! Derivatives are propagated forward as jets: every layer carries the value
//! plus `d/dx`, `d/dy`, `d²/dx²`, `d²/dy²` of each unit. Parameter gradients
//! come from a hand-written reverse pass through that jet computation.

mod adam;
mod batch;
mod checkpoint;
mod loss;

pub use adam::OptState;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use loss::{
    loss_and_grads, loss_value, predict, BoundaryPoint, BoundaryTarget, DataPoint, InteriorPoint, LossBatches,
    LossGrads, LossValue, LossWeights, Normalization,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default architecture: four hidden layers of 50 units.
pub const DEFAULT_WIDTHS: [usize; 6] = [2, 50, 50, 50, 50, 1];

/// Weights and biases of an MLP `R^2 -> R`, stored contiguously.
///
/// Layer `l` maps `widths[l]` inputs to `widths[l + 1]` outputs; its weight
/// matrix is row-major `out x in` and is followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    widths: Vec<usize>,
    data: Vec<f64>,
}

impl NetParams {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        let len = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            widths: widths.to_vec(),
            data: vec![0.0; len],
        })
    }

    /// Rebuilds parameters from a flat buffer laid out like [`NetParams::as_slice`].
    pub fn from_flat(widths: &[usize], data: Vec<f64>) -> Result<Self> {
        let zero = Self::zeros(widths)?;
        if data.len() != zero.data.len() {
            return Err(Error::validation(
                "params",
                format!("expected {} values for widths {:?}, got {}", zero.data.len(), widths, data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("params[{i}]"), "non-finite parameter"));
        }
        Ok(Self { data, ..zero })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.widths.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offsets of the weight block and the bias block of layer `l`.
    pub(crate) fn layer_spans(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let off = self.layer_offset(l);
        let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
        let w_end = off + fan_in * fan_out;
        (off..w_end, w_end..w_end + fan_out)
    }

    pub fn weight(&self, l: usize) -> &[f64] {
        &self.data[self.layer_spans(l).0]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        &self.data[self.layer_spans(l).1]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let span = self.layer_spans(l).0;
        &mut self.data[span]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let span = self.layer_spans(l).1;
        &mut self.data[span]
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths[0] != 2 || *widths.last().unwrap() != 1 {
        return Err(Error::validation("widths", format!("must start at 2 and end at 1, got {widths:?}")));
    }
    if widths.contains(&0) {
        return Err(Error::validation("widths", "layer widths must be positive"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub enum InitScheme<'a> {
    /// Zero-mean normal weights with variance `2 / (fan_in + fan_out)`, zero biases.
    Xavier,
    /// Verbatim copy of previously trained parameters.
    Transfer(&'a NetParams),
}

pub fn init_params(widths: &[usize], scheme: InitScheme<'_>, seed: u64) -> Result<NetParams> {
    match scheme {
        InitScheme::Transfer(source) => {
            if source.widths() != widths {
                return Err(Error::validation(
                    "widths",
                    format!("transfer source has widths {:?}, requested {:?}", source.widths(), widths),
                ));
            }
            Ok(source.clone())
        }
        InitScheme::Xavier => {
            let mut params = NetParams::zeros(widths)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for l in 0..params.n_layers() {
                let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                for w in params.weight_mut(l) {
                    *w = normal.sample(&mut rng);
                }
            }
            Ok(params)
        }
    }
}

/// Network output and its first and second partial derivatives with respect
/// to the (normalized) inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxx: f64,
    pub dyy: f64,
}

impl Jet2 {
    pub fn laplacian(&self) -> f64 {
        self.dxx + self.dyy
    }
}

/// tanh and its first three derivatives, written in terms of `s = tanh(z)`.
#[inline(always)]
pub(crate) fn tanh_derivs(z: f64) -> (f64, f64, f64, f64) {
    let s = z.tanh();
    let d1 = 1.0 - s * s;
    let d2 = -2.0 * s * d1;
    let d3 = -2.0 * d1 * d1 + 4.0 * s * s * d1;
    (s, d1, d2, d3)
}

/// Evaluates the raw network and its exact input derivatives at a single
/// point. Used as the reference path for the batched kernels.
pub fn eval_jet(params: &NetParams, x: f64, y: f64) -> Jet2 {
    let mut v = vec![x, y];
    let mut vx = vec![1.0, 0.0];
    let mut vy = vec![0.0, 1.0];
    let mut vxx = vec![0.0, 0.0];
    let mut vyy = vec![0.0, 0.0];
    let last = params.n_layers() - 1;
    for l in 0..params.n_layers() {
        let (fan_in, fan_out) = (params.widths[l], params.widths[l + 1]);
        let w = params.weight(l);
        let b = params.bias(l);
        let mut z = vec![0.0; fan_out];
        let mut zx = vec![0.0; fan_out];
        let mut zy = vec![0.0; fan_out];
        let mut zxx = vec![0.0; fan_out];
        let mut zyy = vec![0.0; fan_out];
        for o in 0..fan_out {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            z[o] = b[o] + dot(row, &v);
            zx[o] = dot(row, &vx);
            zy[o] = dot(row, &vy);
            zxx[o] = dot(row, &vxx);
            zyy[o] = dot(row, &vyy);
        }
        if l == last {
            return Jet2 {
                value: z[0],
                dx: zx[0],
                dy: zy[0],
                dxx: zxx[0],
                dyy: zyy[0],
            };
        }
        for o in 0..fan_out {
            let (s, d1, d2, _) = tanh_derivs(z[o]);
            z[o] = s;
            zxx[o] = d2 * zx[o] * zx[o] + d1 * zxx[o];
            zyy[o] = d2 * zy[o] * zy[o] + d1 * zyy[o];
            zx[o] *= d1;
            zy[o] *= d1;
        }
        v = z;
        vx = zx;
        vy = zy;
        vxx = zxx;
        vyy = zyy;
    }
    unreachable!("network has at least one layer")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
