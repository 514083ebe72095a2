//! Batched jet propagation and its reverse pass.
//!
//! Activations of every channel are stacked into one row-major matrix with
//! `channels * n` rows (channel-major), so each layer is a single GEMM.

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};

use super::{tanh_derivs, NetParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum JetOrder {
    /// Value only.
    Value,
    /// Value and first derivatives.
    First,
    /// Value, first derivatives and the two pure second derivatives.
    Second,
}

impl JetOrder {
    pub(crate) fn channels(self) -> usize {
        match self {
            JetOrder::Value => 1,
            JetOrder::First => 3,
            JetOrder::Second => 5,
        }
    }
}

/// Intermediate values kept for the reverse pass.
pub(crate) struct Tape {
    pub n: usize,
    pub order: JetOrder,
    /// `acts[0]` is the input jet, `acts[l]` the output of hidden layer `l`.
    acts: Vec<Vec<f64>>,
    /// Per hidden layer: `tanh(z)` in channel 0, pre-activation derivatives in the others.
    pre: Vec<Vec<f64>>,
    /// Output jet, `channels * n` entries, channel-major.
    pub out: Vec<f64>,
}

fn rm(data: &[f64], rows: usize, cols: usize) -> MatRef<'_, f64> {
    MatRef::from_row_major_slice(data, rows, cols)
}

fn rm_mut(data: &mut [f64], rows: usize, cols: usize) -> MatMut<'_, f64> {
    MatMut::from_row_major_slice_mut(data, rows, cols)
}

pub(crate) fn forward(params: &NetParams, pts: &[(f64, f64)], order: JetOrder) -> Tape {
    let n = pts.len();
    let c = order.channels();
    let rows = c * n;
    let mut input = vec![0.0; rows * 2];
    for (i, &(x, y)) in pts.iter().enumerate() {
        input[2 * i] = x;
        input[2 * i + 1] = y;
    }
    if c > 1 {
        for i in 0..n {
            input[2 * (n + i)] = 1.0;
            input[2 * (2 * n + i) + 1] = 1.0;
        }
    }

    let layers = params.n_layers();
    let mut acts = Vec::with_capacity(layers);
    let mut pre = Vec::with_capacity(layers - 1);
    acts.push(input);
    for l in 0..layers {
        let (fan_in, fan_out) = (params.widths()[l], params.widths()[l + 1]);
        let mut z = vec![0.0; rows * fan_out];
        matmul(
            rm_mut(&mut z, rows, fan_out),
            Accum::Replace,
            rm(acts.last().unwrap(), rows, fan_in),
            rm(params.weight(l), fan_out, fan_in).transpose(),
            1.0,
            Par::Seq,
        );
        let b = params.bias(l);
        for row in z[..n * fan_out].chunks_exact_mut(fan_out) {
            for (v, bj) in row.iter_mut().zip(b) {
                *v += bj;
            }
        }
        if l + 1 == layers {
            return Tape {
                n,
                order,
                acts,
                pre,
                out: z,
            };
        }
        let mut a = vec![0.0; rows * fan_out];
        let block = n * fan_out;
        for e in 0..block {
            let (s, d1, d2, _) = tanh_derivs(z[e]);
            z[e] = s;
            a[e] = s;
            if c > 1 {
                let zx = z[block + e];
                let zy = z[2 * block + e];
                a[block + e] = d1 * zx;
                a[2 * block + e] = d1 * zy;
                if c > 3 {
                    a[3 * block + e] = d2 * zx * zx + d1 * z[3 * block + e];
                    a[4 * block + e] = d2 * zy * zy + d1 * z[4 * block + e];
                }
            }
        }
        pre.push(z);
        acts.push(a);
    }
    unreachable!("network has at least one layer")
}

/// Accumulates `d loss / d params` into `grads`, given the adjoint of the
/// output jet (`channels * n` entries, same layout as [`Tape::out`]).
pub(crate) fn backward(params: &NetParams, tape: &Tape, g_out: &[f64], grads: &mut [f64]) {
    let n = tape.n;
    let c = tape.order.channels();
    let rows = c * n;
    let layers = params.n_layers();
    assert_eq!(g_out.len(), rows);

    let mut g_z = g_out.to_vec();
    for l in (0..layers).rev() {
        let (fan_in, fan_out) = (params.widths()[l], params.widths()[l + 1]);
        if l + 1 < layers {
            // g_z currently holds the adjoint of this layer's activations.
            let z = &tape.pre[l];
            let block = n * fan_out;
            for e in 0..block {
                let s = z[e];
                let d1 = 1.0 - s * s;
                let d2 = -2.0 * s * d1;
                let mut gv = g_z[e] * d1;
                if c > 1 {
                    let zx = z[block + e];
                    let zy = z[2 * block + e];
                    let gax = g_z[block + e];
                    let gay = g_z[2 * block + e];
                    gv += d2 * (gax * zx + gay * zy);
                    let mut gzx = gax * d1;
                    let mut gzy = gay * d1;
                    if c > 3 {
                        let d3 = -2.0 * d1 * d1 + 4.0 * s * s * d1;
                        let zxx = z[3 * block + e];
                        let zyy = z[4 * block + e];
                        let gaxx = g_z[3 * block + e];
                        let gayy = g_z[4 * block + e];
                        gv += gaxx * (d3 * zx * zx + d2 * zxx) + gayy * (d3 * zy * zy + d2 * zyy);
                        gzx += gaxx * 2.0 * d2 * zx;
                        gzy += gayy * 2.0 * d2 * zy;
                        g_z[3 * block + e] = gaxx * d1;
                        g_z[4 * block + e] = gayy * d1;
                    }
                    g_z[block + e] = gzx;
                    g_z[2 * block + e] = gzy;
                }
                g_z[e] = gv;
            }
        }

        let (w_span, b_span) = params.layer_spans(l);
        matmul(
            rm_mut(&mut grads[w_span], fan_out, fan_in),
            Accum::Add,
            rm(&g_z, rows, fan_out).transpose(),
            rm(&tape.acts[l], rows, fan_in),
            1.0,
            Par::Seq,
        );
        let gb = &mut grads[b_span];
        for row in g_z[..n * fan_out].chunks_exact(fan_out) {
            for (acc, v) in gb.iter_mut().zip(row) {
                *acc += v;
            }
        }
        if l > 0 {
            let mut g_a = vec![0.0; rows * fan_in];
            matmul(
                rm_mut(&mut g_a, rows, fan_in),
                Accum::Replace,
                rm(&g_z, rows, fan_out),
                rm(params.weight(l), fan_out, fan_in),
                1.0,
                Par::Seq,
            );
            g_z = g_a;
        }
    }
}
