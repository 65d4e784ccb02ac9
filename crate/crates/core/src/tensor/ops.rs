//! Forward kernels and their vector-Jacobian products.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::tape::{unify_tape, Saved};
use super::{BoundNode, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisSpec {
    All,
    Axis(usize),
}

/// The primitive operations the tape understands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Matmul,
    /// Elementwise add; also accepts `[n,d] + [d]` (row broadcast).
    Add,
    Sub,
    Mul,
    Negate,
    Exp,
    Log,
    Sigmoid,
    Softplus,
    Tanh,
    Relu,
    Square,
    Sum { axes: AxisSpec },
    Mean { axes: AxisSpec },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Matmul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Negate => "negate",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Softplus => "softplus",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Square => "square",
            Primitive::Sum { .. } => "sum",
            Primitive::Mean { .. } => "mean",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
        }
    }
}

/// Numerically stable softplus: `max(x,0) + ln(1 + exp(-|x|))`.
pub(crate) fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn apply(prim: Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    let (shape, values) = forward(prim, inputs)?;
    #[cfg(debug_assertions)]
    {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            debug_assert!(
                inputs.iter().any(|t| t.values().iter().any(|v| !v.is_finite())),
                "{} produced non-finite value {} from finite inputs",
                prim.name(),
                bad
            );
        }
    }
    let values: Arc<[f64]> = values.into();
    let tape = unify_tape(inputs)?;
    let node = tape.map(|t| {
        let id = t.record(prim, inputs, &shape, &values);
        BoundNode { tape: t, id }
    });
    Ok(Tensor::from_parts(shape, values, node))
}

fn arity(prim: Primitive, inputs: &[&Tensor], expect: usize) -> Result<()> {
    if inputs.len() != expect {
        return Err(Error::shape(
            prim.name(),
            format!("expected {} inputs, got {}", expect, inputs.len()),
        ));
    }
    Ok(())
}

fn forward(prim: Primitive, inputs: &[&Tensor]) -> Result<(Vec<usize>, Vec<f64>)> {
    match prim {
        Primitive::Matmul => {
            arity(prim, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(Error::shape("matmul", format!("{:?} x {:?}", sa, sb)));
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut out = vec![0.0; m * n];
            matmul_nn(a.values(), b.values(), &mut out, m, k, n);
            Ok((vec![m, n], out))
        }
        Primitive::Add => {
            arity(prim, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() == b.shape() {
                let out = a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect();
                Ok((a.shape().to_vec(), out))
            } else if a.shape().len() == 2 && b.shape() == [a.shape()[1]] {
                let d = a.shape()[1];
                let bv = b.values();
                let out = a
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x + bv[i % d])
                    .collect();
                Ok((a.shape().to_vec(), out))
            } else {
                Err(Error::shape("add", format!("{:?} + {:?}", a.shape(), b.shape())))
            }
        }
        Primitive::Sub | Primitive::Mul => {
            arity(prim, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(Error::shape(
                    prim.name(),
                    format!("{:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            let out = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| if prim == Primitive::Sub { x - y } else { x * y })
                .collect();
            Ok((a.shape().to_vec(), out))
        }
        Primitive::Negate => unary(prim, inputs, |x| -x),
        Primitive::Exp => unary(prim, inputs, f64::exp),
        Primitive::Log => {
            arity(prim, inputs, 1)?;
            if let Some(v) = inputs[0].values().iter().find(|v| **v <= 0.0) {
                return Err(Error::domain("log", format!("non-positive input {}", v)));
            }
            unary(prim, inputs, f64::ln)
        }
        Primitive::Sigmoid => unary(prim, inputs, sigmoid_scalar),
        Primitive::Softplus => unary(prim, inputs, softplus_scalar),
        Primitive::Tanh => unary(prim, inputs, f64::tanh),
        Primitive::Relu => unary(prim, inputs, |x| if x > 0.0 { x } else { 0.0 }),
        Primitive::Square => unary(prim, inputs, |x| x * x),
        Primitive::Sum { axes } => reduce(prim, inputs, axes, false),
        Primitive::Mean { axes } => reduce(prim, inputs, axes, true),
        Primitive::Concat { axis } => {
            if inputs.is_empty() {
                return Err(Error::shape("concat", "no inputs"));
            }
            let rank = inputs[0].shape().len();
            if axis >= rank || !(1..=2).contains(&rank) {
                return Err(Error::shape(
                    "concat",
                    format!("axis {} of rank-{} tensors", axis, rank),
                ));
            }
            for t in inputs {
                if t.shape().len() != rank {
                    return Err(Error::shape("concat", "mixed ranks"));
                }
                for ax in 0..rank {
                    if ax != axis && t.shape()[ax] != inputs[0].shape()[ax] {
                        return Err(Error::shape(
                            "concat",
                            format!("{:?} vs {:?} along axis {}", t.shape(), inputs[0].shape(), ax),
                        ));
                    }
                }
            }
            if rank == 1 || axis == 0 {
                // Row-major: concatenating along axis 0 is a plain append.
                let mut out = Vec::new();
                for t in inputs {
                    out.extend_from_slice(t.values());
                }
                let mut shape = inputs[0].shape().to_vec();
                shape[0] = inputs.iter().map(|t| t.shape()[0]).sum();
                Ok((shape, out))
            } else {
                let rows = inputs[0].shape()[0];
                let widths: Vec<usize> = inputs.iter().map(|t| t.shape()[1]).collect();
                let total: usize = widths.iter().sum();
                let mut out = vec![0.0; rows * total];
                for r in 0..rows {
                    let mut off = 0;
                    for (t, w) in inputs.iter().zip(&widths) {
                        out[r * total + off..r * total + off + w]
                            .copy_from_slice(&t.values()[r * w..(r + 1) * w]);
                        off += w;
                    }
                }
                Ok((vec![rows, total], out))
            }
        }
        Primitive::Slice { axis, start, len } => {
            arity(prim, inputs, 1)?;
            let t = inputs[0];
            let rank = t.shape().len();
            if axis >= rank {
                return Err(Error::shape("slice", format!("axis {} of {:?}", axis, t.shape())));
            }
            if start + len > t.shape()[axis] || len == 0 {
                return Err(Error::shape(
                    "slice",
                    format!("[{}, {}) of extent {}", start, start + len, t.shape()[axis]),
                ));
            }
            if rank == 1 {
                Ok((vec![len], t.values()[start..start + len].to_vec()))
            } else if axis == 0 {
                let d = t.shape()[1];
                Ok((vec![len, d], t.values()[start * d..(start + len) * d].to_vec()))
            } else {
                let (n, d) = (t.shape()[0], t.shape()[1]);
                let mut out = Vec::with_capacity(n * len);
                for r in 0..n {
                    out.extend_from_slice(&t.values()[r * d + start..r * d + start + len]);
                }
                Ok((vec![n, len], out))
            }
        }
    }
}

fn unary(prim: Primitive, inputs: &[&Tensor], f: impl Fn(f64) -> f64) -> Result<(Vec<usize>, Vec<f64>)> {
    arity(prim, inputs, 1)?;
    Ok((inputs[0].shape().to_vec(), inputs[0].values().iter().map(|&x| f(x)).collect()))
}

fn reduce(
    prim: Primitive,
    inputs: &[&Tensor],
    axes: AxisSpec,
    mean: bool,
) -> Result<(Vec<usize>, Vec<f64>)> {
    arity(prim, inputs, 1)?;
    let t = inputs[0];
    let shape = t.shape();
    match axes {
        AxisSpec::All => {
            let n = t.len().max(1) as f64;
            let s: f64 = t.values().iter().sum();
            Ok((vec![], vec![if mean { s / n } else { s }]))
        }
        AxisSpec::Axis(ax) => match (shape.len(), ax) {
            (1, 0) => {
                let n = t.len().max(1) as f64;
                let s: f64 = t.values().iter().sum();
                Ok((vec![], vec![if mean { s / n } else { s }]))
            }
            (2, 0) => {
                let (n, d) = (shape[0], shape[1]);
                let mut out = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        out[c] += t.values()[r * d + c];
                    }
                }
                if mean {
                    out.iter_mut().for_each(|v| *v /= n as f64);
                }
                Ok((vec![d], out))
            }
            (2, 1) => {
                let (n, d) = (shape[0], shape[1]);
                let mut out = vec![0.0; n];
                for r in 0..n {
                    out[r] = t.values()[r * d..(r + 1) * d].iter().sum();
                    if mean {
                        out[r] /= d as f64;
                    }
                }
                Ok((vec![n], out))
            }
            _ => Err(Error::shape(prim.name(), format!("axis {} of {:?}", ax, shape))),
        },
    }
}

// ---------------------------------------------------------------------------
// Matmul kernels. `nn` = A·B, `nt` = A·Bᵀ, `tn` = Aᵀ·B, all row-major.

pub(crate) fn matmul_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    // a: [m,k], b: [n,k] -> out: [m,n]
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

pub(crate) fn matmul_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    // a: [k,m], b: [k,n] -> out: [m,n]
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Adjoints of each input given the output adjoint. `None` for inputs that
/// need no gradient (detached inputs are filtered by the caller).
pub(crate) fn vjp(prim: Primitive, ins: &[Saved], out_values: &[f64], out_adj: &[f64]) -> Vec<Option<Vec<f64>>> {
    match prim {
        Primitive::Matmul => {
            let (m, k) = (ins[0].shape[0], ins[0].shape[1]);
            let n = ins[1].shape[1];
            let mut da = vec![0.0; m * k];
            matmul_nt(out_adj, &ins[1].values, &mut da, m, n, k);
            let mut db = vec![0.0; k * n];
            matmul_tn(&ins[0].values, out_adj, &mut db, k, m, n);
            vec![Some(da), Some(db)]
        }
        Primitive::Add => {
            let da = out_adj.to_vec();
            let db = if ins[0].shape == ins[1].shape {
                out_adj.to_vec()
            } else {
                // Row-broadcast rhs: adjoint is the column sum.
                let d = ins[1].shape[0];
                let mut acc = vec![0.0; d];
                for (i, g) in out_adj.iter().enumerate() {
                    acc[i % d] += g;
                }
                acc
            };
            vec![Some(da), Some(db)]
        }
        Primitive::Sub => vec![
            Some(out_adj.to_vec()),
            Some(out_adj.iter().map(|g| -g).collect()),
        ],
        Primitive::Mul => vec![
            Some(out_adj.iter().zip(&*ins[1].values).map(|(g, y)| g * y).collect()),
            Some(out_adj.iter().zip(&*ins[0].values).map(|(g, x)| g * x).collect()),
        ],
        Primitive::Negate => vec![Some(out_adj.iter().map(|g| -g).collect())],
        Primitive::Exp => vec![Some(out_adj.iter().zip(out_values).map(|(g, y)| g * y).collect())],
        Primitive::Log => vec![Some(
            out_adj.iter().zip(&*ins[0].values).map(|(g, x)| g / x).collect(),
        )],
        Primitive::Sigmoid => vec![Some(
            out_adj.iter().zip(out_values).map(|(g, y)| g * y * (1.0 - y)).collect(),
        )],
        Primitive::Softplus => vec![Some(
            out_adj
                .iter()
                .zip(&*ins[0].values)
                .map(|(g, x)| g * sigmoid_scalar(*x))
                .collect(),
        )],
        Primitive::Tanh => vec![Some(
            out_adj.iter().zip(out_values).map(|(g, y)| g * (1.0 - y * y)).collect(),
        )],
        Primitive::Relu => vec![Some(
            out_adj
                .iter()
                .zip(&*ins[0].values)
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect(),
        )],
        Primitive::Square => vec![Some(
            out_adj.iter().zip(&*ins[0].values).map(|(g, x)| g * 2.0 * x).collect(),
        )],
        Primitive::Sum { axes } => vec![Some(spread(&ins[0].shape, axes, out_adj, 1.0))],
        Primitive::Mean { axes } => {
            let count = match axes {
                AxisSpec::All => ins[0].values.len(),
                AxisSpec::Axis(ax) => match (ins[0].shape.len(), ax) {
                    (1, 0) => ins[0].values.len(),
                    (2, 0) => ins[0].shape[0],
                    (2, 1) => ins[0].shape[1],
                    _ => unreachable!("validated in forward"),
                },
            };
            vec![Some(spread(&ins[0].shape, axes, out_adj, 1.0 / count as f64))]
        }
        Primitive::Concat { axis } => {
            let rank = ins[0].shape.len();
            if rank == 1 || axis == 0 {
                let mut grads = Vec::with_capacity(ins.len());
                let mut off = 0;
                for s in ins {
                    let n = s.values.len();
                    grads.push(Some(out_adj[off..off + n].to_vec()));
                    off += n;
                }
                grads
            } else {
                let rows = ins[0].shape[0];
                let total: usize = ins.iter().map(|s| s.shape[1]).sum();
                let mut grads = Vec::with_capacity(ins.len());
                let mut off = 0;
                for s in ins {
                    let w = s.shape[1];
                    let mut g = vec![0.0; rows * w];
                    for r in 0..rows {
                        g[r * w..(r + 1) * w]
                            .copy_from_slice(&out_adj[r * total + off..r * total + off + w]);
                    }
                    grads.push(Some(g));
                    off += w;
                }
                grads
            }
        }
        Primitive::Slice { axis, start, len } => {
            let shape = &ins[0].shape;
            let mut g = vec![0.0; ins[0].values.len()];
            if shape.len() == 1 {
                g[start..start + len].copy_from_slice(out_adj);
            } else if axis == 0 {
                let d = shape[1];
                g[start * d..(start + len) * d].copy_from_slice(out_adj);
            } else {
                let (n, d) = (shape[0], shape[1]);
                for r in 0..n {
                    g[r * d + start..r * d + start + len]
                        .copy_from_slice(&out_adj[r * len..(r + 1) * len]);
                }
            }
            vec![Some(g)]
        }
    }
}

/// Broadcast a reduced adjoint back over the reduced axes, scaled.
fn spread(in_shape: &[usize], axes: AxisSpec, out_adj: &[f64], scale: f64) -> Vec<f64> {
    let n_in: usize = in_shape.iter().product();
    match axes {
        AxisSpec::All => vec![out_adj[0] * scale; n_in],
        AxisSpec::Axis(ax) => match (in_shape.len(), ax) {
            (1, 0) => vec![out_adj[0] * scale; n_in],
            (2, 0) => {
                let (n, d) = (in_shape[0], in_shape[1]);
                let mut g = vec![0.0; n * d];
                for r in 0..n {
                    for c in 0..d {
                        g[r * d + c] = out_adj[c] * scale;
                    }
                }
                g
            }
            (2, 1) => {
                let (n, d) = (in_shape[0], in_shape[1]);
                let mut g = vec![0.0; n * d];
                for r in 0..n {
                    for c in 0..d {
                        g[r * d + c] = out_adj[r] * scale;
                    }
                }
                g
            }
            _ => unreachable!("validated in forward"),
        },
    }
}
