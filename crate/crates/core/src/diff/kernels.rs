//! Forward evaluation and vector-Jacobian products for every primitive.

use super::{DiffArray, Primitive};
use crate::error::{Error, Result};

const GELU_COEF: f64 = 0.044715;

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn expect_arity(op: &'static str, inputs: &[&DiffArray], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(shape_err(op, format!("expected {} inputs, got {}", n, inputs.len())));
    }
    Ok(())
}

fn expect_2d<'a>(op: &'static str, a: &'a DiffArray) -> Result<(usize, usize)> {
    match a.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(shape_err(op, format!("expected a 2-D array, got shape {:?}", other))),
    }
}

pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; m * n];
    if m == 0 || k == 0 || n == 0 {
        return out;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn gelu_scalar(x: f64) -> f64 {
    let u = (2.0 / std::f64::consts::PI).sqrt() * (x + GELU_COEF * x.powi(3));
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let c0 = (2.0 / std::f64::consts::PI).sqrt();
    let u = c0 * (x + GELU_COEF * x.powi(3));
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c0 * (1.0 + 3.0 * GELU_COEF * x * x)
}

/// log-sum-exp of a row with max-shift for stability.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Check that `small` is a suffix of `big` (broadcast rule for Add).
fn is_suffix(big: &[usize], small: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

/// Compute the forward value of a primitive. Pure: inputs are never mutated.
pub fn eval(prim: &Primitive, inputs: &[&DiffArray]) -> Result<DiffArray> {
    match prim {
        Primitive::MatMul => {
            expect_arity("matmul", inputs, 2)?;
            let (m, k) = expect_2d("matmul", inputs[0])?;
            let (k2, n) = expect_2d("matmul", inputs[1])?;
            if k != k2 {
                return Err(shape_err(
                    "matmul",
                    format!("inner extents differ: [{m},{k}] x [{k2},{n}]"),
                ));
            }
            let out = matmul_raw(inputs[0].values(), inputs[1].values(), m, k, n);
            DiffArray::from_vec(vec![m, n], out)
        }
        Primitive::Add => {
            expect_arity("add", inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if !is_suffix(a.shape(), b.shape()) {
                return Err(shape_err(
                    "add",
                    format!("shape {:?} + {:?}: rhs must equal lhs or a suffix of it", a.shape(), b.shape()),
                ));
            }
            let bn = b.len().max(1);
            let out: Vec<f64> = a
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| v + b.values()[i % bn])
                .collect();
            DiffArray::from_vec(a.shape().to_vec(), out)
        }
        Primitive::Scale { factor } => {
            expect_arity("scale", inputs, 1)?;
            let out: Vec<f64> = inputs[0].values().iter().map(|v| v * factor).collect();
            DiffArray::from_vec(inputs[0].shape().to_vec(), out)
        }
        Primitive::SoftmaxRows => {
            expect_arity("softmax-rows", inputs, 1)?;
            let (r, c) = expect_2d("softmax-rows", inputs[0])?;
            if c == 0 {
                return Err(shape_err("softmax-rows", "zero-width rows".into()));
            }
            let x = inputs[0].values();
            let mut out = vec![0.0f64; r * c];
            for i in 0..r {
                let row = &x[i * c..(i + 1) * c];
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..c {
                    let e = (row[j] - m).exp();
                    out[i * c + j] = e;
                    z += e;
                }
                for j in 0..c {
                    out[i * c + j] /= z;
                }
            }
            DiffArray::from_vec(vec![r, c], out)
        }
        Primitive::LayerNorm { epsilon } => {
            expect_arity("layer-norm", inputs, 3)?;
            if *epsilon <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "layer-norm epsilon must be > 0, got {epsilon}"
                )));
            }
            let (r, c) = expect_2d("layer-norm", inputs[0])?;
            if inputs[1].shape() != [c] || inputs[2].shape() != [c] {
                return Err(shape_err(
                    "layer-norm",
                    format!(
                        "gain/bias must have shape [{c}], got {:?} / {:?}",
                        inputs[1].shape(),
                        inputs[2].shape()
                    ),
                ));
            }
            let x = inputs[0].values();
            let gain = inputs[1].values();
            let bias = inputs[2].values();
            let mut out = vec![0.0f64; r * c];
            for i in 0..r {
                let row = &x[i * c..(i + 1) * c];
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let inv = 1.0 / (var + epsilon).sqrt();
                for j in 0..c {
                    out[i * c + j] = (row[j] - mean) * inv * gain[j] + bias[j];
                }
            }
            DiffArray::from_vec(vec![r, c], out)
        }
        Primitive::Gelu => {
            expect_arity("gelu", inputs, 1)?;
            let out: Vec<f64> = inputs[0].values().iter().map(|&v| gelu_scalar(v)).collect();
            DiffArray::from_vec(inputs[0].shape().to_vec(), out)
        }
        Primitive::Tanh => {
            expect_arity("tanh", inputs, 1)?;
            let out: Vec<f64> = inputs[0].values().iter().map(|v| v.tanh()).collect();
            DiffArray::from_vec(inputs[0].shape().to_vec(), out)
        }
        Primitive::EmbeddingGather { indices } => {
            expect_arity("embedding-gather", inputs, 1)?;
            let (rows, d) = expect_2d("embedding-gather", inputs[0])?;
            let table = inputs[0].values();
            let mut out = Vec::with_capacity(indices.len() * d);
            for &idx in indices.iter() {
                if idx >= rows {
                    return Err(Error::IndexOutOfRange {
                        op: "embedding-gather",
                        index: idx,
                        bound: rows,
                    });
                }
                out.extend_from_slice(&table[idx * d..(idx + 1) * d]);
            }
            DiffArray::from_vec(vec![indices.len(), d], out)
        }
        Primitive::Transpose => {
            expect_arity("transpose", inputs, 1)?;
            let (r, c) = expect_2d("transpose", inputs[0])?;
            DiffArray::from_vec(vec![c, r], transpose_raw(inputs[0].values(), r, c))
        }
        Primitive::Reshape { shape } => {
            expect_arity("reshape", inputs, 1)?;
            let expect: usize = shape.iter().product();
            if expect != inputs[0].len() {
                return Err(shape_err(
                    "reshape",
                    format!("cannot reshape {:?} into {:?}", inputs[0].shape(), shape),
                ));
            }
            Ok(DiffArray::from_shared(shape.clone(), inputs[0].share_values()))
        }
        Primitive::MaskedFill { fill } => {
            expect_arity("masked-fill", inputs, 2)?;
            if inputs[0].shape() != inputs[1].shape() {
                return Err(shape_err(
                    "masked-fill",
                    format!("mask shape {:?} != input shape {:?}", inputs[1].shape(), inputs[0].shape()),
                ));
            }
            let out: Vec<f64> = inputs[0]
                .values()
                .iter()
                .zip(inputs[1].values())
                .map(|(&v, &m)| if m > 0.5 { *fill } else { v })
                .collect();
            DiffArray::from_vec(inputs[0].shape().to_vec(), out)
        }
        Primitive::CrossEntropyAtPositions { targets } => {
            expect_arity("cross-entropy", inputs, 1)?;
            let (p, vocab) = expect_2d("cross-entropy", inputs[0])?;
            if targets.len() != p || p == 0 {
                return Err(shape_err(
                    "cross-entropy",
                    format!("{} targets for {} positions (need >= 1)", targets.len(), p),
                ));
            }
            let logits = inputs[0].values();
            let mut total = 0.0;
            for (i, &t) in targets.iter().enumerate() {
                if t >= vocab {
                    return Err(Error::IndexOutOfRange {
                        op: "cross-entropy",
                        index: t,
                        bound: vocab,
                    });
                }
                let row = &logits[i * vocab..(i + 1) * vocab];
                total += log_sum_exp(row) - row[t];
            }
            Ok(DiffArray::scalar(total / p as f64))
        }
    }
}

/// Gradients of a primitive's inputs given the output cotangent.
///
/// Returns one entry per input; `None` marks inputs with no defined gradient
/// (the mask of masked-fill).
pub fn vjp(
    prim: &Primitive,
    inputs: &[DiffArray],
    output: &DiffArray,
    grad_out: &[f64],
) -> Vec<Option<Vec<f64>>> {
    match prim {
        Primitive::MatMul => {
            let (m, k) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            let n = inputs[1].shape()[1];
            // dA = dC . B^T ; dB = A^T . dC
            let bt = transpose_raw(inputs[1].values(), k, n);
            let da = matmul_raw(grad_out, &bt, m, n, k);
            let at = transpose_raw(inputs[0].values(), m, k);
            let db = matmul_raw(&at, grad_out, k, m, n);
            vec![Some(da), Some(db)]
        }
        Primitive::Add => {
            let da = grad_out.to_vec();
            let bn = inputs[1].len().max(1);
            let mut db = vec![0.0f64; inputs[1].len()];
            for (i, g) in grad_out.iter().enumerate() {
                db[i % bn] += g;
            }
            vec![Some(da), Some(db)]
        }
        Primitive::Scale { factor } => {
            vec![Some(grad_out.iter().map(|g| g * factor).collect())]
        }
        Primitive::SoftmaxRows => {
            let c = output.shape()[1];
            let y = output.values();
            let mut dx = vec![0.0f64; y.len()];
            for i in 0..output.shape()[0] {
                let base = i * c;
                let dot: f64 = (0..c).map(|j| grad_out[base + j] * y[base + j]).sum();
                for j in 0..c {
                    dx[base + j] = y[base + j] * (grad_out[base + j] - dot);
                }
            }
            vec![Some(dx)]
        }
        Primitive::LayerNorm { epsilon } => {
            let (r, c) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            let x = inputs[0].values();
            let gain = inputs[1].values();
            let mut dx = vec![0.0f64; r * c];
            let mut dgain = vec![0.0f64; c];
            let mut dbias = vec![0.0f64; c];
            for i in 0..r {
                let row = &x[i * c..(i + 1) * c];
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let inv = 1.0 / (var + epsilon).sqrt();
                let g = &grad_out[i * c..(i + 1) * c];
                let mut mean_dxhat = 0.0;
                let mut mean_dxhat_xhat = 0.0;
                for j in 0..c {
                    let xhat = (row[j] - mean) * inv;
                    let dxhat = g[j] * gain[j];
                    dgain[j] += g[j] * xhat;
                    dbias[j] += g[j];
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * xhat;
                }
                mean_dxhat /= c as f64;
                mean_dxhat_xhat /= c as f64;
                for j in 0..c {
                    let xhat = (row[j] - mean) * inv;
                    let dxhat = g[j] * gain[j];
                    dx[i * c + j] = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv;
                }
            }
            vec![Some(dx), Some(dgain), Some(dbias)]
        }
        Primitive::Gelu => {
            let dx: Vec<f64> = inputs[0]
                .values()
                .iter()
                .zip(grad_out)
                .map(|(&x, g)| g * gelu_grad_scalar(x))
                .collect();
            vec![Some(dx)]
        }
        Primitive::Tanh => {
            let dx: Vec<f64> = output
                .values()
                .iter()
                .zip(grad_out)
                .map(|(&y, g)| g * (1.0 - y * y))
                .collect();
            vec![Some(dx)]
        }
        Primitive::EmbeddingGather { indices } => {
            let d = inputs[0].shape()[1];
            let mut dt = vec![0.0f64; inputs[0].len()];
            for (i, &idx) in indices.iter().enumerate() {
                for j in 0..d {
                    dt[idx * d + j] += grad_out[i * d + j];
                }
            }
            vec![Some(dt)]
        }
        Primitive::Transpose => {
            let (r, c) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            // gradient of transpose is transpose of gradient ([c,r] -> [r,c])
            vec![Some(transpose_raw(grad_out, c, r))]
        }
        Primitive::Reshape { .. } => vec![Some(grad_out.to_vec())],
        Primitive::MaskedFill { .. } => {
            let dx: Vec<f64> = inputs[1]
                .values()
                .iter()
                .zip(grad_out)
                .map(|(&m, g)| if m > 0.5 { 0.0 } else { *g })
                .collect();
            vec![Some(dx), None]
        }
        Primitive::CrossEntropyAtPositions { targets } => {
            let (p, vocab) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            let logits = inputs[0].values();
            let scale = grad_out[0] / p as f64;
            let mut dl = vec![0.0f64; p * vocab];
            for (i, &t) in targets.iter().enumerate() {
                let row = &logits[i * vocab..(i + 1) * vocab];
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..vocab {
                    let e = (row[j] - m).exp();
                    dl[i * vocab + j] = e;
                    z += e;
                }
                for j in 0..vocab {
                    dl[i * vocab + j] = (dl[i * vocab + j] / z - if j == t { 1.0 } else { 0.0 }) * scale;
                }
            }
            vec![Some(dl)]
        }
    }
}

