//! Differentiable op set. Each op validates shapes, computes the forward
//! value, and records a backward closure that reads the output adjoint and
//! accumulates into the inputs. Gradient flow is unconditional; the
//! `requires_grad` flag only tells the optimizer which tensors to update.
//!
//! Summation order inside every kernel is fixed, which keeps gradients
//! bit-identical across runs.

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Sentinel target id for positions that contribute no loss.
pub const IGNORE_INDEX: usize = usize::MAX;

// ── dense kernels ───────────────────────────────────────────────────────

/// a[m×k] · b[k×n]
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// a[m×k] · b[n×k]ᵀ
fn mm_a_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// a[m×k]ᵀ · b[m×n]
fn mm_at_b(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[i * n..(i + 1) * n];
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn sigmoid_scalar(x: f64) -> f64 {
    // Two-branch form never exponentiates a large positive argument.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Lanes (start, len, stride) of a rank-1 or rank-2 tensor along `axis`.
fn lanes(shape: &[usize], axis: usize, op: &'static str) -> Result<Vec<(usize, usize, usize)>> {
    match (shape, axis) {
        ([n], 0) => Ok(vec![(0, *n, 1)]),
        ([m, n], 0) => Ok((0..*n).map(|c| (c, *m, *n)).collect()),
        ([m, n], 1) => Ok((0..*m).map(|r| (r * n, *n, 1)).collect()),
        _ => Err(Error::InvalidAxis {
            op,
            axis,
            shape: shape.to_vec(),
        }),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

impl Tape {
    // ── linear algebra ──────────────────────────────────────────────

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = a.dims2("matmul")?;
        let (k2, n) = b.dims2("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let av = a.data_vec();
        let bv = b.data_vec();
        let out = Tensor::from_parts(vec![m, n], mm(&av, &bv, m, k, n));
        let (ah, bh, oh) = (a.clone(), b.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            ah.accumulate_grad(&mm_a_bt(&g, &bv, m, n, k));
            bh.accumulate_grad(&mm_at_b(&av, &g, m, k, n));
        });
        Ok(out)
    }

    pub fn transpose(&self, x: &Tensor) -> Result<Tensor> {
        let (m, n) = x.dims2("transpose")?;
        let xv = x.data_vec();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = xv[i * n + j];
            }
        }
        let out = Tensor::from_parts(vec![n, m], out);
        let (xh, oh) = (x.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    dx[i * n + j] = g[j * m + i];
                }
            }
            xh.accumulate_grad(&dx);
        });
        Ok(out)
    }

    // ── elementwise ─────────────────────────────────────────────────

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("add", a, b)?;
        let av = a.data_vec();
        let bv = b.data_vec();
        let data: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(a.shape(), data);
        let (ah, bh, oh) = (a.clone(), b.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            ah.accumulate_grad(&g);
            bh.accumulate_grad(&g);
        });
        Ok(out)
    }

    /// x[m×n] + b[n], broadcast over rows.
    pub fn add_bias(&self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, n) = x.dims2("add_bias")?;
        let bn = b.dims1("add_bias")?;
        if bn != n {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: x.shape(),
                rhs: b.shape(),
            });
        }
        let xv = x.data_vec();
        let bv = b.data_vec();
        let mut data = xv;
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bv[j];
            }
        }
        let out = Tensor::from_parts(vec![m, n], data);
        let (xh, bh, oh) = (x.clone(), b.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            xh.accumulate_grad(&g);
            let mut db = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    db[j] += g[i * n + j];
                }
            }
            bh.accumulate_grad(&db);
        });
        Ok(out)
    }

    pub fn scale(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        let data: Vec<f64> = x.data_vec().iter().map(|v| v * c).collect();
        let out = Tensor::from_parts(x.shape(), data);
        let (xh, oh) = (x.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
            xh.accumulate_grad(&dx);
        });
        Ok(out)
    }

    pub fn elementwise_mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("elementwise_mul", a, b)?;
        let av = a.data_vec();
        let bv = b.data_vec();
        let data: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(a.shape(), data);
        let (ah, bh, oh) = (a.clone(), b.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            let da: Vec<f64> = g.iter().zip(&bv).map(|(gi, y)| gi * y).collect();
            let db: Vec<f64> = g.iter().zip(&av).map(|(gi, x)| gi * x).collect();
            ah.accumulate_grad(&da);
            bh.accumulate_grad(&db);
        });
        Ok(out)
    }

    pub fn relu(&self, x: &Tensor) -> Result<Tensor> {
        let data: Vec<f64> = x.data_vec().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::from_parts(x.shape(), data);
        let (xh, oh) = (x.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            let y = oh.data_vec();
            // Subgradient 0 at the kink.
            let dx: Vec<f64> = g
                .iter()
                .zip(&y)
                .map(|(gi, yi)| if *yi > 0.0 { *gi } else { 0.0 })
                .collect();
            xh.accumulate_grad(&dx);
        });
        Ok(out)
    }

    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor> {
        let data: Vec<f64> = x.data_vec().iter().map(|v| sigmoid_scalar(*v)).collect();
        let out = Tensor::from_parts(x.shape(), data);
        let (xh, oh) = (x.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            let y = oh.data_vec();
            let dx: Vec<f64> = g
                .iter()
                .zip(&y)
                .map(|(gi, yi)| gi * yi * (1.0 - yi))
                .collect();
            xh.accumulate_grad(&dx);
        });
        Ok(out)
    }

    // ── normalizations ──────────────────────────────────────────────

    /// Softmax along `axis` with max subtraction per lane. Rank ≤ 2 only.
    pub fn softmax(&self, x: &Tensor, axis: usize) -> Result<Tensor> {
        let shape = x.shape();
        let lane_list = lanes(&shape, axis, "softmax")?;
        let xv = x.data_vec();
        let mut data = vec![0.0; xv.len()];
        for &(start, len, stride) in &lane_list {
            let mut max = f64::NEG_INFINITY;
            for i in 0..len {
                max = max.max(xv[start + i * stride]);
            }
            let mut sum = 0.0;
            for i in 0..len {
                let e = (xv[start + i * stride] - max).exp();
                data[start + i * stride] = e;
                sum += e;
            }
            for i in 0..len {
                data[start + i * stride] /= sum;
            }
        }
        let out = Tensor::from_parts(shape, data);
        let (xh, oh) = (x.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            let y = oh.data_vec();
            let mut dx = vec![0.0; g.len()];
            for &(start, len, stride) in &lane_list {
                let mut dot = 0.0;
                for i in 0..len {
                    let idx = start + i * stride;
                    dot += g[idx] * y[idx];
                }
                for i in 0..len {
                    let idx = start + i * stride;
                    dx[idx] = y[idx] * (g[idx] - dot);
                }
            }
            xh.accumulate_grad(&dx);
        });
        Ok(out)
    }

    /// Layer normalization over the last axis with learned affine. Uses the
    /// population variance (divide by d) and `eps` inside the square root.
    pub fn layer_norm(&self, x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let shape = x.shape();
        let (rows, d) = match shape.as_slice() {
            [d] => (1usize, *d),
            [m, d] => (*m, *d),
            _ => {
                return Err(Error::invalid(format!(
                    "layer_norm: expected rank 1 or 2, got shape {shape:?}"
                )))
            }
        };
        if gamma.dims1("layer_norm")? != d || beta.dims1("layer_norm")? != d {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: gamma.shape(),
            });
        }
        let xv = x.data_vec();
        let gv = gamma.data_vec();
        let bv = beta.data_vec();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut data = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r_inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = r_inv;
            for j in 0..d {
                let xh = (row[j] - mean) * r_inv;
                xhat[r * d + j] = xh;
                data[r * d + j] = gv[j] * xh + bv[j];
            }
        }
        let out = Tensor::from_parts(shape, data);
        let (xh_t, gh, bh, oh) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            let mut dgamma = vec![0.0; d];
            let mut dbeta = vec![0.0; d];
            let mut dx = vec![0.0; g.len()];
            for r in 0..rows {
                let gr = &g[r * d..(r + 1) * d];
                let xr = &xhat[r * d..(r + 1) * d];
                let mut mean_h = 0.0;
                let mut mean_hx = 0.0;
                for j in 0..d {
                    dgamma[j] += gr[j] * xr[j];
                    dbeta[j] += gr[j];
                    let h = gr[j] * gv[j];
                    mean_h += h;
                    mean_hx += h * xr[j];
                }
                mean_h /= d as f64;
                mean_hx /= d as f64;
                for j in 0..d {
                    let h = gr[j] * gv[j];
                    dx[r * d + j] = inv_std[r] * (h - mean_h - xr[j] * mean_hx);
                }
            }
            xh_t.accumulate_grad(&dx);
            gh.accumulate_grad(&dgamma);
            bh.accumulate_grad(&dbeta);
        });
        Ok(out)
    }

    /// Rows scaled to unit L2 norm. Errors on a row with norm below 1e-12.
    pub fn l2_normalize_rows(&self, x: &Tensor) -> Result<Tensor> {
        let (m, n) = x.dims2("l2_normalize_rows")?;
        let xv = x.data_vec();
        let mut norms = vec![0.0; m];
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::invalid(format!(
                    "l2_normalize_rows: row {i} has near-zero norm {norm:e}"
                )));
            }
            norms[i] = norm;
            for j in 0..n {
                data[i * n + j] = row[j] / norm;
            }
        }
        let out = Tensor::from_parts(vec![m, n], data);
        let (xh, oh) = (x.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            let y = oh.data_vec();
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                let gr = &g[i * n..(i + 1) * n];
                let yr = &y[i * n..(i + 1) * n];
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    dx[i * n + j] = (gr[j] - dot * yr[j]) / norms[i];
                }
            }
            xh.accumulate_grad(&dx);
        });
        Ok(out)
    }

    // ── loss ────────────────────────────────────────────────────────

    /// Mean negative log-likelihood over rows whose target is not
    /// `ignore_id`, computed with log-sum-exp. With zero scored rows the
    /// loss is exactly 0 and no gradient flows.
    pub fn cross_entropy(
        &self,
        logits: &Tensor,
        targets: &[usize],
        ignore_id: usize,
    ) -> Result<Tensor> {
        let (t, k) = logits.dims2("cross_entropy")?;
        if targets.len() != t {
            return Err(Error::invalid(format!(
                "cross_entropy: {} targets for {} logit rows",
                targets.len(),
                t
            )));
        }
        for &tgt in targets {
            if tgt != ignore_id && tgt >= k {
                return Err(Error::VocabRange { id: tgt, vocab: k });
            }
        }
        let xv = logits.data_vec();
        let scored: Vec<usize> = (0..t).filter(|&r| targets[r] != ignore_id).collect();
        let count = scored.len();
        let mut total = 0.0;
        for &r in &scored {
            let row = &xv[r * k..(r + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[targets[r]];
        }
        let value = if count == 0 { 0.0 } else { total / count as f64 };
        let out = Tensor::from_parts(vec![1], vec![value]);
        let (lh, oh) = (logits.clone(), out.clone());
        let targets = targets.to_vec();
        self.record(&out, move || {
            if count == 0 {
                return;
            }
            let gout = oh.grad_vec()[0];
            let mut dx = vec![0.0; t * k];
            for &r in &scored {
                let row = &xv[r * k..(r + 1) * k];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                for j in 0..k {
                    let p = (row[j] - max).exp() / sum;
                    let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                    dx[r * k + j] = gout * (p - onehot) / count as f64;
                }
            }
            lh.accumulate_grad(&dx);
        });
        Ok(out)
    }

    // ── shape plumbing ──────────────────────────────────────────────

    /// Concatenation of rank-2 tensors along axis 0 (stack rows) or axis 1
    /// (widen columns).
    pub fn concat(&self, parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::invalid("concat: no inputs"));
        }
        if axis > 1 {
            return Err(Error::InvalidAxis {
                op: "concat",
                axis,
                shape: parts[0].shape(),
            });
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|p| p.dims2("concat"))
            .collect::<Result<_>>()?;
        let fixed_axis = 1 - axis;
        let fixed = if fixed_axis == 0 { dims[0].0 } else { dims[0].1 };
        for (i, &(m, n)) in dims.iter().enumerate() {
            let f = if fixed_axis == 0 { m } else { n };
            if f != fixed {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: parts[0].shape(),
                    rhs: parts[i].shape(),
                });
            }
        }
        let (out_m, out_n, data) = if axis == 0 {
            let n = dims[0].1;
            let total_m: usize = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(total_m * n);
            for p in parts {
                data.extend_from_slice(&p.data_vec());
            }
            (total_m, n, data)
        } else {
            let m = dims[0].0;
            let total_n: usize = dims.iter().map(|d| d.1).sum();
            let mut data = vec![0.0; m * total_n];
            let mut col = 0;
            for (p, &(_, n)) in parts.iter().zip(&dims) {
                let pv = p.data_vec();
                for r in 0..m {
                    data[r * total_n + col..r * total_n + col + n]
                        .copy_from_slice(&pv[r * n..(r + 1) * n]);
                }
                col += n;
            }
            (m, total_n, data)
        };
        let out = Tensor::from_parts(vec![out_m, out_n], data);
        let handles: Vec<Tensor> = parts.to_vec();
        let oh = out.clone();
        self.record(&out, move || {
            let g = oh.grad_vec();
            if axis == 0 {
                let n = dims[0].1;
                let mut row = 0;
                for (p, &(m, _)) in handles.iter().zip(&dims) {
                    p.accumulate_grad(&g[row * n..(row + m) * n]);
                    row += m;
                }
            } else {
                let m = dims[0].0;
                let mut col = 0;
                for (p, &(_, n)) in handles.iter().zip(&dims) {
                    let mut dp = vec![0.0; m * n];
                    for r in 0..m {
                        dp[r * n..(r + 1) * n]
                            .copy_from_slice(&g[r * out_n + col..r * out_n + col + n]);
                    }
                    p.accumulate_grad(&dp);
                    col += n;
                }
            }
        });
        Ok(out)
    }

    /// Row `index` of a rank-2 tensor as a rank-1 tensor.
    pub fn select_index(&self, x: &Tensor, index: usize) -> Result<Tensor> {
        let (m, n) = x.dims2("select_index")?;
        if index >= m {
            return Err(Error::invalid(format!(
                "select_index: row {index} out of range for {m} rows"
            )));
        }
        let xv = x.data_vec();
        let out = Tensor::from_parts(vec![n], xv[index * n..(index + 1) * n].to_vec());
        let (xh, oh) = (x.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            let mut dx = vec![0.0; m * n];
            dx[index * n..(index + 1) * n].copy_from_slice(&g);
            xh.accumulate_grad(&dx);
        });
        Ok(out)
    }

    /// Columns `lo..hi` of a rank-2 tensor.
    pub fn slice_cols(&self, x: &Tensor, lo: usize, hi: usize) -> Result<Tensor> {
        let (m, n) = x.dims2("slice_cols")?;
        if lo >= hi || hi > n {
            return Err(Error::invalid(format!(
                "slice_cols: range {lo}..{hi} invalid for {n} columns"
            )));
        }
        let w = hi - lo;
        let xv = x.data_vec();
        let mut data = vec![0.0; m * w];
        for r in 0..m {
            data[r * w..(r + 1) * w].copy_from_slice(&xv[r * n + lo..r * n + hi]);
        }
        let out = Tensor::from_parts(vec![m, w], data);
        let (xh, oh) = (x.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            let mut dx = vec![0.0; m * n];
            for r in 0..m {
                dx[r * n + lo..r * n + hi].copy_from_slice(&g[r * w..(r + 1) * w]);
            }
            xh.accumulate_grad(&dx);
        });
        Ok(out)
    }

    /// Rows lo..hi of a matrix.
    pub fn slice_rows(&self, x: &Tensor, lo: usize, hi: usize) -> Result<Tensor> {
        let (m, n) = x.dims2("slice_rows")?;
        if lo >= hi || hi > m {
            return Err(Error::invalid(format!(
                "slice_rows: range {lo}..{hi} invalid for {m} rows"
            )));
        }
        let h = hi - lo;
        let data = x.data_vec()[lo * n..hi * n].to_vec();
        let out = Tensor::from_parts(vec![h, n], data);
        let (xh, oh) = (x.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            let mut dx = vec![0.0; m * n];
            dx[lo * n..hi * n].copy_from_slice(&g);
            xh.accumulate_grad(&dx);
        });
        Ok(out)
    }

    /// Rank-1 tensors of equal length stacked into rows.
    pub fn stack_rows(&self, parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::invalid("stack_rows: no inputs"));
        }
        let n = parts[0].dims1("stack_rows")?;
        let mut data = Vec::with_capacity(parts.len() * n);
        for p in parts {
            if p.dims1("stack_rows")? != n {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    lhs: parts[0].shape(),
                    rhs: p.shape(),
                });
            }
            data.extend_from_slice(&p.data_vec());
        }
        let m = parts.len();
        let out = Tensor::from_parts(vec![m, n], data);
        let handles: Vec<Tensor> = parts.to_vec();
        let oh = out.clone();
        self.record(&out, move || {
            let g = oh.grad_vec();
            for (i, p) in handles.iter().enumerate() {
                p.accumulate_grad(&g[i * n..(i + 1) * n]);
            }
        });
        Ok(out)
    }

    /// Mean over `axis` of a rank-2 tensor: axis 0 gives column means [n],
    /// axis 1 gives row means [m].
    pub fn mean_pool(&self, x: &Tensor, axis: usize) -> Result<Tensor> {
        let (m, n) = x.dims2("mean_pool")?;
        if axis > 1 {
            return Err(Error::InvalidAxis {
                op: "mean_pool",
                axis,
                shape: x.shape(),
            });
        }
        let xv = x.data_vec();
        let out = if axis == 0 {
            let mut data = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    data[j] += xv[i * n + j];
                }
            }
            for v in &mut data {
                *v /= m as f64;
            }
            Tensor::from_parts(vec![n], data)
        } else {
            let mut data = vec![0.0; m];
            for i in 0..m {
                data[i] = xv[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64;
            }
            Tensor::from_parts(vec![m], data)
        };
        let (xh, oh) = (x.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            let mut dx = vec![0.0; m * n];
            if axis == 0 {
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = g[j] / m as f64;
                    }
                }
            } else {
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = g[i] / n as f64;
                    }
                }
            }
            xh.accumulate_grad(&dx);
        });
        Ok(out)
    }

    /// Embedding lookup: rows of `table` at `ids`. The adjoint scatter-adds
    /// into the table, so repeated ids accumulate.
    pub fn gather_rows(&self, table: &Tensor, ids: &[usize]) -> Result<Tensor> {
        let (v, d) = table.dims2("gather_rows")?;
        for &id in ids {
            if id >= v {
                return Err(Error::VocabRange { id, vocab: v });
            }
        }
        let tv = table.data_vec();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let out = Tensor::from_parts(vec![ids.len(), d], data);
        let (th, oh) = (table.clone(), out.clone());
        let ids = ids.to_vec();
        self.record(&out, move || {
            let g = oh.grad_vec();
            let mut dt = vec![0.0; v * d];
            for (r, &id) in ids.iter().enumerate() {
                for j in 0..d {
                    dt[id * d + j] += g[r * d + j];
                }
            }
            th.accumulate_grad(&dt);
        });
        Ok(out)
    }
}
