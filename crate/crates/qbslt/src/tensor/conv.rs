//! Temporal ops for the video embedding stack: 1-D convolution over time,
//! non-overlapping max pooling, and batch normalization over the time axis.

use super::{Mode, Tape, Tensor};
use crate::error::{Error, Result};

impl Tape {
    /// 1-D convolution over time with zero padding that preserves length.
    /// x is [n×c_in], w is [k, c_in, c_out] with odd k, b is [c_out].
    pub fn conv1d(&self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (n, cin) = x.dims2("conv1d")?;
        let wshape = w.shape();
        let (k, wcin, cout) = match wshape.as_slice() {
            [k, ci, co] => (*k, *ci, *co),
            _ => {
                return Err(Error::invalid(format!(
                    "conv1d: kernel must be rank 3 [k, c_in, c_out], got {wshape:?}"
                )))
            }
        };
        if wcin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: x.shape(),
                rhs: wshape,
            });
        }
        if k % 2 == 0 {
            return Err(Error::invalid(format!(
                "conv1d: kernel width {k} must be odd for same padding"
            )));
        }
        if b.dims1("conv1d")? != cout {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: wshape,
                rhs: b.shape(),
            });
        }
        let pad = k / 2;
        let xv = x.data_vec();
        let wv = w.data_vec();
        let bv = b.data_vec();
        let mut data = vec![0.0; n * cout];
        for i in 0..n {
            for o in 0..cout {
                data[i * cout + o] = bv[o];
            }
            for t in 0..k {
                let src = i as isize + t as isize - pad as isize;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let src = src as usize;
                for c in 0..cin {
                    let xval = xv[src * cin + c];
                    let wrow = &wv[(t * cin + c) * cout..(t * cin + c + 1) * cout];
                    let orow = &mut data[i * cout..(i + 1) * cout];
                    for o in 0..cout {
                        orow[o] += xval * wrow[o];
                    }
                }
            }
        }
        let out = Tensor::from_parts(vec![n, cout], data);
        let (xh, wh, bh, oh) = (x.clone(), w.clone(), b.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            let mut db = vec![0.0; cout];
            for i in 0..n {
                for o in 0..cout {
                    db[o] += g[i * cout + o];
                }
            }
            let mut dw = vec![0.0; k * cin * cout];
            let mut dx = vec![0.0; n * cin];
            for i in 0..n {
                let grow = &g[i * cout..(i + 1) * cout];
                for t in 0..k {
                    let src = i as isize + t as isize - pad as isize;
                    if src < 0 || src >= n as isize {
                        continue;
                    }
                    let src = src as usize;
                    for c in 0..cin {
                        let xval = xv[src * cin + c];
                        let wrow = &wv[(t * cin + c) * cout..(t * cin + c + 1) * cout];
                        let dwrow = &mut dw[(t * cin + c) * cout..(t * cin + c + 1) * cout];
                        let mut acc = 0.0;
                        for o in 0..cout {
                            dwrow[o] += xval * grow[o];
                            acc += wrow[o] * grow[o];
                        }
                        dx[src * cin + c] += acc;
                    }
                }
            }
            xh.accumulate_grad(&dx);
            wh.accumulate_grad(&dw);
            bh.accumulate_grad(&db);
        });
        Ok(out)
    }

    /// Max over non-overlapping windows of `kernel` rows (stride equals
    /// kernel). Trailing rows that do not fill a window are dropped. Ties
    /// route the gradient to the first maximal row.
    pub fn max_pool1d(&self, x: &Tensor, kernel: usize) -> Result<Tensor> {
        let (n, c) = x.dims2("max_pool1d")?;
        if kernel == 0 {
            return Err(Error::invalid("max_pool1d: kernel must be positive"));
        }
        let out_n = n / kernel;
        if out_n == 0 {
            return Err(Error::invalid(format!(
                "max_pool1d: {n} rows is fewer than kernel {kernel}"
            )));
        }
        let xv = x.data_vec();
        let mut data = vec![0.0; out_n * c];
        let mut argmax = vec![0usize; out_n * c];
        for i in 0..out_n {
            for ch in 0..c {
                let mut best = xv[(i * kernel) * c + ch];
                let mut best_row = i * kernel;
                for r in i * kernel + 1..(i + 1) * kernel {
                    if xv[r * c + ch] > best {
                        best = xv[r * c + ch];
                        best_row = r;
                    }
                }
                data[i * c + ch] = best;
                argmax[i * c + ch] = best_row;
            }
        }
        let out = Tensor::from_parts(vec![out_n, c], data);
        let (xh, oh) = (x.clone(), out.clone());
        self.record(&out, move || {
            let g = oh.grad_vec();
            let mut dx = vec![0.0; n * c];
            for i in 0..out_n {
                for ch in 0..c {
                    dx[argmax[i * c + ch] * c + ch] += g[i * c + ch];
                }
            }
            xh.accumulate_grad(&dx);
        });
        Ok(out)
    }

    /// Batch normalization over the time axis of x [n×c]. In train mode the
    /// batch statistics (population variance) normalize and the running
    /// buffers move by `momentum` toward them as an un-taped side effect; in
    /// eval mode the running buffers normalize, making single samples
    /// deterministic.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        running_mean: &Tensor,
        running_var: &Tensor,
        momentum: f64,
        eps: f64,
        mode: Mode,
    ) -> Result<Tensor> {
        let (n, c) = x.dims2("batch_norm")?;
        for (name, t) in [
            ("gamma", gamma),
            ("beta", beta),
            ("running_mean", running_mean),
            ("running_var", running_var),
        ] {
            if t.dims1("batch_norm")? != c {
                return Err(Error::invalid(format!(
                    "batch_norm: {name} has shape {:?}, expected [{c}]",
                    t.shape()
                )));
            }
        }
        let xv = x.data_vec();
        let gv = gamma.data_vec();
        let bv = beta.data_vec();
        match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for i in 0..n {
                    for ch in 0..c {
                        mean[ch] += xv[i * c + ch];
                    }
                }
                for m in &mut mean {
                    *m /= n as f64;
                }
                for i in 0..n {
                    for ch in 0..c {
                        let d = xv[i * c + ch] - mean[ch];
                        var[ch] += d * d;
                    }
                }
                for v in &mut var {
                    *v /= n as f64;
                }
                running_mean.update_data(|rm| {
                    for ch in 0..c {
                        rm[ch] = (1.0 - momentum) * rm[ch] + momentum * mean[ch];
                    }
                });
                running_var.update_data(|rv| {
                    for ch in 0..c {
                        rv[ch] = (1.0 - momentum) * rv[ch] + momentum * var[ch];
                    }
                });
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let mut xhat = vec![0.0; n * c];
                let mut data = vec![0.0; n * c];
                for i in 0..n {
                    for ch in 0..c {
                        let h = (xv[i * c + ch] - mean[ch]) * inv_std[ch];
                        xhat[i * c + ch] = h;
                        data[i * c + ch] = gv[ch] * h + bv[ch];
                    }
                }
                let out = Tensor::from_parts(vec![n, c], data);
                let (xh_t, gh, bh, oh) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
                self.record(&out, move || {
                    let g = oh.grad_vec();
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    let mut mean_h = vec![0.0; c];
                    let mut mean_hx = vec![0.0; c];
                    for i in 0..n {
                        for ch in 0..c {
                            let gi = g[i * c + ch];
                            let xi = xhat[i * c + ch];
                            dgamma[ch] += gi * xi;
                            dbeta[ch] += gi;
                            let h = gi * gv[ch];
                            mean_h[ch] += h;
                            mean_hx[ch] += h * xi;
                        }
                    }
                    for ch in 0..c {
                        mean_h[ch] /= n as f64;
                        mean_hx[ch] /= n as f64;
                    }
                    let mut dx = vec![0.0; n * c];
                    for i in 0..n {
                        for ch in 0..c {
                            let h = g[i * c + ch] * gv[ch];
                            dx[i * c + ch] = inv_std[ch]
                                * (h - mean_h[ch] - xhat[i * c + ch] * mean_hx[ch]);
                        }
                    }
                    xh_t.accumulate_grad(&dx);
                    gh.accumulate_grad(&dgamma);
                    bh.accumulate_grad(&dbeta);
                });
                Ok(out)
            }
            Mode::Eval => {
                let rm = running_mean.data_vec();
                let rv = running_var.data_vec();
                let inv_std: Vec<f64> = rv.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let mut xhat = vec![0.0; n * c];
                let mut data = vec![0.0; n * c];
                for i in 0..n {
                    for ch in 0..c {
                        let h = (xv[i * c + ch] - rm[ch]) * inv_std[ch];
                        xhat[i * c + ch] = h;
                        data[i * c + ch] = gv[ch] * h + bv[ch];
                    }
                }
                let out = Tensor::from_parts(vec![n, c], data);
                let (xh_t, gh, bh, oh) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
                self.record(&out, move || {
                    let g = oh.grad_vec();
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    let mut dx = vec![0.0; n * c];
                    for i in 0..n {
                        for ch in 0..c {
                            let gi = g[i * c + ch];
                            dgamma[ch] += gi * xhat[i * c + ch];
                            dbeta[ch] += gi;
                            dx[i * c + ch] = gi * gv[ch] * inv_std[ch];
                        }
                    }
                    xh_t.accumulate_grad(&dx);
                    gh.accumulate_grad(&dgamma);
                    bh.accumulate_grad(&dbeta);
                });
                Ok(out)
            }
        }
    }
}
