//! Numeric kernels behind the tape primitives. All operate on plain slices in
//! NCHW / row-major layout and are deterministic for a given input.

/// `C = A * B + beta * C` with `A` logically `m x k` and `B` logically `k x n`.
/// `a_t` / `b_t` mean the operand is stored transposed (row-major).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths cover every element addressed by the
    // strides above, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.height + 2 * self.padding - self.kernel) / self.stride + 1,
            (self.width + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Unfolds one image `[C, H, W]` into a `[C*k*k, Ho*Wo]` patch matrix.
fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back into `dx`.
fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Batched 2-D convolution. `x: [B, C, H, W]`, `w: [O, C, k, k]`, `bias: [O]`;
/// returns `[B, O, Ho, Wo]` flattened.
pub(crate) fn conv2d_forward(
    x: &[f64],
    batch: usize,
    g: &ConvGeom,
    w: &[f64],
    bias: &[f64],
    out_channels: usize,
) -> Vec<f64> {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let kk = g.patch_len();
    let in_len = g.channels * g.height * g.width;
    let mut y = vec![0.0; batch * out_channels * p];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; kk * p] };
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let patches: &[f64] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        let yb = &mut y[b * out_channels * p..(b + 1) * out_channels * p];
        gemm(out_channels, kk, p, w, false, patches, false, yb, 0.0);
        for (o, plane) in yb.chunks_exact_mut(p).enumerate() {
            let bo = bias[o];
            for v in plane {
                *v += bo;
            }
        }
    }
    y
}

/// Gradients of [`conv2d_forward`]: returns `(dx, dw, dbias)`; `dx` is only
/// computed when `need_dx`.
pub(crate) fn conv2d_backward(
    x: &[f64],
    batch: usize,
    g: &ConvGeom,
    w: &[f64],
    out_channels: usize,
    dy: &[f64],
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let kk = g.patch_len();
    let in_len = g.channels * g.height * g.width;
    let mut dw = vec![0.0; out_channels * kk];
    let mut db = vec![0.0; out_channels];
    let mut dx = need_dx.then(|| vec![0.0; batch * in_len]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; kk * p] };
    let mut dcols = vec![0.0; kk * p];
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let dyb = &dy[b * out_channels * p..(b + 1) * out_channels * p];
        for (o, plane) in dyb.chunks_exact(p).enumerate() {
            db[o] += plane.iter().sum::<f64>();
        }
        let patches: &[f64] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        gemm(out_channels, p, kk, dyb, false, patches, true, &mut dw, 1.0);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                gemm(kk, out_channels, p, w, true, dyb, false, dxb, 0.0);
            } else {
                gemm(kk, out_channels, p, w, true, dyb, false, &mut dcols, 0.0);
                col2im(&dcols, g, dxb);
            }
        }
    }
    (dx, dw, db)
}

/// `y = x W^T + bias` with `x: [B, F]`, `w: [O, F]`.
pub(crate) fn dense_forward(x: &[f64], batch: usize, features: usize, w: &[f64], bias: &[f64]) -> Vec<f64> {
    let out = bias.len();
    let mut y = vec![0.0; batch * out];
    gemm(batch, features, out, x, false, w, true, &mut y, 0.0);
    for row in y.chunks_exact_mut(out) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    y
}

pub(crate) fn dense_backward(
    x: &[f64],
    batch: usize,
    features: usize,
    w: &[f64],
    out: usize,
    dy: &[f64],
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; out * features];
    gemm(out, batch, features, dy, true, x, false, &mut dw, 0.0);
    let mut db = vec![0.0; out];
    for row in dy.chunks_exact(out) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; batch * features];
        gemm(batch, out, features, dy, false, w, false, &mut dx, 0.0);
        dx
    });
    (dx, dw, db)
}

/// Max-pool over `[B*C]` planes of `h x w`. Returns the pooled values and,
/// per output, the flat input index of the winner. Ties go to the lowest
/// linear index.
pub(crate) fn maxpool_forward(
    x: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut y = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + oy * stride * w + ox * stride;
                let mut best = x[best_i];
                for ky in 0..kernel {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..kernel {
                        let v = x[row + kx];
                        if v > best {
                            best = v;
                            best_i = row + kx;
                        }
                    }
                }
                y.push(best);
                arg.push(best_i);
            }
        }
    }
    (y, arg)
}

/// Returns `(mean loss, softmax probabilities)`.
pub(crate) fn softmax_cross_entropy(logits: &[f64], classes: usize, labels: &[usize]) -> (f64, Vec<f64>) {
    let mut probs = vec![0.0; logits.len()];
    let mut total = 0.0;
    for ((row, prow), &label) in logits
        .chunks_exact(classes)
        .zip(probs.chunks_exact_mut(classes))
        .zip(labels)
    {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (p, &l) in prow.iter_mut().zip(row) {
            *p = (l - max).exp();
            z += *p;
        }
        for p in prow.iter_mut() {
            *p /= z;
        }
        total += z.ln() - (row[label] - max);
    }
    (total / labels.len() as f64, probs)
}

/// Straightforward seven-loop convolution, kept as an independent reference
/// for the patch-matrix implementation.
#[cfg(test)]
pub(crate) fn conv2d_direct(
    x: &[f64],
    batch: usize,
    g: &ConvGeom,
    w: &[f64],
    bias: &[f64],
    out_channels: usize,
) -> Vec<f64> {
    let (oh, ow) = g.out_hw();
    let mut y = vec![0.0; batch * out_channels * oh * ow];
    for b in 0..batch {
        for o in 0..out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[o];
                    for c in 0..g.channels {
                        for ky in 0..g.kernel {
                            for kx in 0..g.kernel {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                    continue;
                                }
                                let xv = x[((b * g.channels + c) * g.height + iy as usize) * g.width + ix as usize];
                                let wv = w[((o * g.channels + c) * g.kernel + ky) * g.kernel + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    y[((b * out_channels + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.7318 + seed).sin() * 1.3).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn patch_conv_matches_direct(
            batch in 1usize..3, channels in 1usize..4, out in 1usize..4,
            h in 3usize..8, w in 3usize..8, kernel in 1usize..4,
            stride in 1usize..3, padding in 0usize..2, seed in 0.0f64..10.0,
        ) {
            prop_assume!(kernel <= h + 2 * padding && kernel <= w + 2 * padding);
            let g = ConvGeom { channels, height: h, width: w, kernel, stride, padding };
            let x = ramp(batch * channels * h * w, seed);
            let wt = ramp(out * channels * kernel * kernel, seed + 1.0);
            let bias = ramp(out, seed + 2.0);
            let fast = conv2d_forward(&x, batch, &g, &wt, &bias, out);
            let slow = conv2d_direct(&x, batch, &g, &wt, &bias, out);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        /// <conv(x), dy> is linear in x and w, so the adjoint identity
        /// <dy, J dx> = <J^T dy, dx> must hold for the backward kernels.
        #[test]
        fn conv_backward_is_adjoint(
            channels in 1usize..3, out in 1usize..3, h in 3usize..7,
            kernel in 1usize..4, stride in 1usize..3, padding in 0usize..2, seed in 0.0f64..10.0,
        ) {
            prop_assume!(kernel <= h + 2 * padding);
            let g = ConvGeom { channels, height: h, width: h, kernel, stride, padding };
            let (oh, ow) = g.out_hw();
            let x = ramp(2 * channels * h * h, seed);
            let wt = ramp(out * channels * kernel * kernel, seed + 1.0);
            let zero_bias = vec![0.0; out];
            let dy = ramp(2 * out * oh * ow, seed + 3.0);
            let dxdir = ramp(x.len(), seed + 4.0);
            let (dx, dw, _) = conv2d_backward(&x, 2, &g, &wt, out, &dy, true);
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
            let y_dir = conv2d_direct(&dxdir, 2, &g, &wt, &zero_bias, out);
            let lhs = dot(&dy, &y_dir);
            let rhs = dot(&dx.unwrap(), &dxdir);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
            let wdir = ramp(wt.len(), seed + 5.0);
            let y_wdir = conv2d_direct(&x, 2, &g, &wdir, &zero_bias, out);
            let lhs = dot(&dy, &y_wdir);
            let rhs = dot(&dw, &wdir);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn maxpool_ties_go_to_lowest_index() {
        let x = vec![1.0, 1.0, 1.0, 1.0];
        let (y, arg) = maxpool_forward(&x, 1, 2, 2, 2, 2);
        assert_eq!(y, vec![1.0]);
        assert_eq!(arg, vec![0]);
        let x = vec![0.0, 2.0, 2.0, 1.0];
        assert_eq!(maxpool_forward(&x, 1, 2, 2, 2, 2).1, vec![1]);
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let (loss, probs) = softmax_cross_entropy(&[0.0; 20], 10, &[3, 7]);
        assert!((loss - 10f64.ln()).abs() < 1e-15);
        assert!(probs.iter().all(|&p| (p - 0.1).abs() < 1e-15));
    }

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
