//! Dense math kernels shared by the tape, the inference paths, and the
//! f64 shadow gradient checks.
//!
//! Every kernel is a pure function with a fixed, serial reduction order, so
//! results are bit-identical across runs for identical inputs.

use crate::scalar::Scalar;

// ---------------------------------------------------------------------------
// matmul family
// ---------------------------------------------------------------------------

/// C(m,n) = A(m,k) * B(k,n).
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    assert_eq!(a.len(), m * k, "matmul lhs size");
    assert_eq!(b.len(), k * n, "matmul rhs size");
    let mut c = vec![T::ZERO; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += a_ip * b_row[j];
            }
        }
    }
    c
}

/// C(m,n) = A(m,k) * B(n,k)^T  (rows of B dotted with rows of A).
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    assert_eq!(a.len(), m * k, "matmul_nt lhs size");
    assert_eq!(b.len(), n * k, "matmul_nt rhs size");
    let mut c = vec![T::ZERO; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

/// C(m,n) = A(k,m)^T * B(k,n).
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    assert_eq!(a.len(), k * m, "matmul_tn lhs size");
    assert_eq!(b.len(), k * n, "matmul_tn rhs size");
    let mut c = vec![T::ZERO; m * n];
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let a_pi = a_row[i];
            let c_row = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                c_row[j] += a_pi * b_row[j];
            }
        }
    }
    c
}

/// Dot product with a fixed 4-lane unroll (the lane split is part of the
/// canonical reduction order).
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let mut s0 = T::ZERO;
    let mut s1 = T::ZERO;
    let mut s2 = T::ZERO;
    let mut s3 = T::ZERO;
    for i in 0..chunks {
        let base = i * 4;
        s0 += a[base] * b[base];
        s1 += a[base + 1] * b[base + 1];
        s2 += a[base + 2] * b[base + 2];
        s3 += a[base + 3] * b[base + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

// ---------------------------------------------------------------------------
// convolution (im2col + matmul)
// ---------------------------------------------------------------------------

/// Stride/padding attributes of a conv2d. `pad_value` fills the halo; binary
/// convolutions pad with -1 so the packed path can reproduce them exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conv2dAttrs {
    pub stride: usize,
    pub pad: usize,
    pub pad_value: f32,
}

impl Conv2dAttrs {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad, pad_value: 0.0 }
    }

    pub fn with_pad_value(stride: usize, pad: usize, pad_value: f32) -> Self {
        Self { stride, pad, pad_value }
    }
}

pub fn conv2d_out_hw(h: usize, w: usize, kh: usize, kw: usize, attrs: Conv2dAttrs) -> (usize, usize) {
    assert!(
        h + 2 * attrs.pad >= kh && w + 2 * attrs.pad >= kw,
        "conv2d kernel {}x{} larger than padded input {}x{}",
        kh,
        kw,
        h + 2 * attrs.pad,
        w + 2 * attrs.pad
    );
    (
        (h + 2 * attrs.pad - kh) / attrs.stride + 1,
        (w + 2 * attrs.pad - kw) / attrs.stride + 1,
    )
}

/// Lowers one sample (c,h,w) into a (c*kh*kw, out_h*out_w) patch matrix.
pub fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    attrs: Conv2dAttrs,
    out: &mut [T],
) {
    let (out_h, out_w) = conv2d_out_hw(h, w, kh, kw, attrs);
    let patch = c * kh * kw;
    let cols = out_h * out_w;
    assert_eq!(out.len(), patch * cols, "im2col output buffer size");
    let pad_value = T::from_f64(attrs.pad_value as f64);
    let mut row = 0usize;
    for ch in 0..c {
        let x_ch = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let out_row = &mut out[row * cols..(row + 1) * cols];
                let mut col = 0usize;
                for oy in 0..out_h {
                    let iy = (oy * attrs.stride + ky) as isize - attrs.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        for _ in 0..out_w {
                            out_row[col] = pad_value;
                            col += 1;
                        }
                        continue;
                    }
                    let x_row = &x_ch[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..out_w {
                        let ix = (ox * attrs.stride + kx) as isize - attrs.pad as isize;
                        out_row[col] = if ix < 0 || ix >= w as isize {
                            pad_value
                        } else {
                            x_row[ix as usize]
                        };
                        col += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatters a patch matrix gradient back onto the input gradient.
/// Padding cells are dropped (the pad is a constant).
fn col2im_accumulate<T: Scalar>(
    dcol: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    attrs: Conv2dAttrs,
    dx: &mut [T],
) {
    let (out_h, out_w) = conv2d_out_hw(h, w, kh, kw, attrs);
    let cols = out_h * out_w;
    let mut row = 0usize;
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let dcol_row = &dcol[row * cols..(row + 1) * cols];
                let mut col = 0usize;
                for oy in 0..out_h {
                    let iy = (oy * attrs.stride + ky) as isize - attrs.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        col += out_w;
                        continue;
                    }
                    for ox in 0..out_w {
                        let ix = (ox * attrs.stride + kx) as isize - attrs.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[(ch * h + iy as usize) * w + ix as usize] += dcol_row[col];
                        }
                        col += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// conv2d forward over a batch: x (n,c,h,w), weights (o,c,kh,kw) -> (n,o,oh,ow).
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    xshape: (usize, usize, usize, usize),
    weight: &[T],
    wshape: (usize, usize, usize, usize),
    attrs: Conv2dAttrs,
) -> Vec<T> {
    let (n, c, h, w) = xshape;
    let (o, wc, kh, kw) = wshape;
    assert_eq!(c, wc, "conv2d: input has {} channels but weights expect {}", c, wc);
    let (out_h, out_w) = conv2d_out_hw(h, w, kh, kw, attrs);
    let patch = c * kh * kw;
    let cols = out_h * out_w;
    let mut out = vec![T::ZERO; n * o * cols];
    let mut col = vec![T::ZERO; patch * cols];
    for s in 0..n {
        im2col(&x[s * c * h * w..(s + 1) * c * h * w], c, h, w, kh, kw, attrs, &mut col);
        let y = matmul(weight, &col, o, patch, cols);
        out[s * o * cols..(s + 1) * o * cols].copy_from_slice(&y);
    }
    out
}

/// conv2d backward: returns (dx, dweight).
///
/// dweight accumulates per-sample partials in sample order (the canonical
/// reduction order for batch sums).
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    xshape: (usize, usize, usize, usize),
    weight: &[T],
    wshape: (usize, usize, usize, usize),
    attrs: Conv2dAttrs,
    grad_out: &[T],
) -> (Vec<T>, Vec<T>) {
    let (n, c, h, w) = xshape;
    let (o, _, kh, kw) = wshape;
    let (out_h, out_w) = conv2d_out_hw(h, w, kh, kw, attrs);
    let patch = c * kh * kw;
    let cols = out_h * out_w;
    assert_eq!(grad_out.len(), n * o * cols, "conv2d grad_out size");

    let mut dx = vec![T::ZERO; x.len()];
    let mut dw = vec![T::ZERO; weight.len()];
    let mut col = vec![T::ZERO; patch * cols];
    for s in 0..n {
        let g = &grad_out[s * o * cols..(s + 1) * o * cols];
        // dX_s = col2im(W^T * dOut_s)
        let dcol = matmul_tn(weight, g, patch, o, cols);
        col2im_accumulate(&dcol, c, h, w, kh, kw, attrs, &mut dx[s * c * h * w..(s + 1) * c * h * w]);
        // dW += dOut_s * Col_s^T
        im2col(&x[s * c * h * w..(s + 1) * c * h * w], c, h, w, kh, kw, attrs, &mut col);
        let part = matmul_nt(g, &col, o, cols, patch);
        for (acc, p) in dw.iter_mut().zip(part.iter()) {
            *acc += *p;
        }
    }
    (dx, dw)
}

// ---------------------------------------------------------------------------
// pooling / reductions
// ---------------------------------------------------------------------------

/// Output extent of the 2x2 stride-2 average pool (ceil mode, so it composes
/// with stride-2 conv k3 p1 on odd sizes).
pub fn pool2_out(h: usize) -> usize {
    (h + 1) / 2
}

/// 2x2 stride-2 average pool; partial edge windows divide by their actual size.
pub fn avgpool2_forward<T: Scalar>(x: &[T], shape: (usize, usize, usize, usize)) -> Vec<T> {
    let (n, c, h, w) = shape;
    let (oh, ow) = (pool2_out(h), pool2_out(w));
    let mut out = vec![T::ZERO; n * c * oh * ow];
    for img in 0..n * c {
        let src = &x[img * h * w..(img + 1) * h * w];
        let dst = &mut out[img * oh * ow..(img + 1) * oh * ow];
        for oy in 0..oh {
            let y0 = oy * 2;
            let ylen = (h - y0).min(2);
            for ox in 0..ow {
                let x0 = ox * 2;
                let xlen = (w - x0).min(2);
                let mut s = T::ZERO;
                for dy in 0..ylen {
                    for dxi in 0..xlen {
                        s += src[(y0 + dy) * w + x0 + dxi];
                    }
                }
                dst[oy * ow + ox] = s / T::from_f64((ylen * xlen) as f64);
            }
        }
    }
    out
}

pub fn avgpool2_backward<T: Scalar>(grad_out: &[T], shape: (usize, usize, usize, usize)) -> Vec<T> {
    let (n, c, h, w) = shape;
    let (oh, ow) = (pool2_out(h), pool2_out(w));
    let mut dx = vec![T::ZERO; n * c * h * w];
    for img in 0..n * c {
        let g = &grad_out[img * oh * ow..(img + 1) * oh * ow];
        let d = &mut dx[img * h * w..(img + 1) * h * w];
        for oy in 0..oh {
            let y0 = oy * 2;
            let ylen = (h - y0).min(2);
            for ox in 0..ow {
                let x0 = ox * 2;
                let xlen = (w - x0).min(2);
                let share = g[oy * ow + ox] / T::from_f64((ylen * xlen) as f64);
                for dy in 0..ylen {
                    for dxi in 0..xlen {
                        d[(y0 + dy) * w + x0 + dxi] += share;
                    }
                }
            }
        }
    }
    dx
}

/// Global average pool over the spatial dims: (n,c,h,w) -> (n,c).
pub fn mean_hw_forward<T: Scalar>(x: &[T], shape: (usize, usize, usize, usize)) -> Vec<T> {
    let (n, c, h, w) = shape;
    let hw = h * w;
    let mut out = vec![T::ZERO; n * c];
    for i in 0..n * c {
        let mut s = T::ZERO;
        for &v in &x[i * hw..(i + 1) * hw] {
            s += v;
        }
        out[i] = s / T::from_f64(hw as f64);
    }
    out
}

pub fn mean_hw_backward<T: Scalar>(grad_out: &[T], shape: (usize, usize, usize, usize)) -> Vec<T> {
    let (n, c, h, w) = shape;
    let hw = h * w;
    let mut dx = vec![T::ZERO; n * c * hw];
    for i in 0..n * c {
        let share = grad_out[i] / T::from_f64(hw as f64);
        for v in &mut dx[i * hw..(i + 1) * hw] {
            *v = share;
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// softmax / losses
// ---------------------------------------------------------------------------

/// Row-wise softmax over an (n, c) matrix, numerically stabilized.
pub fn softmax_rows<T: Scalar>(x: &[T], n: usize, c: usize) -> Vec<T> {
    assert_eq!(x.len(), n * c, "softmax input size");
    let mut out = vec![T::ZERO; n * c];
    for i in 0..n {
        let row = &x[i * c..(i + 1) * c];
        let o = &mut out[i * c..(i + 1) * c];
        let mut m = row[0];
        for &v in row.iter() {
            m = m.maximum(v);
        }
        let mut z = T::ZERO;
        for j in 0..c {
            let e = (row[j] - m).exp();
            o[j] = e;
            z += e;
        }
        for v in o.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows<T: Scalar>(x: &[T], n: usize, c: usize) -> Vec<T> {
    assert_eq!(x.len(), n * c, "log_softmax input size");
    let mut out = vec![T::ZERO; n * c];
    for i in 0..n {
        let row = &x[i * c..(i + 1) * c];
        let o = &mut out[i * c..(i + 1) * c];
        let mut m = row[0];
        for &v in row.iter() {
            m = m.maximum(v);
        }
        let mut z = T::ZERO;
        for &v in row.iter() {
            z += (v - m).exp();
        }
        let lz = z.ln() + m;
        for j in 0..c {
            o[j] = row[j] - lz;
        }
    }
    out
}

/// Mean cross-entropy over labels; returns (loss, softmax probabilities).
pub fn cross_entropy_forward<T: Scalar>(logits: &[T], n: usize, c: usize, labels: &[usize]) -> (T, Vec<T>) {
    assert_eq!(labels.len(), n, "cross_entropy: {} labels for {} rows", labels.len(), n);
    let log_probs = log_softmax_rows(logits, n, c);
    let mut loss = T::ZERO;
    for (i, &y) in labels.iter().enumerate() {
        assert!(y < c, "cross_entropy: label {} out of range for {} classes", y, c);
        loss -= log_probs[i * c + y];
    }
    let probs: Vec<T> = log_probs.iter().map(|&lp| lp.exp()).collect();
    (loss / T::from_f64(n as f64), probs)
}

/// d(mean CE)/d(logits) = (softmax - onehot) / n, scaled by upstream grad.
pub fn cross_entropy_backward<T: Scalar>(probs: &[T], n: usize, c: usize, labels: &[usize], upstream: T) -> Vec<T> {
    let inv_n = upstream / T::from_f64(n as f64);
    let mut dz: Vec<T> = probs.iter().map(|&p| p * inv_n).collect();
    for (i, &y) in labels.iter().enumerate() {
        dz[i * c + y] -= inv_n;
    }
    dz
}

/// Distribution (distillation) loss: mean KL(teacher || softmax(student)).
/// Teacher entries equal to zero contribute nothing. Returns (loss, student probs).
pub fn kl_div_forward<T: Scalar>(student_logits: &[T], teacher_probs: &[T], n: usize, c: usize) -> (T, Vec<T>) {
    assert_eq!(student_logits.len(), n * c, "kl_div student size");
    assert_eq!(teacher_probs.len(), n * c, "kl_div teacher size");
    let log_probs = log_softmax_rows(student_logits, n, c);
    let mut loss = T::ZERO;
    for i in 0..n * c {
        let p = teacher_probs[i];
        if p > T::ZERO {
            loss += p * (p.ln() - log_probs[i]);
        }
    }
    let probs: Vec<T> = log_probs.iter().map(|&lp| lp.exp()).collect();
    (loss / T::from_f64(n as f64), probs)
}

/// d(mean KL)/d(student logits) = (softmax(student) - teacher) / n.
pub fn kl_div_backward<T: Scalar>(probs: &[T], teacher_probs: &[T], n: usize, upstream: T) -> Vec<T> {
    let inv_n = upstream / T::from_f64(n as f64);
    probs
        .iter()
        .zip(teacher_probs.iter())
        .map(|(&p, &t)| (p - t) * inv_n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small_known() {
        // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = vec![1.0f32, 2.0, 3.0, 4.0];
        let b = vec![5.0f32, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_transpose_variants_agree() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect(); // (2,3)
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect(); // (3,4)
        let c = matmul(&a, &b, 2, 3, 4);
        // A*B via nt: B^T is (4,3)
        let mut bt = vec![0.0f64; 12];
        for i in 0..3 {
            for j in 0..4 {
                bt[j * 3 + i] = b[i * 4 + j];
            }
        }
        let c_nt = matmul_nt(&a, &bt, 2, 3, 4);
        // A*B via tn: A^T is (3,2)
        let mut at = vec![0.0f64; 6];
        for i in 0..2 {
            for j in 0..3 {
                at[j * 2 + i] = a[i * 3 + j];
            }
        }
        let c_tn = matmul_tn(&at, &b, 2, 3, 4);
        for i in 0..8 {
            assert!((c[i] - c_nt[i]).abs() < 1e-12);
            assert!((c[i] - c_tn[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_all_ones_center() {
        // 1x1x3x3 ones, 1x1x3x3 ones kernel, stride 1 pad 1: center sums the
        // full receptive field = 9, corners see 4 cells.
        let x = vec![1.0f32; 9];
        let w = vec![1.0f32; 9];
        let out = conv2d_forward(&x, (1, 1, 3, 3), &w, (1, 1, 3, 3), Conv2dAttrs::new(1, 1));
        assert_eq!(out.len(), 9);
        assert_eq!(out[4], 9.0);
        assert_eq!(out[0], 4.0);
        assert_eq!(out[1], 6.0);
    }

    #[test]
    fn conv2d_matches_naive_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (n, c, h, w) = (2, 3, 5, 6);
        let (o, kh, kw) = (4, 3, 3);
        for &(stride, pad) in &[(1usize, 1usize), (2, 1), (1, 0), (2, 0)] {
            let attrs = Conv2dAttrs::new(stride, pad);
            if h + 2 * pad < kh {
                continue;
            }
            let x: Vec<f32> = (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wt: Vec<f32> = (0..o * c * kh * kw).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = conv2d_forward(&x, (n, c, h, w), &wt, (o, c, kh, kw), attrs);
            let (oh, ow) = conv2d_out_hw(h, w, kh, kw, attrs);
            // naive triple loop
            for s in 0..n {
                for oc in 0..o {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0f64;
                            for ic in 0..c {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        let xv = if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                            0.0
                                        } else {
                                            x[((s * c + ic) * h + iy as usize) * w + ix as usize] as f64
                                        };
                                        acc += xv * wt[((oc * c + ic) * kh + ky) * kw + kx] as f64;
                                    }
                                }
                            }
                            let got_v = got[((s * o + oc) * oh + oy) * ow + ox] as f64;
                            assert!((got_v - acc).abs() < 1e-4, "mismatch at stride {stride} pad {pad}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn avgpool2_odd_edges_use_actual_window() {
        // 1x1x3x3 ramp; ceil mode gives 2x2 output.
        let x: Vec<f32> = (0..9).map(|i| i as f32).collect();
        let out = avgpool2_forward(&x, (1, 1, 3, 3));
        assert_eq!(out.len(), 4);
        assert_eq!(out[0], (0.0 + 1.0 + 3.0 + 4.0) / 4.0);
        assert_eq!(out[1], (2.0 + 5.0) / 2.0);
        assert_eq!(out[2], (6.0 + 7.0) / 2.0);
        assert_eq!(out[3], 8.0);
    }

    #[test]
    fn softmax_rows_normalize() {
        let x = vec![0.0f32, 0.0, 1000.0, 1000.0];
        let p = softmax_rows(&x, 2, 2);
        for i in 0..2 {
            let s: f32 = p[i * 2..(i + 1) * 2].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!((p[0] - 0.5).abs() < 1e-6);
        assert!((p[2] - 0.5).abs() < 1e-6, "stable under large logits");
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = vec![0.0f32; 10];
        let (loss, _) = cross_entropy_forward(&logits, 1, 10, &[3]);
        assert!((loss - (10.0f32).ln()).abs() < 1e-6);
    }

    #[test]
    fn kl_zero_at_equality_and_hand_example() {
        // student softmax == teacher -> 0
        let logits = vec![0.3f32, -0.2, 1.0, 0.5];
        let teacher = softmax_rows(&logits, 1, 4);
        let (loss, _) = kl_div_forward(&logits, &teacher, 1, 4);
        assert!(loss.abs() < 1e-9, "loss {}", loss);
        // teacher (1,0), student logits (0,0) -> -log(0.5)
        let (loss, _) = kl_div_forward(&[0.0f32, 0.0], &[1.0, 0.0], 1, 2);
        assert!((loss - 0.5f32.ln().abs()).abs() < 1e-6);
    }
}
