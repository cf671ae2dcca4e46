//! Convolution and pooling over `[H, W, C]` feature maps.

use crate::autograd::tape::Op;
use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Zero-padded, stride-1 "same" convolution.
///
/// `x` is `[H, W, Cin]`, `kernel` is `[kh, kw, Cin, F]` with odd extents and
/// `bias` is `[F]`. No activation is applied.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, f) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let xv = x.data();
    let kv = kernel.data();
    let mut out = vec![T::zero(); h * w * f];
    for y in 0..h {
        for xx in 0..w {
            let orow = &mut out[(y * w + xx) * f..(y * w + xx + 1) * f];
            if let Some(b) = bias {
                orow.copy_from_slice(b.data());
            }
            for dy in 0..kh {
                let Some(sy) = (y + dy).checked_sub(ph).filter(|&s| s < h) else {
                    continue;
                };
                for dx in 0..kw {
                    let Some(sx) = (xx + dx).checked_sub(pw).filter(|&s| s < w) else {
                        continue;
                    };
                    let xin = &xv[(sy * w + sx) * cin..(sy * w + sx + 1) * cin];
                    let kbase = (dy * kw + dx) * cin * f;
                    for (c, &v) in xin.iter().enumerate() {
                        if v == T::zero() {
                            continue;
                        }
                        let krow = &kv[kbase + c * f..kbase + (c + 1) * f];
                        for (o, &k) in orow.iter_mut().zip(krow) {
                            *o += v * k;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[h, w, f], out).expect("conv output shape")
}

pub(crate) fn conv2d_backward_input<T: Scalar>(x_shape: &[usize], kernel: &Tensor<T>, gout: &[T], gx: &mut [T]) {
    let (h, w, cin) = (x_shape[0], x_shape[1], x_shape[2]);
    let (kh, kw, f) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let kv = kernel.data();
    for y in 0..h {
        for xx in 0..w {
            let drow = &gout[(y * w + xx) * f..(y * w + xx + 1) * f];
            for dy in 0..kh {
                let Some(sy) = (y + dy).checked_sub(ph).filter(|&s| s < h) else {
                    continue;
                };
                for dx in 0..kw {
                    let Some(sx) = (xx + dx).checked_sub(pw).filter(|&s| s < w) else {
                        continue;
                    };
                    let kbase = (dy * kw + dx) * cin * f;
                    let grow = &mut gx[(sy * w + sx) * cin..(sy * w + sx + 1) * cin];
                    for (c, g) in grow.iter_mut().enumerate() {
                        let krow = &kv[kbase + c * f..kbase + (c + 1) * f];
                        let s: T = krow.iter().zip(drow).map(|(&k, &d)| k * d).sum();
                        *g += s;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_backward_kernel<T: Scalar>(x: &Tensor<T>, k_shape: &[usize], gout: &[T], gk: &mut [T]) {
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, f) = (k_shape[0], k_shape[1], k_shape[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let xv = x.data();
    for y in 0..h {
        for xx in 0..w {
            let drow = &gout[(y * w + xx) * f..(y * w + xx + 1) * f];
            for dy in 0..kh {
                let Some(sy) = (y + dy).checked_sub(ph).filter(|&s| s < h) else {
                    continue;
                };
                for dx in 0..kw {
                    let Some(sx) = (xx + dx).checked_sub(pw).filter(|&s| s < w) else {
                        continue;
                    };
                    let xin = &xv[(sy * w + sx) * cin..(sy * w + sx + 1) * cin];
                    let kbase = (dy * kw + dx) * cin * f;
                    for (c, &v) in xin.iter().enumerate() {
                        if v == T::zero() {
                            continue;
                        }
                        let grow = &mut gk[kbase + c * f..kbase + (c + 1) * f];
                        for (g, &d) in grow.iter_mut().zip(drow) {
                            *g += v * d;
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 stride-2 max pooling; ragged edges pool over the partial window.
/// Returns the pooled map and, per output cell, the flat input index of the
/// winning element (first occurrence on ties).
pub fn max_pool2d_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let xv = x.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = None::<(T, usize)>;
                for sy in 2 * oy..(2 * oy + 2).min(h) {
                    for sx in 2 * ox..(2 * ox + 2).min(w) {
                        let idx = (sy * w + sx) * c + ch;
                        if best.is_none_or(|(b, _)| xv[idx] > b) {
                            best = Some((xv[idx], idx));
                        }
                    }
                }
                let (v, i) = best.expect("window is non-empty");
                out.push(v);
                argmax.push(i);
            }
        }
    }
    (Tensor::new(&[oh, ow, c], out).expect("pool shape"), argmax)
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let xt = self.check(x)?;
        let kt = self.check(kernel)?;
        if xt.rank() != 3 || kt.rank() != 4 {
            return Err(Error::shape("conv2d", xt.shape(), kt.shape()));
        }
        if kt.shape()[2] != xt.shape()[2] {
            return Err(Error::shape("conv2d", xt.shape(), kt.shape()));
        }
        if kt.shape()[0] % 2 == 0 || kt.shape()[1] % 2 == 0 {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel extents must be odd, got {:?}", kt.shape()),
            ));
        }
        let bt = match bias {
            Some(b) => {
                let bt = self.check(b)?;
                if bt.numel() != kt.shape()[3] {
                    return Err(Error::shape("conv2d bias", bt.shape(), &kt.shape()[3..]));
                }
                Some(bt)
            }
            None => None,
        };
        let out = conv2d_forward(xt, kt, bt);
        Ok(self.push(out, Op::Conv2d { x, kernel, bias }))
    }

    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        let xt = self.check(x)?;
        if xt.rank() != 3 {
            return Err(Error::invalid(
                "max_pool2d",
                format!("expected [H,W,C], got {:?}", xt.shape()),
            ));
        }
        let (out, argmax) = max_pool2d_forward(xt);
        Ok(self.push(out, Op::MaxPool2d { x, argmax }))
    }

    /// Maximum over all spatial positions of `[H, W, C]`, giving `[C]`.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let xt = self.check(x)?;
        if xt.rank() != 3 {
            return Err(Error::invalid(
                "global_max_pool",
                format!("expected [H,W,C], got {:?}", xt.shape()),
            ));
        }
        let c = xt.shape()[2];
        let xv = xt.data();
        let mut out = xv[..c].to_vec();
        let mut argmax: Vec<usize> = (0..c).collect();
        for (pos, row) in xv.chunks_exact(c).enumerate().skip(1) {
            for ch in 0..c {
                if row[ch] > out[ch] {
                    out[ch] = row[ch];
                    argmax[ch] = pos * c + ch;
                }
            }
        }
        let out = Tensor::new(&[c], out)?;
        Ok(self.push(out, Op::GlobalMaxPool { x, argmax }))
    }

    /// Max over the middle axis of `[N, W, C]` restricted to positions where
    /// `mask[n * W + w]` is true. Rows with no valid position yield zeros.
    pub fn masked_max_time(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let xt = self.check(x)?;
        if xt.rank() != 3 || mask.len() != xt.shape()[0] * xt.shape()[1] {
            return Err(Error::shape("masked_max_time", xt.shape(), &[mask.len()]));
        }
        let (n, w, c) = (xt.shape()[0], xt.shape()[1], xt.shape()[2]);
        let xv = xt.data();
        let mut out = vec![T::zero(); n * c];
        let mut argmax = vec![None; n * c];
        for r in 0..n {
            for t in 0..w {
                if !mask[r * w + t] {
                    continue;
                }
                let base = (r * w + t) * c;
                for ch in 0..c {
                    let slot = r * c + ch;
                    if argmax[slot].is_none() || xv[base + ch] > out[slot] {
                        out[slot] = xv[base + ch];
                        argmax[slot] = Some(base + ch);
                    }
                }
            }
        }
        let out = Tensor::new(&[n, c], out)?;
        Ok(self.push(out, Op::MaskedMaxTime { x, argmax }))
    }
}
