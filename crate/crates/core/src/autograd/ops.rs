use rand::Rng;

use crate::autograd::tape::Op;
use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax of `x` restricted to `mask`; masked entries get 0.
pub fn masked_softmax_rows<T: Scalar>(x: &[T], width: usize, mask: &[bool]) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (orow, xrow) in out.chunks_exact_mut(width).zip(x.chunks_exact(width)) {
        let max = xrow
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for k in 0..width {
            if mask[k] {
                let e = (xrow[k] - max).exp();
                orow[k] = e;
                total += e;
            }
        }
        for o in orow.iter_mut() {
            *o /= total;
        }
    }
    out
}

impl<'p, T: Scalar> Tape<'p, T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (at, bt) = (self.check(a)?, self.check(b)?);
        if at.shape() != bt.shape() {
            return Err(Error::shape(op, at.shape(), bt.shape()));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let at = self.value(a);
        let bt = self.value(b);
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(at.shape(), data).expect("same shape");
        self.push(out, op)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let out = self.value(x).map(f);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `x + b` with `b` broadcast along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xt, bt) = (self.check(x)?, self.check(b)?);
        if bt.numel() != xt.last_dim() {
            return Err(Error::shape("add_bias", xt.shape(), bt.shape()));
        }
        let w = bt.numel();
        let mut data = xt.data().to_vec();
        for row in data.chunks_exact_mut(w) {
            for (v, &bb) in row.iter_mut().zip(bt.data()) {
                *v += bb;
            }
        }
        let out = Tensor::new(xt.shape(), data)?;
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    /// `x ⊙ w` with `w` broadcast along the last axis.
    pub fn mul_row(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xt, wt) = (self.check(x)?, self.check(w)?);
        if wt.numel() != xt.last_dim() {
            return Err(Error::shape("mul_row", xt.shape(), wt.shape()));
        }
        let width = wt.numel();
        let mut data = xt.data().to_vec();
        for row in data.chunks_exact_mut(width) {
            for (v, &ww) in row.iter_mut().zip(wt.data()) {
                *v *= ww;
            }
        }
        let out = Tensor::new(xt.shape(), data)?;
        Ok(self.push(out, Op::MulRow(x, w)))
    }

    /// `scale * x + shift` for constants.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var> {
        self.check(x)?;
        Ok(self.unary(x, Op::Affine(x, scale), |v| scale * v + shift))
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Result<Var> {
        self.affine(x, scale, T::zero())
    }

    /// Elementwise product with a constant tensor of the same size.
    pub fn mul_const(&mut self, x: Var, c: Vec<T>) -> Result<Var> {
        let xt = self.check(x)?;
        if c.len() != xt.numel() {
            return Err(Error::shape("mul_const", xt.shape(), &[c.len()]));
        }
        let data = xt.data().iter().zip(&c).map(|(&a, &b)| a * b).collect();
        let out = Tensor::new(xt.shape(), data)?;
        Ok(self.push(out, Op::MulConst(x, c)))
    }

    /// Inverted dropout: zero each element with probability `rate` and scale
    /// survivors by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let n = self.check(x)?.numel();
        let keep = T::of(1.0 / (1.0 - rate));
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        self.mul_const(x, mask)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.check(a)?, self.check(b)?);
        if at.rank() != 2 || bt.rank() != 2 || at.shape()[1] != bt.shape()[0] {
            return Err(Error::shape("matmul", at.shape(), bt.shape()));
        }
        let (n, k, m) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
        let (av, bv) = (at.data(), bt.data());
        let mut out = vec![T::zero(); n * m];
        for r in 0..n {
            let orow = &mut out[r * m..(r + 1) * m];
            for c in 0..k {
                let a = av[r * k + c];
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(&bv[c * m..(c + 1) * m]) {
                    *o += a * b;
                }
            }
        }
        let out = Tensor::new(&[n, m], out)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xt = self.check(x)?;
        if xt.rank() != 2 {
            return Err(Error::invalid(
                "transpose",
                format!("expected rank 2, got {:?}", xt.shape()),
            ));
        }
        let (r, c) = (xt.shape()[0], xt.shape()[1]);
        let xv = xt.data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        let out = Tensor::new(&[c, r], out)?;
        Ok(self.push(out, Op::Transpose(x)))
    }

    /// `x · W + b` for `x: [N, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        Ok(self.unary(x, Op::Tanh(x), |v| v.tanh()))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        Ok(self.unary(x, Op::Sigmoid(x), sigmoid))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        Ok(self.unary(x, Op::Relu(x), |v| v.max(T::zero())))
    }

    /// Concatenate along the last axis; leading axes must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let lead = {
            let s = self.check(*first)?.shape();
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.check(x)?.shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat", &lead, s));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, Op::Concat(xs.to_vec())))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.check(x)?.clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Rows of `table: [V, d]` selected by `ids`, giving `[ids.len(), d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.check(table)?;
        if tt.rank() != 2 {
            return Err(Error::invalid(
                "gather",
                format!("table must be rank 2, got {:?}", tt.shape()),
            ));
        }
        if ids.is_empty() {
            return Err(Error::invalid("gather", "no ids"));
        }
        let (v, d) = (tt.shape()[0], tt.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::invalid(
                    "gather",
                    format!("id {id} out of range for table of {v} rows"),
                ));
            }
            out.extend_from_slice(&tt.data()[id * d..(id + 1) * d]);
        }
        let out = Tensor::new(&[ids.len(), d], out)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Sub-range `[start, start + len)` along axis 0.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xt = self.check(x)?;
        let rows = xt.shape()[0];
        if len == 0 || start + len > rows {
            return Err(Error::invalid(
                "slice_rows",
                format!("rows {start}..{} of {rows}", start + len),
            ));
        }
        let row = xt.numel() / rows;
        let mut shape = xt.shape().to_vec();
        shape[0] = len;
        let out = Tensor::new(&shape, xt.data()[start * row..(start + len) * row].to_vec())?;
        Ok(self.push(out, Op::SliceRows { x, start }))
    }

    /// Softmax along the last axis over positions where `mask` is true.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let xt = self.check(x)?;
        let width = xt.last_dim();
        if mask.len() != width {
            return Err(Error::shape("masked_softmax", xt.shape(), &[mask.len()]));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::invalid("masked_softmax", "mask has no true position"));
        }
        let out = Tensor::new(xt.shape(), masked_softmax_rows(xt.data(), width, mask))?;
        Ok(self.push(out, Op::MaskedSoftmax(x)))
    }

    /// `base[i, j] + rows[i] + cols[j]`.
    pub fn add_outer(&mut self, base: Var, rows: Var, cols: Var) -> Result<Var> {
        let bt = self.check(base)?;
        let (rt, ct) = (self.check(rows)?, self.check(cols)?);
        if bt.rank() != 2 || rt.numel() != bt.shape()[0] || ct.numel() != bt.shape()[1] {
            return Err(Error::shape("add_outer", bt.shape(), &[rt.numel(), ct.numel()]));
        }
        let m = bt.shape()[1];
        let mut data = bt.data().to_vec();
        for (i, row) in data.chunks_exact_mut(m).enumerate() {
            let ri = rt.data()[i];
            for (v, &cj) in row.iter_mut().zip(ct.data()) {
                *v += ri + cj;
            }
        }
        let out = Tensor::new(bt.shape(), data)?;
        Ok(self.push(out, Op::AddOuter { base, rows, cols }))
    }

    /// `I[i, j, :] = p[i, :] ⊙ h[j, :]` for `p: [lp, d]`, `h: [lh, d]`.
    pub fn interaction(&mut self, p: Var, h: Var) -> Result<Var> {
        let (pt, ht) = (self.check(p)?, self.check(h)?);
        if pt.rank() != 2 || ht.rank() != 2 || pt.shape()[1] != ht.shape()[1] {
            return Err(Error::shape("interaction", pt.shape(), ht.shape()));
        }
        let (lp, lh, d) = (pt.shape()[0], ht.shape()[0], pt.shape()[1]);
        let mut out = Vec::with_capacity(lp * lh * d);
        for prow in pt.data().chunks_exact(d) {
            for hrow in ht.data().chunks_exact(d) {
                out.extend(prow.iter().zip(hrow).map(|(&a, &b)| a * b));
            }
        }
        let out = Tensor::new(&[lp, lh, d], out)?;
        Ok(self.push(out, Op::Interaction(p, h)))
    }

    /// Negative log-probability of `label` under softmax(`logits`).
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lt = self.check(logits)?;
        if label >= lt.numel() {
            return Err(Error::invalid(
                "softmax_cross_entropy",
                format!("label {label} out of range for {} classes", lt.numel()),
            ));
        }
        let mask = vec![true; lt.numel()];
        let probs = masked_softmax_rows(lt.data(), lt.numel(), &mask);
        let max = lt.data().iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + lt.data().iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let loss = lse - lt.data()[label];
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, label, probs }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.check(x)?.sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x)))
    }

    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::invalid("add_n", "no inputs"))?;
        let shape = self.check(*first)?.shape().to_vec();
        let mut acc = vec![T::zero(); shape.iter().product()];
        for &x in xs {
            let xt = self.check(x)?;
            if xt.shape() != shape.as_slice() {
                return Err(Error::shape("add_n", &shape, xt.shape()));
            }
            for (a, &v) in acc.iter_mut().zip(xt.data()) {
                *a += v;
            }
        }
        let out = Tensor::new(&shape, acc)?;
        Ok(self.push(out, Op::AddN(xs.to_vec())))
    }
}
