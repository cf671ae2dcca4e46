use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{Bound, Dropout, EncoderParams, HighwayParams};
use crate::scalar::Scalar;

/// `T ⊙ H + (1 − T) ⊙ x` with `T = σ(x W_T + b_T)`, `H = tanh(x W_H + b_H)`.
pub fn highway_layer<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &HighwayParams,
    bound: &Bound,
    x: Var,
    drop: &mut Dropout<'_>,
) -> Result<Var> {
    let xin = drop.apply(tape, x)?;
    let h = tape.linear(xin, bound[p.transform_w], bound[p.transform_b])?;
    let h = tape.tanh(h)?;
    let t = tape.linear(xin, bound[p.gate_w], bound[p.gate_b])?;
    let t = tape.sigmoid(t)?;
    let th = tape.mul(t, h)?;
    let carry = tape.affine(t, -T::one(), T::one())?;
    let cx = tape.mul(carry, x)?;
    tape.add(th, cx)
}

/// Attention weights `[len, len]`, row `i` a distribution over unmasked `j`.
pub fn attention_weights<T: Scalar>(tape: &mut Tape<'_, T>, attn_w: Var, h: Var, mask: &[bool]) -> Result<Var> {
    let d = tape.shape(h)[1];
    if tape.shape(attn_w) != [3 * d] {
        return Err(Error::shape("attention", tape.shape(attn_w), &[3 * d]));
    }
    let w = tape.reshape(attn_w, &[3, d])?;
    let w1 = tape.slice_rows(w, 0, 1)?;
    let w1 = tape.transpose(w1)?;
    let w2 = tape.slice_rows(w, 1, 1)?;
    let w2 = tape.transpose(w2)?;
    let w3 = tape.slice_rows(w, 2, 1)?;
    let w3 = tape.reshape(w3, &[d])?;
    let a = tape.matmul(h, w1)?;
    let b = tape.matmul(h, w2)?;
    let hw = tape.mul_row(h, w3)?;
    let ht = tape.transpose(h)?;
    let cross = tape.matmul(hw, ht)?;
    let s = tape.add_outer(cross, a, b)?;
    tape.masked_softmax(s, mask)
}

/// Encode `[len, d_feat]` features into `[len, d]`. Padded rows are zero.
pub fn encode<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &EncoderParams,
    bound: &Bound,
    feats: Var,
    mask: &[bool],
    drop: &mut Dropout<'_>,
) -> Result<Var> {
    let len = tape.shape(feats)[0];
    if mask.len() != len {
        return Err(Error::shape("encode", tape.shape(feats), &[mask.len()]));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid("encode", "mask has no valid position"));
    }
    tape.push_scope("projection");
    let x = drop.apply(tape, feats)?;
    let mut h = tape.linear(x, bound[p.proj_w], bound[p.proj_b])?;
    tape.pop_scope();
    for (i, hw) in p.highway.iter().enumerate() {
        tape.push_scope(&format!("highway{i}"));
        h = highway_layer(tape, hw, bound, h, drop)?;
        tape.pop_scope();
    }

    attend_and_fuse(tape, p, bound, h, mask, drop)
}

/// Self-attention over `h: [len, d]` followed by the fuse gate.
pub fn attend_and_fuse<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &EncoderParams,
    bound: &Bound,
    h: Var,
    mask: &[bool],
    drop: &mut Dropout<'_>,
) -> Result<Var> {
    tape.push_scope("self_attention");
    let alpha = attention_weights(tape, bound[p.attn_w], h, mask)?;
    let attended = tape.matmul(alpha, h)?;
    tape.pop_scope();

    tape.push_scope("fuse_gate");
    let cat = tape.concat(&[h, attended])?;
    let cat = drop.apply(tape, cat)?;
    let [(zw, zb), (rw, rb), (fw, fb)] = p.fuse;
    let z = tape.linear(cat, bound[zw], bound[zb])?;
    let z = tape.tanh(z)?;
    let r = tape.linear(cat, bound[rw], bound[rb])?;
    let r = tape.sigmoid(r)?;
    let f = tape.linear(cat, bound[fw], bound[fb])?;
    let f = tape.sigmoid(f)?;
    let rh = tape.mul(r, h)?;
    let fz = tape.mul(f, z)?;
    let out = tape.add(rh, fz)?;
    let d = tape.shape(out)[1];
    let keep = mask
        .iter()
        .flat_map(|&m| std::iter::repeat_n(if m { T::one() } else { T::zero() }, d))
        .collect();
    let out = tape.mul_const(out, keep)?;
    tape.pop_scope();
    Ok(out)
}

/// `I[i, j, :] = p[i, :] ⊙ h[j, :]`, zeroed where either side is padding,
/// with dropout applied to the result.
pub fn interaction_tensor<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: Var,
    h: Var,
    masks: Option<(&[bool], &[bool])>,
    drop: &mut Dropout<'_>,
) -> Result<Var> {
    let mut out = tape.interaction(p, h)?;
    if let Some((pm, hm)) = masks {
        let shape = tape.shape(out).to_vec();
        if pm.len() != shape[0] || hm.len() != shape[1] {
            return Err(Error::shape("interaction mask", &shape, &[pm.len(), hm.len()]));
        }
        let d = shape[2];
        let mut keep = Vec::with_capacity(shape.iter().product());
        for &a in pm {
            for &b in hm {
                let v = if a && b { T::one() } else { T::zero() };
                keep.extend(std::iter::repeat_n(v, d));
            }
        }
        out = tape.mul_const(out, keep)?;
    }
    drop.apply(tape, out)
}
