use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{Bound, ConvParams, DenseNetParams, Dropout};
use crate::scalar::Scalar;

fn conv<T: Scalar>(tape: &mut Tape<'_, T>, p: &ConvParams, bound: &Bound, x: Var) -> Result<Var> {
    tape.conv2d(x, bound[p.kernel], Some(bound[p.bias]))
}

/// 1×1 convolution with ReLU reducing `[p, h, d]` to the first block width.
pub fn scale_down<T: Scalar>(tape: &mut Tape<'_, T>, p: &ConvParams, bound: &Bound, x: Var) -> Result<Var> {
    let y = conv(tape, p, bound, x)?;
    tape.relu(y)
}

/// Each layer's 3×3 conv + ReLU output is concatenated onto the running map.
pub fn dense_block<T: Scalar>(tape: &mut Tape<'_, T>, layers: &[ConvParams], bound: &Bound, x: Var) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::invalid("dense_block", "a block needs at least one layer"));
    }
    let mut x = x;
    for l in layers {
        let y = conv(tape, l, bound, x)?;
        let y = tape.relu(y)?;
        x = tape.concat(&[x, y])?;
    }
    Ok(x)
}

/// 1×1 convolution (no activation) followed by 2×2 max-pooling.
pub fn transition<T: Scalar>(tape: &mut Tape<'_, T>, p: &ConvParams, bound: &Bound, x: Var) -> Result<Var> {
    let y = conv(tape, p, bound, x)?;
    tape.max_pool2d(y)
}

/// `[p, h, d]` interaction tensor to a flat feature vector.
pub fn densenet_features<T: Scalar>(tape: &mut Tape<'_, T>, p: &DenseNetParams, bound: &Bound, x: Var) -> Result<Var> {
    tape.push_scope("scale_down");
    let mut x = scale_down(tape, &p.scale_down, bound, x)?;
    tape.pop_scope();
    for (k, (block, tr)) in p.blocks.iter().zip(&p.transitions).enumerate() {
        tape.push_scope(&format!("dense_block{}", k + 1));
        x = dense_block(tape, block, bound, x)?;
        tape.pop_scope();
        tape.push_scope(&format!("transition{}", k + 1));
        x = transition(tape, tr, bound, x)?;
        tape.pop_scope();
    }
    tape.push_scope("global_max_pool");
    let out = tape.global_max_pool(x)?;
    tape.pop_scope();
    Ok(out)
}

/// Logits `[3]`; softmax of these gives the class distribution.
pub fn classify<T: Scalar>(tape: &mut Tape<'_, T>, feats: Var, w: Var, b: Var, drop: &mut Dropout<'_>) -> Result<Var> {
    let f = tape.shape(feats).iter().product::<usize>();
    let x = tape.reshape(feats, &[1, f])?;
    let x = drop.apply(tape, x)?;
    let y = tape.linear(x, w, b)?;
    tape.reshape(y, &[3])
}
