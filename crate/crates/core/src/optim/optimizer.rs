use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Sgd,
    Adadelta,
    Adam,
}

impl OptimKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimKind::Sgd => "sgd",
            OptimKind::Adadelta => "adadelta",
            OptimKind::Adam => "adam",
        }
    }

    fn slot_names(self) -> &'static [&'static str] {
        match self {
            OptimKind::Sgd => &[],
            OptimKind::Adadelta => &["acc_grad", "acc_delta"],
            OptimKind::Adam => &["m", "v"],
        }
    }
}

impl fmt::Display for OptimKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimKind::Sgd),
            "adadelta" => Ok(OptimKind::Adadelta),
            "adam" => Ok(OptimKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdadeltaHyper {
    pub rho: f64,
    pub eps: f64,
}

impl Default for AdadeltaHyper {
    fn default() -> Self {
        AdadeltaHyper { rho: 0.95, eps: 1e-6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer of one kind with per-parameter slot arrays shaped like the
/// parameters. Slots are stored as f32 so that a checkpoint holds them
/// exactly; the arithmetic itself runs in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimKind,
    pub lr: f64,
    pub adadelta: AdadeltaHyper,
    pub adam: AdamHyper,
    /// Updates applied since the last switch (Adam's bias correction).
    pub steps: u64,
    /// `slots[param][k]` for the kind's k-th slot.
    slots: Vec<Vec<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
    names: Vec<String>,
}

impl Optimizer {
    pub fn new<T: Scalar>(kind: OptimKind, lr: f64, store: &ParamStore<T>) -> Self {
        let mut opt = Optimizer {
            kind,
            lr,
            adadelta: AdadeltaHyper::default(),
            adam: AdamHyper::default(),
            steps: 0,
            slots: Vec::new(),
            shapes: store.iter().map(|(_, p)| p.value.shape().to_vec()).collect(),
            names: store.iter().map(|(_, p)| p.name.clone()).collect(),
        };
        opt.reset_slots();
        opt
    }

    fn reset_slots(&mut self) {
        let n = self.kind.slot_names().len();
        self.slots = self
            .shapes
            .iter()
            .map(|s| vec![vec![0.0; s.iter().product()]; n])
            .collect();
        self.steps = 0;
    }

    /// Change kind and learning rate; slots start again from zero.
    pub fn switch(&mut self, kind: OptimKind, lr: f64) {
        self.kind = kind;
        self.lr = lr;
        self.reset_slots();
    }

    /// Apply one update from the gradients stored in `store`, with the
    /// coupled L2 term `λ·w` added to every gradient first. Frozen rows are
    /// left untouched. Parameters with no gradient are treated as having a
    /// zero data gradient (they still decay).
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, lambda: f64) -> Result<()> {
        if store.len() != self.shapes.len() {
            return Err(Error::invalid("optimizer", "parameter set changed since construction"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(
                "optimizer",
                format!("L2 coefficient {lambda} must be finite and >= 0"),
            ));
        }
        for p in store.iter_mut() {
            if let Some(g) = &p.grad {
                if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        param: p.name.clone(),
                        index: i,
                    });
                }
            }
        }
        self.steps += 1;
        let t = self.steps as f64;
        let (lr, kind, dd, am) = (self.lr, self.kind, self.adadelta, self.adam);
        for (p, slots) in store.iter_mut().zip(&mut self.slots) {
            let rows = p.value.shape()[0];
            let width = p.value.numel() / rows;
            let mut frozen = vec![false; rows];
            for &r in &p.frozen_rows {
                frozen[r] = true;
            }
            let grad = p.grad.as_ref().map(Tensor::data);
            let value = p.value.data_mut();
            for i in 0..value.len() {
                if frozen[i / width] {
                    continue;
                }
                let w = value[i].f64();
                let g = grad.map_or(0.0, |g| g[i].f64()) + lambda * w;
                let new = match kind {
                    OptimKind::Sgd => w - lr * g,
                    OptimKind::Adadelta => {
                        let (acc_g, acc_d) = split2(slots);
                        let eg = dd.rho * acc_g[i] as f64 + (1.0 - dd.rho) * g * g;
                        let delta = -((acc_d[i] as f64 + dd.eps).sqrt() / (eg + dd.eps).sqrt()) * g;
                        acc_g[i] = eg as f32;
                        acc_d[i] = (dd.rho * acc_d[i] as f64 + (1.0 - dd.rho) * delta * delta) as f32;
                        w + lr * delta
                    }
                    OptimKind::Adam => {
                        let (m, v) = split2(slots);
                        let mi = am.beta1 * m[i] as f64 + (1.0 - am.beta1) * g;
                        let vi = am.beta2 * v[i] as f64 + (1.0 - am.beta2) * g * g;
                        m[i] = mi as f32;
                        v[i] = vi as f32;
                        let m_hat = mi / (1.0 - am.beta1.powf(t));
                        let v_hat = vi / (1.0 - am.beta2.powf(t));
                        w - lr * m_hat / (v_hat.sqrt() + am.eps)
                    }
                };
                value[i] = T::of(new);
            }
        }
        Ok(())
    }

    /// Slot arrays as named tensors `optim/<param>/<slot>`.
    pub fn slot_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let names = self.kind.slot_names();
        let mut out = Vec::new();
        for ((pname, shape), slots) in self.names.iter().zip(&self.shapes).zip(&self.slots) {
            for (sname, data) in names.iter().zip(slots) {
                let t = Tensor::new(shape, data.clone()).expect("slot mirrors its parameter");
                out.push((format!("optim/{pname}/{sname}"), t));
            }
        }
        out
    }

    /// Restore slots written by [`Optimizer::slot_tensors`].
    pub fn load_slots(&mut self, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
        let names = self.kind.slot_names();
        let expected = self.names.len() * names.len();
        if tensors.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} optimizer slot tensors for {}, found {}",
                self.kind,
                tensors.len()
            )));
        }
        let mut it = tensors.iter();
        for ((pname, shape), slots) in self.names.iter().zip(&self.shapes).zip(&mut self.slots) {
            for (sname, slot) in names.iter().zip(slots.iter_mut()) {
                let (name, t) = it.next().expect("count checked");
                let want = format!("optim/{pname}/{sname}");
                if *name != want || t.shape() != shape.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer slot `{name}` {:?} does not match `{want}` {shape:?}",
                        t.shape()
                    )));
                }
                slot.copy_from_slice(t.data());
            }
        }
        Ok(())
    }

    /// Smallest value across all second-moment style slots (0 when none).
    pub fn min_second_moment(&self) -> f64 {
        let idx: &[usize] = match self.kind {
            OptimKind::Sgd => &[],
            OptimKind::Adadelta => &[0, 1],
            OptimKind::Adam => &[1],
        };
        self.slots
            .iter()
            .flat_map(|s| idx.iter().flat_map(move |&k| s[k].iter().map(|&v| v as f64)))
            .fold(0.0, f64::min)
    }
}

fn split2(slots: &mut [Vec<f32>]) -> (&mut [f32], &mut [f32]) {
    let (a, b) = slots.split_at_mut(1);
    (&mut a[0], &mut b[0])
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    fn store(values: &[f64], grads: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s
            .add("w", Tensor::new(&[values.len()], values.to_vec()).unwrap())
            .unwrap();
        s.accumulate_grad(id, grads);
        s
    }

    fn w(s: &ParamStore<f64>) -> Vec<f64> {
        s.iter().next().unwrap().1.value.data().to_vec()
    }

    #[test]
    fn sgd_step() {
        let mut s = store(&[1.0], &[0.2]);
        let mut o = Optimizer::new(OptimKind::Sgd, 0.1, &s);
        o.step(&mut s, 0.0).unwrap();
        assert_abs_diff_eq!(w(&s)[0], 0.98, epsilon = 1e-15);
    }

    #[test]
    fn sgd_with_l2() {
        let mut s = store(&[2.0], &[0.0]);
        let mut o = Optimizer::new(OptimKind::Sgd, 0.5, &s);
        o.step(&mut s, 0.1).unwrap();
        assert_abs_diff_eq!(w(&s)[0], 2.0 - 0.5 * 0.2, epsilon = 1e-15);
    }

    #[test]
    fn adadelta_first_step() {
        let mut s = store(&[0.0], &[1.0]);
        let mut o = Optimizer::new(OptimKind::Adadelta, 0.5, &s);
        o.step(&mut s, 0.0).unwrap();
        let delta = -(1e-6f64).sqrt() / (0.05f64 + 1e-6).sqrt();
        assert_abs_diff_eq!(delta, -0.004472, epsilon = 1e-6);
        assert_abs_diff_eq!(w(&s)[0], 0.5 * delta, epsilon = 1e-15);
        assert_abs_diff_eq!(w(&s)[0], -0.002236, epsilon = 1e-6);
    }

    #[test]
    fn adam_first_step_is_a_sign_step() {
        for g in [1e-3, 0.7, -42.0] {
            let mut s = store(&[0.3], &[g]);
            let mut o = Optimizer::new(OptimKind::Adam, 1e-3, &s);
            o.step(&mut s, 0.0).unwrap();
            assert_abs_diff_eq!((w(&s)[0] - 0.3).abs(), 1e-3, epsilon = 1e-7);
            assert!((w(&s)[0] - 0.3) * g < 0.0);
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut s = store(&[1.0, 2.0], &[0.0, f64::NAN]);
        let mut o = Optimizer::new(OptimKind::Sgd, 0.1, &s);
        match o.step(&mut s, 0.0) {
            Err(Error::NonFinite { param, index }) => {
                assert_eq!(param, "w");
                assert_eq!(index, 1);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(w(&s), [1.0, 2.0]);
    }

    #[test]
    fn frozen_rows_never_move() {
        let mut s = ParamStore::new();
        let id = s
            .add("table", Tensor::new(&[2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap())
            .unwrap();
        s.freeze_row(id, 0);
        s.accumulate_grad(id, &[5.0, 5.0, 1.0, 1.0]);
        for kind in [OptimKind::Sgd, OptimKind::Adadelta, OptimKind::Adam] {
            let mut s = s.clone();
            let mut o = Optimizer::new(kind, 0.1, &s);
            for _ in 0..3 {
                o.step(&mut s, 1e-2).unwrap();
            }
            let v = s.get(id).value.data();
            assert_eq!(&v[..2], &[0.0, 0.0]);
            assert!(v[2] < 1.0);
        }
    }

    #[test]
    fn switch_resets_slots() {
        let mut s = store(&[1.0, -1.0], &[0.5, 0.5]);
        let mut o = Optimizer::new(OptimKind::Adam, 1e-3, &s);
        o.step(&mut s, 0.0).unwrap();
        assert!(o.slot_tensors().iter().any(|(_, t)| t.data().iter().any(|&v| v != 0.0)));
        o.switch(OptimKind::Adadelta, 0.5);
        assert_eq!(o.steps, 0);
        let slots = o.slot_tensors();
        assert_eq!(slots.len(), 2);
        assert!(slots.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
        assert_eq!(slots[0].0, "optim/w/acc_grad");
    }

    #[test]
    fn slot_roundtrip() {
        let mut s = store(&[1.0, -1.0], &[0.5, 0.25]);
        let mut o = Optimizer::new(OptimKind::Adam, 1e-3, &s);
        o.step(&mut s, 0.0).unwrap();
        let mut fresh = Optimizer::new(OptimKind::Adam, 1e-3, &s);
        fresh.steps = o.steps;
        fresh.load_slots(&o.slot_tensors()).unwrap();
        assert_eq!(fresh, o);
        assert!(fresh.load_slots(&o.slot_tensors()[..1]).is_err());
    }

    #[test]
    fn sgd_descends_a_quadratic() {
        // f(w) = ½ Σ a_i w_i², gradient a ⊙ w.
        let a = [1.0, 3.0, 0.5];
        let mut s = store(&[1.0, -2.0, 0.7], &[0.0; 3]);
        let mut o = Optimizer::new(OptimKind::Sgd, 0.1, &s);
        let f = |w: &[f64]| 0.5 * w.iter().zip(&a).map(|(w, a)| a * w * w).sum::<f64>();
        let mut prev = f(&w(&s));
        for _ in 0..20 {
            let g: Vec<f64> = w(&s).iter().zip(&a).map(|(w, a)| a * w).collect();
            s.zero_grads();
            let id = s.ids().next().unwrap();
            s.accumulate_grad(id, &g);
            o.step(&mut s, 0.0).unwrap();
            let now = f(&w(&s));
            assert!(now < prev);
            prev = now;
        }
    }
}
