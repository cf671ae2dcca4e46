//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::tape::Fault;
use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates probed per parameter tensor (all of them when smaller).
    pub samples: usize,
    pub seed: u64,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-6,
            tol: 1e-5,
            samples: 20,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct ParamReport {
    pub name: String,
    pub probes: Vec<Probe>,
    pub max_rel_error: f64,
    /// Set when a probe produced a non-finite gradient.
    pub non_finite: Option<usize>,
    /// Coordinates skipped because the finite difference crossed a kink.
    pub kinks: usize,
}

impl ParamReport {
    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub block: String,
    pub params: Vec<ParamReport>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failing().next().is_none()
    }

    /// Tensors with an error above tolerance, a non-finite gradient, or no
    /// usable probe at all.
    pub fn failing(&self) -> impl Iterator<Item = &ParamReport> {
        self.params.iter().filter(move |p| {
            p.non_finite.is_some() || p.max_rel_error >= self.tol || (p.probes.is_empty() && p.kinks > 0)
        })
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-12)
}

/// Candidate coordinates in probing order: a shuffled run of those with a
/// nonzero analytic gradient (sparse gradients such as embedding tables would
/// otherwise be probed almost only at trivially-zero entries), then a
/// shuffled run of the rest. Returns the two runs with how many successful
/// probes to take from each.
fn probe_order(grad: &[f64], samples: usize, rng: &mut ChaCha8Rng) -> [(Vec<usize>, usize); 2] {
    let (mut nonzero, mut zero): (Vec<usize>, Vec<usize>) = (0..grad.len()).partition(|&i| grad[i] != 0.0);
    nonzero.shuffle(rng);
    zero.shuffle(rng);
    if grad.len() <= samples {
        let (a, b) = (nonzero.len(), zero.len());
        return [(nonzero, a), (zero, b)];
    }
    let want_nz = samples.min(nonzero.len());
    let want_z = (samples / 4).max(1).min(zero.len());
    [(nonzero, want_nz), (zero, want_z)]
}

/// One-sided slopes that disagree mean the probe straddles a kink (ReLU or
/// a max switching its argument), where no derivative exists to compare.
fn straddles_kink(forward: f64, backward: f64) -> bool {
    (forward - backward).abs() > (1e-3 * forward.abs().max(backward.abs())).max(1e-7)
}

/// Compare analytic and numeric gradients of the scalar built by `loss`
/// with respect to each parameter in `check`.
pub fn grad_check<F>(
    block: &str,
    store: &mut ParamStore<f64>,
    check: &[ParamId],
    loss: F,
    cfg: &GradCheckConfig,
) -> Result<GradReport>
where
    F: for<'p> Fn(&mut Tape<'p, f64>, &'p ParamStore<f64>) -> Result<Var>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        if let Some(f) = cfg.fault {
            tape.inject_fault(f);
        }
        let out = loss(&mut tape, store)?;
        let grads = tape.backward(out)?;
        let mut per_param: Vec<Vec<f64>> = check.iter().map(|&id| vec![0.0; store.get(id).value.numel()]).collect();
        for (id, g) in tape.param_grads(&grads) {
            if let Some(slot) = check.iter().position(|&c| c == id) {
                for (a, &b) in per_param[slot].iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        per_param
    };

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let out = loss(&mut tape, store)?;
        Ok(tape.value(out).item())
    };

    let base = eval(store)?;
    // Smallest slope a central difference can resolve: a few ulps of the
    // loss divided by the step. Below it both estimates are zero.
    let resolution = 8.0 * base.abs().max(1.0) * f64::EPSILON / (2.0 * cfg.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = Vec::with_capacity(check.len());
    for (slot, &id) in check.iter().enumerate() {
        let mut report = ParamReport {
            name: store.get(id).name.clone(),
            probes: Vec::new(),
            max_rel_error: 0.0,
            non_finite: None,
            kinks: 0,
        };
        for (pool, want) in probe_order(&analytic[slot], cfg.samples, &mut rng) {
            let mut taken = 0;
            for k in pool {
                if taken == want {
                    break;
                }
                let original = store.get(id).value.data()[k];
                store.get_mut(id).value.data_mut()[k] = original + cfg.eps;
                let plus = eval(store);
                store.get_mut(id).value.data_mut()[k] = original - cfg.eps;
                let minus = eval(store);
                store.get_mut(id).value.data_mut()[k] = original;
                let (plus, minus) = (plus?, minus?);
                let numeric = (plus - minus) / (2.0 * cfg.eps);
                let a = analytic[slot][k];
                if !a.is_finite() || !numeric.is_finite() {
                    report.non_finite.get_or_insert(k);
                    taken += 1;
                    continue;
                }
                if straddles_kink((plus - base) / cfg.eps, (base - minus) / cfg.eps) {
                    report.kinks += 1;
                    continue;
                }
                let rel_error = if a.abs().max(numeric.abs()) < resolution {
                    0.0
                } else {
                    relative_error(a, numeric)
                };
                report.max_rel_error = report.max_rel_error.max(rel_error);
                report.probes.push(Probe {
                    index: k,
                    analytic: a,
                    numeric,
                    rel_error,
                });
                taken += 1;
            }
        }
        report.probes.sort_by_key(|p| p.index);
        params.push(report);
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradReport {
        block: block.to_string(),
        params,
        max_rel_error,
        tol: cfg.tol,
    })
}
