use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::model::{Diin, Dropout};
use crate::scalar::Scalar;
use crate::text::{build_batch, ProcessedExample};
use crate::train::config::EvalMode;

/// Steps until the next evaluation given the best dev accuracy so far.
pub fn eval_interval(best_accuracy: f64, mode: EvalMode) -> u64 {
    match mode {
        EvalMode::Fixed { interval } => interval,
        EvalMode::Adaptive if best_accuracy < 0.70 => 1000,
        EvalMode::Adaptive if best_accuracy < 0.80 => 500,
        EvalMode::Adaptive => 250,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and accuracy of raw logit rows against labels.
pub fn score_logits(logits: &[[f64; 3]], labels: &[usize]) -> Result<EvalResult> {
    if logits.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    if logits.len() != labels.len() {
        return Err(Error::invalid(
            "evaluate",
            format!("{} predictions for {} labels", logits.len(), labels.len()),
        ));
    }
    let mut loss = 0.0;
    let mut hits = 0;
    for (row, &y) in logits.iter().zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        hits += usize::from(argmax(row) == y);
    }
    let n = labels.len() as f64;
    Ok(EvalResult {
        loss: loss / n,
        accuracy: hits as f64 / n,
    })
}

/// Logit rows for `examples`, in order, with dropout off.
pub fn predict_logits<T: Scalar>(
    model: &Diin<T>,
    examples: &[ProcessedExample],
    batch_size: usize,
    caps: (usize, usize),
) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&ProcessedExample> = chunk.iter().collect();
        let batch = build_batch(&refs, caps.0, caps.1)?;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        for l in model.forward(&mut tape, &bound, &batch, &mut Dropout::off())? {
            let v = tape.value(l).data();
            out.push([v[0].f64(), v[1].f64(), v[2].f64()]);
        }
    }
    Ok(out)
}

pub fn evaluate<T: Scalar>(
    model: &Diin<T>,
    examples: &[ProcessedExample],
    batch_size: usize,
    caps: (usize, usize),
) -> Result<EvalResult> {
    if examples.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    let logits = predict_logits(model, examples, batch_size, caps)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.label.id()).collect();
    score_logits(&logits, &labels)
}

/// Source of dev-set results for the training loop.
pub trait Evaluator {
    fn evaluate(&mut self, model: &Diin<f32>, step: u64) -> Result<EvalResult>;
}

/// Evaluates on a fixed dataset.
pub struct DatasetEvaluator {
    pub examples: Vec<ProcessedExample>,
    pub batch_size: usize,
    pub caps: (usize, usize),
}

impl Evaluator for DatasetEvaluator {
    fn evaluate(&mut self, model: &Diin<f32>, _step: u64) -> Result<EvalResult> {
        evaluate(model, &self.examples, self.batch_size, self.caps)
    }
}

/// Replays a fixed list of results in order, ignoring the model. Running
/// past the end is an error.
pub struct ScriptedEvaluator {
    script: Vec<EvalResult>,
    next: usize,
}

impl ScriptedEvaluator {
    pub fn new(script: Vec<EvalResult>) -> Self {
        ScriptedEvaluator { script, next: 0 }
    }

    /// Scripted losses with a constant accuracy.
    pub fn losses(losses: &[f64], accuracy: f64) -> Self {
        Self::new(losses.iter().map(|&loss| EvalResult { loss, accuracy }).collect())
    }

    pub fn consumed(&self) -> usize {
        self.next
    }
}

impl Evaluator for ScriptedEvaluator {
    fn evaluate(&mut self, _model: &Diin<f32>, step: u64) -> Result<EvalResult> {
        let r = self
            .script
            .get(self.next)
            .copied()
            .ok_or_else(|| Error::invalid("evaluate", format!("script exhausted at step {step}")))?;
        self.next += 1;
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn intervals() {
        assert_eq!(eval_interval(0.3, EvalMode::Fixed { interval: 500 }), 500);
        assert_eq!(eval_interval(0.60, EvalMode::Adaptive), 1000);
        assert_eq!(eval_interval(0.6999, EvalMode::Adaptive), 1000);
        assert_eq!(eval_interval(0.70, EvalMode::Adaptive), 500);
        assert_eq!(eval_interval(0.7999, EvalMode::Adaptive), 500);
        assert_eq!(eval_interval(0.80, EvalMode::Adaptive), 250);
        assert_eq!(eval_interval(0.82, EvalMode::Adaptive), 250);
    }

    #[test]
    fn counting_accuracy() {
        let one_hot = |k: usize| {
            let mut r = [0.0; 3];
            r[k] = 5.0;
            r
        };
        let r = score_logits(&[one_hot(0), one_hot(1), one_hot(2)], &[0, 1, 1]).unwrap();
        assert_abs_diff_eq!(r.accuracy, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn uniform_output_costs_ln3() {
        let r = score_logits(&[[0.3; 3]; 7], &[0, 1, 2, 0, 1, 2, 2]).unwrap();
        assert_abs_diff_eq!(r.loss, 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.loss, 1.0986, epsilon = 1e-4);
        // All ties resolve to class 0.
        assert_abs_diff_eq!(r.accuracy, 2.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax(&[1.0, 1.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 2.0]), 2);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(score_logits(&[], &[]).is_err());
        let m = Diin::<f32>::new(ModelConfig::toy(), 0).unwrap();
        assert!(evaluate(&m, &[], 4, (8, 8)).is_err());
    }

    #[test]
    fn evaluation_is_deterministic_and_batch_independent() {
        let m = Diin::<f32>::new(ModelConfig::toy(), 3).unwrap();
        let examples = crate::train::data::synthetic_pairs(12, 7, &ModelConfig::toy());
        let a = evaluate(&m, &examples, 5, (48, 48)).unwrap();
        let b = evaluate(&m, &examples, 5, (48, 48)).unwrap();
        let c = evaluate(&m, &examples, 12, (48, 48)).unwrap();
        assert_eq!(a, b);
        assert_abs_diff_eq!(a.loss, c.loss, epsilon = 1e-6);
        assert_eq!(a.accuracy, c.accuracy);
    }

    #[test]
    fn scripted_evaluator_runs_out() {
        let m = Diin::<f32>::new(ModelConfig::toy(), 0).unwrap();
        let mut s = ScriptedEvaluator::losses(&[1.0], 0.5);
        assert_eq!(s.evaluate(&m, 1).unwrap().loss, 1.0);
        assert!(s.evaluate(&m, 2).is_err());
    }
}
