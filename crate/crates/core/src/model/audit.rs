//! Structural checks over a recorded forward graph.

use std::collections::HashMap;

use crate::autograd::{NodeInfo, OpKind, Tape};
use crate::error::Result;
use crate::model::{Diin, Dropout, NUM_BLOCKS};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructureReport {
    pub dense_blocks: usize,
    pub transitions: usize,
    pub batch_norm_nodes: usize,
    pub avg_pool_nodes: usize,
    pub convs: usize,
    pub convs_without_bias: usize,
    /// Non-transition convs whose only consumer is not a ReLU.
    pub convs_missing_relu: usize,
    pub transition_convs: usize,
    /// Transition convs feeding anything other than a max-pool.
    pub transition_convs_activated: usize,
    pub global_pool_after_last_block: bool,
}

impl StructureReport {
    /// `(description, passed)` for each structural requirement.
    pub fn checks(&self) -> Vec<(&'static str, bool)> {
        vec![
            ("exactly 3 dense blocks", self.dense_blocks == NUM_BLOCKS),
            ("exactly 3 transition layers", self.transitions == NUM_BLOCKS),
            ("no batch normalization", self.batch_norm_nodes == 0),
            ("no average pooling", self.avg_pool_nodes == 0),
            ("every conv has a bias", self.convs > 0 && self.convs_without_bias == 0),
            ("ReLU after every non-transition conv", self.convs_missing_relu == 0),
            (
                "transition convs have no activation",
                self.transition_convs == NUM_BLOCKS && self.transition_convs_activated == 0,
            ),
            (
                "global max-pool after the last block",
                self.global_pool_after_last_block,
            ),
        ]
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(|(_, ok)| *ok)
    }
}

fn block_index(scope: &str, prefix: &str) -> Option<usize> {
    scope
        .split('/')
        .find_map(|part| part.strip_prefix(prefix))
        .and_then(|n| n.parse().ok())
}

pub fn audit_structure<T: Scalar>(tape: &Tape<'_, T>) -> StructureReport {
    let nodes: Vec<NodeInfo<'_>> = tape.nodes().collect();
    let mut consumers: HashMap<usize, Vec<usize>> = HashMap::new();
    for n in &nodes {
        for &i in &n.inputs {
            consumers.entry(i).or_default().push(n.index);
        }
    }
    let consumer_kinds = |i: usize| -> Vec<OpKind> {
        consumers
            .get(&i)
            .map(|cs| cs.iter().map(|&c| nodes[c].kind).collect())
            .unwrap_or_default()
    };

    let mut blocks = std::collections::BTreeSet::new();
    let mut transitions = std::collections::BTreeSet::new();
    let mut r = StructureReport {
        dense_blocks: 0,
        transitions: 0,
        batch_norm_nodes: 0,
        avg_pool_nodes: 0,
        convs: 0,
        convs_without_bias: 0,
        convs_missing_relu: 0,
        transition_convs: 0,
        transition_convs_activated: 0,
        global_pool_after_last_block: false,
    };
    for n in &nodes {
        if let Some(b) = block_index(n.scope, "dense_block") {
            blocks.insert(b);
        }
        if let Some(t) = block_index(n.scope, "transition") {
            transitions.insert(t);
        }
        let name = format!("{:?}", n.kind).to_lowercase();
        if name.contains("norm") {
            r.batch_norm_nodes += 1;
        }
        if name.contains("avg") || name.contains("mean") {
            r.avg_pool_nodes += 1;
        }
        if n.kind != OpKind::Conv2d {
            continue;
        }
        r.convs += 1;
        if n.inputs.len() < 3 {
            r.convs_without_bias += 1;
        }
        let after = consumer_kinds(n.index);
        if block_index(n.scope, "transition").is_some() {
            r.transition_convs += 1;
            if after != [OpKind::MaxPool2d] {
                r.transition_convs_activated += 1;
            }
        } else if after != [OpKind::Relu] {
            r.convs_missing_relu += 1;
        }
    }
    r.dense_blocks = blocks.len();
    r.transitions = transitions.len();

    let last = transitions.iter().next_back().copied();
    r.global_pool_after_last_block = nodes.iter().any(|n| {
        n.kind == OpKind::GlobalMaxPool
            && n.inputs.iter().all(|&i| {
                let src = &nodes[i];
                src.kind == OpKind::MaxPool2d && block_index(src.scope, "transition") == last && last.is_some()
            })
    }) && nodes.iter().filter(|n| n.kind == OpKind::GlobalMaxPool).all(|n| {
        n.inputs
            .iter()
            .all(|&i| block_index(nodes[i].scope, "transition") == last)
    });
    r
}

/// Record one eval-mode forward pass on a probe example and audit it.
pub fn audit_model<T: Scalar>(model: &Diin<T>) -> Result<StructureReport> {
    let batch = model.probe_batch(1, 9, 8)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    model.forward(&mut tape, &bound, &batch, &mut Dropout::off())?;
    Ok(audit_structure(&tape))
}
