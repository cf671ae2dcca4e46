//! Per-layer parameter counts computed from a [`ModelConfig`] alone.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::config::{scaled_channels, ModelConfig, NUM_BLOCKS};
use crate::model::Diin;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CensusEntry {
    pub name: String,
    pub kind: &'static str,
    pub params: usize,
    /// Output shape per example; `p`, `h` are sentence lengths and `L` is
    /// a single sentence's length.
    pub out_shape: String,
    /// Names of the parameter tensors this entry owns.
    pub tensors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCensus {
    pub entries: Vec<CensusEntry>,
    pub total_params: usize,
}

fn spatial(halvings: u32) -> String {
    match halvings {
        0 => "pxh".into(),
        k => format!("(p/{0})x(h/{0})", 1 << k),
    }
}

fn linear_names(prefix: &str) -> Vec<String> {
    vec![format!("{prefix}.w"), format!("{prefix}.b")]
}

impl LayerCensus {
    pub fn of(cfg: &ModelConfig) -> LayerCensus {
        let mut entries = Vec::new();
        let mut push = |name: &str, kind: &'static str, params: usize, out_shape: String, tensors: Vec<String>| {
            entries.push(CensusEntry {
                name: name.into(),
                kind,
                params,
                out_shape,
                tensors,
            })
        };
        let (dw, cd, k, f) = (cfg.word_dim, cfg.char_dim, cfg.char_kernel, cfg.char_filters);
        let (df, d) = (cfg.feature_dim(), cfg.encoder_width());

        push(
            "embed/word_table",
            "embedding",
            cfg.word_vocab * dw,
            format!("Lx{dw}"),
            vec!["embed.word_table".into()],
        );
        push(
            "embed/char_table",
            "embedding",
            cfg.char_vocab * cd,
            format!("Lx{}x{cd}", cfg.char_width()),
            vec!["embed.char_table".into()],
        );
        push(
            "embed/char_cnn",
            "char_conv",
            k * cd * f + f,
            format!("Lx{f}"),
            vec!["embed.char_kernel".into(), "embed.char_bias".into()],
        );
        push("embed/features", "concat", 0, format!("Lx{df}"), vec![]);
        push(
            "encoder/projection",
            "linear",
            df * d + d,
            format!("Lx{d}"),
            linear_names("encoder.proj"),
        );
        for i in 0..cfg.highway_layers {
            let mut names = linear_names(&format!("encoder.highway{i}.transform"));
            names.extend(linear_names(&format!("encoder.highway{i}.gate")));
            push(
                &format!("encoder/highway{i}"),
                "highway",
                2 * (d * d + d),
                format!("Lx{d}"),
                names,
            );
        }
        push(
            "encoder/self_attention",
            "attention",
            3 * d,
            format!("Lx{d}"),
            vec!["encoder.attn.w".into()],
        );
        let fuse = ["z", "r", "f"]
            .iter()
            .flat_map(|g| linear_names(&format!("encoder.fuse.{g}")))
            .collect();
        push(
            "encoder/fuse_gate",
            "fuse_gate",
            3 * (2 * d * d + d),
            format!("Lx{d}"),
            fuse,
        );
        push("interaction", "interaction", 0, format!("pxhx{d}"), vec![]);

        let mut c = scaled_channels(d, cfg.first_scale_ratio);
        push(
            "densenet/scale_down",
            "conv1x1_relu",
            d * c + c,
            format!("pxhx{c}"),
            linear_names("densenet.scale_down"),
        );
        for b in 1..=NUM_BLOCKS {
            let mut params = 0;
            let mut names = Vec::new();
            for i in 0..cfg.layers_per_block {
                params += 9 * c * cfg.growth_rate + cfg.growth_rate;
                c += cfg.growth_rate;
                names.extend(linear_names(&format!("densenet.block{b}.layer{i}")));
            }
            push(
                &format!("densenet/block{b}"),
                "dense_block",
                params,
                format!("{}x{c}", spatial(b as u32 - 1)),
                names,
            );
            let next = scaled_channels(c, cfg.transition_ratio);
            push(
                &format!("densenet/transition{b}"),
                "transition",
                c * next + next,
                format!("{}x{next}", spatial(b as u32)),
                linear_names(&format!("densenet.transition{b}")),
            );
            c = next;
        }
        push("densenet/global_max_pool", "global_max_pool", 0, format!("{c}"), vec![]);
        push(
            "classifier",
            "linear_softmax",
            c * 3 + 3,
            "3".into(),
            linear_names("classifier"),
        );

        let total_params = entries.iter().map(|e| e.params).sum();
        LayerCensus { entries, total_params }
    }

    pub fn get(&self, name: &str) -> Option<&CensusEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// `name,kind,params,out_shape` lines followed by `TOTAL,<n>`.
    pub fn machine(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            writeln!(s, "{},{},{},{}", e.name, e.kind, e.params, e.out_shape).unwrap();
        }
        writeln!(s, "TOTAL,{}", self.total_params).unwrap();
        s
    }

    pub fn table(&self) -> String {
        let header = ["layer", "kind", "params", "output"];
        let rows: Vec<[String; 4]> = self
            .entries
            .iter()
            .map(|e| {
                [
                    e.name.clone(),
                    e.kind.to_string(),
                    e.params.to_string(),
                    e.out_shape.clone(),
                ]
            })
            .collect();
        let mut w = header.map(str::len);
        for r in &rows {
            for (wi, c) in w.iter_mut().zip(r) {
                *wi = (*wi).max(c.len());
            }
        }
        let mut s = String::new();
        let line = |s: &mut String, r: [&str; 4]| {
            writeln!(
                s,
                "{:<a$}  {:<b$}  {:>c$}  {}",
                r[0],
                r[1],
                r[2],
                r[3],
                a = w[0],
                b = w[1],
                c = w[2]
            )
            .unwrap();
        };
        line(&mut s, header);
        let rule = w.map(|n| "-".repeat(n));
        line(&mut s, [&rule[0], &rule[1], &rule[2], &rule[3]]);
        for r in &rows {
            line(&mut s, [&r[0], &r[1], &r[2], &r[3]]);
        }
        let total = self.total_params.to_string();
        line(&mut s, ["total", "", &total, ""]);
        s
    }
}

/// Census of a constructed model, cross-checked against its parameter
/// store: every tensor must belong to exactly one entry with matching size.
pub fn count_params<T: Scalar>(model: &Diin<T>) -> Result<LayerCensus> {
    let census = LayerCensus::of(model.config());
    let mut owner: HashMap<&str, &str> = HashMap::new();
    for e in &census.entries {
        let mut sum = 0;
        for t in &e.tensors {
            if owner.insert(t, &e.name).is_some() {
                return Err(Error::invalid("count_params", format!("tensor {t} listed twice")));
            }
            let id = model
                .params()
                .id(t)
                .ok_or_else(|| Error::invalid("count_params", format!("no tensor named {t}")))?;
            sum += model.params().get(id).value.numel();
        }
        if sum != e.params {
            return Err(Error::invalid(
                "count_params",
                format!("{}: formula gives {}, tensors hold {sum}", e.name, e.params),
            ));
        }
    }
    if let Some((_, p)) = model
        .params()
        .iter()
        .find(|(_, p)| !owner.contains_key(p.name.as_str()))
    {
        return Err(Error::invalid(
            "count_params",
            format!("tensor {} is not in the census", p.name),
        ));
    }
    debug_assert_eq!(census.total_params, model.params().total_numel());
    Ok(census)
}
