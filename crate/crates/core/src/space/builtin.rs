use super::{LayerSlot, SourceId, SpaceDescriptor};

pub const BUILTIN_IDS: [&str; 3] = ["nas201", "trans101", "darts"];

const NAS201_OPS: [&str; 5] = ["none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"];
const TRANS101_OPS: [&str; 4] = ["none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3"];
const DARTS_OPS: [&str; 8] = [
    "none",
    "max_pool_3x3",
    "avg_pool_3x3",
    "skip_connect",
    "sep_conv_3x3",
    "sep_conv_5x5",
    "dil_conv_3x3",
    "dil_conv_5x5",
];

/// Six edges of a four-node cell, five operators each.
pub fn nas201() -> SpaceDescriptor {
    SpaceDescriptor::new("nas201", vec![LayerSlot::fixed(&NAS201_OPS); 6]).expect("builtin space")
}

/// NAS201 topology with the pooling operator removed.
pub fn trans101() -> SpaceDescriptor {
    SpaceDescriptor::new("trans101", vec![LayerSlot::fixed(&TRANS101_OPS); 6]).expect("builtin space")
}

/// One DARTS cell: two inputs and four stages of two edges each.
///
/// Stage `k` (0-based) reads from the two cell inputs and from the outputs of
/// the earlier stages, referenced by the index of each stage's last edge.
pub fn darts() -> SpaceDescriptor {
    let mut layers = Vec::with_capacity(8);
    for stage in 0..4u32 {
        let mut sources = vec![SourceId::from("in0"), SourceId::from("in1")];
        sources.extend((0..stage).map(|s| SourceId::new((2 * s + 1).to_string())));
        for _ in 0..2 {
            layers.push(LayerSlot {
                candidate_ops: DARTS_OPS.iter().map(|s| s.to_string()).collect(),
                candidate_sources: sources.clone(),
                source_arity: (1, 1),
                distinct_sources: true,
                group: Some(stage),
            });
        }
    }
    SpaceDescriptor::new("darts", layers).expect("builtin space")
}

pub fn builtin(id: &str) -> Option<SpaceDescriptor> {
    match id {
        "nas201" => Some(nas201()),
        "trans101" => Some(trans101()),
        "darts" => Some(darts()),
        _ => None,
    }
}
