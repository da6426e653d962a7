//! Generic spatial-temporal GCN backbone with a linear classifier.

mod forward;
mod model;

pub use forward::{
    backbone_forward, batch_input, classification_loss, classify, forward, gcn_unit,
    infer_batch, running_stats, tcn_unit, update_running_stats, ForwardOutput, Mode, ModelOutputs,
    ParamVars, BN_MOMENTUM,
};
pub use model::{
    AdjacencyMatrix, BackboneConfig, ModelParams, OutputKind, FC_BIAS, FC_WEIGHT, STEM_BETA,
    STEM_GAMMA, STEM_MEAN, STEM_VAR,
};
