//! Network definitions: layer specs, the parameterised [`ModelGraph`],
//! preset architectures and conv-weight transfer.

mod graph;
mod io;
mod layer;
mod presets;
mod transfer;

pub use graph::{
    argmax_rows, count_params, infer_shapes, InitConfig, InitScheme, ModelGraph, ModelLoss, ParamVars,
    StepOutput,
};
pub use io::{arch_path, load_model, model_from_parts, save_model};
pub use layer::{LayerKind, LayerSpec};
pub use presets::{build_preset, preset_layers, preset_param_count, ArchPreset, PresetConfig};
pub use transfer::{remove_top_layers, transfer_conv_weights};
