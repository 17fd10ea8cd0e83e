//! File formats, depth encoding, patch sampling and the synthetic scene
//! generator.

mod container;
mod dataset;
mod hha;
mod manifest;
mod netpbm;
mod patches;
mod synth;

pub use container::{
    decode_checkpoint, decode_tensor, encode_checkpoint, encode_tensor, load_checkpoint, load_tensor,
    save_checkpoint, save_tensor,
};
pub use dataset::{
    epoch_order, flip_horizontal, load_paired, load_split, make_batch, normalize, DepthEncoding, ImageSet,
    PatchView, SampleSource,
};
pub use hha::{encode_hha, surface_normal, DEFAULT_GRAVITY};
pub use manifest::{load_manifest, parse_manifest, Manifest, Modality, Record, Split};
pub use netpbm::{
    decode_pgm_depth, decode_ppm, encode_pgm_depth, encode_ppm, load_depth, load_rgb, save_depth, save_rgb,
    DepthMap, Intrinsics,
};
pub use patches::{crop, grid_windows, patch_offsets, sample_patch_grid, Patch};
pub use synth::{
    dataset_scene_seed, generate_synthetic_scene, render_split, write_synthetic_dataset, Layout, SynthConfig, SyntheticScene};
