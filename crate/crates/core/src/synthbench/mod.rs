//! Synthetic benchmark: procedural scenes, simulated sensor color
//! differences, pose perturbation, error metrics and the trial harness.

pub mod effects;
pub mod harness;
pub mod metrics;
pub mod scene;

pub use effects::{apply_color_effect_params, apply_color_effects, ColorEffectParams};
pub use harness::{run_benchmark, BenchmarkReport, BenchmarkSpec, ModeSummary, TrialResult};
pub use metrics::{perturb_pose, rotation_error, translation_error, PerturbationSpec};
pub use scene::{generate_scene, Scene, SceneGeometry, SceneSpec, TextureProfile};
