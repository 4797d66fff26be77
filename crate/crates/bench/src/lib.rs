//! Shared fixtures for the benchmarks.

use fcot_core::harness::synth::{synth_sequence, Sequence, SynthSpec};
use fcot_core::tensor::{FeatureMap, FilterShape, LinearFilter};

/// Seed-0 translation sequence with `frames` frames.
pub fn sequence(frames: usize) -> Sequence {
    synth_sequence(&SynthSpec { frames, ..SynthSpec::translation(0) }).expect("valid spec")
}

/// Deterministic non-constant map.
pub fn feature_map(channels: usize, height: usize, width: usize, stride: f64) -> FeatureMap {
    FeatureMap::from_fn(channels, height, width, stride, |c, y, x| ((c * 31 + y * 7 + x * 13) % 17) as f64 / 17.0 - 0.5)
}

pub fn filter(shape: FilterShape) -> LinearFilter {
    let w = (0..shape.len()).map(|i| ((i * 7919) % 23) as f64 / 23.0 - 0.5).collect();
    LinearFilter::new(shape, w).expect("length matches shape")
}
