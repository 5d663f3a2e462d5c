//! Shared inputs for the benchmarks.

use protomoco::data::{synth_dataset, SynthConfig};
use protomoco::fewshot::LabeledSample;
use protomoco::{ImageTensor, Philox, Tensor};

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = Philox::new(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal() as f32).collect()).unwrap()
}

/// The desk-scale synthetic set: 200 images in 20 groups, 32x32.
pub fn desk_set() -> Vec<LabeledSample> {
    synth_dataset(&SynthConfig::default(), 42).unwrap().labeled()
}

pub fn images(data: &[LabeledSample]) -> Vec<ImageTensor> {
    data.iter().map(|s| s.image.clone()).collect()
}
