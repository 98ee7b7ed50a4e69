//! Seeded fixtures shared by the kernel benchmarks.

use quatsign_core::trainer::{synth_dataset, GlossLibrary, SynthSpec};
use quatsign_core::{Dataset, Model, ModelConfig, OutputMode, PoseSequence, Skeleton, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LIBRARY_GLOSSES: usize = 8;

/// Two unrelated motions of the demo skeleton, `frames` long each.
pub fn motion_pair(frames: usize, seed: u64) -> (Skeleton, PoseSequence, PoseSequence) {
    let skeleton = Skeleton::demo();
    let library = GlossLibrary::new(skeleton.clone(), LIBRARY_GLOSSES, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = skeleton.t_pose()[skeleton.root()];
    let mut motion = || {
        let glosses: Vec<u32> = (0..3).map(|_| rng.gen_range(0..LIBRARY_GLOSSES as u32)).collect();
        library
            .motion(&glosses, frames, root + Vec3::new(rng.gen(), rng.gen(), 0.0))
            .expect("library motions are valid")
    };
    let a = motion();
    let b = motion();
    (skeleton, a, b)
}

pub fn dataset(sequences: usize, frames: usize, seed: u64) -> Dataset {
    synth_dataset(&SynthSpec {
        num_sequences: sequences,
        frames_per_sequence: frames,
        seed,
        ..SynthSpec::default()
    })
    .expect("valid synthetic spec")
}

/// A freshly initialized tiny model sized for `data`.
pub fn tiny_model(data: &Dataset, mode: OutputMode, seed: u64) -> Model {
    let mut config = ModelConfig::tiny(data.vocab.len(), data.skeleton.num_joints(), mode);
    config.max_frames = data.max_frames();
    Model::new(config, seed).expect("valid tiny config")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_seeded() {
        let (_, a, b) = motion_pair(12, 4);
        let (_, c, _) = motion_pair(12, 4);
        assert_eq!(a, c);
        assert_ne!(a, b);
        assert_eq!(a.len(), 12);
        let d = dataset(4, 9, 1);
        assert_eq!(d.len(), 4);
        tiny_model(&d, OutputMode::Quaternion, 0);
    }
}
