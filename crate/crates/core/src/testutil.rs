//! Helpers shared by the crate's unit tests: synthetic datasets with
//! learnable per-digit templates, miniature architectures, and random
//! inputs shaped like real pairs.

use rand::Rng;

use crate::data::{Dataset, DigitImage, NoisyPair, IMAGE_PIXELS};
use crate::net::Arch;

/// A tiny synthetic dataset with `per_digit` variants of each digit 0-9.
/// Every digit has a distinctive deterministic pixel template, so nets can
/// actually learn to classify these images.
pub fn synthetic_dataset(per_digit: usize) -> Dataset {
    let mut images = Vec::new();
    for copy in 0..per_digit {
        for digit in 0u8..10 {
            let mut pixels = vec![0.0f32; IMAGE_PIXELS];
            for p in 0..40 {
                pixels[(usize::from(digit) * 73 + p * 7 + copy) % IMAGE_PIXELS] = 1.0;
            }
            images.push(DigitImage { pixels, label: digit });
        }
    }
    Dataset::new(images)
}

/// A 20-input miniature of the full topology, small enough for exhaustive
/// finite-difference sweeps.
pub fn mini_arch() -> Arch {
    Arch {
        input: 20,
        hidden1: 10,
        hidden2: 8,
        branch: 6,
    }
}

/// Random input vector with entries in [0, 1.7), the range of noisy pairs.
pub fn random_input<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(0.0..1.7)).collect()
}

/// A pair with random input of the given width and random digit labels.
/// Only label-dependent code paths care that the input is not a real image.
pub fn random_pair<R: Rng>(input_len: usize, rng: &mut R) -> NoisyPair {
    NoisyPair {
        input: random_input(input_len, rng),
        left_label: rng.gen_range(0..10),
        right_label: rng.gen_range(0..10),
    }
}
