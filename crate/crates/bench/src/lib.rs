//! Shared fixtures for the criterion benches.

use lcm_core::simulate::{gen_responses, gen_truth, SimDesign, Truth};
use lcm_core::{ModelKind, ResponseMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Strong-signal random-effect data set of the given size.
pub fn fixture(n: usize, j: usize, l: usize, seed: u64) -> (Truth, ResponseMatrix) {
    let design = SimDesign::new(n, j, l, ModelKind::Random, seed);
    let truth = gen_truth(&design, &mut design.stream(0)).expect("valid design");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (r, _) = gen_responses(&truth.theta, &truth.membership, n, &mut rng).expect("valid truth");
    (truth, r)
}
