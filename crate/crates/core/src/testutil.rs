use proptest::prelude::*;
use rand::SeedableRng;

use crate::chart::Chart;
use crate::synth::random_chart;

pub fn arb_chart() -> impl Strategy<Value = Chart> {
    any::<u64>().prop_map(|seed| random_chart(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed)))
}
