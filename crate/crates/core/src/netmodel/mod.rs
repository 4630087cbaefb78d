//! Synthetic network substrate: topology, routing, link-graph structure,
//! traffic and anomaly generation, and measurement sampling.
//!
//! Every generator is a pure function of its inputs and seed. Identifiers are
//! 0-indexed in memory; file codecs convert to 1-indexed.

mod mask;
mod routing;
mod scenario;
mod topology;
mod traffic;

pub use mask::{selection_matrix, SamplingMask};
pub use routing::{all_pairs_flows, gram, laplacian, shortest_path_routing, LinkGraphStructure, RoutingMatrix, SparseBinary};
pub use scenario::{NoiseKind, Observation, ScenarioConfig, TrafficScenario, observe};
pub use topology::{build_topology, Topology};
pub use traffic::{generate_od_traffic, inject_anomalies, AnomalyConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives an independent stream seed from a base seed and a tag.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
