use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{allreduce_time, p2p_time, CollectiveKind, ProfileTables, ProfiledCollective};
use crate::model::HardwareSpec;

const BASE_LATENCY_US: f64 = 8.0;
const NOISE: f64 = 0.05;

/// Synthetic intra-node collective table: the analytical model at
/// `hw.intra_node_bw` plus a fixed launch latency and seeded +-5% noise, over
/// payloads of 1 MiB to 1 GiB. Not measured data.
pub fn synthetic_profile(hw: &HardwareSpec, seed: u64) -> ProfileTables {
    let bw = hw.intra_node_bw.unwrap_or(2.4e12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut collectives = Vec::new();
    let mut groups: Vec<(CollectiveKind, u32)> = vec![(CollectiveKind::SendRecv, 2)];
    let mut n = 2;
    while n <= hw.gpus_per_node {
        groups.push((CollectiveKind::AllReduce, n));
        n *= 2;
    }
    for (kind, n) in groups {
        let mut floor = 0.0f64;
        for shift in 20..=30 {
            let bytes = 1u64 << shift;
            let ideal = match kind {
                CollectiveKind::AllReduce => allreduce_time(bytes, n, bw),
                CollectiveKind::SendRecv => p2p_time(bytes, bw),
            } * 1e6;
            let jitter = 1.0 + rng.gen_range(-NOISE..NOISE);
            let us = ((BASE_LATENCY_US + ideal) * jitter).max(floor);
            // Round to 0.001 us so the file stays readable.
            let us = (us * 1000.0).round() / 1000.0;
            floor = us;
            collectives.push(ProfiledCollective { kind, n, bytes, us });
        }
    }
    ProfileTables {
        ops: Vec::new(),
        collectives,
    }
}
