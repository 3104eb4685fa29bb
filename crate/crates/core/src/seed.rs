//! Hierarchical seed derivation. Child seeds depend only on the parent seed
//! and the path of labels, never on scheduling order.

/// 64-bit FNV-1a, stable across platforms and processes.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(base), |acc, p| splitmix(acc ^ splitmix(*p)))
}

/// Seed for one simulated session: run → shop → agent → theme.
pub fn session_seed(run_seed: u64, shop_id: &str, agent_index: usize, theme_id: &str) -> u64 {
    derive_seed(run_seed, &[hash_str(shop_id), agent_index as u64, hash_str(theme_id)])
}
