//! Deterministic seed derivation.
//!
//! All randomness in the toolkit flows from a single user seed. Sub-streams
//! (per stage, per layer, per probe) are derived with splitmix64 so that the
//! derivation is order-independent: probe `j` gets the same RNG whether the
//! probes run sequentially or in parallel.

/// splitmix64 finalizer. Good avalanche, cheap, stable across platforms.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `(base, tag, index)`.
pub fn derive(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ tag).wrapping_add(index))
}

/// Stage tags used by the CLI and the library defaults.
pub mod tags {
    pub const PROFILE: u64 = 0x7072_6f66; // "prof"
    pub const TRAIN: u64 = 0x7472_6169; // "trai"
    pub const SEARCH: u64 = 0x7365_6172; // "sear"
    pub const DATA: u64 = 0x6461_7461; // "data"
    pub const INIT: u64 = 0x696e_6974; // "init"
    pub const PROBE: u64 = 0x7072_6f62; // "prob"
}
