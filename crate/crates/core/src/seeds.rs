//! Deterministic random streams.
//!
//! Every random quantity is drawn from a ChaCha8 generator keyed by
//! `(master seed, domain tag)` and positioned on the stream given by an index
//! (realization, frame, ...). Results therefore never depend on the order in
//! which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Source amplitudes of the chaotic field.
pub const FIELD: u64 = 0x6669_656c_64;
/// Photon detection and dark counts.
pub const DETECT: u64 = 0x6465_7465_6374;
/// Speckle pool selection in the scene generator.
pub const POOL: u64 = 0x706f_6f6c;

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 256-bit key for a `(master, domain)` pair.
pub fn key(master: u64, domain: u64) -> [u8; 32] {
    let mut state = master ^ domain.rotate_left(32);
    let mut out = [0u8; 32];
    for chunk in out.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    out
}

/// Generator for one indexed stream of a domain.
pub fn stream(master: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key(master, domain));
    rng.set_stream(index);
    rng
}
