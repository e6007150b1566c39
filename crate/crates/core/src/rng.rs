//! Keyed random substreams and the few distributions the generators need.
//!
//! A substream is a fresh `ChaCha8Rng` whose 256-bit seed is derived from
//! `(seed, key...)` with SplitMix64 mixing, so any `(sample, model)` cell can be
//! regenerated independently of iteration order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

/// Identifier recorded in bundle metadata.
pub const PRNG_ID: &str = "chacha8/splitmix64-keyed-v1";

pub type StreamRng = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic substream for `(seed, keys)`.
pub fn substream(seed: u64, keys: &[u64]) -> StreamRng {
    let mut state = seed;
    let mut h = splitmix64(&mut state);
    for &k in keys {
        state ^= k.wrapping_mul(0xD6E8_FEB8_6659_FD93).wrapping_add(h);
        h = splitmix64(&mut state);
    }
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// `ln G` for `G ~ Gamma(shape, 1)`, stable for tiny shapes where `G`
/// itself underflows (uses `G_a = G_{a+1} · U^{1/a}`).
pub fn ln_gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("shape checked positive");
        g.sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("shape checked positive");
        let u: f64 = rng.random::<f64>();
        // u in [0, 1); map 0 to the smallest positive value
        let u = if u == 0.0 { f64::MIN_POSITIVE } else { u };
        g.sample(rng).ln() + u.ln() / shape
    }
}

/// Draw from `Dirichlet(alpha)` into `out`.
pub fn dirichlet_into<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64], out: &mut [f64]) {
    for (o, &a) in out.iter_mut().zip(alpha) {
        *o = ln_gamma_variate(rng, a);
    }
    let lse = crate::numeric::log_sum_exp(out);
    for o in out.iter_mut() {
        *o = (*o - lse).exp();
    }
    let z = crate::numeric::pairwise_sum(out);
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Inverse-CDF draw from a categorical distribution given by `probs`.
pub fn categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative total; take the last nonzero class
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
