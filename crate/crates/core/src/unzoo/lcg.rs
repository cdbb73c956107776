//! Truncated linear congruential generator in the style of C `rand()`.
//!
//! State s' = (1103515245·s + 12345) mod 2^31, each call yields s' >> 16 and a
//! UN takes the low byte of four consecutive calls, first call in the most
//! significant byte.
//!
//! Only state bits 16..23 ever reach the output, and the low 24 bits of the
//! state evolve on their own. Seeds equal modulo 2^24 therefore produce the
//! same UN stream forever; recovery reports the smallest seed of the class.

use crate::emv::Un;

pub const MULTIPLIER: u32 = 1_103_515_245;
pub const INCREMENT: u32 = 12_345;
pub const STATE_MASK: u32 = 0x7FFF_FFFF;
/// Bits of state that influence any output.
pub const OBSERVABLE_MASK: u32 = 0x00FF_FFFF;

#[inline]
pub fn step(state: u32) -> u32 {
    MULTIPLIER.wrapping_mul(state).wrapping_add(INCREMENT) & STATE_MASK
}

#[inline]
fn call_byte(state: &mut u32) -> u8 {
    *state = step(*state);
    ((*state >> 16) & 0xFF) as u8
}

/// Draws one UN (four calls) and advances `state`.
pub fn next_un(state: &mut u32) -> Un {
    let mut un = 0u32;
    for _ in 0..4 {
        un = (un << 8) | u32::from(call_byte(state));
    }
    Un(un)
}

pub fn sequence(seed: u32, count: usize) -> Vec<Un> {
    let mut s = seed & STATE_MASK;
    (0..count).map(|_| next_un(&mut s)).collect()
}

fn inverse_mod_2_24(a: u32) -> u32 {
    // Newton iteration; each round doubles the number of correct low bits.
    let mut x = a;
    for _ in 0..5 {
        x = x.wrapping_mul(2u32.wrapping_sub(a.wrapping_mul(x)));
    }
    x & OBSERVABLE_MASK
}

/// All observational seed classes that reproduce `uns` as consecutive draws.
///
/// Each returned seed is the canonical (smallest) representative of its class.
/// Enumerates every 24-bit observable state consistent with the first byte.
pub fn recover_seeds(uns: &[Un]) -> Vec<u32> {
    let Some(first) = uns.first() else {
        return Vec::new();
    };
    let bytes: Vec<u8> = uns.iter().flat_map(|u| u.to_be_bytes()).collect();
    let b0 = u32::from(first.to_be_bytes()[0]);
    let inv = inverse_mod_2_24(MULTIPLIER);
    let mut out = Vec::new();
    for low in 0..(1u32 << 16) {
        let s1 = (b0 << 16) | low;
        let mut s = s1;
        if bytes[1..].iter().all(|&b| call_byte(&mut s) == b) {
            let seed = inv.wrapping_mul(s1.wrapping_sub(INCREMENT)) & OBSERVABLE_MASK;
            out.push(seed);
        }
    }
    out.sort_unstable();
    out
}
