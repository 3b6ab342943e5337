//! Opt-in fingerprint of the piecewise branches taken during a forward pass.
//!
//! While active, every ReLU and every loss clamp folds its branch choices
//! into a hash. Two evaluations with equal fingerprints took the same smooth
//! piece of the function, which is what a finite-difference check needs.

use std::cell::Cell;

thread_local! {
    static STATE: Cell<Option<u64>> = const { Cell::new(None) };
}

const PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn start() {
    STATE.with(|s| s.set(Some(0xcbf2_9ce4_8422_2325)));
}

/// Stops recording and returns the fingerprint, or `None` if not started.
pub fn finish() -> Option<u64> {
    STATE.with(|s| s.replace(None))
}

pub(crate) fn record(bits: impl Iterator<Item = bool>) {
    STATE.with(|s| {
        if let Some(mut h) = s.get() {
            for b in bits {
                h = (h ^ b as u64).wrapping_mul(PRIME);
            }
            s.set(Some(h));
        }
    });
}
