// Float intrinsics that `core` does not provide. Routed through libm in every
// build so std and no_std builds produce identical bits.

pub(crate) use libm::{cos, exp, log, pow, sin, sqrt};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}
