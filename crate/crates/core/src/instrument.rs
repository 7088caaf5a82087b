//! Thread-local execution probes.
//!
//! Two independent probes live here:
//!
//! * an operation counter. While [`count_ops`] runs its closure, convolution
//!   kernels switch to a reference loop that visits every kernel tap
//!   (including taps that land in zero padding) and tallies each multiply and
//!   each accumulate. Elementwise operators (add, concat, pooling, relu,
//!   projection) tally one op per output element. The cost analyzer must agree
//!   with these tallies exactly.
//! * a branch signature. While [`branch_signature`] runs its closure, every
//!   piecewise operator (relu sign masks, pooling winners, projection winners)
//!   folds its discrete decision into a hash. The gradient checker uses it to
//!   reject finite-difference probes that straddle a kink.

use std::cell::{Cell, RefCell};
use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

/// Tallies collected by [`count_ops`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub multiplies: u64,
    pub adds: u64,
    /// One per output element of add/concat/pool/relu/projection.
    pub elementwise: u64,
}

impl OpCounts {
    /// FLOPs under the 2·MAC convention (bias adds and elementwise ops included).
    pub fn flops(&self) -> u64 {
        self.multiplies + self.adds + self.elementwise
    }
}

thread_local! {
    static COUNTS: Cell<Option<OpCounts>> = const { Cell::new(None) };
    static SIGNATURE: RefCell<Option<DefaultHasher>> = const { RefCell::new(None) };
}

/// Runs `f` with the operation counter active and returns its tallies.
pub fn count_ops<T>(f: impl FnOnce() -> T) -> (T, OpCounts) {
    let previous = COUNTS.with(|c| c.replace(Some(OpCounts::default())));
    let out = f();
    let counts = COUNTS.with(|c| c.replace(previous)).unwrap_or_default();
    (out, counts)
}

pub(crate) fn counting() -> bool {
    COUNTS.with(|c| c.get().is_some())
}

pub(crate) fn tally(multiplies: u64, adds: u64) {
    COUNTS.with(|c| {
        if let Some(mut counts) = c.get() {
            counts.multiplies += multiplies;
            counts.adds += adds;
            c.set(Some(counts));
        }
    });
}

pub(crate) fn tally_elementwise(n: usize) {
    COUNTS.with(|c| {
        if let Some(mut counts) = c.get() {
            counts.elementwise += n as u64;
            c.set(Some(counts));
        }
    });
}

/// Runs `f` and returns a hash of every discrete branch decision taken.
pub fn branch_signature<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let previous = SIGNATURE.with(|s| s.replace(Some(DefaultHasher::new())));
    let out = f();
    let sig = SIGNATURE.with(|s| s.replace(previous)).map(|h| h.finish()).unwrap_or(0);
    (out, sig)
}

pub(crate) fn recording_branches() -> bool {
    SIGNATURE.with(|s| s.borrow().is_some())
}

pub(crate) fn record_branches<I: IntoIterator<Item = u64>>(decisions: I) {
    SIGNATURE.with(|s| {
        if let Some(h) = s.borrow_mut().as_mut() {
            for d in decisions {
                h.write_u64(d);
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counters_are_scoped() {
        let ((), outer) = count_ops(|| {
            tally(2, 3);
            let ((), inner) = count_ops(|| tally_elementwise(5));
            assert_eq!(inner.elementwise, 5);
        });
        assert_eq!(outer.multiplies, 2);
        assert_eq!(outer.adds, 3);
        assert_eq!(outer.elementwise, 0);
        assert!(!counting());
    }

    #[test]
    fn signature_tracks_decisions() {
        let (_, a) = branch_signature(|| record_branches([1, 0, 1]));
        let (_, b) = branch_signature(|| record_branches([1, 0, 1]));
        let (_, c) = branch_signature(|| record_branches([1, 1, 1]));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
