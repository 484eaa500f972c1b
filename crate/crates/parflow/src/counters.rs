//! Operation counters backing the benchmark harness.
//!
//! Two quantities are tracked per thread:
//!
//! * `madds` — scalar multiply-accumulate operations, incremented by the
//!   numerical kernels with exact loop-trip counts (not estimates);
//! * live scalars — the number of `f64` values currently held by the crate's
//!   containers and scratch buffers, with a peak watermark.
//!
//! The trackers are thread-local, so a measurement brackets exactly the work
//! done on the calling thread between [`reset`] and [`snapshot`].

use std::cell::Cell;

thread_local! {
    static MADDS: Cell<u64> = const { Cell::new(0) };
    static LIVE_SCALARS: Cell<u64> = const { Cell::new(0) };
    static PEAK_SCALARS: Cell<u64> = const { Cell::new(0) };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterSnapshot {
    /// Multiply-accumulate count since the last [`reset`].
    pub madds: u64,
    /// Scalars currently alive in tracked buffers.
    pub live_scalars: u64,
    /// Peak of `live_scalars` since the last [`reset`].
    pub peak_scalars: u64,
}

/// Zero the multiply-add count and rebase the peak watermark to the scalars
/// currently alive. Inputs allocated before `reset` still count as live.
pub fn reset() {
    MADDS.with(|c| c.set(0));
    let live = LIVE_SCALARS.with(Cell::get);
    PEAK_SCALARS.with(|c| c.set(live));
}

pub fn snapshot() -> CounterSnapshot {
    CounterSnapshot {
        madds: MADDS.with(Cell::get),
        live_scalars: LIVE_SCALARS.with(Cell::get),
        peak_scalars: PEAK_SCALARS.with(Cell::get),
    }
}

#[inline]
pub(crate) fn add_madds(n: u64) {
    MADDS.with(|c| c.set(c.get() + n));
}

#[inline]
pub(crate) fn track_alloc(n: u64) {
    LIVE_SCALARS.with(|live| {
        let now = live.get() + n;
        live.set(now);
        PEAK_SCALARS.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

#[inline]
pub(crate) fn track_free(n: u64) {
    LIVE_SCALARS.with(|live| live.set(live.get().saturating_sub(n)));
}

/// Heap storage for `f64` containers, reporting its length to the live-scalar
/// tracker for as long as it is alive.
#[derive(Debug)]
pub(crate) struct ScalarBuf {
    data: Vec<f64>,
}

impl ScalarBuf {
    pub(crate) fn zeros(len: usize) -> Self {
        track_alloc(len as u64);
        ScalarBuf { data: vec![0.0; len] }
    }

    pub(crate) fn from_vec(data: Vec<f64>) -> Self {
        track_alloc(data.len() as u64);
        ScalarBuf { data }
    }
}

impl Clone for ScalarBuf {
    fn clone(&self) -> Self {
        ScalarBuf::from_vec(self.data.clone())
    }
}

impl Drop for ScalarBuf {
    fn drop(&mut self) {
        track_free(self.data.len() as u64);
    }
}

impl std::ops::Deref for ScalarBuf {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl std::ops::DerefMut for ScalarBuf {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl PartialEq for ScalarBuf {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_tracks_nested_lifetimes() {
        reset();
        let base = snapshot().live_scalars;
        let a = ScalarBuf::zeros(10);
        {
            let _b = ScalarBuf::zeros(5);
            assert_eq!(snapshot().live_scalars, base + 15);
        }
        assert_eq!(snapshot().live_scalars, base + 10);
        assert!(snapshot().peak_scalars >= base + 15);
        drop(a);
        assert_eq!(snapshot().live_scalars, base);
    }

    #[test]
    fn reset_rebases_peak_to_live() {
        let keep = ScalarBuf::zeros(7);
        {
            let _big = ScalarBuf::zeros(100);
        }
        reset();
        assert_eq!(snapshot().madds, 0);
        assert_eq!(snapshot().peak_scalars, snapshot().live_scalars);
        drop(keep);
    }
}
