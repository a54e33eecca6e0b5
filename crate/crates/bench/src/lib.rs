//! Shared fixtures for the benchmarks.

use srcodec::synth::phantom;
use srcodec::Image16;

/// Deterministic textured square image of side `side`.
pub fn fixture(side: u32) -> Image16 {
    phantom(side, side, 17)
}
