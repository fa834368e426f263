//! Benchmark toolkit for restoring RFI-flagged 21-cm intensity-mapping cubes
//! and measuring how restoration affects foreground removal.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cube;
pub mod clean;
pub mod contamination;
pub mod evaluate;
pub mod restore;
pub mod skysim;

mod fft;
mod linalg;
pub mod rng;

pub use fft::{fft2, ifft2, multipole};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/library.md")]
    mod library {}
    #[doc = include_str!("../../../book/src/restorers.md")]
    mod restorers {}
}
