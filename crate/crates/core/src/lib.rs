//! Low-density lattice codes (LDLC) with a Gaussian-mixture belief
//! propagation decoder.
//!
//! * [`gmix`]: scalar Gaussian mixtures, the squared-difference metric,
//!   moment matching and greedy mixture reduction.
//! * [`lattice`]: magic-square parity matrices, encoding and rounding.
//! * [`decoder`]: check/variable node rules and the iterative decoder.
//! * [`sim`]: AWGN Monte Carlo harness and the uncoded baseline.
//! * [`oracle`]: quadrature, grid convolution, dense linear algebra and
//!   exhaustive ML decoding, used to check everything above.
//! * [`selftest`]: oracle cross-checks bundled for the command line.
//!
//! ```
//! use ldlc::decoder::{decode, DecoderParams};
//! use ldlc::lattice::MagicSquareH;
//!
//! let h = MagicSquareH::generate(12, 3, 7).unwrap();
//! let b = vec![1, 0, -1, 2, 0, 0, 1, -2, 0, 1, 0, -1];
//! let x = h.encode(&b).unwrap().coords;
//! let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + 0.01 * ((i % 3) as f64 - 1.0)).collect();
//! let result = decode(&y, &h, 0.01, &DecoderParams::default()).unwrap();
//! assert_eq!(result.b_hat, b);
//! ```

pub mod decoder;
pub mod gmix;
pub mod lattice;
pub mod oracle;
pub mod selftest;
pub mod sim;

pub use decoder::{decode, DecodeResult, DecoderParams};
pub use gmix::{GaussianComponent, GaussianMixture, ReductionParams};
pub use lattice::MagicSquareH;

// Runs the code listings of the guide under `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/mixtures.md")]
    mod mixtures {}
    #[doc = include_str!("../../../book/src/reduction.md")]
    mod reduction {}
    #[doc = include_str!("../../../book/src/lattices.md")]
    mod lattices {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
