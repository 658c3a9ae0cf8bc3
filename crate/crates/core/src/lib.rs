//! Anchor-matching analytics for anchor-based face detection.
//!
//! The crate answers one question from several angles: given a fixed anchor
//! design, which ground-truth faces can ever receive a positive anchor, and
//! how does a variable, aspect-ratio-aware positive threshold change that?
//!
//! - [`geometry`]: boxes, IoU, and the ideal-placement intersection bound.
//! - [`anchors`]: anchor designs and grid generation.
//! - [`matching`]: SAM / WARM / compensation label assignment and the
//!   aspect-ratio sampling domains the thresholds are built on.
//! - [`ams`]: per-face best-achievable IoU and the anchor matching simulation.
//! - [`cropsim`]: seeded random-crop simulator on top of the matcher.
//! - [`rfd`]: structural model of the 4-path receptive field diversity block.
//! - [`corpus`]: WIDER FACE annotation parsing, synthetic corpora, coverage.
//! - [`report`]: JSON / CSV / text-table emitters.
//! - [`rng`]: the seeded stream layout shared by the random generators.

pub mod ams;
pub mod anchors;
pub mod corpus;
pub mod cropsim;
mod error;
pub mod geometry;
pub mod matching;
pub mod report;
pub mod rfd;
pub mod rng;

pub use error::{Error, Result};
pub use geometry::BBox;
