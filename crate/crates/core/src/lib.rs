//! Two-tier provenance filtering for image collections.
//!
//! Given a query image and an indexed collection, the engine finds the
//! likely host (the image that supplied the query's background) and the
//! donors whose regions were spliced into it:
//!
//! 1. Keypoints of the query are matched against the collection through an
//!    approximate nearest-neighbor index ([`annindex`]) and tallied per image
//!    ([`retrieval::vote`]), producing the tier-1 ranked list.
//! 2. The rank-1 image is registered onto the query ([`geometry`]) and the
//!    difference between the two yields a binary contextual mask
//!    ([`contextmask`]) marking what the host does not explain.
//! 3. Keypoints inside each mask component are re-queried, and the tier-2
//!    lists are fused with tier 1 ([`retrieval::aggregate`]).
//!
//! [`pipeline`] wires the stages together and [`evalharness`] generates
//! synthetic composite corpora with ground truth and measures Recall@k.

pub mod annindex;
pub mod config;
pub mod contextmask;
pub mod error;
pub mod evalharness;
pub mod features;
pub mod geometry;
pub mod imagecore;
pub mod pipeline;
pub mod retrieval;

mod par;

pub use error::{Error, Result};
