//! Unsupervised LiDAR change detection.
//!
//! Given a prior point-cloud map and a live scan expressed in a common frame,
//! every live point is labelled [`Label::Changed`] or [`Label::Consistent`].
//! A small range-image encoder-decoder ([`model::ChangeModel`]) is trained
//! without labels from a chamfer / class-balance / temporal-consistency
//! objective ([`losses`]), and evaluated against a nearest-neighbour
//! threshold detector ([`baseline`]) on synthetic teach-and-repeat sequences
//! whose ground truth comes from an intensity threshold on retroreflective
//! objects ([`dataset`]).
//!
//! Module map:
//!
//! - [`geometry`]: points, clouds, rigid transforms, voxel filter, k-d tree, PLY.
//! - [`projection`]: spherical range images and label back-projection.
//! - [`losses`]: the unsupervised objective and its gradients.
//! - [`model`]: the network, reverse-mode gradients, checkpoints.
//! - [`baseline`]: nearest-neighbour distance threshold detector.
//! - [`dataset`]: synthetic scene generator, sequence I/O, frame pairing.
//! - [`trainer`]: training and fine-tuning loops.
//! - [`eval`]: IoU metrics, corridor masks, studies and runtime benchmark.
//! - [`costmap`]: planar inflated cost maps and the rolling queue.

pub mod baseline;
pub mod costmap;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod pgm;
pub mod projection;
pub mod trainer;

mod error;
mod label;

pub use error::{Error, Result};
pub use label::Label;
