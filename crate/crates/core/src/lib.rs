//! Desk-scale density-map crowd counting.
//!
//! The pipeline: synthetic crowd scenes with controllable inhomogeneous
//! density ([`synthgen`]), plain and multi-level density targets generated
//! from dot annotations ([`densegen`]), a compact multi-branch fully
//! convolutional regressor ([`dan`]) trained with a cost-sensitive Huber
//! loss ([`lossopt`], [`trainer`]), and evaluation plus gradient-pathology
//! diagnostics ([`evalmetrics`]). Everything runs on the minimal tensor and
//! manual-backprop substrate in [`numcore`].

pub mod annot;
pub mod dan;
pub mod densegen;
pub mod evalmetrics;
pub mod lossopt;
pub mod numcore;
pub mod pgm;
pub mod synthgen;
pub mod trainer;
