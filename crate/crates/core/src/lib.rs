//! Conjunction propagation for enhanced Universal Dependencies.
//!
//! The crate reads and writes CoNLL-U ([`conllu`]), exposes the edge sets
//! and conjunction queries everything else builds on ([`graph`]), and
//! provides three ways of producing enhanced edges for coordinations: a
//! rule-based converter ([`convert`]), learned propagation classifiers
//! ([`classify`]) and a biaffine edge predictor ([`parser`]). [`eval`]
//! scores any of them against gold enhanced graphs.

pub mod conllu;
pub mod convert;
pub mod graph;
pub mod classify;
pub mod container;
pub mod embed;
pub mod eval;
pub mod optim;
pub mod parser;
pub mod synth;
