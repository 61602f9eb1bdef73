//! Decentralized operational planning and cooperative charge control of
//! electric vehicle fleets.
//!
//! The crate is organised around the stages of a charging study:
//!
//! * [`model`] — vehicle catalog, trip records, state-of-charge profiles and
//!   usage likelihoods,
//! * [`plangen`] — per-vehicle generation of alternative charging plans from
//!   a state-of-charge seed signal,
//! * [`engine`] — tree-structured bottom-up cooperative plan selection
//!   (`MIN-DEV` / `MIN-COST`),
//! * [`metrics`] — robustness, discomfort and fairness measurements,
//! * [`forecast`] — adoption-diffusion fitting and peak-power projection,
//! * [`harness`] — dataset ingestion/synthesis, experiment orchestration and
//!   file formats backing the CLI.

pub mod engine;
pub mod forecast;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod plangen;
pub mod seed;
