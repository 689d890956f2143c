//! Atypical-to-typical voice conversion with explicit prosody correction.
//!
//! The crate is organised bottom-up: [`nn`] provides the layer library,
//! [`dsp`] feature extraction, and the model modules ([`encoder`],
//! [`prosody`], [`speaker`], [`conversion`]) build on both. [`corpus`]
//! generates synthetic data with exact ground truth and [`eval`] scores
//! converted output. [`pipeline`] runs the stages over a workspace directory
//! as configured by [`config`].

pub mod config;
pub mod conversion;
pub mod corpus;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod prosody;
pub mod selftest;
pub mod speaker;
pub mod util;

pub use error::{Error, Result};
