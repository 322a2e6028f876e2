//! Core of an average-velocity flow laboratory: a small tape-based autodiff
//! engine, the average-velocity field, analytic oracles, the modulated
//! training objectives, an Adam trainer, samplers, metrics, and toy tasks.
//!
//! Builds without `std` (only `alloc` is required).

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod error;
pub mod field;
pub mod meanflow;
pub mod objectives;
pub mod sampler;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
