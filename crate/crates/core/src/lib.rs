//! Functional-unit benchmarking of web services.
//!
//! A scripted browser session is split into named functional units (login,
//! send, read, ...). Each unit is measured for duration, energy per channel
//! and network bytes while metric providers sample in the background. Series
//! of repeated runs are cleaned, compared between two conditions and the
//! deltas are converted into CO2-equivalent emissions.
//!
//! Module map:
//!
//! - [`model`]: shared domain types and factor validation
//! - [`emissions`]: energy, data and embodied allocation to gCO2e
//! - [`stats`]: IQR cleaning, Welch test, normality check, summaries
//! - [`sampler`]: metric providers and window integration
//! - [`runner`]: WebDriver scenarios, conditions and campaigns
//! - [`store`]: on-disk results store
//! - [`report`]: comparison and emission tables, projections, rendering
//! - [`config`] / [`cli`]: operator surface

pub mod cli;
pub mod clock;
pub mod config;
pub mod emissions;
pub mod error;
pub mod model;
pub mod report;
pub mod runner;
pub mod sampler;
pub mod stats;
pub mod store;

pub use error::{Error, Result};
