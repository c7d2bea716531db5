//! Event-study and text-feature toolkit for annual-report sentiment research.
//!
//! The crate is organised as a pipeline:
//!
//! * [`market_data`] ingests prices, factors and trading calendars and
//!   computes return series.
//! * [`expected_return`] fits constant-mean, market and five-factor
//!   normal-return models over an estimation window.
//! * [`event_study`] resolves report-release events and computes abnormal
//!   returns, CARs and CAARs.
//! * [`sentiment_features`] turns paragraph-level aspect/sentiment
//!   annotations and firm fundamentals into regression design matrices.
//! * [`regression`] fits OLS and ridge models with analytic and bootstrap
//!   inference.
//! * [`classifier`] is a bag-of-words MaxEnt baseline with evaluation and
//!   inter-annotator agreement metrics.

pub mod classifier;
pub mod event_study;
pub mod expected_return;
pub mod linalg;
pub mod market_data;
pub mod regression;
pub mod sentiment_features;

pub use chrono::NaiveDate;
