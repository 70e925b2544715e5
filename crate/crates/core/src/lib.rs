//! Numerical core for long-range station rainfall forecasting over
//! teleconnection graphs.
//!
//! The crate is `no_std` (with `alloc`) and carries no IO. It covers:
//!
//! - [`ingest`]: monthly series, coverage screening, median imputation,
//!   daily-to-monthly reduction and normalized panels with time embeddings.
//! - [`physics`]: the linear orographic precipitation model evaluated
//!   spectrally on terrain grids, plus per-station edge features.
//! - [`graph`]: station clustering, correlation and Granger screening of
//!   climate indices, and static teleconnection graph assembly.
//! - [`gat`] and [`recurrent`]: edge-featured graph attention and the
//!   attention-gated LSTM with exact reverse-mode gradients.
//! - [`trainer`]: Huber loss, optimizers, early stopping, grid search and
//!   chronological fold splitting.
//! - [`evt`]: season calendars, peaks-over-threshold, GPD fitting and tail
//!   mapping of predictions.
//! - [`metrics`] and [`idw`]: evaluation scores and map gridding.

#![no_std]

extern crate alloc;

pub mod calendar;
pub mod error;
pub mod evt;
pub mod fft;
pub mod gat;
pub mod graph;
pub mod idw;
pub mod ingest;
pub mod linalg;
pub mod metrics;
pub mod physics;
pub mod recurrent;
pub mod special;
pub mod trainer;

pub use calendar::{MonthlySeries, YearMonth};
pub use error::{Error, Result};
pub use linalg::Mat;
