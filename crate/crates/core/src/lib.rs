//! Nowcasting influenza-like-illness incidence from Wikipedia pageviews.
//!
//! The pipeline selects predictor pages on the Wikipedia link graph
//! ([`linkgraph`]), turns hourly pageview dumps into weekly series
//! ([`ingest`]), builds a standardized design matrix with one-hot week
//! columns ([`featureset`]), fits LASSO models under a leave-one-season-out
//! protocol ([`regress`]) and scores them ([`evaluate`]). [`synth`] produces
//! planted synthetic datasets in the same file formats and [`pipeline`]
//! runs the whole experiment grid.

pub mod error;
pub mod evaluate;
pub mod featureset;
pub mod healthdata;
pub mod ingest;
pub mod linkgraph;
pub mod meta;
pub mod pipeline;
pub mod regress;
pub mod synth;
pub mod week;

pub use error::{Error, Result};
pub use week::IsoWeek;
