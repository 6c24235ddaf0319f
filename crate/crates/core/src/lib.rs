//! Bayesian hierarchical gridding of sounding-level SIF retrievals.
//!
//! Sounding-level retrievals are grouped into 1° cells and overpass days,
//! and each cell-year is fit independently with a three-stage hierarchical
//! model: soundings observe a latent sounding-level field with retrieval
//! error, the field scatters around a daily 1° mean, and the daily means
//! follow a Fourier seasonal cycle. The posterior of the daily 1° mean is
//! summarized into a gridded product with standard errors and 95% credible
//! intervals.
//!
//! # Module Structure
//!
//! - [`model`] - domain types, seasonal design, log-joint density and the forward simulator
//! - [`gibbs`] - full conditionals, chains, posterior summaries and convergence diagnostics
//! - [`hyperprior`] - seasonal prior fitting from dense data and the prior table file
//! - [`ingest`] - quality filtering, land masking, land-cover upscaling and cell-year grouping
//! - [`product`] - gridded product records and the product file format
//! - [`analysis`] - monthly / biome aggregations emitted as plot-ready tables
//! - [`pipeline`] - configuration and the end-to-end parallel run

pub mod analysis;
pub mod error;
pub mod gibbs;
pub mod hyperprior;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod product;
pub mod stats;

pub use error::{Error, Result};
pub use gibbs::{run_chain, PosteriorSummary, SamplerConfig};
pub use hyperprior::{fit_seasonal_prior, DenseCellDataset, PriorFlag};
pub use model::{
    CellId, CellYearDataset, LatentState, OverpassDay, QualityFlag, SeasonalCoefficients,
    SeasonalPriorSpec, SoundingRecord, VarianceState,
};
pub use product::GriddedProductRecord;
