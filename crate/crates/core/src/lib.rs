//! Distances between labeled arrays.
//!
//! A labeled array assigns every pixel an integer region id. The metrics here
//! compare a candidate segmentation against a ground truth without caring which
//! ids either side uses: regions are matched through their largest overlap,
//! counted in a single pass over the pixels.
//!
//! Besides the metrics the crate carries the tooling used to study them:
//! controlled perturbations ([`perturb`]), sweeps and annotator agreement
//! ([`study`]), an Elo tournament over human preferences ([`elo`]), least
//! squares validation ([`stats`]) and a small genetic search that uses the
//! metrics as fitness ([`search`]).

pub mod elo;
mod error;
pub mod io;
mod label;
pub mod metrics;
pub mod perturb;
pub mod raster;
pub mod search;
pub mod stats;
pub mod study;

pub use error::{Error, Result};
pub use label::{Label, LabelInventory, LabeledArray};
pub use metrics::{
    bsm_distance, build_contingency, compare_all, hamming, lad, madlad, nhd, region_mapping,
    rm_distance, Comparison, ContingencyTable, Evaluation, MetricName, MetricResult, RegionMapping,
    DEGENERATE_SENTINEL,
};
