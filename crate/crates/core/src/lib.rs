pub mod corpus;
pub mod crf;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod io;
pub mod kmeans;
pub mod oie;
pub mod pipeline;
pub mod relclass;
pub mod scalar;
pub mod schema;
pub mod service;
pub mod stats;
pub mod store;
pub mod tagger;

pub use error::{Error, Result};

pub type CrfModel32 = tagger::CrfModel<f32>;
pub type CrfModel64 = tagger::CrfModel<f64>;
pub type Transitions32 = crf::Transitions<f32>;
pub type Transitions64 = crf::Transitions<f64>;
pub type ClusterModel32 = kmeans::ClusterModel<f32>;
pub type ClusterModel64 = kmeans::ClusterModel<f64>;
