//! Dataset construction: edge targets, candidate regions, caption ranking, forgery
//! synthesis, manifests, preparation and splits.

pub mod captions;
pub mod edges;
pub mod fixtures;
pub mod forgery;
pub mod kmeans;
pub mod manifest;
pub mod morph;
pub mod prepare;
pub mod split;
pub mod synth;
