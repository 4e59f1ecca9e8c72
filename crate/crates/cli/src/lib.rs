//! Commands and HTTP service around `divan-core`: preprocess, bin,
//! aggregate, render and rank, plus content-addressed pipeline jobs.

pub mod formats;
pub mod ingest;
pub mod pipeline;
pub mod service;
