//! Equidepth binning, three-dimensional group-by cubes on a CPU or a
//! simulated processing-in-memory backend, and heatmap rendering/ranking.

pub mod binning;
pub mod cpu_agg;
pub mod cube;
pub mod dataset;
pub mod pim_plan;
pub mod pim_sim;
pub mod rank;
pub mod viz;
