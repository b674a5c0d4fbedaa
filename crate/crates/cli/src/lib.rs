//! File-format plumbing shared by the `nrsfm` binary and its tests: the
//! dataset directory layout and the per-frame mesh exporters.

pub mod dataset;
pub mod mesh;
