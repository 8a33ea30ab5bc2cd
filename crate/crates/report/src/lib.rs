//! File formats, decision-boundary rasters and end-to-end experiment
//! recipes on top of `basinscope`, plus the `basinscope` command line.

pub mod boundary;
pub mod checkpoint;
pub mod cli;
pub mod experiments;
pub mod manifest;
pub mod table;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/minima.md")]
    mod minima {}
    #[doc = include_str!("../../../book/src/radii.md")]
    mod radii {}
    #[doc = include_str!("../../../book/src/volume.md")]
    mod volume {}
    #[doc = include_str!("../../../book/src/embedding.md")]
    mod embedding {}
    #[doc = include_str!("../../../book/src/boundaries.md")]
    mod boundaries {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/determinism.md")]
    mod determinism {}
}
