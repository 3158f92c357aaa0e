//! Experiment companion for the `lpn-core` library: dataset preparation,
//! training, relevance ranking, masking sweeps, uncertainty-gap profiles,
//! and a numerical self-check — all behind one `lpn` binary.
//!
//! Everything here is std-only plumbing (files, CSV, JSON, SVG, CLI);
//! the numerics live in `lpn-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod selfcheck;
pub mod surrogate;
pub mod svg;
