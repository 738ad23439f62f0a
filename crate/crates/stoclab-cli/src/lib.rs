//! Library side of the `stoclab` binary: configuration, the experiment
//! runner, CSV/JSON/SVG writers and the `verify` suite.

pub mod config;
pub mod output;
pub mod run;
pub mod svg;
pub mod verify;
