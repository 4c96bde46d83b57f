//! Finite-volume laboratory for entropy production of a small quantum
//! system coupled to thermal reservoirs.
//!
//! Modules build on each other:
//! [`opalg`] holds dense operators on tensor products of site spaces,
//! [`model`] describes interactions and regions,
//! [`volume`] assembles the operators of one finite volume,
//! [`dynamics`] evolves observables and compares volumes, and
//! [`thermo`] computes states, time averages and entropy production.
//! [`sample`] provides standard chains and random instances.
//!
//! ```
//! use ness::{sample, thermo, volume};
//!
//! let spec = sample::standard_chain();
//! let vols = volume::build(&spec, &spec.site_ids(), None).unwrap();
//! let report = thermo::entropy_production(&vols, 10.0).unwrap();
//! assert!(report.e_telescoped >= 0.0);
//! ```
//!
//! The guide under `book/` walks through the concepts; its code blocks run
//! as doc-tests of this crate.

pub mod dynamics;
pub mod model;
pub mod opalg;
pub mod sample;
pub mod thermo;
pub mod volume;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/volumes.md")]
    mod volumes {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/entropy.md")]
    mod entropy {}
    #[doc = include_str!("../../../book/src/redraw.md")]
    mod redraw {}
    #[doc = include_str!("../../../book/src/trace_inequality.md")]
    mod trace_inequality {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
