//! Branching random walks in random environments: quenched and annealed
//! moments of the parabolic Anderson model, tail analytics, Feynman–Kac
//! and particle simulation, and regime experiments for empirical averages.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod fk;
pub mod iid;
pub mod lattice;
pub mod moments;
pub mod operator;
pub mod output;
pub mod pam;
pub mod particles;
pub mod partition;
pub mod quadrature;
pub mod regime;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use env::{Environment, PotentialLaw, TailFamily};
pub use error::{Error, Result};
pub use lattice::Cube;
