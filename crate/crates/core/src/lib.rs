//! Power-flow surrogate workbench.
//!
//! Ground-truth AC power flow ([`powerflow`]) feeds perturbed dataset suites
//! ([`datagen`]) used to train FCNN, GNN and GAT regressors ([`models`]) built on a
//! small reverse-mode engine ([`nn`]). [`can`] learns sparse similarity graphs with a
//! fixed number of connected components, and [`sscrf`] runs semi-supervised
//! fault labeling with a pseudo-likelihood CRF trained by variational EM.
//! [`bench`] orchestrates the comparison experiments.

pub mod bench;
pub mod can;
pub mod datagen;
pub mod grid;
pub mod models;
pub mod nn;
pub mod powerflow;
pub mod sscrf;

pub use grid::{build_ybus, AdmittanceMatrix, Branch, Bus, BusKind, Generator, GridCase, GridError};
pub use powerflow::{check_limits, compute_injections, solve_pf, LimitReport, LoadVector, PfError, PfOptions, PfSolution};
pub use datagen::{Dataset, PerturbationConfig, Role, Sample, Suite, SuiteConfig};
