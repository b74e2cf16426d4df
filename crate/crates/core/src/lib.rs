//! A desk-scale 2D electrostatic particle-in-cell code run on virtual
//! ranks, for comparing domain-decomposition strategies.
//!
//! The pieces:
//!
//! - [`grid`]: the domain, the field grid, the coarse grid of *grid
//!   elements* that partitioning works on, and the per-element cost field.
//! - [`pic`]: cloud-in-cell deposition, a periodic Poisson solve, gather
//!   and a leapfrog push, plus the two-stream initial condition.
//! - [`partition`]: static blocks, recursive bisection (RCB and its
//!   uneven-rank variant URB) and a limited-migration URB that keeps the
//!   upper cuts of the previous tree.
//! - [`orbh`]: a column/row layout rebalanced by pairwise diffusion.
//! - [`harness`]: the superstep engine that runs the PIC loop under a
//!   strategy and an ownership policy and records metrics.
//! - [`config`] and [`report`]: run configuration and CSV output.
//!
//! ```
//! use picbalance::config::parse_config;
//! use picbalance::harness::run;
//!
//! let cfg = parse_config("n_particles = 2000\nnx = 16\nny = 16\ngx = 4\ngy = 4\nranks = 4\nn_steps = 3").unwrap();
//! let out = run(&cfg).unwrap();
//! assert_eq!(out.metrics.len(), 3);
//! assert!(out.metrics.iter().all(|m| m.total_particles() == 2000));
//! ```

pub mod config;
pub mod error;
pub mod grid;
pub mod harness;
pub mod orbh;
pub mod partition;
pub mod pic;
pub mod report;

pub use config::{parse_config, OwnershipPolicy, RunConfig, Strategy};
pub use error::{Error, Result};
pub use grid::{Axis, CostField, Domain, ElementRect, FieldGrid, GridElementGrid};
pub use harness::{run, RunOutput, Simulation, StepMetrics};
pub use partition::{PartitionMap, PartitionTree};
