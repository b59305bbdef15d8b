//! Online safety filtering for boundary-controlled PDE systems.
//!
//! The crate simulates desk-scale 1D plants driven through their boundary,
//! learns a horizon-agnostic Fourier neural operator surrogate of the
//! control-to-output map, learns a boundary control barrier function on the
//! observed outputs, and combines both in a one-step closed-form QP filter
//! that projects a nominal controller's rate onto the learned safe set —
//! with a mismatch gate that falls back to the nominal input whenever the
//! surrogate and the plant disagree too much.
//!
//! All numerical code is generic over the scalar type through [`Real`];
//! concrete `f64` aliases live at the crate root. Everything runs on plain
//! `Vec`s on a single core, and every random draw flows through labelled
//! [`seed`] streams so collection, training and evaluation are reproducible
//! bit for bit.

pub mod bcbf;
pub mod ckpt;
pub mod config;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod neural_operator;
pub mod opt;
pub mod pde_plant;
pub mod safety_filter;
pub mod scalar;
pub mod seed;
pub mod task;

pub use error::{Error, Result};
pub use scalar::Real;

pub type TaskSpec64 = task::TaskSpec<f64>;
pub type Trajectory64 = dataset::Trajectory<f64>;
pub type FnoConfig = neural_operator::FnoConfig;
pub type FnoModel64 = neural_operator::FnoModel<f64>;
pub type FnoWorkspace64 = neural_operator::FnoWorkspace<f64>;
pub type BarrierModel64 = bcbf::BarrierModel<f64>;
pub type FilterConfig64 = safety_filter::FilterConfig<f64>;
pub type FilterState64 = safety_filter::FilterState<f64>;

pub type FnoModel32 = neural_operator::FnoModel<f32>;
pub type BarrierModel32 = bcbf::BarrierModel<f32>;
