//! Discrete-time survival prediction with calibrated and discriminative
//! training objectives.

pub mod config;
pub mod data;
pub mod error;
pub mod grids;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod survival;

pub use error::{Error, Result};
pub use survival::{
    interpolate_curve, kaplan_meier, survival_from_hazards, HazardSequence, KaplanMeierCurve,
    Spacing, SurvivalCurve, SurvivalDataset, SurvivalRecord, TimeGrid,
};
