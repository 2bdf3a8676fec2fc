pub mod dataset;
pub mod desk;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod persist;
pub mod plot;
pub mod rig;
pub mod synthetic;
pub mod timing;
pub mod tune;
pub mod zoo;
