pub mod acceptance;
pub mod basis;
pub mod config;
pub mod decay;
pub mod energy;
pub mod error;
pub mod experiment;
pub mod field;
pub mod field_file;
pub mod galerkin;
pub mod geometry;
pub mod integrator;
pub mod ledger;
pub mod spectral;
