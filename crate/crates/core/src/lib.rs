//! Deterministic EMV pre-play laboratory.

pub mod emv;
pub mod unzoo;
pub mod analyzer;
pub mod actors;
pub mod countermeasures;
pub mod attack;
pub mod scenario;
pub mod fixtures;
