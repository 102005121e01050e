mod basic;
pub mod conv;
mod nn;
pub mod resample;
