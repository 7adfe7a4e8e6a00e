pub mod data;
pub mod encoder;
pub mod generator;
