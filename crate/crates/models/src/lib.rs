//! Learned models over Bézier sketch representations: a one-shot stroke encoder
//! and a latent-variable sketch generator.

pub mod sketch_generator;
pub mod stroke_encoder;
