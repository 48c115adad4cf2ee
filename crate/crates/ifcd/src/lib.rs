pub mod decoder;
pub mod metrics;
pub mod numerics;
pub mod probe;
pub mod rng;
pub mod vlm;
pub mod world;
