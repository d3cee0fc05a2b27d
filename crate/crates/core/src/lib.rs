pub mod decoder;
pub mod encoder;
pub mod grammar;
pub mod layers;
pub mod numerics;
pub mod schema;
pub mod harness;
