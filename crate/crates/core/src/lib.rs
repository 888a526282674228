pub mod agent;
pub mod codec;
pub mod env;
pub mod nn;
pub mod relay;
pub mod rng;
pub mod sta;
pub mod train;
pub mod trajectory;
