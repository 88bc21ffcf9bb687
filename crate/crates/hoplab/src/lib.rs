pub mod augment;
pub mod bench;
pub mod cli;
pub mod corpus;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod rng;
pub mod sequence;
pub mod trainer;
