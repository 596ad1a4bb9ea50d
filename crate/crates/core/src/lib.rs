pub mod binary_search;
pub mod bitframe;
pub mod channel;
pub mod engine;
pub mod error;
pub mod harness;
pub mod paritytree;
pub mod schedule;
