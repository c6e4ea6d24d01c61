pub mod adversary;
pub mod bench;
pub mod envelope;
pub mod experiment;
pub mod he;
pub mod learning;
pub mod peer;
pub mod seed;
pub mod sim;
