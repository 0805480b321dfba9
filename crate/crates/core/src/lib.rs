//! Link-level OFDM simulator with a joint sparse channel estimation and
//! decoding receiver.

pub mod channel;
pub mod config;
pub mod dictionary;
pub mod tx;
pub mod linear_solver;
pub mod estimator;
pub mod decoder;
pub mod reference;
pub mod receiver;
pub mod harness;
pub mod selftest;
