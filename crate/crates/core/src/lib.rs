//! Target-augmented feedback MPC for bilateral teleoperation.

pub mod bridge;
pub mod cli;
pub mod config;
pub mod model;
pub mod mpc;
pub mod ocp;
pub mod sim;
pub mod slq;
pub mod teleop;
