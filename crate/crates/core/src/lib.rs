//! 3D cerebrovascular segmentation with a dual-attention U-Net.

pub mod blocks;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod params;
pub mod report;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
