mod codec;
pub mod align;
pub mod config;
pub mod data;
pub mod error;
pub mod geodesy;
pub mod gps;
pub mod index;
pub mod nn;
pub mod pipeline;
pub mod rag;
mod seed;
pub mod verify;

pub use error::{Error, Result};
