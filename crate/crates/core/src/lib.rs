pub mod cli;
pub mod error;
pub mod graph_data;
pub mod hetero_encoder;
pub mod model;
pub mod node_dynamics;
pub mod numkit;
pub mod response;
pub mod synth;
pub mod tgi;
pub mod volume_encoder;

pub use error::{Error, Result};
