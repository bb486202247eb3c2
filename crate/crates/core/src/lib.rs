pub mod audio_io;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod features;
pub mod models;
pub mod neural;

pub use error::{Error, Result};
