pub mod cli;
pub mod config;
pub mod cops;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod orientation;
pub mod postsignal;
pub mod preprocess;
pub mod report;
pub mod synthgait;
pub mod trialdir;
pub mod types;

pub use error::{Error, Result};
