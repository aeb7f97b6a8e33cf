pub mod attention;
pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod gradsuite;
pub mod layers;
pub mod network;
pub mod objectives;
pub mod optim;

pub use error::{Error, Result};
