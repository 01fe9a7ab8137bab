pub mod bench;
pub mod diffcore;
pub mod error;
pub mod learner;
pub mod metalearners;
pub mod tasks;

pub use error::{Error, Result};
