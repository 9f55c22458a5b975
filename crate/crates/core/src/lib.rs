pub mod calibrate;
pub mod error;
pub mod localmodel;
pub mod quantum;
pub mod scan;
pub mod seeding;
pub mod topology;

pub use error::{Error, Result};
