pub mod error;
pub mod expansion;
pub mod fda;
pub mod io;
pub mod linalg;
pub mod mecorrect;
pub mod optim;
pub mod regress;
pub mod simgen;

pub use error::{Error, ErrorKind, Result};
