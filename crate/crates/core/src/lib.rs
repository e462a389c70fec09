pub mod bench;
pub mod bezier;
pub mod corridor;
pub mod error;
pub mod geometry;
pub mod lp;
pub mod par;
pub mod partition;
pub mod scenario;
pub mod sim;
pub mod spatial;
pub mod temporal;
pub mod tube;

pub use error::{Error, Result};
