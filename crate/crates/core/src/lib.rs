//! Energy-management and pit-stop strategy optimisation for battery
//! electric race cars.

pub mod charge;
pub mod conic;
pub mod error;
pub mod fitting;
pub mod interp;
pub mod map;
pub mod model;
pub mod race;
pub mod stint;
pub mod synthetic;
pub mod validate;

pub use error::{Error, Result};
