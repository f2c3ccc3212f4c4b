//! Oracle checks shared by the property tests and the acceptance binary.
//! Each returns a one-line summary on success and the offending detail on
//! failure.
#![allow(dead_code)]

pub mod gibbs;
pub mod map;
pub mod metrics;
pub mod series;

pub type Check = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}
