//! Oracle cases and property checks shared by the test suites.
#![allow(dead_code)]

pub mod kernels;
pub mod props;
