#![allow(dead_code)]

pub mod filter_oracle;
pub mod fixtures;
pub mod gradcheck;
