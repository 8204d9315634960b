pub mod eigen;
pub mod error;
pub mod harness;
pub mod inference;
pub mod pattern;
pub mod prior;
pub mod rkhs;
pub mod smallball;
pub mod special;
