pub mod dataset;
pub mod report;
pub mod selftest;
pub mod sweep;
pub mod train;
