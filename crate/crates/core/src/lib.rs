pub mod harness;
pub mod oracle;
pub mod partitions;
pub mod solvers;
pub mod spef;
pub mod track_stop;
