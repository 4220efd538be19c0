pub mod basis;
pub mod dense;
pub mod driver;
pub mod equations;
pub mod kernels;
pub mod lts;
pub mod mesh;
pub mod partition;
pub mod real;
pub mod solver;
pub mod source_receiver;
