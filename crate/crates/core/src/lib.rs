pub mod error;
pub mod lowrank;
pub mod mesh;
pub mod slfd;
pub mod advection;
pub mod fieldsolve;
pub mod implicit_density;
pub mod vlasov;
pub mod diagnostics;
pub mod cli;
