pub mod linalg;
pub mod linear;
pub mod rng;
pub mod nn;
pub mod pde;
pub mod manifold;
pub mod training;
pub mod runtime;
pub mod experiment;
