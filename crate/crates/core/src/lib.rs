pub mod crossings;
pub mod kernels;
pub mod montecarlo;
pub mod quadrature;
pub mod special;
pub mod verification;
