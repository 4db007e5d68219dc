pub mod conv;
mod direct;
pub mod elementwise;
pub mod involution;
pub mod linalg;
pub mod norm;
pub mod pool;
pub mod shape;
pub mod spectral;
