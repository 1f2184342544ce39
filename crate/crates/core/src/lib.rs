//! Numerical laboratory for weighted Fourier extension estimates on cones
//! generated by convex planar curves.

pub mod cli;
pub mod extension;
pub mod families;
pub mod fit;
pub mod gauge;
pub mod measure;
pub mod quad;
pub mod sum;
pub mod weight;
