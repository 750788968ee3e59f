pub mod demod;
pub mod exact_filter;
pub mod harness;
pub mod internal_model;
pub mod model;
pub mod seeds;
pub mod ssa;
