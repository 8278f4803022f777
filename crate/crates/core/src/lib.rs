pub mod circuit;
pub mod data;
pub mod devsim;
pub mod grn;
pub mod model;
pub mod seeds;
