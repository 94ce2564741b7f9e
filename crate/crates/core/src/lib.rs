pub mod carleman;
pub mod error;
pub mod evolve;
pub mod fields;
pub mod gauge;
pub mod grid;
pub mod monitors;
pub mod pipeline;
pub mod transform;
