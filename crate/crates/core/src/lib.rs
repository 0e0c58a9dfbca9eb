pub mod config;
pub mod exec;
pub mod griddata;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod presets;
pub mod training;
