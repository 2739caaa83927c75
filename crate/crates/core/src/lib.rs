pub mod calibration;
pub mod config;
pub mod ingest;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod spatial;
pub mod stats;
pub mod stops;
pub mod synth;
pub mod trips;
