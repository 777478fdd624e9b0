pub mod circuit;
pub mod experiment;
pub mod matrix_io;
pub mod memristor;
pub mod readout;
pub mod reservoir;
pub mod seed;
pub mod tasks;
