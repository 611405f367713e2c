pub mod asymptotics;
pub mod covmatrix;
pub mod error;
pub mod estimators;
pub mod grid;
pub mod io;
pub mod lags;
pub mod model;
pub mod moments;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod spatial;
pub mod stats;
