//! IO companion of the CTMDP toolkit: run configurations, model files, DSV
//! artifacts and the command dispatcher behind the `ctmdp` binary.

pub mod config;
pub mod dsv;
pub mod modelfile;
pub mod runner;
