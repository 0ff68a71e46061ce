pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod manifest;
pub mod run;
