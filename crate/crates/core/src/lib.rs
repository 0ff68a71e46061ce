#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod chunkfocus;
pub mod contrast;
pub mod evalkit;
pub mod nn;
pub mod tensor;
pub mod trainer;
pub mod textcore;
