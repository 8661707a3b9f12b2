//! Compiler and emulator for an explicit-SIMD kernel language.

pub mod backend;
pub mod corpus;
pub mod dispatch;
pub mod emu;
pub mod frontend;
pub mod ir;
pub mod memory;
pub mod opt;
pub mod region;
pub mod types;
pub mod visa;
