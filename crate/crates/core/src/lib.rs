//! Line and branch coverage for the Mini language using bytecode probes that
//! remove themselves once they have done their job.

pub mod asm;
pub mod bench;
pub mod cli;
pub mod code;
pub mod compile;
pub mod container;
pub mod disasm;
pub mod engine;
pub mod frontend;
pub mod instrument;
pub mod isa;
pub mod loader;
pub mod report;
pub mod run;
pub mod trace;
pub mod transform;
pub mod value;
pub mod verify;
pub mod vm;
