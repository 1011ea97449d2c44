//! Intermediate representation, data-flow analyses and graph construction
//! for recovering the types of variables in stripped binaries.

pub mod abi;
pub mod dataflow;
pub mod interproc;
pub mod ir;
pub mod types;
pub mod vsg;

pub use abi::AbiSpec;
pub use dataflow::{build_def_use, reaching_definitions, DefSite, StorageKey};
pub use interproc::{build_vpg, PosixKb, ProgramAnalysis, Vpg};
pub use ir::{parse_module, Expr, FunctionIR, Instruction, ModuleIR};
pub use types::{TypeLabel, NUM_CLASSES};
pub use vsg::{vpg_to_vsg, EncodedGraph, GraphRecord, Vocab, Vsg};
