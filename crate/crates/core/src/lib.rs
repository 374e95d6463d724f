//! Compile quantized neural networks into arithmetic constraint systems over
//! a prime field, generate witnesses, and produce and check proof artifacts.
//!
//! The pipeline is `compile -> witness -> prove -> verify`; see [`pipeline`]
//! for the file-level commands and [`bench`] for sweep benchmarking.

pub mod bench;
pub mod circuit;
pub mod field;
pub mod model;
pub mod pipeline;
pub mod proof;
pub mod quant;
pub mod witness;

pub use circuit::{compile, compile_with, total_cost, CompileOptions, ConstraintSystem, CostConfig};
pub use field::{FieldConfig, FieldElement};
pub use model::{parse_model, ModelGraph};
pub use quant::{QuantConfig, QuantizedTensor};
pub use witness::{check_constraints, generate_witness, Witness};
