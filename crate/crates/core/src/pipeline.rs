//! The file-level commands: `compile`, `witness`, `prove`, `verify`.
//!
//! Each command reads and writes artifacts on disk and reports failures as
//! a [`PipelineError`] whose [`PipelineError::exit_code`] the binary returns.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O error |
//! | 2 | malformed or unparsable input, config or artifact |
//! | 3 | unsupported operator |
//! | 4 | overflow audit failure |
//! | 5 | input shape or range mismatch |
//! | 6 | artifacts from different pipeline runs |
//! | 7 | prover refusal (witness violates the circuit) |
//! | 8 | verifier reject |

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{compile_with, quantize_model, CircuitCounts, CompileError, CompileOptions, ConstraintSystem, CostConfig, QuantizedModel};
use crate::field::FieldConfig;
use crate::model::{parse_model, InputData, ModelError};
use crate::proof::{self, ProofArtifact, ProofError, PublicIo, Verdict};
use crate::quant::{quantize, QuantConfig, QuantError};
use crate::witness::{generate_witness, OutputData, Witness, WitnessError};

pub const CONFIG_ENV: &str = "ZKINFER_CONFIG";
pub const SIDECAR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Malformed(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("{0}")]
    Overflow(String),
    #[error("{0}")]
    Shape(String),
    #[error("artifact mismatch: {0}")]
    Artifact(String),
    #[error("{0}")]
    Refused(String),
    #[error("proof rejected: {0}")]
    Rejected(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Io { .. } => 1,
            PipelineError::Malformed(_) => 2,
            PipelineError::Unsupported(_) => 3,
            PipelineError::Overflow(_) => 4,
            PipelineError::Shape(_) => 5,
            PipelineError::Artifact(_) => 6,
            PipelineError::Refused(_) => 7,
            PipelineError::Rejected(_) => 8,
        }
    }
}

impl From<CompileError> for PipelineError {
    fn from(e: CompileError) -> Self {
        let msg = e.to_string();
        match e {
            CompileError::Model(ModelError::UnsupportedOp { .. }) => PipelineError::Unsupported(msg),
            CompileError::Model(_) | CompileError::Config(_) | CompileError::Gadget { .. } => PipelineError::Malformed(msg),
            CompileError::Initializer { .. } | CompileError::Overflow { .. } | CompileError::ActivationOverflow { .. } => {
                PipelineError::Overflow(msg)
            }
        }
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        CompileError::Model(e).into()
    }
}

fn read(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    let bytes = read(path)?;
    String::from_utf8(bytes).map_err(|_| PipelineError::Malformed(format!("{}: not UTF-8", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub p: u64,
    #[serde(default = "default_field_name")]
    pub name: String,
}

fn default_field_name() -> String {
    "custom".into()
}

impl Default for FieldSpec {
    fn default() -> Self {
        let f = FieldConfig::mersenne61();
        Self {
            p: f.modulus(),
            name: f.name().to_string(),
        }
    }
}

/// Compile-time settings. Later stages read everything they need from the
/// circuit header.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub field: FieldSpec,
    pub quant: QuantConfig,
    pub cost: CostConfig,
    pub options: CompileOptions,
}

impl PipelineConfig {
    pub fn parse(document: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(document).map_err(|e| PipelineError::Malformed(format!("config: {e}")))?;
        cfg.field_config()?;
        Ok(cfg)
    }

    /// `explicit` if given, else the file named by `ZKINFER_CONFIG`, else
    /// defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self, PipelineError> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => Self::parse(&read_text(&path)?),
            None => Ok(Self::default()),
        }
    }

    pub fn field_config(&self) -> Result<FieldConfig, PipelineError> {
        FieldConfig::new(self.field.p, self.field.name.clone()).map_err(|e| PipelineError::Malformed(format!("config: {e}")))
    }
}

/// Quantized-model cache written next to the circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format_version: u32,
    pub circuit_digest: String,
    pub model: QuantizedModel,
}

pub fn sidecar_path(circuit: &Path) -> PathBuf {
    let mut s = circuit.as_os_str().to_owned();
    s.push(".qmodel.json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompileSummary {
    pub counts: CircuitCounts,
    pub total_cost: u128,
    pub n_wires: usize,
    pub circuit_digest: String,
    pub parameters: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WitnessSummary {
    pub n_wires: usize,
    pub witness_digest: String,
    pub output: Vec<i64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProveSummary {
    pub circuit_digest: String,
    pub io_digest: String,
    pub witness_digest: String,
    pub openings: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifySummary {
    pub accepted: bool,
    pub circuit_digest: String,
    pub seconds: f64,
}

pub fn cmd_compile(model_path: &Path, circuit_path: &Path, cfg: &PipelineConfig) -> Result<CompileSummary, PipelineError> {
    let t0 = Instant::now();
    let graph = parse_model(&read_text(model_path)?)?;
    let field = cfg.field_config()?;
    let cs = compile_with(&graph, &cfg.quant, &field, &cfg.cost, &cfg.options)?;
    let qm = quantize_model(&graph, &cfg.quant)?;
    let text = cs.to_text();
    let digest = cs.digest();
    let sidecar = Sidecar {
        format_version: SIDECAR_FORMAT_VERSION,
        circuit_digest: hex(&digest),
        model: qm,
    };
    write(circuit_path, text.as_bytes())?;
    write(
        &sidecar_path(circuit_path),
        serde_json::to_string(&sidecar).expect("sidecar serializes").as_bytes(),
    )?;
    Ok(CompileSummary {
        counts: cs.counts,
        total_cost: cs.total_cost(),
        n_wires: cs.n_wires,
        circuit_digest: hex(&digest),
        parameters: graph.parameter_count(),
        seconds: t0.elapsed().as_secs_f64(),
    })
}

pub fn load_circuit(path: &Path) -> Result<ConstraintSystem, PipelineError> {
    ConstraintSystem::from_text(&read_text(path)?).map_err(|e| PipelineError::Malformed(format!("{}: {e}", path.display())))
}

fn load_sidecar(circuit_path: &Path, cs: &ConstraintSystem) -> Result<Sidecar, PipelineError> {
    let path = sidecar_path(circuit_path);
    let sc: Sidecar = serde_json::from_str(&read_text(&path)?)
        .map_err(|e| PipelineError::Malformed(format!("{}: {e}", path.display())))?;
    if sc.circuit_digest != hex(&cs.digest()) {
        return Err(PipelineError::Artifact(format!(
            "{} was written for a different circuit",
            path.display()
        )));
    }
    if sc.model.quant != cs.quant || sc.model.input.shape != cs.input_shape || sc.model.output.shape != cs.output_shape {
        return Err(PipelineError::Artifact(format!("{} disagrees with the circuit header", path.display())));
    }
    Ok(sc)
}

fn quantize_input(cs: &ConstraintSystem, input_path: &Path) -> Result<Vec<i64>, PipelineError> {
    let data = InputData::parse(&read_text(input_path)?).map_err(|e| PipelineError::Malformed(format!("{}: {e}", input_path.display())))?;
    if data.shape != cs.input_shape {
        return Err(PipelineError::Shape(format!(
            "input shape {:?}, circuit expects {:?}",
            data.shape, cs.input_shape
        )));
    }
    let q = quantize(&data.input, &data.shape, &cs.quant).map_err(|e| match e {
        QuantError::Overflow { .. } => PipelineError::Shape(format!("input: {e}")),
        _ => PipelineError::Malformed(format!("input: {e}")),
    })?;
    Ok(q.data)
}

pub fn cmd_witness(
    circuit_path: &Path,
    input_path: &Path,
    output_path: &Path,
    witness_path: &Path,
) -> Result<WitnessSummary, PipelineError> {
    let t0 = Instant::now();
    let cs = load_circuit(circuit_path)?;
    load_sidecar(circuit_path, &cs)?;
    let data = quantize_input(&cs, input_path)?;
    let q = crate::quant::QuantizedTensor {
        data,
        shape: cs.input_shape.clone(),
        scale_exponent: cs.quant.scale_exponent,
    };
    let w = generate_witness(&cs, &q).map_err(|e| match e {
        WitnessError::InputRange { .. } | WitnessError::Shape { .. } => PipelineError::Shape(e.to_string()),
        WitnessError::Range(_) => PipelineError::Overflow(e.to_string()),
        _ => PipelineError::Malformed(e.to_string()),
    })?;
    let out = OutputData::from_witness(&cs, &w);
    write(witness_path, &w.to_bytes(&cs.digest()))?;
    write(output_path, out.to_json().as_bytes())?;
    Ok(WitnessSummary {
        n_wires: w.len(),
        witness_digest: hex(&w.digest()),
        output: out.output,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

fn load_witness(path: &Path, cs: &ConstraintSystem) -> Result<Result<Witness, WitnessError>, PipelineError> {
    let bytes = read(path)?;
    match Witness::from_bytes(&bytes, cs, &cs.digest()) {
        Err(WitnessError::Format(m)) => Err(PipelineError::Malformed(format!("{}: {m}", path.display()))),
        other => Ok(other),
    }
}

pub fn cmd_prove(circuit_path: &Path, witness_path: &Path, proof_path: &Path) -> Result<ProveSummary, PipelineError> {
    let t0 = Instant::now();
    let cs = load_circuit(circuit_path)?;
    let w = match load_witness(witness_path, &cs)? {
        Ok(w) => w,
        Err(e @ WitnessError::NotReduced { .. }) => return Err(PipelineError::Refused(e.to_string())),
        Err(e) => return Err(PipelineError::Artifact(e.to_string())),
    };
    let pa = proof::prove(&cs, &w).map_err(|e| match e {
        ProofError::Refused(m) => PipelineError::Refused(m),
        other => PipelineError::Artifact(other.to_string()),
    })?;
    write(proof_path, &pa.to_bytes())?;
    Ok(ProveSummary {
        circuit_digest: hex(&pa.circuit_digest),
        io_digest: hex(&pa.io_digest),
        witness_digest: hex(&pa.witness_digest),
        openings: pa.openings.len(),
        seconds: t0.elapsed().as_secs_f64(),
    })
}

pub fn cmd_verify(
    circuit_path: &Path,
    input_path: &Path,
    output_path: &Path,
    witness_path: &Path,
    proof_path: &Path,
) -> Result<VerifySummary, PipelineError> {
    let t0 = Instant::now();
    let cs = load_circuit(circuit_path)?;
    let pa = ProofArtifact::from_bytes(&read(proof_path)?)
        .map_err(|e| PipelineError::Malformed(format!("{}: {e}", proof_path.display())))?;
    let inputs = match quantize_input(&cs, input_path) {
        Ok(x) => x,
        Err(PipelineError::Shape(m)) => return Err(PipelineError::Rejected(m)),
        Err(e) => return Err(e),
    };
    let out = OutputData::parse(&read_text(output_path)?)
        .map_err(|e| PipelineError::Malformed(format!("{}: {e}", output_path.display())))?;
    if out.shape != cs.output_shape || out.scale_exponent != cs.quant.scale_exponent || out.output.len() != cs.outputs.len() {
        return Err(PipelineError::Rejected("output file does not match the circuit".into()));
    }
    let io = PublicIo::from_integers(&cs.field, &inputs, &out.output);
    let witness = match load_witness(witness_path, &cs)? {
        Ok(w) => w,
        Err(e) => return Err(PipelineError::Rejected(format!("witness: {e}"))),
    };
    match proof::verify(&cs, &io, Some(&witness), &pa) {
        Verdict::Accept => Ok(VerifySummary {
            accepted: true,
            circuit_digest: hex(&pa.circuit_digest),
            seconds: t0.elapsed().as_secs_f64(),
        }),
        Verdict::Reject(r) => Err(PipelineError::Rejected(r.to_string())),
    }
}
