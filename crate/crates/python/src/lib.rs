use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use zkinfer::bench;
use zkinfer::circuit::{CompileOptions, ConstraintSystem};
use zkinfer::model::{parse_model, ModelGraph};
use zkinfer::pipeline::{self, hex, PipelineConfig};
use zkinfer::proof::{self, ProofArtifact, PublicIo, Verdict};
use zkinfer::quant::{quantize, RescaleMode};
use zkinfer::witness::{check_constraints, generate_witness, Witness};
use zkinfer::{CostConfig, FieldConfig, QuantConfig};

create_exception!(pyzkinfer, ZkError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    ZkError::new_err(e.to_string())
}

create_exception!(
    pyzkinfer,
    PipelineFailure,
    ZkError,
    "Raised by the file-level commands; `args` is `(message, exit_code)`."
);

fn pipeline_err(e: pipeline::PipelineError) -> PyErr {
    PipelineFailure::new_err((e.to_string(), e.exit_code()))
}

#[pyclass(name = "Field", frozen, from_py_object)]
#[derive(Clone)]
struct PyField(FieldConfig);

#[pymethods]
impl PyField {
    #[new]
    #[pyo3(signature = (p = (1u64 << 61) - 1, name = "mersenne61".to_string()))]
    fn new(p: u64, name: String) -> PyResult<Self> {
        FieldConfig::new(p, name).map(Self).map_err(err)
    }

    #[getter]
    fn modulus(&self) -> u64 {
        self.0.modulus()
    }

    fn add(&self, a: u64, b: u64) -> u64 {
        self.0.arith().add(a % self.0.modulus(), b % self.0.modulus())
    }

    fn mul(&self, a: u64, b: u64) -> u64 {
        self.0.arith().mul(a % self.0.modulus(), b % self.0.modulus())
    }

    fn inv(&self, a: u64) -> PyResult<u64> {
        self.0.arith().inv(a % self.0.modulus()).map_err(err)
    }

    /// Signed integer to its residue.
    fn encode(&self, x: i64) -> PyResult<u64> {
        self.0.arith().encode(x as i128).map_err(err)
    }

    /// Residue to the balanced signed representative.
    fn decode(&self, v: u64) -> i64 {
        self.0.arith().decode(v % self.0.modulus())
    }

    fn __repr__(&self) -> String {
        format!("Field(p={}, name={:?})", self.0.modulus(), self.0.name())
    }
}

#[pyclass(name = "QuantConfig", from_py_object)]
#[derive(Clone)]
struct PyQuantConfig(QuantConfig);

#[pymethods]
impl PyQuantConfig {
    #[new]
    #[pyo3(signature = (scale_exponent = 16, nu = 32, kappa = 32, input_bound = 1.0, rescale = "accumulate"))]
    fn new(scale_exponent: u32, nu: u32, kappa: u32, input_bound: f64, rescale: &str) -> PyResult<Self> {
        let rescale = RescaleMode::parse(rescale).ok_or_else(|| PyValueError::new_err(format!("unknown rescale mode {rescale:?}")))?;
        let q = QuantConfig {
            scale_exponent,
            nu,
            kappa,
            input_bound,
            rescale,
        };
        q.validate(&FieldConfig::mersenne61()).map_err(err)?;
        Ok(Self(q))
    }

    #[getter]
    fn scale_exponent(&self) -> u32 {
        self.0.scale_exponent
    }

    #[getter]
    fn nu(&self) -> u32 {
        self.0.nu
    }

    #[getter]
    fn kappa(&self) -> u32 {
        self.0.kappa
    }

    #[getter]
    fn alpha(&self) -> i64 {
        self.0.alpha()
    }

    fn quantize(&self, values: Vec<f64>) -> PyResult<Vec<i64>> {
        let n = values.len();
        quantize(&values, &[n], &self.0).map(|t| t.data).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "QuantConfig(scale_exponent={}, nu={}, kappa={}, input_bound={}, rescale={:?})",
            self.0.scale_exponent,
            self.0.nu,
            self.0.kappa,
            self.0.input_bound,
            self.0.rescale.name()
        )
    }
}

#[pyclass(name = "Model", frozen)]
struct PyModel(ModelGraph);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(document: &str) -> PyResult<Self> {
        parse_model(document).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Convolutional sweep model of depth `d` on an `h x h` input.
    #[staticmethod]
    #[pyo3(signature = (d, h, channels = bench::DEFAULT_CHANNELS, seed = 0))]
    fn depth(d: usize, h: usize, channels: usize, seed: u64) -> PyResult<Self> {
        bench::make_depth_model(d, h, channels, seed).map(Self).map_err(err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.0.input.shape.clone()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.0.parameter_count()
    }

    fn layer_counts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = bench::layer_counts(&self.0);
        let d = PyDict::new(py);
        for (k, v) in [("d", c.d), ("c", c.c), ("p", c.p), ("f", c.f), ("r", c.r)] {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    /// Float forward pass.
    fn run_float(&self, input: Vec<f64>) -> PyResult<Vec<f64>> {
        let t = zkinfer::model::Tensor::new(self.0.input.shape.clone(), input).map_err(err)?;
        zkinfer::witness::run_float_reference(&self.0, &t).map(|t| t.data).map_err(err)
    }

    #[pyo3(signature = (quant = None, field = None, fuse_relu = true))]
    fn compile(&self, quant: Option<PyQuantConfig>, field: Option<PyField>, fuse_relu: bool) -> PyResult<PyCircuit> {
        let q = quant.map_or_else(QuantConfig::default, |q| q.0);
        let f = field.map_or_else(FieldConfig::mersenne61, |f| f.0);
        zkinfer::compile_with(&self.0, &q, &f, &CostConfig::default(), &CompileOptions { fuse_relu })
            .map(PyCircuit)
            .map_err(err)
    }
}

#[pyclass(name = "Circuit", frozen)]
struct PyCircuit(ConstraintSystem);

#[pymethods]
impl PyCircuit {
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        ConstraintSystem::from_text(text).map(Self).map_err(err)
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    fn digest(&self) -> String {
        hex(&self.0.digest())
    }

    #[getter]
    fn total_cost(&self) -> u128 {
        self.0.total_cost()
    }

    #[getter]
    fn n_wires(&self) -> usize {
        self.0.n_wires
    }

    #[getter]
    fn n_constraints(&self) -> usize {
        self.0.constraints.len()
    }

    fn counts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = self.0.counts;
        let d = PyDict::new(py);
        for (k, v) in [
            ("n_inputs", c.n_inputs),
            ("n_gates", c.n_gates),
            ("n_mul", c.n_mul),
            ("n_add", c.n_add),
            ("n_cst", c.n_cst),
            ("n_hints", c.n_hints),
            ("n_constraints", c.n_constraints),
        ] {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    /// Quantize a flat float input and run the circuit.
    fn witness(&self, input: Vec<f64>) -> PyResult<PyWitness> {
        let q = quantize(&input, &self.0.input_shape, &self.0.quant).map_err(err)?;
        generate_witness(&self.0, &q).map(PyWitness).map_err(err)
    }

    fn prove(&self, witness: &PyWitness) -> PyResult<PyProof> {
        proof::prove(&self.0, &witness.0).map(PyProof).map_err(err)
    }

    /// `(accepted, reason)`; the reason is empty on accept.
    fn verify(&self, witness: &PyWitness, proof: &PyProof) -> (bool, String) {
        let io = PublicIo::from_witness(&self.0, &witness.0);
        match proof::verify(&self.0, &io, Some(&witness.0), &proof.0) {
            Verdict::Accept => (true, String::new()),
            Verdict::Reject(r) => (false, r.to_string()),
        }
    }
}

#[pyclass(name = "Witness")]
struct PyWitness(Witness);

#[pymethods]
impl PyWitness {
    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn values(&self) -> Vec<u64> {
        self.0.values().to_vec()
    }

    fn set(&mut self, wire: u32, value: u64) -> PyResult<()> {
        if wire as usize >= self.0.len() {
            return Err(PyValueError::new_err(format!("wire {wire} out of range")));
        }
        self.0.set(zkinfer::circuit::WireId(wire), value);
        Ok(())
    }

    fn outputs(&self, circuit: &PyCircuit) -> Vec<i64> {
        self.0.output_integers(&circuit.0)
    }

    fn output_floats(&self, circuit: &PyCircuit) -> Vec<f64> {
        let alpha = circuit.0.quant.alpha() as f64;
        self.0.output_integers(&circuit.0).iter().map(|&x| x as f64 / alpha).collect()
    }

    /// Number of violated gates and constraints.
    fn violations(&self, circuit: &PyCircuit) -> PyResult<usize> {
        check_constraints(&circuit.0, &self.0).map(|r| r.violations()).map_err(err)
    }

    fn digest(&self) -> String {
        hex(&self.0.digest())
    }
}

#[pyclass(name = "Proof", frozen)]
struct PyProof(ProofArtifact);

#[pymethods]
impl PyProof {
    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        ProofArtifact::from_bytes(data).map(Self).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.to_bytes())
    }

    #[getter]
    fn n_openings(&self) -> usize {
        self.0.openings.len()
    }
}

fn to_py_json<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let json = py.import("json")?;
    json.call_method1("loads", (serde_json::to_string(v).map_err(err)?,))
}

#[pyfunction]
#[pyo3(signature = (model, circuit, config = None))]
fn compile_file<'py>(py: Python<'py>, model: PathBuf, circuit: PathBuf, config: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = PipelineConfig::load(config.as_deref()).map_err(pipeline_err)?;
    let s = pipeline::cmd_compile(&model, &circuit, &cfg).map_err(pipeline_err)?;
    to_py_json(py, &s)
}

#[pyfunction]
fn witness_file<'py>(py: Python<'py>, circuit: PathBuf, input: PathBuf, output: PathBuf, witness: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let s = pipeline::cmd_witness(&circuit, &input, &output, &witness).map_err(pipeline_err)?;
    to_py_json(py, &s)
}

#[pyfunction]
fn prove_file<'py>(py: Python<'py>, circuit: PathBuf, witness: PathBuf, proof: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let s = pipeline::cmd_prove(&circuit, &witness, &proof).map_err(pipeline_err)?;
    to_py_json(py, &s)
}

#[pyfunction]
fn verify_file<'py>(
    py: Python<'py>,
    circuit: PathBuf,
    input: PathBuf,
    output: PathBuf,
    witness: PathBuf,
    proof: PathBuf,
) -> PyResult<Bound<'py, PyAny>> {
    let s = pipeline::cmd_verify(&circuit, &input, &output, &witness, &proof).map_err(pipeline_err)?;
    to_py_json(py, &s)
}

#[pyfunction]
fn mad_outliers(values: Vec<f64>) -> PyResult<Vec<bool>> {
    bench::mad_outliers(&values).map_err(err)
}

/// `(slope, intercept, r_squared)`.
#[pyfunction]
#[pyo3(signature = (x, y, exclude = None))]
fn linear_fit(x: Vec<f64>, y: Vec<f64>, exclude: Option<Vec<bool>>) -> PyResult<(f64, f64, f64)> {
    let exclude = exclude.unwrap_or_else(|| vec![false; x.len()]);
    let r = bench::linear_fit(&x, &y, &exclude).map_err(err)?;
    Ok((r.slope, r.intercept, r.r_squared))
}

#[pyfunction]
#[pyo3(signature = (a, b, c, field = None, repetitions = 2, seed = 0))]
fn freivalds_check(
    a: Vec<Vec<i64>>,
    b: Vec<Vec<i64>>,
    c: Vec<Vec<i64>>,
    field: Option<PyField>,
    repetitions: u32,
    seed: u64,
) -> PyResult<bool> {
    let m = |rows: Vec<Vec<i64>>| -> PyResult<proof::IntMatrix> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err("ragged matrix"));
        }
        Ok(proof::IntMatrix::new(rows.len(), cols, rows.concat()))
    };
    let f = field.map_or_else(FieldConfig::mersenne61, |f| f.0);
    proof::freivalds_check(&m(a)?, &m(b)?, &m(c)?, &f, &proof::FreivaldsParams { repetitions, seed }).map_err(err)
}

#[pymodule]
fn pyzkinfer(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("ZkError", m.py().get_type::<ZkError>())?;
    m.add("PipelineFailure", m.py().get_type::<PipelineFailure>())?;
    m.add_class::<PyField>()?;
    m.add_class::<PyQuantConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyCircuit>()?;
    m.add_class::<PyWitness>()?;
    m.add_class::<PyProof>()?;
    m.add_function(wrap_pyfunction!(compile_file, m)?)?;
    m.add_function(wrap_pyfunction!(witness_file, m)?)?;
    m.add_function(wrap_pyfunction!(prove_file, m)?)?;
    m.add_function(wrap_pyfunction!(verify_file, m)?)?;
    m.add_function(wrap_pyfunction!(mad_outliers, m)?)?;
    m.add_function(wrap_pyfunction!(linear_fit, m)?)?;
    m.add_function(wrap_pyfunction!(freivalds_check, m)?)?;
    Ok(())
}
