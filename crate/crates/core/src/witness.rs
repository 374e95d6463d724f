//! Witness generation, constraint checking and the float reference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::circuit::{Constraint, ConstraintSystem, Gate, WireId, WireSource};
use crate::field::FieldConfig;
use crate::model::{gemm_dims, infer_shapes, ModelError, ModelGraph, Op, Tensor};
use crate::quant::QuantizedTensor;

pub const WITNESS_FORMAT_VERSION: u32 = 1;
const WITNESS_MAGIC: &[u8; 4] = b"ZKWT";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WitnessError {
    #[error("input shape {got:?} does not match circuit input {expected:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },
    #[error("input scale 2^{got} does not match circuit scale 2^{expected}")]
    Scale { expected: u32, got: u32 },
    #[error("input element {index} = {value} outside the {bits}-bit signed input range")]
    InputRange { index: usize, value: i64, bits: u32 },
    #[error("witness has {got} values, circuit has {expected} wires")]
    Length { expected: usize, got: usize },
    #[error("witness over p = {got} used with a circuit over p = {expected}")]
    Field { expected: u64, got: u64 },
    #[error("intermediate left its audited range: {0}")]
    Range(String),
    #[error("witness value at wire {wire} is not a reduced residue")]
    NotReduced { wire: usize },
    #[error("malformed witness file: {0}")]
    Format(String),
    #[error("witness was generated for a different circuit")]
    CircuitMismatch,
}

/// Assignment of a residue to every wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    modulus: u64,
    values: Vec<u64>,
}

impl Witness {
    pub fn new(field: &FieldConfig, values: Vec<u64>) -> Result<Self, WitnessError> {
        let p = field.modulus();
        if let Some(wire) = values.iter().position(|&v| v >= p) {
            return Err(WitnessError::NotReduced { wire });
        }
        Ok(Self { modulus: p, values })
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<u64> {
        self.values
    }

    pub fn get(&self, w: WireId) -> u64 {
        self.values[w.index()]
    }

    /// Overwrite one wire. The value is reduced mod p.
    pub fn set(&mut self, w: WireId, value: u64) {
        self.values[w.index()] = value % self.modulus;
    }

    pub fn public_inputs<'a>(&'a self, cs: &ConstraintSystem) -> &'a [u64] {
        &self.values[..cs.n_inputs]
    }

    pub fn public_outputs(&self, cs: &ConstraintSystem) -> Vec<u64> {
        cs.outputs.iter().map(|w| self.get(*w)).collect()
    }

    /// Decoded output activations.
    pub fn output_integers(&self, cs: &ConstraintSystem) -> Vec<i64> {
        let fp = cs.field.arith();
        cs.outputs.iter().map(|w| fp.decode(self.get(*w))).collect()
    }

    /// SHA-256 over the modulus and the packed values.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.modulus.to_le_bytes());
        h.update((self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    /// `magic, version, circuit digest, modulus, wire count, values`, all
    /// little-endian.
    pub fn to_bytes(&self, circuit_digest: &[u8; 32]) -> Vec<u8> {
        let mut out = Vec::with_capacity(56 + 8 * self.values.len());
        out.extend_from_slice(WITNESS_MAGIC);
        out.extend_from_slice(&WITNESS_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(circuit_digest);
        out.extend_from_slice(&self.modulus.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parse a witness file written for the circuit with `circuit_digest`.
    pub fn from_bytes(bytes: &[u8], cs: &ConstraintSystem, circuit_digest: &[u8; 32]) -> Result<Self, WitnessError> {
        let fmt = |m: &str| WitnessError::Format(m.to_string());
        if bytes.len() < 56 {
            return Err(fmt("truncated header"));
        }
        if &bytes[..4] != WITNESS_MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != WITNESS_FORMAT_VERSION {
            return Err(WitnessError::Format(format!("unsupported version {version}")));
        }
        let modulus = u64::from_le_bytes(bytes[40..48].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[48..56].try_into().unwrap());
        let body = &bytes[56..];
        if body.len() as u64 != count.saturating_mul(8) {
            return Err(WitnessError::Format(format!(
                "header declares {count} values, body holds {} bytes",
                body.len()
            )));
        }
        if &bytes[8..40] != circuit_digest {
            return Err(WitnessError::CircuitMismatch);
        }
        if modulus != cs.field.modulus() {
            return Err(WitnessError::Field {
                expected: cs.field.modulus(),
                got: modulus,
            });
        }
        if count as usize != cs.n_wires {
            return Err(WitnessError::Length {
                expected: cs.n_wires,
                got: count as usize,
            });
        }
        let values = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(&cs.field, values)
    }
}

/// Evaluate every gate and hint in wire order from encoded inputs. No
/// constraint is checked.
pub fn evaluate(cs: &ConstraintSystem, inputs: &[u64]) -> Result<Witness, WitnessError> {
    if inputs.len() != cs.n_inputs {
        return Err(WitnessError::Length {
            expected: cs.n_inputs,
            got: inputs.len(),
        });
    }
    let fp = cs.field.arith();
    let mut values = Vec::with_capacity(cs.n_wires);
    values.extend(inputs.iter().map(|&v| v % fp.modulus()));
    for src in cs.wire_sources() {
        let v = match src {
            WireSource::Gate(Gate::Const { value, .. }) => *value,
            WireSource::Gate(Gate::Add { a, b, .. }) => fp.add(values[a.index()], values[b.index()]),
            WireSource::Gate(Gate::Mul { a, b, .. }) => fp.mul(values[a.index()], values[b.index()]),
            WireSource::Hint(h) => h.kind.apply(values[h.operand.index()], h.imm),
        };
        values.push(v);
    }
    Ok(Witness {
        modulus: fp.modulus(),
        values,
    })
}

/// Violations found by [`check_constraints`]. Gate equations are part of the
/// relation, so a tampered non-hint wire shows up even when no assertion
/// reads it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckReport {
    /// Output wires of gates whose equation fails.
    pub violated_gates: Vec<WireId>,
    /// Indices into `cs.constraints`.
    pub violated_constraints: Vec<usize>,
    /// Hint-internal wires (see [`ConstraintSystem::hint_internal_wires`])
    /// that differ from recomputation.
    pub stale_hints: Vec<WireId>,
}

impl CheckReport {
    pub fn is_empty(&self) -> bool {
        self.violated_gates.is_empty() && self.violated_constraints.is_empty() && self.stale_hints.is_empty()
    }

    pub fn violations(&self) -> usize {
        self.violated_gates.len() + self.violated_constraints.len() + self.stale_hints.len()
    }

    pub fn first(&self, cs: &ConstraintSystem) -> Option<String> {
        if let Some(&i) = self.violated_constraints.first() {
            return Some(format!("constraint {i} ({:?})", cs.constraints[i]));
        }
        if let Some(w) = self.violated_gates.first() {
            return Some(format!("gate defining {w}"));
        }
        self.stale_hints.first().map(|w| format!("hint wire {w}"))
    }
}

/// Whether a single constraint holds.
pub fn constraint_holds(cs: &ConstraintSystem, c: &Constraint, values: &[u64]) -> bool {
    let fp = cs.field.arith();
    let v = |w: &WireId| values[w.index()];
    match c {
        Constraint::AssertZero { a, b: None } => v(a) == 0,
        Constraint::AssertZero { a, b: Some(b) } => fp.mul(v(a), v(b)) == 0,
        Constraint::AssertEqual { a, b } => v(a) == v(b),
        Constraint::AssertBool { a } => fp.mul(v(a), fp.sub(v(a), 1)) == 0,
    }
}

pub fn check_constraints(cs: &ConstraintSystem, w: &Witness) -> Result<CheckReport, WitnessError> {
    if w.len() != cs.n_wires {
        return Err(WitnessError::Length {
            expected: cs.n_wires,
            got: w.len(),
        });
    }
    if w.modulus != cs.field.modulus() {
        return Err(WitnessError::Field {
            expected: cs.field.modulus(),
            got: w.modulus,
        });
    }
    let fp = cs.field.arith();
    let vals = &w.values;
    let mut report = CheckReport::default();
    for g in &cs.gates {
        let ok = match *g {
            Gate::Const { value, out } => vals[out.index()] == value,
            Gate::Add { a, b, out } => vals[out.index()] == fp.add(vals[a.index()], vals[b.index()]),
            Gate::Mul { a, b, out } => vals[out.index()] == fp.mul(vals[a.index()], vals[b.index()]),
        };
        if !ok {
            report.violated_gates.push(g.out());
        }
    }
    for (i, c) in cs.constraints.iter().enumerate() {
        if !constraint_holds(cs, c, vals) {
            report.violated_constraints.push(i);
        }
    }
    let internal = cs.hint_internal_wires();
    if !internal.is_empty() {
        let mut is_internal = vec![false; cs.n_wires];
        for w in internal {
            is_internal[w.index()] = true;
        }
        report.stale_hints = cs
            .hints
            .iter()
            .filter(|h| is_internal[h.out.index()] && h.kind.apply(vals[h.operand.index()], h.imm) != vals[h.out.index()])
            .map(|h| h.out)
            .collect();
    }
    Ok(report)
}

/// Hint wires whose stored value differs from recomputation.
pub fn check_hints(cs: &ConstraintSystem, w: &Witness) -> Vec<WireId> {
    cs.hints
        .iter()
        .filter(|h| h.kind.apply(w.get(h.operand), h.imm) != w.get(h.out))
        .map(|h| h.out)
        .collect()
}

/// Run the circuit on a quantized input and confirm the result satisfies
/// every constraint.
pub fn generate_witness(cs: &ConstraintSystem, input: &QuantizedTensor) -> Result<Witness, WitnessError> {
    if input.shape != cs.input_shape || input.data.len() != cs.n_inputs {
        return Err(WitnessError::Shape {
            expected: cs.input_shape.clone(),
            got: input.shape.clone(),
        });
    }
    if input.scale_exponent != cs.quant.scale_exponent {
        return Err(WitnessError::Scale {
            expected: cs.quant.scale_exponent,
            got: input.scale_exponent,
        });
    }
    let bits = cs.quant.input_bits();
    let lim = 1i64 << (bits - 1);
    if let Some((index, &value)) = input.data.iter().enumerate().find(|(_, &x)| x < -lim || x >= lim) {
        return Err(WitnessError::InputRange { index, value, bits });
    }
    let fp = cs.field.arith();
    let encoded: Vec<u64> = input.data.iter().map(|&x| fp.reduce_i128(x as i128)).collect();
    let w = evaluate(cs, &encoded)?;
    let report = check_constraints(cs, &w)?;
    if let Some(first) = report.first(cs) {
        return Err(WitnessError::Range(format!(
            "{} violation(s), first at {first}",
            report.violations()
        )));
    }
    Ok(w)
}

/// The output file: integers at scale alpha plus their float view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputData {
    pub output: Vec<i64>,
    pub shape: Vec<usize>,
    pub scale_exponent: u32,
    pub float_view: Vec<f64>,
}

impl OutputData {
    pub fn from_witness(cs: &ConstraintSystem, w: &Witness) -> Self {
        let output = w.output_integers(cs);
        let alpha = (1u64 << cs.quant.scale_exponent) as f64;
        Self {
            float_view: output.iter().map(|&x| x as f64 / alpha).collect(),
            output,
            shape: cs.output_shape.clone(),
            scale_exponent: cs.quant.scale_exponent,
        }
    }

    pub fn parse(document: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(document)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("output serializes")
    }
}

/// Plain floating-point inference.
pub fn run_float_reference(graph: &ModelGraph, input: &Tensor) -> Result<Tensor, ModelError> {
    if input.shape != graph.input.shape {
        return Err(ModelError::Shape {
            node: graph.input.name.clone(),
            msg: format!("input shape {:?}, graph expects {:?}", input.shape, graph.input.shape),
        });
    }
    let shapes = infer_shapes(graph)?;
    let mut env: BTreeMap<&str, Tensor> = BTreeMap::new();
    env.insert(graph.input.name.as_str(), input.clone());
    for idx in graph.topological_order()? {
        let node = &graph.nodes[idx];
        let x = &env[node.activation()];
        let param = |i: usize| node.inputs.get(i).map(|n| &graph.initializers[n]);
        let out_shape = shapes[&node.output].shape.clone();
        let data = match &node.op {
            Op::Relu => x.data.iter().map(|&v| v.max(0.0)).collect(),
            Op::Reshape { .. } => x.data.clone(),
            Op::Gemm { trans_a, trans_b } => {
                let w = param(1).unwrap();
                let (m, k, n) = gemm_dims(&x.shape, &w.shape, *trans_a, *trans_b).unwrap();
                let bias = param(2);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for t in 0..k {
                            let a = if *trans_a { x.data[t * m + i] } else { x.data[i * k + t] };
                            let b = if *trans_b { w.data[j * k + t] } else { w.data[t * n + j] };
                            acc += a * b;
                        }
                        if let Some(b) = bias {
                            acc += if b.data.len() == n { b.data[j] } else { b.data[i * n + j] };
                        }
                        out[i * n + j] = acc;
                    }
                }
                out
            }
            Op::Conv2D { stride, padding, .. } => {
                let w = param(1).unwrap();
                let bias = param(2);
                let (c, h, wd) = (x.shape[1], x.shape[2], x.shape[3]);
                let (kh, kw) = (w.shape[2], w.shape[3]);
                let [n, oc, oh, ow] = out_shape[..] else { unreachable!() };
                let mut out = vec![0.0; n * oc * oh * ow];
                for b in 0..n {
                    for o in 0..oc {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let mut acc = bias.map_or(0.0, |t| t.data[o]);
                                for ci in 0..c {
                                    for dy in 0..kh {
                                        for dx in 0..kw {
                                            let iy = (y * stride[0] + dy) as isize - padding[0] as isize;
                                            let ix = (xx * stride[1] + dx) as isize - padding[1] as isize;
                                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                                continue;
                                            }
                                            acc += x.data[((b * c + ci) * h + iy as usize) * wd + ix as usize]
                                                * w.data[((o * c + ci) * kh + dy) * kw + dx];
                                        }
                                    }
                                }
                                out[((b * oc + o) * oh + y) * ow + xx] = acc;
                            }
                        }
                    }
                }
                out
            }
            Op::MaxPool2D { window, stride } => {
                let (h, wd) = (x.shape[2], x.shape[3]);
                let [n, c, oh, ow] = out_shape[..] else { unreachable!() };
                let mut out = Vec::with_capacity(n * c * oh * ow);
                for plane in 0..n * c {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut m = f64::NEG_INFINITY;
                            for dy in 0..window[0] {
                                for dx in 0..window[1] {
                                    m = m.max(x.data[(plane * h + y * stride[0] + dy) * wd + xx * stride[1] + dx]);
                                }
                            }
                            out.push(m);
                        }
                    }
                }
                out
            }
        };
        env.insert(node.output.as_str(), Tensor { shape: out_shape, data });
    }
    Ok(env.remove(graph.output.as_str()).expect("output produced"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{compile, CostConfig};
    use crate::model::parse_model;
    use crate::quant::{quantize, QuantConfig};

    fn relu_cs() -> (ModelGraph, ConstraintSystem) {
        let g = parse_model(
            r#"{"format_version": 1, "input": {"name": "x", "shape": [1, 2]}, "output": "y",
                "nodes": [{"op": "ReLU", "inputs": ["x"], "output": "y"}]}"#,
        )
        .unwrap();
        let cs = compile(&g, &QuantConfig::new(4, 12, 8), &FieldConfig::mersenne61(), &CostConfig::default()).unwrap();
        (g, cs)
    }

    #[test]
    fn relu_witness() {
        let (_, cs) = relu_cs();
        let x = QuantizedTensor {
            data: vec![-7, 7],
            shape: vec![1, 2],
            scale_exponent: 4,
        };
        let w = generate_witness(&cs, &x).unwrap();
        assert_eq!(w.output_integers(&cs), vec![0, 7]);
        assert!(check_hints(&cs, &w).is_empty());
    }

    #[test]
    fn input_errors() {
        let (_, cs) = relu_cs();
        let wrong_shape = QuantizedTensor {
            data: vec![1, 2, 3],
            shape: vec![1, 3],
            scale_exponent: 4,
        };
        assert!(matches!(generate_witness(&cs, &wrong_shape), Err(WitnessError::Shape { .. })));
        let too_big = QuantizedTensor {
            data: vec![1, 1000],
            shape: vec![1, 2],
            scale_exponent: 4,
        };
        assert!(matches!(generate_witness(&cs, &too_big), Err(WitnessError::InputRange { index: 1, .. })));
    }

    #[test]
    fn booleanity_violation_reported() {
        let (_, cs) = relu_cs();
        let q = quantize(&[0.5, -0.25], &[1, 2], &cs.quant).unwrap();
        let mut w = generate_witness(&cs, &q).unwrap();
        let (i, bit) = cs
            .constraints
            .iter()
            .enumerate()
            .find_map(|(i, c)| match c {
                Constraint::AssertBool { a } => Some((i, *a)),
                _ => None,
            })
            .unwrap();
        w.set(bit, 2);
        let report = check_constraints(&cs, &w).unwrap();
        assert!(report.violated_constraints.contains(&i));
    }

    #[test]
    fn file_roundtrip() {
        let (_, cs) = relu_cs();
        let q = quantize(&[0.5, -0.25], &[1, 2], &cs.quant).unwrap();
        let w = generate_witness(&cs, &q).unwrap();
        let d = cs.digest();
        let bytes = w.to_bytes(&d);
        assert_eq!(Witness::from_bytes(&bytes, &cs, &d).unwrap(), w);
        assert!(matches!(
            Witness::from_bytes(&bytes[..bytes.len() - 1], &cs, &d),
            Err(WitnessError::Format(_))
        ));
        assert_eq!(Witness::from_bytes(&bytes, &cs, &[0; 32]), Err(WitnessError::CircuitMismatch));
    }

    #[test]
    fn float_reference_relu() {
        let (g, _) = relu_cs();
        let out = run_float_reference(&g, &Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(out.data, vec![0.0, 2.0]);
    }

    #[test]
    fn float_reference_bias_only_on_zero_input() {
        let g = parse_model(
            r#"{"format_version": 1, "input": {"name": "x", "shape": [1, 2]}, "output": "y",
                "nodes": [{"op": "Gemm", "inputs": ["x", "w", "b"], "output": "y"}],
                "initializers": {"w": {"shape": [2, 3], "data": [[1, 2, 3], [4, 5, 6]]},
                                 "b": {"shape": [3], "data": [0.5, -1, 2]}}}"#,
        )
        .unwrap();
        let out = run_float_reference(&g, &Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(out.data, vec![0.5, -1.0, 2.0]);
    }
}
