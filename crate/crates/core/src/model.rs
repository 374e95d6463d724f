//! JSON model format, validation, shape inference and topological ordering.
//!
//! The format mirrors ONNX operator semantics for the supported operator set
//! (`Gemm`, `Conv2D`, `ReLU`, `MaxPool2D`, `Reshape`) with NCHW layout:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "input": {"name": "x", "shape": [1, 1, 8, 8]},
//!   "output": "y",
//!   "nodes": [
//!     {"name": "conv0", "op": "Conv2D", "inputs": ["x", "w0", "b0"], "output": "c0",
//!      "attributes": {"stride": [1, 1], "padding": [0, 0], "kernel_shape": [3, 3]}},
//!     {"name": "relu0", "op": "ReLU", "inputs": ["c0"], "output": "y"}
//!   ],
//!   "initializers": {"w0": {"shape": [4, 1, 3, 3], "data": [[[[0.1, ...]]]]}}
//! }
//! ```
//!
//! Initializer data is a nested row-major array matching `shape`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub const MODEL_FORMAT_VERSION: u64 = 1;
pub const MAX_RANK: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unsupported operator `{op}` in node `{node}`")]
    UnsupportedOp { node: String, op: String },
    #[error("graph structure error: {0}")]
    Structure(String),
    #[error("shape error in node `{node}`: {msg}")]
    Shape { node: String, msg: String },
}

fn schema(msg: impl Into<String>) -> ModelError {
    ModelError::Schema(msg.into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Result<Self, ModelError> {
        let spec = Self {
            name: name.into(),
            shape,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.shape.is_empty() || self.shape.len() > MAX_RANK {
            return Err(schema(format!(
                "tensor `{}` has rank {}, expected 1..={MAX_RANK}",
                self.name,
                self.shape.len()
            )));
        }
        if self.shape.contains(&0) {
            return Err(schema(format!(
                "tensor `{}` has a zero dimension: {:?}",
                self.name, self.shape
            )));
        }
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A dense float tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ModelError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(schema(format!(
                "tensor of shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Gemm,
    Conv2D,
    Relu,
    MaxPool2D,
    Reshape,
}

impl OpKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "Gemm" | "MatMul" => Some(Self::Gemm),
            "Conv2D" | "Conv" => Some(Self::Conv2D),
            "ReLU" | "Relu" => Some(Self::Relu),
            "MaxPool2D" | "MaxPool" => Some(Self::MaxPool2D),
            "Reshape" => Some(Self::Reshape),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gemm => "Gemm",
            Self::Conv2D => "Conv2D",
            Self::Relu => "ReLU",
            Self::MaxPool2D => "MaxPool2D",
            Self::Reshape => "Reshape",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Gemm {
        trans_a: bool,
        trans_b: bool,
    },
    Conv2D {
        stride: [usize; 2],
        padding: [usize; 2],
        kernel_shape: Option<[usize; 2]>,
    },
    Relu,
    MaxPool2D {
        window: [usize; 2],
        stride: [usize; 2],
    },
    /// Target shape; a single `-1` is inferred from the element count.
    Reshape {
        shape: Vec<i64>,
    },
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Gemm { .. } => OpKind::Gemm,
            Op::Conv2D { .. } => OpKind::Conv2D,
            Op::Relu => OpKind::Relu,
            Op::MaxPool2D { .. } => OpKind::MaxPool2D,
            Op::Reshape { .. } => OpKind::Reshape,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelNode {
    pub name: String,
    pub op: Op,
    /// The first input is always the activation; the rest are initializers.
    pub inputs: Vec<String>,
    pub output: String,
}

impl ModelNode {
    pub fn activation(&self) -> &str {
        &self.inputs[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub nodes: Vec<ModelNode>,
    pub initializers: BTreeMap<String, Tensor>,
    pub input: TensorSpec,
    pub output: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    format_version: u64,
    input: TensorSpec,
    output: String,
    nodes: Vec<RawNode>,
    #[serde(default)]
    initializers: BTreeMap<String, RawInitializer>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    #[serde(default)]
    name: Option<String>,
    op: String,
    inputs: Vec<String>,
    output: String,
    #[serde(default)]
    attributes: Map<String, Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitializer {
    shape: Vec<usize>,
    data: Value,
}

/// Parse and validate a model document.
pub fn parse_model(document: &str) -> Result<ModelGraph, ModelError> {
    let raw: RawModel = serde_json::from_str(document).map_err(|e| schema(e.to_string()))?;
    if raw.format_version != MODEL_FORMAT_VERSION {
        return Err(schema(format!(
            "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
            raw.format_version
        )));
    }
    raw.input.validate()?;

    let mut initializers = BTreeMap::new();
    for (name, init) in raw.initializers {
        let mut data = Vec::new();
        flatten_nested(&init.data, &init.shape, 0, &mut data)
            .map_err(|msg| schema(format!("initializer `{name}`: {msg}")))?;
        if init.shape.is_empty() || init.shape.len() > MAX_RANK || init.shape.contains(&0) {
            return Err(schema(format!(
                "initializer `{name}` has invalid shape {:?}",
                init.shape
            )));
        }
        initializers.insert(name, Tensor::new(init.shape, data)?);
    }

    let mut nodes = Vec::with_capacity(raw.nodes.len());
    for (i, rn) in raw.nodes.into_iter().enumerate() {
        let name = rn.name.unwrap_or_else(|| format!("node{i}"));
        let kind = OpKind::parse(&rn.op).ok_or_else(|| ModelError::UnsupportedOp {
            node: name.clone(),
            op: rn.op.clone(),
        })?;
        let op = parse_attributes(&name, kind, &rn.attributes)?;
        nodes.push(ModelNode {
            name,
            op,
            inputs: rn.inputs,
            output: rn.output,
        });
    }

    let graph = ModelGraph {
        nodes,
        initializers,
        input: raw.input,
        output: raw.output,
    };
    graph.validate()?;
    Ok(graph)
}

fn flatten_nested(v: &Value, shape: &[usize], depth: usize, out: &mut Vec<f64>) -> Result<(), String> {
    if depth == shape.len() {
        let x = v
            .as_f64()
            .ok_or_else(|| format!("expected a number at depth {depth}, found {v}"))?;
        if !x.is_finite() {
            return Err("non-finite value".into());
        }
        out.push(x);
        return Ok(());
    }
    let arr = v
        .as_array()
        .ok_or_else(|| format!("expected an array at depth {depth}"))?;
    if arr.len() != shape[depth] {
        return Err(format!(
            "dimension {depth} has {} entries, shape says {}",
            arr.len(),
            shape[depth]
        ));
    }
    for item in arr {
        flatten_nested(item, shape, depth + 1, out)?;
    }
    Ok(())
}

fn nest(data: &[f64], shape: &[usize]) -> Value {
    if shape.len() == 1 {
        return Value::Array(data.iter().map(|&x| json!(x)).collect());
    }
    let stride: usize = shape[1..].iter().product();
    Value::Array(
        data.chunks(stride)
            .map(|chunk| nest(chunk, &shape[1..]))
            .collect(),
    )
}

/// Accepts either a scalar or a two-element array.
fn attr_pair(attrs: &Map<String, Value>, node: &str, keys: &[&str]) -> Result<Option<[usize; 2]>, ModelError> {
    let Some((key, v)) = keys.iter().find_map(|k| attrs.get(*k).map(|v| (*k, v))) else {
        return Ok(None);
    };
    let bad = || schema(format!("node `{node}`: attribute `{key}` must be an integer or a pair of integers"));
    if let Some(x) = v.as_u64() {
        return Ok(Some([x as usize, x as usize]));
    }
    let arr = v.as_array().ok_or_else(bad)?;
    let vals: Vec<usize> = arr
        .iter()
        .map(|x| x.as_u64().map(|x| x as usize).ok_or_else(bad))
        .collect::<Result<_, _>>()?;
    match vals.as_slice() {
        [a, b] => Ok(Some([*a, *b])),
        // ONNX-style pads [top, left, bottom, right]; only symmetric padding is supported.
        [t, l, b, r] if t == b && l == r => Ok(Some([*t, *l])),
        _ => Err(bad()),
    }
}

fn attr_flag(attrs: &Map<String, Value>, node: &str, key: &str) -> Result<bool, ModelError> {
    match attrs.get(key) {
        None => Ok(false),
        Some(Value::Bool(b)) => Ok(*b),
        Some(v) => match v.as_u64() {
            Some(0) => Ok(false),
            Some(1) => Ok(true),
            _ => Err(schema(format!("node `{node}`: attribute `{key}` must be 0/1 or a bool"))),
        },
    }
}

fn check_known(attrs: &Map<String, Value>, node: &str, known: &[&str]) -> Result<(), ModelError> {
    for k in attrs.keys() {
        if !known.contains(&k.as_str()) {
            return Err(schema(format!("node `{node}`: unknown attribute `{k}`")));
        }
    }
    Ok(())
}

fn parse_attributes(node: &str, kind: OpKind, attrs: &Map<String, Value>) -> Result<Op, ModelError> {
    let positive = |pair: [usize; 2], what: &str| {
        if pair[0] == 0 || pair[1] == 0 {
            Err(schema(format!("node `{node}`: {what} must be >= 1")))
        } else {
            Ok(pair)
        }
    };
    match kind {
        OpKind::Gemm => {
            check_known(attrs, node, &["transA", "transB"])?;
            Ok(Op::Gemm {
                trans_a: attr_flag(attrs, node, "transA")?,
                trans_b: attr_flag(attrs, node, "transB")?,
            })
        }
        OpKind::Conv2D => {
            check_known(attrs, node, &["stride", "strides", "padding", "pads", "kernel_shape"])?;
            let stride = positive(attr_pair(attrs, node, &["stride", "strides"])?.unwrap_or([1, 1]), "stride")?;
            let padding = attr_pair(attrs, node, &["padding", "pads"])?.unwrap_or([0, 0]);
            let kernel_shape = attr_pair(attrs, node, &["kernel_shape"])?
                .map(|k| positive(k, "kernel_shape"))
                .transpose()?;
            Ok(Op::Conv2D {
                stride,
                padding,
                kernel_shape,
            })
        }
        OpKind::Relu => {
            check_known(attrs, node, &[])?;
            Ok(Op::Relu)
        }
        OpKind::MaxPool2D => {
            check_known(attrs, node, &["window", "kernel_shape", "stride", "strides"])?;
            let window = attr_pair(attrs, node, &["window", "kernel_shape"])?
                .ok_or_else(|| schema(format!("node `{node}`: MaxPool2D needs `window`")))?;
            let window = positive(window, "window")?;
            let stride = positive(attr_pair(attrs, node, &["stride", "strides"])?.unwrap_or(window), "stride")?;
            Ok(Op::MaxPool2D { window, stride })
        }
        OpKind::Reshape => {
            check_known(attrs, node, &["shape"])?;
            let arr = attrs
                .get("shape")
                .and_then(Value::as_array)
                .ok_or_else(|| schema(format!("node `{node}`: Reshape needs a `shape` array")))?;
            let shape: Vec<i64> = arr
                .iter()
                .map(|x| {
                    x.as_i64()
                        .filter(|&d| d == -1 || d >= 1)
                        .ok_or_else(|| schema(format!("node `{node}`: Reshape dims must be >= 1 or -1")))
                })
                .collect::<Result<_, _>>()?;
            if shape.iter().filter(|&&d| d == -1).count() > 1 {
                return Err(schema(format!("node `{node}`: at most one -1 in Reshape shape")));
            }
            Ok(Op::Reshape { shape })
        }
    }
}

impl ModelGraph {
    pub fn validate(&self) -> Result<(), ModelError> {
        let structure = |msg: String| Err(ModelError::Structure(msg));
        if self.initializers.contains_key(&self.input.name) {
            return structure(format!("graph input `{}` shadows an initializer", self.input.name));
        }
        let mut produced: HashMap<&str, usize> = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.output == self.input.name || self.initializers.contains_key(&node.output) {
                return structure(format!("node `{}` overwrites tensor `{}`", node.name, node.output));
            }
            if produced.insert(node.output.as_str(), i).is_some() {
                return structure(format!("tensor `{}` is produced twice", node.output));
            }
        }
        let mut names = HashSet::new();
        for node in &self.nodes {
            if !names.insert(node.name.as_str()) {
                return structure(format!("duplicate node name `{}`", node.name));
            }
            let arity = match node.op.kind() {
                OpKind::Gemm | OpKind::Conv2D => 2..=3,
                _ => 1..=1,
            };
            if !arity.contains(&node.inputs.len()) {
                return Err(schema(format!(
                    "node `{}` ({}) takes {:?} inputs, got {}",
                    node.name,
                    node.op.kind().name(),
                    arity,
                    node.inputs.len()
                )));
            }
            for (slot, input) in node.inputs.iter().enumerate() {
                let is_init = self.initializers.contains_key(input);
                let is_act = *input == self.input.name || produced.contains_key(input.as_str());
                if !is_init && !is_act {
                    return structure(format!("node `{}` reads undefined tensor `{input}`", node.name));
                }
                if slot == 0 && is_init {
                    return structure(format!(
                        "node `{}` expects an activation in its first input, `{input}` is an initializer",
                        node.name
                    ));
                }
                if slot > 0 && !is_init {
                    return structure(format!(
                        "node `{}` expects initializer weights in input {slot}, `{input}` is an activation",
                        node.name
                    ));
                }
            }
        }
        if !produced.contains_key(self.output.as_str()) {
            return structure(format!("graph output `{}` is not produced by any node", self.output));
        }
        self.topological_order()?;
        Ok(())
    }

    /// Producer-before-consumer order; ties go to the earlier-declared node.
    pub fn topological_order(&self) -> Result<Vec<usize>, ModelError> {
        let producer: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.output.as_str(), i))
            .collect();
        let mut indegree = vec![0usize; self.nodes.len()];
        let mut consumers = vec![Vec::new(); self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            for input in &node.inputs {
                if let Some(&j) = producer.get(input.as_str()) {
                    indegree[i] += 1;
                    consumers[j].push(i);
                }
            }
        }
        let mut ready: BinaryHeap<Reverse<usize>> = indegree
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(i, _)| Reverse(i))
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse(i)) = ready.pop() {
            order.push(i);
            for &c in &consumers[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(Reverse(c));
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck: Vec<&str> = (0..self.nodes.len())
                .filter(|&i| indegree[i] > 0)
                .map(|i| self.nodes[i].name.as_str())
                .collect();
            return Err(ModelError::Structure(format!("cycle through nodes {stuck:?}")));
        }
        Ok(order)
    }

    /// Total number of initializer scalars.
    pub fn parameter_count(&self) -> usize {
        self.initializers.values().map(Tensor::numel).sum()
    }

    /// Canonical JSON serialization; `parse_model` reads it back unchanged.
    pub fn to_json(&self) -> String {
        let nodes: Vec<Value> = self
            .nodes
            .iter()
            .map(|n| {
                let mut obj = json!({
                    "name": n.name,
                    "op": n.op.kind().name(),
                    "inputs": n.inputs,
                    "output": n.output,
                });
                let attrs = match &n.op {
                    Op::Gemm { trans_a, trans_b } => json!({"transA": *trans_a as u8, "transB": *trans_b as u8}),
                    Op::Conv2D {
                        stride,
                        padding,
                        kernel_shape,
                    } => {
                        let mut a = json!({"stride": stride, "padding": padding});
                        if let Some(k) = kernel_shape {
                            a["kernel_shape"] = json!(k);
                        }
                        a
                    }
                    Op::Relu => json!({}),
                    Op::MaxPool2D { window, stride } => json!({"window": window, "stride": stride}),
                    Op::Reshape { shape } => json!({"shape": shape}),
                };
                if attrs.as_object().is_some_and(|m| !m.is_empty()) {
                    obj["attributes"] = attrs;
                }
                obj
            })
            .collect();
        let initializers: Map<String, Value> = self
            .initializers
            .iter()
            .map(|(k, t)| (k.clone(), json!({"shape": t.shape, "data": nest(&t.data, &t.shape)})))
            .collect();
        let doc = json!({
            "format_version": MODEL_FORMAT_VERSION,
            "input": self.input,
            "output": self.output,
            "nodes": nodes,
            "initializers": initializers,
        });
        serde_json::to_string_pretty(&doc).expect("model serializes")
    }

    pub fn node_by_output(&self, tensor: &str) -> Option<&ModelNode> {
        self.nodes.iter().find(|n| n.output == tensor)
    }

    /// Nodes reading `tensor`.
    pub fn consumers(&self, tensor: &str) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.inputs.iter().any(|i| i == tensor))
            .map(|(i, _)| i)
            .collect()
    }

    /// Shape of the graph output, via shape inference.
    pub fn output_spec(&self) -> Result<TensorSpec, ModelError> {
        let shapes = infer_shapes(self)?;
        Ok(shapes[&self.output].clone())
    }
}

fn conv_out(len: usize, pad: usize, k: usize, stride: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    (padded >= k).then(|| (padded - k) / stride + 1)
}

/// Shape of the Gemm left operand after the optional transpose, plus the
/// `[k, n]` view of the weight.
pub(crate) fn gemm_dims(
    a: &[usize],
    b: &[usize],
    trans_a: bool,
    trans_b: bool,
) -> Option<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 {
        return None;
    }
    let (m, k) = if trans_a { (a[1], a[0]) } else { (a[0], a[1]) };
    let (k2, n) = if trans_b { (b[1], b[0]) } else { (b[0], b[1]) };
    (k == k2).then_some((m, k, n))
}

/// Assign a shape to every tensor in the graph.
pub fn infer_shapes(graph: &ModelGraph) -> Result<BTreeMap<String, TensorSpec>, ModelError> {
    let mut shapes: BTreeMap<String, TensorSpec> = BTreeMap::new();
    shapes.insert(graph.input.name.clone(), graph.input.clone());
    for (name, t) in &graph.initializers {
        shapes.insert(name.clone(), TensorSpec { name: name.clone(), shape: t.shape.clone() });
    }
    for idx in graph.topological_order()? {
        let node = &graph.nodes[idx];
        let err = |msg: String| ModelError::Shape {
            node: node.name.clone(),
            msg,
        };
        let x = shapes[node.activation()].shape.clone();
        let out = match &node.op {
            Op::Relu => x,
            Op::Reshape { shape } => {
                let total: usize = x.iter().product();
                let known: usize = shape.iter().filter(|&&d| d > 0).map(|&d| d as usize).product();
                let resolved: Vec<usize> = shape
                    .iter()
                    .map(|&d| if d == -1 { total / known.max(1) } else { d as usize })
                    .collect();
                if resolved.iter().product::<usize>() != total || resolved.len() > MAX_RANK {
                    return Err(err(format!("cannot reshape {x:?} into {shape:?}")));
                }
                resolved
            }
            Op::MaxPool2D { window, stride } => {
                if x.len() != 4 {
                    return Err(err(format!("MaxPool2D expects NCHW input, got {x:?}")));
                }
                let h = conv_out(x[2], 0, window[0], stride[0]);
                let w = conv_out(x[3], 0, window[1], stride[1]);
                match (h, w) {
                    (Some(h), Some(w)) => vec![x[0], x[1], h, w],
                    _ => return Err(err(format!("window {window:?} larger than input {x:?}"))),
                }
            }
            Op::Conv2D {
                stride,
                padding,
                kernel_shape,
            } => {
                let w = &shapes[&node.inputs[1]].shape;
                if x.len() != 4 || w.len() != 4 {
                    return Err(err(format!("Conv2D expects rank-4 input and kernel, got {x:?} and {w:?}")));
                }
                if w[1] != x[1] {
                    return Err(err(format!("kernel has {} input channels, input has {}", w[1], x[1])));
                }
                if let Some(k) = kernel_shape {
                    if k[0] != w[2] || k[1] != w[3] {
                        return Err(err(format!("kernel_shape {k:?} disagrees with weight shape {w:?}")));
                    }
                }
                if let Some(b) = node.inputs.get(2) {
                    let b = &shapes[b].shape;
                    if b.as_slice() != [w[0]] {
                        return Err(err(format!("bias shape {b:?}, expected [{}]", w[0])));
                    }
                }
                let h = conv_out(x[2], padding[0], w[2], stride[0]);
                let ww = conv_out(x[3], padding[1], w[3], stride[1]);
                match (h, ww) {
                    (Some(h), Some(ww)) => vec![x[0], w[0], h, ww],
                    _ => return Err(err(format!("kernel {w:?} larger than padded input {x:?}"))),
                }
            }
            Op::Gemm { trans_a, trans_b } => {
                let w = &shapes[&node.inputs[1]].shape;
                let (m, _, n) = gemm_dims(&x, w, *trans_a, *trans_b)
                    .ok_or_else(|| err(format!("cannot multiply {x:?} by {w:?}")))?;
                if let Some(b) = node.inputs.get(2) {
                    let b = &shapes[b].shape;
                    let ok = b.as_slice() == [n] || b.as_slice() == [1, n] || b.as_slice() == [m, n];
                    if !ok {
                        return Err(err(format!("bias shape {b:?} does not broadcast to [{m}, {n}]")));
                    }
                }
                vec![m, n]
            }
        };
        shapes.insert(
            node.output.clone(),
            TensorSpec {
                name: node.output.clone(),
                shape: out,
            },
        );
    }
    Ok(shapes)
}

/// Input-data file: `{"input": [flat floats], "shape": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputData {
    pub input: Vec<f64>,
    pub shape: Vec<usize>,
}

impl InputData {
    pub fn parse(document: &str) -> Result<Self, ModelError> {
        let data: InputData = serde_json::from_str(document).map_err(|e| schema(e.to_string()))?;
        let n: usize = data.shape.iter().product();
        if n != data.input.len() {
            return Err(schema(format!(
                "input has {} values but shape {:?} needs {n}",
                data.input.len(),
                data.shape
            )));
        }
        if data.input.iter().any(|x| !x.is_finite()) {
            return Err(schema("input contains non-finite values"));
        }
        Ok(data)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("input serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relu_model() -> String {
        r#"{"format_version": 1, "input": {"name": "x", "shape": [1, 2]}, "output": "y",
            "nodes": [{"op": "ReLU", "inputs": ["x"], "output": "y"}]}"#
            .to_string()
    }

    #[test]
    fn minimal_graph() {
        let g = parse_model(&relu_model()).unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert_eq!(g.nodes[0].op, Op::Relu);
        assert_eq!(g.output_spec().unwrap().shape, vec![1, 2]);
    }

    #[test]
    fn unsupported_operator_is_named() {
        let doc = relu_model().replace("ReLU", "Softmax");
        match parse_model(&doc) {
            Err(ModelError::UnsupportedOp { op, .. }) => assert_eq!(op, "Softmax"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(parse_model("{"), Err(ModelError::Schema(_))));
        assert!(matches!(
            parse_model(r#"{"format_version": 1, "input": {"name": "x", "shape": [1]}, "nodes": []}"#),
            Err(ModelError::Schema(_))
        ));
        let bad_rank = relu_model().replace("[1, 2]", "[1, 1, 1, 1, 2]");
        assert!(matches!(parse_model(&bad_rank), Err(ModelError::Schema(_))));
        let bad_version = relu_model().replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(parse_model(&bad_version), Err(ModelError::Schema(_))));
    }

    #[test]
    fn dangling_and_self_loop() {
        let dangling = relu_model().replace(r#"["x"]"#, r#"["nope"]"#);
        assert!(matches!(parse_model(&dangling), Err(ModelError::Structure(_))));
        let self_loop = r#"{"format_version": 1, "input": {"name": "x", "shape": [2]}, "output": "y",
            "nodes": [{"op": "ReLU", "inputs": ["y"], "output": "y"}]}"#;
        match parse_model(self_loop) {
            Err(ModelError::Structure(msg)) => assert!(msg.contains("cycle"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let two_cycle = r#"{"format_version": 1, "input": {"name": "x", "shape": [2]}, "output": "b",
            "nodes": [{"op": "ReLU", "inputs": ["b"], "output": "a"},
                      {"op": "ReLU", "inputs": ["a"], "output": "b"}]}"#;
        assert!(matches!(parse_model(two_cycle), Err(ModelError::Structure(_))));
    }

    #[test]
    fn shape_formulas() {
        let doc = r#"{"format_version": 1, "input": {"name": "x", "shape": [1, 1, 8, 8]}, "output": "p",
            "nodes": [
              {"name": "conv", "op": "Conv2D", "inputs": ["x", "w"], "output": "c",
               "attributes": {"stride": 1, "padding": 0, "kernel_shape": [3, 3]}},
              {"name": "pool", "op": "MaxPool2D", "inputs": ["c"], "output": "p",
               "attributes": {"window": [2, 2], "stride": [2, 2]}}
            ],
            "initializers": {"w": {"shape": [4, 1, 3, 3], "data":
              [[[[0,0,0],[0,1,0],[0,0,0]]],[[[0,0,0],[0,1,0],[0,0,0]]],
               [[[0,0,0],[0,1,0],[0,0,0]]],[[[0,0,0],[0,1,0],[0,0,0]]]]}}}"#;
        let g = parse_model(doc).unwrap();
        let s = infer_shapes(&g).unwrap();
        assert_eq!(s["c"].shape, vec![1, 4, 6, 6]);
        assert_eq!(s["p"].shape, vec![1, 4, 3, 3]);

        let gemm = r#"{"format_version": 1, "input": {"name": "x", "shape": [1, 16]}, "output": "y",
            "nodes": [{"op": "Gemm", "inputs": ["x", "w"], "output": "y"}],
            "initializers": {"w": {"shape": [16, 10], "data": DATA}}}"#
            .replace("DATA", &serde_json::to_string(&vec![vec![0.0; 10]; 16]).unwrap());
        let g = parse_model(&gemm).unwrap();
        assert_eq!(infer_shapes(&g).unwrap()["y"].shape, vec![1, 10]);
    }

    #[test]
    fn gemm_shape_mismatch_names_node() {
        let gemm = r#"{"format_version": 1, "input": {"name": "x", "shape": [1, 3]}, "output": "y",
            "nodes": [{"name": "fc", "op": "Gemm", "inputs": ["x", "w"], "output": "y"}],
            "initializers": {"w": {"shape": [2, 2], "data": [[1, 2], [3, 4]]}}}"#;
        let g = parse_model(gemm).unwrap();
        match infer_shapes(&g) {
            Err(ModelError::Shape { node, .. }) => assert_eq!(node, "fc"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn initializer_shape_must_match_data() {
        let gemm = r#"{"format_version": 1, "input": {"name": "x", "shape": [1, 2]}, "output": "y",
            "nodes": [{"op": "Gemm", "inputs": ["x", "w"], "output": "y"}],
            "initializers": {"w": {"shape": [2, 2], "data": [[1, 2], [3]]}}}"#;
        assert!(matches!(parse_model(gemm), Err(ModelError::Schema(_))));
    }

    #[test]
    fn topological_order_sorts_shuffled_nodes() {
        let doc = r#"{"format_version": 1, "input": {"name": "x", "shape": [2]}, "output": "c",
            "nodes": [{"name": "n2", "op": "ReLU", "inputs": ["b"], "output": "c"},
                      {"name": "n0", "op": "ReLU", "inputs": ["x"], "output": "a"},
                      {"name": "n1", "op": "ReLU", "inputs": ["a"], "output": "b"}]}"#;
        let g = parse_model(doc).unwrap();
        let order = g.topological_order().unwrap();
        assert_eq!(order, vec![1, 2, 0]);
    }

    #[test]
    fn reshape_infers_minus_one() {
        let doc = r#"{"format_version": 1, "input": {"name": "x", "shape": [1, 2, 3, 4]}, "output": "y",
            "nodes": [{"op": "Reshape", "inputs": ["x"], "output": "y", "attributes": {"shape": [1, -1]}}]}"#;
        let g = parse_model(doc).unwrap();
        assert_eq!(g.output_spec().unwrap().shape, vec![1, 24]);
        let bad = doc.replace("[1, -1]", "[5, -1]");
        assert!(matches!(parse_model(&bad).unwrap().output_spec(), Err(ModelError::Shape { .. })));
    }

    #[test]
    fn input_data_validation() {
        assert!(InputData::parse(r#"{"input": [1.0, 2.0], "shape": [1, 2]}"#).is_ok());
        assert!(InputData::parse(r#"{"input": [1.0], "shape": [1, 2]}"#).is_err());
        assert!(InputData::parse(r#"{"shape": [1, 2]}"#).is_err());
    }
}
