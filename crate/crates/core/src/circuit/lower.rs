//! Lowering of a model graph into a constraint system, with the per-node
//! overflow audit.
//!
//! Every activation carries a magnitude bound. Inputs are range-checked in
//! circuit at `QuantConfig::input_bits`, which seeds the bounds; each
//! Gemm/Conv node then propagates `sum |w_i| * B_x + alpha * |b|` through its
//! accumulator and divides by alpha. Compilation fails if an accumulator can
//! leave the requantization window or an activation can leave the κ budget.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::builder::{CircuitBuilder, GadgetError};
use super::{ConstraintSystem, CostConfig, WireId};
use crate::field::FieldConfig;
use crate::model::{gemm_dims, infer_shapes, ModelError, ModelGraph, ModelNode, Op, OpKind, TensorSpec};
use crate::quant::{quantize, QuantConfig, QuantError, QuantizedTensor, RescaleMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompileOptions {
    /// Merge a Gemm/Conv2D with a ReLU that is its only consumer.
    pub fuse_relu: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self { fuse_relu: true }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompileError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("config: {0}")]
    Config(#[from] QuantError),
    #[error("initializer `{name}`: {source}")]
    Initializer { name: String, source: QuantError },
    #[error("node `{node}`: {source}")]
    Gadget { node: String, source: GadgetError },
    #[error("node `{node}`: accumulator bound {bound} exceeds the requantization window {limit}; needs nu >= {required_nu}")]
    Overflow {
        node: String,
        bound: u128,
        limit: u128,
        required_nu: u32,
    },
    #[error("node `{node}`: activation bound {bound} exceeds the {kappa}-bit signed budget")]
    ActivationOverflow { node: String, bound: u128, kappa: u32 },
}

/// Model parameters at scale alpha, as embedded in the circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub quant: QuantConfig,
    pub input: TensorSpec,
    pub output: TensorSpec,
    pub initializers: BTreeMap<String, QuantizedTensor>,
}

/// Quantize every initializer (weights and biases alike) at scale alpha.
pub fn quantize_model(graph: &ModelGraph, cfg: &QuantConfig) -> Result<QuantizedModel, CompileError> {
    let mut initializers = BTreeMap::new();
    for (name, t) in &graph.initializers {
        let q = quantize(&t.data, &t.shape, cfg).map_err(|source| CompileError::Initializer {
            name: name.clone(),
            source,
        })?;
        initializers.insert(name.clone(), q);
    }
    Ok(QuantizedModel {
        quant: *cfg,
        input: graph.input.clone(),
        output: graph.output_spec()?,
        initializers,
    })
}

pub fn compile(
    graph: &ModelGraph,
    qcfg: &QuantConfig,
    fcfg: &FieldConfig,
    ccfg: &CostConfig,
) -> Result<ConstraintSystem, CompileError> {
    compile_with(graph, qcfg, fcfg, ccfg, &CompileOptions::default())
}

/// Wires of one tensor plus a bound on the magnitude of every entry.
#[derive(Debug, Clone)]
struct Value {
    shape: Vec<usize>,
    wires: Vec<WireId>,
    bound: u128,
}

struct Lowering<'a> {
    b: CircuitBuilder,
    q: &'a QuantConfig,
    qm: &'a QuantizedModel,
}

fn ceil_div(a: u128, b: u128) -> u128 {
    a.div_ceil(b)
}

impl Lowering<'_> {
    fn gadget<T>(node: &ModelNode, r: Result<T, GadgetError>) -> Result<T, CompileError> {
        r.map_err(|source| CompileError::Gadget {
            node: node.name.clone(),
            source,
        })
    }

    fn check_activation(&self, node: &ModelNode, bound: u128) -> Result<(), CompileError> {
        if bound > self.q.budget() as u128 {
            return Err(CompileError::ActivationOverflow {
                node: node.name.clone(),
                bound,
                kappa: self.q.kappa,
            });
        }
        Ok(())
    }

    fn check_window(&self, node: &ModelNode, bound: u128) -> Result<(), CompileError> {
        let limit = self.q.shift() as u128 - 1;
        if bound > limit {
            let alpha = self.q.alpha() as u128;
            let mut required_nu = self.q.nu;
            while required_nu < 127 - self.q.scale_exponent && (alpha << (required_nu - 1)) - 1 < bound {
                required_nu += 1;
            }
            return Err(CompileError::Overflow {
                node: node.name.clone(),
                bound,
                limit,
                required_nu,
            });
        }
        Ok(())
    }

    /// One output element of a dot product. `terms` pairs activation wires
    /// with quantized weights; `bias` is at scale alpha.
    fn dot(
        &mut self,
        node: &ModelNode,
        terms: &[(WireId, i64)],
        bias: Option<i64>,
        x_bound: u128,
        fuse: bool,
    ) -> Result<(WireId, u128), CompileError> {
        let alpha = self.q.alpha() as u128;
        let b_abs = bias.map_or(0, |b| b.unsigned_abs() as u128);
        match self.q.rescale {
            RescaleMode::Accumulate => {
                let mut bound: u128 = alpha.saturating_mul(b_abs);
                let mut prods = Vec::with_capacity(terms.len() + 1);
                for &(x, w) in terms {
                    bound = bound.saturating_add((w.unsigned_abs() as u128).saturating_mul(x_bound));
                    let wc = self.b.constant_signed(w as i128);
                    prods.push(self.b.mul(x, wc));
                }
                if let Some(bias) = bias {
                    prods.push(self.b.constant_signed(bias as i128 * alpha as i128));
                }
                self.check_window(node, bound)?;
                let acc = self.b.sum(&prods);
                let out = if fuse {
                    let r = self.b.fused_requant_relu(acc, self.q);
                    Self::gadget(node, r)?
                } else {
                    let r = self.b.requantize(acc, self.q);
                    Self::gadget(node, r)?.q
                };
                Ok((out, ceil_div(bound, alpha)))
            }
            RescaleMode::PerProduct => {
                let mut bound = b_abs;
                let mut qs = Vec::with_capacity(terms.len() + 1);
                for &(x, w) in terms {
                    let prod_bound = (w.unsigned_abs() as u128).saturating_mul(x_bound);
                    self.check_window(node, prod_bound)?;
                    bound = bound.saturating_add(ceil_div(prod_bound, alpha));
                    let wc = self.b.constant_signed(w as i128);
                    let ab = self.b.mul(x, wc);
                    let r = self.b.requantize(ab, self.q);
                    qs.push(Self::gadget(node, r)?.q);
                }
                if let Some(bias) = bias {
                    qs.push(self.b.constant_signed(bias as i128));
                }
                Ok((self.b.sum(&qs), bound))
            }
        }
    }

    fn param(&self, name: &str) -> &QuantizedTensor {
        &self.qm.initializers[name]
    }

    fn gemm(&mut self, node: &ModelNode, x: &Value, trans_a: bool, trans_b: bool, fuse: bool) -> Result<Value, CompileError> {
        let w = self.param(&node.inputs[1]).clone();
        let (m, k, n) = gemm_dims(&x.shape, &w.shape, trans_a, trans_b).ok_or_else(|| ModelError::Shape {
            node: node.name.clone(),
            msg: format!("cannot multiply {:?} by {:?}", x.shape, w.shape),
        })?;
        let bias = node.inputs.get(2).map(|b| self.param(b).clone());
        let x_at = |i: usize, t: usize| if trans_a { x.wires[t * m + i] } else { x.wires[i * k + t] };
        let w_at = |t: usize, j: usize| if trans_b { w.data[j * k + t] } else { w.data[t * n + j] };
        let mut wires = Vec::with_capacity(m * n);
        let mut bound = 0;
        for i in 0..m {
            for j in 0..n {
                let terms: Vec<(WireId, i64)> = (0..k).map(|t| (x_at(i, t), w_at(t, j))).collect();
                let b = bias.as_ref().map(|b| if b.data.len() == n { b.data[j] } else { b.data[i * n + j] });
                let (out, ob) = self.dot(node, &terms, b, x.bound, fuse)?;
                wires.push(out);
                bound = bound.max(ob);
            }
        }
        self.check_activation(node, bound)?;
        Ok(Value {
            shape: vec![m, n],
            wires,
            bound,
        })
    }

    fn conv(
        &mut self,
        node: &ModelNode,
        x: &Value,
        stride: [usize; 2],
        padding: [usize; 2],
        fuse: bool,
    ) -> Result<Value, CompileError> {
        let w = self.param(&node.inputs[1]).clone();
        let bias = node.inputs.get(2).map(|b| self.param(b).clone());
        let (n, c, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let (oc, kh, kw) = (w.shape[0], w.shape[2], w.shape[3]);
        let oh = (h + 2 * padding[0] - kh) / stride[0] + 1;
        let ow = (wd + 2 * padding[1] - kw) / stride[1] + 1;
        let mut wires = Vec::with_capacity(n * oc * oh * ow);
        let mut bound = 0;
        for b in 0..n {
            for o in 0..oc {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut terms = Vec::with_capacity(c * kh * kw);
                        for ci in 0..c {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let iy = (y * stride[0] + dy) as isize - padding[0] as isize;
                                    let ix = (xx * stride[1] + dx) as isize - padding[1] as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let (iy, ix) = (iy as usize, ix as usize);
                                    let wire = x.wires[((b * c + ci) * h + iy) * wd + ix];
                                    let wv = w.data[((o * c + ci) * kh + dy) * kw + dx];
                                    terms.push((wire, wv));
                                }
                            }
                        }
                        let mut bv = bias.as_ref().map(|t| t.data[o]);
                        if terms.is_empty() {
                            // Window entirely inside the padding.
                            bv = bv.or(Some(0));
                        }
                        let (out, ob) = self.dot(node, &terms, bv, x.bound, fuse)?;
                        wires.push(out);
                        bound = bound.max(ob);
                    }
                }
            }
        }
        self.check_activation(node, bound)?;
        Ok(Value {
            shape: vec![n, oc, oh, ow],
            wires,
            bound,
        })
    }

    fn maxpool(&mut self, node: &ModelNode, x: &Value, window: [usize; 2], stride: [usize; 2]) -> Result<Value, CompileError> {
        let (n, c, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let oh = (h - window[0]) / stride[0] + 1;
        let ow = (wd - window[1]) / stride[1] + 1;
        let kappa = self.q.kappa;
        let mut wires = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut layer: Vec<WireId> = (0..window[0])
                        .flat_map(|dy| (0..window[1]).map(move |dx| (dy, dx)))
                        .map(|(dy, dx)| x.wires[(plane * h + y * stride[0] + dy) * wd + xx * stride[1] + dx])
                        .collect();
                    while layer.len() > 1 {
                        let mut next = Vec::with_capacity(layer.len().div_ceil(2));
                        for pair in layer.chunks(2) {
                            next.push(match *pair {
                                [a, b] => {
                                    let m = self.b.max(a, b, kappa);
                                    Self::gadget(node, m)?
                                }
                                [a] => a,
                                _ => unreachable!(),
                            });
                        }
                        layer = next;
                    }
                    wires.push(layer[0]);
                }
            }
        }
        Ok(Value {
            shape: vec![n, c, oh, ow],
            wires,
            bound: x.bound,
        })
    }
}

/// Compile with explicit lowering options.
pub fn compile_with(
    graph: &ModelGraph,
    qcfg: &QuantConfig,
    fcfg: &FieldConfig,
    ccfg: &CostConfig,
    options: &CompileOptions,
) -> Result<ConstraintSystem, CompileError> {
    qcfg.validate(fcfg)?;
    let shapes = infer_shapes(graph)?;
    let qm = quantize_model(graph, qcfg)?;
    let order = graph.topological_order()?;

    // Fusion candidates: the ReLU is the sole reader of a Gemm/Conv output.
    let mut fused_into: BTreeMap<usize, usize> = BTreeMap::new();
    if options.fuse_relu && qcfg.rescale == RescaleMode::Accumulate {
        for (i, node) in graph.nodes.iter().enumerate() {
            if !matches!(node.op.kind(), OpKind::Gemm | OpKind::Conv2D) || node.output == graph.output {
                continue;
            }
            if let [c] = graph.consumers(&node.output)[..] {
                if graph.nodes[c].op == Op::Relu {
                    fused_into.insert(i, c);
                }
            }
        }
    }
    let absorbed: HashSet<usize> = fused_into.values().copied().collect();

    let n_inputs = graph.input.numel();
    let mut lw = Lowering {
        b: CircuitBuilder::new(fcfg, n_inputs),
        q: qcfg,
        qm: &qm,
    };
    let input_bits = qcfg.input_bits();
    for i in 0..n_inputs {
        let w = lw.b.input(i);
        lw.b.range_check_signed(w, input_bits).map_err(|source| CompileError::Gadget {
            node: graph.input.name.clone(),
            source,
        })?;
    }
    let mut values: BTreeMap<String, Value> = BTreeMap::new();
    values.insert(
        graph.input.name.clone(),
        Value {
            shape: graph.input.shape.clone(),
            wires: (0..n_inputs).map(|i| lw.b.input(i)).collect(),
            bound: 1u128 << (input_bits - 1),
        },
    );

    for idx in order {
        if absorbed.contains(&idx) {
            continue;
        }
        let node = &graph.nodes[idx];
        let x = values[node.activation()].clone();
        let fuse = fused_into.contains_key(&idx);
        let mut out = match &node.op {
            Op::Gemm { trans_a, trans_b } => lw.gemm(node, &x, *trans_a, *trans_b, fuse)?,
            Op::Conv2D { stride, padding, .. } => lw.conv(node, &x, *stride, *padding, fuse)?,
            Op::MaxPool2D { window, stride } => lw.maxpool(node, &x, *window, *stride)?,
            Op::Relu => {
                let mut wires = Vec::with_capacity(x.wires.len());
                for &w in &x.wires {
                    let r = lw.b.relu(w, qcfg.kappa);
                    wires.push(Lowering::gadget(node, r)?);
                }
                Value { wires, ..x }
            }
            Op::Reshape { .. } => Value {
                shape: shapes[&node.output].shape.clone(),
                ..x
            },
        };
        let name = match fused_into.get(&idx) {
            Some(&relu) => &graph.nodes[relu].output,
            None => &node.output,
        };
        out.shape = shapes[name].shape.clone();
        values.insert(name.clone(), out);
    }

    let out = &values[&graph.output];
    let mut cs = lw.b.finish(out.wires.clone());
    cs.quant = *qcfg;
    cs.cost = *ccfg;
    cs.options = *options;
    cs.input_shape = graph.input.shape.clone();
    cs.output_shape = out.shape.clone();
    Ok(cs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    fn small_q() -> QuantConfig {
        QuantConfig::new(4, 12, 8)
    }

    fn relu_graph() -> ModelGraph {
        parse_model(
            r#"{"format_version": 1, "input": {"name": "x", "shape": [1, 1]}, "output": "y",
                "nodes": [{"op": "ReLU", "inputs": ["x"], "output": "y"}]}"#,
        )
        .unwrap()
    }

    fn gemm_relu_graph() -> ModelGraph {
        parse_model(
            r#"{"format_version": 1, "input": {"name": "x", "shape": [1, 2]}, "output": "y",
                "nodes": [{"op": "Gemm", "inputs": ["x", "w", "b"], "output": "h"},
                          {"op": "ReLU", "inputs": ["h"], "output": "y"}],
                "initializers": {"w": {"shape": [2, 2], "data": [[0.5, -0.25], [1.0, 0.75]]},
                                 "b": {"shape": [2], "data": [0.125, -0.5]}}}"#,
        )
        .unwrap()
    }

    #[test]
    fn single_relu_counts_by_hand() {
        let q = small_q();
        let cs = compile(&relu_graph(), &q, &FieldConfig::mersenne61(), &CostConfig::default()).unwrap();
        let in_bits = q.input_bits() as u64;
        let kappa = q.kappa as u64;
        // Input check: bits + reconstruction equality. ReLU: two unsigned
        // κ-bit checks and the product constraint.
        assert_eq!(cs.counts.n_constraints, (in_bits + 1) + 2 * (kappa + 1) + 1);
        assert!(cs.unbound_hints().is_empty());
        cs.check_structure().unwrap();
    }

    #[test]
    fn fusion_saves_constraints() {
        let g = gemm_relu_graph();
        let f = FieldConfig::mersenne61();
        let fused = compile(&g, &small_q(), &f, &CostConfig::default()).unwrap();
        let plain = compile_with(&g, &small_q(), &f, &CostConfig::default(), &CompileOptions { fuse_relu: false }).unwrap();
        assert!(fused.counts.n_constraints < plain.counts.n_constraints);
        assert_eq!(fused.output_shape, vec![1, 2]);
    }

    #[test]
    fn audit_reports_required_nu() {
        let g = gemm_relu_graph();
        let q = QuantConfig {
            input_bound: 4.0,
            ..QuantConfig::new(4, 8, 8)
        };
        match compile(&g, &q, &FieldConfig::mersenne61(), &CostConfig::default()) {
            Err(CompileError::Overflow { required_nu, bound, .. }) => {
                assert!(required_nu > 8);
                assert!(bound < ((16u128) << (required_nu - 1)));
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn deterministic() {
        let g = gemm_relu_graph();
        let f = FieldConfig::mersenne61();
        let a = compile(&g, &small_q(), &f, &CostConfig::default()).unwrap();
        let b = compile(&g, &small_q(), &f, &CostConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_weight_is_named() {
        let g = parse_model(
            r#"{"format_version": 1, "input": {"name": "x", "shape": [1, 1]}, "output": "y",
                "nodes": [{"op": "Gemm", "inputs": ["x", "w"], "output": "y"}],
                "initializers": {"w": {"shape": [1, 1], "data": [[100.0]]}}}"#,
        )
        .unwrap();
        let err = compile(&g, &small_q(), &FieldConfig::mersenne61(), &CostConfig::default()).unwrap_err();
        assert!(matches!(err, CompileError::Initializer { ref name, .. } if name == "w"));
    }
}
