//! Oracles shared by the integration tests. Nothing here calls the circuit
//! compiler or the witness engine.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use zkinfer::circuit::{Constraint, ConstraintSystem, Gate, WireId, WireSource};
use zkinfer::model::{parse_model, ModelGraph, Op};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn load_fixture(name: &str) -> ModelGraph {
    let text = std::fs::read_to_string(fixture_path(&format!("{name}.json"))).unwrap();
    parse_model(&text).unwrap()
}

fn fq(z: f64, alpha: f64) -> i128 {
    (z * alpha).floor() as i128
}

/// Plain integer inference at scale `2^s`: inputs and parameters are
/// floored to the grid, every linear layer accumulates `alpha*b + sum w*x`
/// exactly and floor-divides by alpha once.
pub fn integer_inference(graph: &ModelGraph, s: u32, input: &[f64]) -> Vec<i64> {
    let alpha = (1i64 << s) as f64;
    let a = 1i128 << s;
    let param = |name: &str| -> (Vec<usize>, Vec<i128>) {
        let t = &graph.initializers[name];
        (t.shape.clone(), t.data.iter().map(|&z| fq(z, alpha)).collect())
    };
    let mut env: HashMap<String, (Vec<usize>, Vec<i128>)> = HashMap::new();
    env.insert(
        graph.input.name.clone(),
        (graph.input.shape.clone(), input.iter().map(|&z| fq(z, alpha)).collect()),
    );
    for &i in &graph.topological_order().unwrap() {
        let node = &graph.nodes[i];
        let (shape, x) = env[&node.inputs[0]].clone();
        let out = match &node.op {
            Op::Gemm { trans_a, trans_b } => {
                let (ws, w) = param(&node.inputs[1]);
                let (m, k) = if *trans_a { (shape[1], shape[0]) } else { (shape[0], shape[1]) };
                let n = if *trans_b { ws[0] } else { ws[1] };
                let bias = node.inputs.get(2).map(|b| param(b).1);
                let mut y = Vec::with_capacity(m * n);
                for i in 0..m {
                    for j in 0..n {
                        let mut acc = bias.as_ref().map_or(0, |b| a * if b.len() == n { b[j] } else { b[i * n + j] });
                        for t in 0..k {
                            let xv = if *trans_a { x[t * m + i] } else { x[i * k + t] };
                            let wv = if *trans_b { w[j * k + t] } else { w[t * n + j] };
                            acc += xv * wv;
                        }
                        y.push(acc.div_euclid(a));
                    }
                }
                (vec![m, n], y)
            }
            Op::Conv2D { stride, padding, .. } => {
                let (ws, w) = param(&node.inputs[1]);
                let bias = node.inputs.get(2).map(|b| param(b).1);
                let (nb, c, h, wd) = (shape[0], shape[1], shape[2], shape[3]);
                let (oc, kh, kw) = (ws[0], ws[2], ws[3]);
                let oh = (h + 2 * padding[0] - kh) / stride[0] + 1;
                let ow = (wd + 2 * padding[1] - kw) / stride[1] + 1;
                let mut y = Vec::new();
                for b in 0..nb {
                    for o in 0..oc {
                        for r in 0..oh {
                            for col in 0..ow {
                                let mut acc = bias.as_ref().map_or(0, |bv| a * bv[o]);
                                for ci in 0..c {
                                    for dy in 0..kh {
                                        for dx in 0..kw {
                                            let iy = (r * stride[0] + dy) as isize - padding[0] as isize;
                                            let ix = (col * stride[1] + dx) as isize - padding[1] as isize;
                                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                                let xv = x[((b * c + ci) * h + iy as usize) * wd + ix as usize];
                                                acc += xv * w[((o * c + ci) * kh + dy) * kw + dx];
                                            }
                                        }
                                    }
                                }
                                y.push(acc.div_euclid(a));
                            }
                        }
                    }
                }
                (vec![nb, oc, oh, ow], y)
            }
            Op::Relu => (shape, x.iter().map(|&v| v.max(0)).collect()),
            Op::MaxPool2D { window, stride } => {
                let (nb, c, h, wd) = (shape[0], shape[1], shape[2], shape[3]);
                let oh = (h - window[0]) / stride[0] + 1;
                let ow = (wd - window[1]) / stride[1] + 1;
                let mut y = Vec::new();
                for plane in 0..nb * c {
                    for r in 0..oh {
                        for col in 0..ow {
                            let mut m = i128::MIN;
                            for dy in 0..window[0] {
                                for dx in 0..window[1] {
                                    m = m.max(x[(plane * h + r * stride[0] + dy) * wd + col * stride[1] + dx]);
                                }
                            }
                            y.push(m);
                        }
                    }
                }
                (vec![nb, c, oh, ow], y)
            }
            Op::Reshape { shape: target } => {
                let total: usize = shape.iter().product();
                let known: usize = target.iter().filter(|&&d| d > 0).map(|&d| d as usize).product();
                let dims = target.iter().map(|&d| if d < 0 { total / known } else { d as usize }).collect();
                (dims, x)
            }
        };
        env.insert(node.output.clone(), out);
    }
    env[&graph.output].1.iter().map(|&v| v as i64).collect()
}

/// Fill every wire in order, taking hint outputs from `forced` (indexed by
/// wire) when present and computing them honestly otherwise.
pub fn assign(cs: &ConstraintSystem, inputs: &[u64], forced: &[Option<u64>]) -> Vec<u64> {
    let p = cs.field.modulus() as u128;
    let mut v: Vec<u64> = inputs.to_vec();
    for src in cs.wire_sources() {
        let x = match src {
            WireSource::Gate(Gate::Const { value, .. }) => *value,
            WireSource::Gate(Gate::Add { a, b, .. }) => ((v[a.index()] as u128 + v[b.index()] as u128) % p) as u64,
            WireSource::Gate(Gate::Mul { a, b, .. }) => ((v[a.index()] as u128 * v[b.index()] as u128) % p) as u64,
            WireSource::Hint(h) => match forced.get(h.out.index()).copied().flatten() {
                Some(f) => f,
                None => h.kind.apply(v[h.operand.index()], h.imm),
            },
        };
        v.push(x);
    }
    v
}

/// Whether every assertion holds. Gate equations hold by construction of
/// [`assign`].
pub fn assertions_hold(cs: &ConstraintSystem, v: &[u64]) -> bool {
    let p = cs.field.modulus() as u128;
    let g = |w: &WireId| v[w.index()] as u128;
    cs.constraints.iter().all(|c| match c {
        Constraint::AssertZero { a, b: None } => g(a) == 0,
        Constraint::AssertZero { a, b: Some(b) } => g(a) * g(b) % p == 0,
        Constraint::AssertEqual { a, b } => g(a) == g(b),
        Constraint::AssertBool { a } => (g(a) * ((g(a) + p - 1) % p)).is_multiple_of(p),
    })
}

/// Hint wires that some gate or assertion reads.
pub fn bound_hint_wires(cs: &ConstraintSystem) -> Vec<u32> {
    let internal: Vec<WireId> = cs.hint_internal_wires();
    cs.hints.iter().map(|h| h.out).filter(|w| !internal.contains(w)).map(|w| w.0).collect()
}

/// Exhaustive search for a satisfying assignment where every bound hint
/// wire takes a value in {0, 1}. Booleanity is checked separately, so this
/// covers every assignment a cheating prover could use for bit wires.
pub fn satisfiable_with_boolean_hints(cs: &ConstraintSystem, inputs: &[u64], hint_wires: &[u32]) -> bool {
    let n = hint_wires.len();
    assert!(n < 24, "search space too large");
    let mut forced = vec![None; cs.n_wires];
    (0u32..1 << n).any(|mask| {
        for (i, &w) in hint_wires.iter().enumerate() {
            forced[w as usize] = Some(((mask >> i) & 1) as u64);
        }
        assertions_hold(cs, &assign(cs, inputs, &forced))
    })
}

pub fn encode(p: u64, x: i64) -> u64 {
    x.rem_euclid(p as i64) as u64
}
