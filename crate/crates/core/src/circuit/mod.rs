//! Arithmetic circuits over a prime field: gates, prover hints, constraints,
//! the range-check and comparison gadgets built from them, and lowering of a
//! quantized model graph into a complete [`ConstraintSystem`].
//!
//! Wires are numbered densely. The model input occupies the prefix
//! `0..n_inputs`; every gate and hint defines exactly one new wire, and its
//! operands always carry smaller indices, so a single pass in wire order
//! evaluates the whole circuit.

mod builder;
mod lower;
mod serialize;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::field::FieldConfig;
use crate::quant::QuantConfig;

pub use builder::{CircuitBuilder, GadgetError, Requant};
pub use lower::{compile, compile_with, quantize_model, CompileError, CompileOptions, QuantizedModel};
pub use serialize::{CircuitFormatError, CIRCUIT_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WireId(pub u32);

impl WireId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for WireId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    Add,
    Mul,
    Const,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    Add { a: WireId, b: WireId, out: WireId },
    Mul { a: WireId, b: WireId, out: WireId },
    /// `value` is a residue in `[0, p)`.
    Const { value: u64, out: WireId },
}

impl Gate {
    pub fn kind(&self) -> GateKind {
        match self {
            Gate::Add { .. } => GateKind::Add,
            Gate::Mul { .. } => GateKind::Mul,
            Gate::Const { .. } => GateKind::Const,
        }
    }

    pub fn out(&self) -> WireId {
        match *self {
            Gate::Add { out, .. } | Gate::Mul { out, .. } | Gate::Const { out, .. } => out,
        }
    }

    pub fn inputs(&self) -> Option<(WireId, WireId)> {
        match *self {
            Gate::Add { a, b, .. } | Gate::Mul { a, b, .. } => Some((a, b)),
            Gate::Const { .. } => None,
        }
    }
}

/// Prover-side operations on least nonnegative residues. They carry no
/// soundness of their own; constraints elsewhere bind their outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HintKind {
    BitAnd,
    ShiftRight,
    IntDiv,
    IntMod,
}

impl HintKind {
    pub fn apply(self, x: u64, imm: u64) -> u64 {
        match self {
            HintKind::BitAnd => x & imm,
            HintKind::ShiftRight => x.checked_shr(imm as u32).unwrap_or(0),
            HintKind::IntDiv => x / imm,
            HintKind::IntMod => x % imm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HintSpec {
    pub kind: HintKind,
    pub operand: WireId,
    pub imm: u64,
    pub out: WireId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constraint {
    /// `a == 0`, or `a * b == 0` when `b` is present.
    AssertZero { a: WireId, b: Option<WireId> },
    AssertEqual { a: WireId, b: WireId },
    /// `a * (a - 1) == 0`.
    AssertBool { a: WireId },
}

impl Constraint {
    pub fn wires(&self) -> Vec<WireId> {
        match *self {
            Constraint::AssertZero { a, b: None } | Constraint::AssertBool { a } => vec![a],
            Constraint::AssertZero { a, b: Some(b) } | Constraint::AssertEqual { a, b } => vec![a, b],
        }
    }
}

/// Weights of the total-cost metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub c_input: u64,
    pub c_var: u64,
    pub c_mul: u64,
    pub c_add: u64,
    pub c_const: u64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            c_input: 1000,
            c_var: 100,
            c_mul: 10,
            c_add: 3,
            c_const: 3,
        }
    }
}

/// Gate inventory of a circuit. `n_gates` counts every wire-defining
/// operation (arithmetic gates and hints); the other gate counters split the
/// arithmetic gates by kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitCounts {
    pub n_inputs: u64,
    pub n_gates: u64,
    pub n_mul: u64,
    pub n_add: u64,
    pub n_cst: u64,
    pub n_hints: u64,
    pub n_constraints: u64,
}

impl CircuitCounts {
    pub fn recount(n_inputs: usize, gates: &[Gate], hints: &[HintSpec], constraints: &[Constraint]) -> Self {
        let mut c = CircuitCounts {
            n_inputs: n_inputs as u64,
            n_gates: (gates.len() + hints.len()) as u64,
            n_hints: hints.len() as u64,
            n_constraints: constraints.len() as u64,
            ..Default::default()
        };
        for g in gates {
            match g.kind() {
                GateKind::Add => c.n_add += 1,
                GateKind::Mul => c.n_mul += 1,
                GateKind::Const => c.n_cst += 1,
            }
        }
        c
    }
}

/// `n_inputs*C_input + n_gates*C_var + n_mul*C_mul + n_add*C_add + n_cst*C_const`.
pub fn total_cost(counts: &CircuitCounts, weights: &CostConfig) -> u128 {
    counts.n_inputs as u128 * weights.c_input as u128
        + counts.n_gates as u128 * weights.c_var as u128
        + counts.n_mul as u128 * weights.c_mul as u128
        + counts.n_add as u128 * weights.c_add as u128
        + counts.n_cst as u128 * weights.c_const as u128
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    pub field: FieldConfig,
    pub quant: QuantConfig,
    pub cost: CostConfig,
    pub options: CompileOptions,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub n_inputs: usize,
    pub n_wires: usize,
    pub gates: Vec<Gate>,
    pub hints: Vec<HintSpec>,
    pub constraints: Vec<Constraint>,
    pub outputs: Vec<WireId>,
    pub counts: CircuitCounts,
}

/// One wire-defining operation, in evaluation order.
#[derive(Debug, Clone, Copy)]
pub enum WireSource<'a> {
    Gate(&'a Gate),
    Hint(&'a HintSpec),
}

impl ConstraintSystem {
    pub fn input_wires(&self) -> impl Iterator<Item = WireId> {
        (0..self.n_inputs as u32).map(WireId)
    }

    pub fn total_cost(&self) -> u128 {
        total_cost(&self.counts, &self.cost)
    }

    /// Gates and hints merged by output wire, i.e. evaluation order.
    pub fn wire_sources(&self) -> impl Iterator<Item = WireSource<'_>> {
        let mut gates = self.gates.iter().peekable();
        let mut hints = self.hints.iter().peekable();
        std::iter::from_fn(move || match (gates.peek(), hints.peek()) {
            (Some(g), Some(h)) => {
                if g.out() < h.out {
                    gates.next().map(WireSource::Gate)
                } else {
                    hints.next().map(WireSource::Hint)
                }
            }
            (Some(_), None) => gates.next().map(WireSource::Gate),
            (None, Some(_)) => hints.next().map(WireSource::Hint),
            (None, None) => None,
        })
    }

    /// Structural checks: dense wire numbering, feed-forward operands,
    /// constraint references in range, counters consistent.
    pub fn check_structure(&self) -> Result<(), String> {
        let mut expected = self.n_inputs as u32;
        for src in self.wire_sources() {
            let (out, operands): (WireId, Vec<WireId>) = match src {
                WireSource::Gate(g) => (g.out(), g.inputs().map(|(a, b)| vec![a, b]).unwrap_or_default()),
                WireSource::Hint(h) => (h.out, vec![h.operand]),
            };
            if out.0 != expected {
                return Err(format!("wire {out} defined out of order (expected w{expected})"));
            }
            if let Some(bad) = operands.iter().find(|w| w.0 >= out.0) {
                return Err(format!("wire {out} reads later wire {bad}"));
            }
            if let WireSource::Hint(h) = src {
                if matches!(h.kind, HintKind::IntDiv | HintKind::IntMod) && h.imm == 0 {
                    return Err(format!("hint {out} divides by zero"));
                }
            }
            if let WireSource::Gate(Gate::Const { value, .. }) = src {
                if *value >= self.field.modulus() {
                    return Err(format!("constant {value} at {out} is not reduced"));
                }
            }
            expected += 1;
        }
        if expected as usize != self.n_wires {
            return Err(format!("{} wires declared, {expected} defined", self.n_wires));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if let Some(w) = c.wires().iter().find(|w| w.index() >= self.n_wires) {
                return Err(format!("constraint {i} references undefined wire {w}"));
            }
        }
        if let Some(w) = self.outputs.iter().find(|w| w.index() >= self.n_wires) {
            return Err(format!("output wire {w} undefined"));
        }
        if self.outputs.len() != self.output_shape.iter().product::<usize>()
            || self.n_inputs != self.input_shape.iter().product::<usize>()
        {
            return Err("public IO wire counts disagree with shapes".into());
        }
        let recount = CircuitCounts::recount(self.n_inputs, &self.gates, &self.hints, &self.constraints);
        if recount != self.counts {
            return Err(format!("counter block {:?} disagrees with recount {recount:?}", self.counts));
        }
        Ok(())
    }

    /// Hint outputs that never flow into a constraint. Every hint must reach
    /// some constrained wire through gates or further hints; an empty result
    /// means no free prover-chosen value escapes the constraint set.
    pub fn unbound_hints(&self) -> Vec<WireId> {
        let n = self.n_wires;
        let mut reaches = vec![false; n];
        for c in &self.constraints {
            for w in c.wires() {
                reaches[w.index()] = true;
            }
        }
        // Walk sources newest-first: a wire reaches a constraint if it is
        // constrained itself or feeds a wire that does.
        let sources: Vec<WireSource<'_>> = self.wire_sources().collect();
        for src in sources.iter().rev() {
            match src {
                WireSource::Gate(g) => {
                    if reaches[g.out().index()] {
                        if let Some((a, b)) = g.inputs() {
                            reaches[a.index()] = true;
                            reaches[b.index()] = true;
                        }
                    }
                }
                WireSource::Hint(h) => {
                    if reaches[h.out.index()] {
                        reaches[h.operand.index()] = true;
                    }
                }
            }
        }
        self.hints
            .iter()
            .filter(|h| !reaches[h.out.index()])
            .map(|h| h.out)
            .collect()
    }

    /// Wires whose value is fixed by nothing but the hint that produced them:
    /// hint outputs consumed only by further hints (the shift chain of a bit
    /// decomposition). No gate or constraint reads them directly.
    pub fn hint_internal_wires(&self) -> Vec<WireId> {
        let mut read_outside_hints = vec![false; self.n_wires];
        for g in &self.gates {
            if let Some((a, b)) = g.inputs() {
                read_outside_hints[a.index()] = true;
                read_outside_hints[b.index()] = true;
            }
        }
        for c in &self.constraints {
            for w in c.wires() {
                read_outside_hints[w.index()] = true;
            }
        }
        for w in &self.outputs {
            read_outside_hints[w.index()] = true;
        }
        self.hints
            .iter()
            .filter(|h| !read_outside_hints[h.out.index()])
            .map(|h| h.out)
            .collect()
    }
}
