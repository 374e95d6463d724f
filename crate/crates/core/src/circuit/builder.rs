use std::collections::HashMap;

use thiserror::Error;

use super::{
    CircuitCounts, CompileOptions, Constraint, ConstraintSystem, CostConfig, Gate, HintKind, HintSpec,
    WireId,
};
use crate::field::{FieldConfig, Fp};
use crate::quant::QuantConfig;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GadgetError {
    #[error("bit width must be at least 1")]
    ZeroWidth,
    #[error("2^{bits} exceeds the field modulus {p}")]
    WidthTooLarge { bits: u32, p: u64 },
}

/// Output of the requantization gadget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Requant {
    /// `floor(ab / alpha)` as a balanced residue.
    pub q: WireId,
    /// Top bit of the `q_sharp` decomposition; 1 iff `q >= 0`.
    pub msb: WireId,
}

/// Incrementally emits gates, hints and constraints. Constants are interned,
/// so each distinct value costs one `Const` gate per circuit.
#[derive(Debug)]
pub struct CircuitBuilder {
    field: FieldConfig,
    fp: Fp,
    n_inputs: usize,
    next: u32,
    gates: Vec<Gate>,
    hints: Vec<HintSpec>,
    constraints: Vec<Constraint>,
    consts: HashMap<u64, WireId>,
}

impl CircuitBuilder {
    pub fn new(field: &FieldConfig, n_inputs: usize) -> Self {
        Self {
            field: field.clone(),
            fp: field.arith(),
            n_inputs,
            next: n_inputs as u32,
            gates: Vec::new(),
            hints: Vec::new(),
            constraints: Vec::new(),
            consts: HashMap::new(),
        }
    }

    pub fn input(&self, i: usize) -> WireId {
        assert!(i < self.n_inputs, "input {i} out of range");
        WireId(i as u32)
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn n_wires(&self) -> usize {
        self.next as usize
    }

    fn fresh(&mut self) -> WireId {
        let w = WireId(self.next);
        self.next = self.next.checked_add(1).expect("wire index overflow");
        w
    }

    /// A constant residue, interned.
    pub fn constant(&mut self, value: u64) -> WireId {
        let value = value % self.fp.modulus();
        if let Some(&w) = self.consts.get(&value) {
            return w;
        }
        let out = self.fresh();
        self.gates.push(Gate::Const { value, out });
        self.consts.insert(value, out);
        out
    }

    pub fn constant_signed(&mut self, value: i128) -> WireId {
        let v = self.fp.reduce_i128(value);
        self.constant(v)
    }

    pub fn add(&mut self, a: WireId, b: WireId) -> WireId {
        let out = self.fresh();
        self.gates.push(Gate::Add { a, b, out });
        out
    }

    pub fn mul(&mut self, a: WireId, b: WireId) -> WireId {
        let out = self.fresh();
        self.gates.push(Gate::Mul { a, b, out });
        out
    }

    /// `a - b`, as `a + (-1) * b`.
    pub fn sub(&mut self, a: WireId, b: WireId) -> WireId {
        let neg_one = self.constant_signed(-1);
        let nb = self.mul(neg_one, b);
        self.add(a, nb)
    }

    /// Pairwise reduction tree; panics on an empty slice.
    pub fn sum(&mut self, terms: &[WireId]) -> WireId {
        assert!(!terms.is_empty(), "sum of no terms");
        let mut layer = terms.to_vec();
        while layer.len() > 1 {
            let mut next = Vec::with_capacity(layer.len().div_ceil(2));
            for pair in layer.chunks(2) {
                next.push(match pair {
                    [a, b] => self.add(*a, *b),
                    [a] => *a,
                    _ => unreachable!(),
                });
            }
            layer = next;
        }
        layer[0]
    }

    pub fn hint(&mut self, kind: HintKind, operand: WireId, imm: u64) -> WireId {
        let out = self.fresh();
        self.hints.push(HintSpec {
            kind,
            operand,
            imm,
            out,
        });
        out
    }

    pub fn assert_zero(&mut self, a: WireId) {
        self.constraints.push(Constraint::AssertZero { a, b: None });
    }

    pub fn assert_zero_product(&mut self, a: WireId, b: WireId) {
        self.constraints.push(Constraint::AssertZero { a, b: Some(b) });
    }

    pub fn assert_equal(&mut self, a: WireId, b: WireId) {
        self.constraints.push(Constraint::AssertEqual { a, b });
    }

    pub fn assert_bool(&mut self, a: WireId) {
        self.constraints.push(Constraint::AssertBool { a });
    }

    fn check_width(&self, n_bits: u32) -> Result<(), GadgetError> {
        if n_bits == 0 {
            return Err(GadgetError::ZeroWidth);
        }
        if n_bits >= 64 || (1u64 << n_bits) > self.fp.modulus() {
            return Err(GadgetError::WidthTooLarge {
                bits: n_bits,
                p: self.fp.modulus(),
            });
        }
        Ok(())
    }

    /// Little-endian bits of the residue of `x`, as hint wires. No
    /// constraints are added; callers must bind them.
    pub fn unconstrained_to_bits(&mut self, x: WireId, n_bits: u32) -> Result<Vec<WireId>, GadgetError> {
        self.check_width(n_bits)?;
        let mut bits = Vec::with_capacity(n_bits as usize);
        let mut cur = x;
        for i in 0..n_bits {
            bits.push(self.hint(HintKind::BitAnd, cur, 1));
            if i + 1 < n_bits {
                cur = self.hint(HintKind::ShiftRight, cur, 1);
            }
        }
        Ok(bits)
    }

    /// Booleanity on every bit, then the weighted sum `sum 2^i * d_i`.
    pub fn assert_bits_and_reconstruct(&mut self, bits: &[WireId]) -> WireId {
        assert!(!bits.is_empty(), "no bits to reconstruct");
        for &b in bits {
            self.assert_bool(b);
        }
        let mut acc = bits[0];
        for (i, &b) in bits.iter().enumerate().skip(1) {
            let weight = self.constant(1u64 << i);
            let term = self.mul(weight, b);
            acc = self.add(acc, term);
        }
        acc
    }

    /// Satisfiable iff the residue of `x` lies in `[0, 2^n_bits - 1]`.
    /// Returns the bit wires, least significant first.
    pub fn range_check_unsigned(&mut self, x: WireId, n_bits: u32) -> Result<Vec<WireId>, GadgetError> {
        let bits = self.unconstrained_to_bits(x, n_bits)?;
        let recon = self.assert_bits_and_reconstruct(&bits);
        self.assert_equal(x, recon);
        Ok(bits)
    }

    /// Satisfiable iff `x` decodes into `[-2^(kappa-1), 2^(kappa-1) - 1]`.
    pub fn range_check_signed(&mut self, x: WireId, kappa: u32) -> Result<(), GadgetError> {
        self.check_width(kappa)?;
        let offset = self.constant(1u64 << (kappa - 1));
        let shifted = self.add(x, offset);
        self.range_check_unsigned(shifted, kappa)?;
        Ok(())
    }

    /// Constrain `x = max(a, b)`: both `x - a` and `x - b` are nonnegative
    /// κ-bit values and their product vanishes.
    pub fn assert_max(&mut self, x: WireId, a: WireId, b: WireId, kappa: u32) -> Result<(), GadgetError> {
        self.check_width(kappa)?;
        let da = self.sub(x, a);
        let db = self.sub(x, b);
        self.range_check_unsigned(da, kappa)?;
        self.range_check_unsigned(db, kappa)?;
        self.assert_zero_product(da, db);
        Ok(())
    }

    /// Prover-side selector: 1 if `v >= 0`, 0 otherwise, for `|v| < 2^kappa`.
    fn sign_hint(&mut self, v: WireId, kappa: u32) -> WireId {
        let offset = self.constant(1u64 << kappa);
        let shifted = self.add(v, offset);
        self.hint(HintKind::IntDiv, shifted, 1u64 << kappa)
    }

    /// A new wire holding `max(a, b)`, bound by [`Self::assert_max`].
    pub fn max(&mut self, a: WireId, b: WireId, kappa: u32) -> Result<WireId, GadgetError> {
        self.check_width(kappa + 1)?;
        let diff = self.sub(a, b);
        let sel = self.sign_hint(diff, kappa);
        let picked = self.mul(sel, diff);
        let x = self.add(b, picked);
        self.assert_max(x, a, b, kappa)?;
        Ok(x)
    }

    /// `y = max(c, 0)`: the comparison gadget with `b = 0`, where `y - 0` is
    /// `y` itself.
    pub fn relu(&mut self, c: WireId, kappa: u32) -> Result<WireId, GadgetError> {
        self.check_width(kappa + 1)?;
        let sel = self.sign_hint(c, kappa);
        let y = self.mul(sel, c);
        let d = self.sub(y, c);
        self.range_check_unsigned(d, kappa)?;
        self.range_check_unsigned(y, kappa)?;
        self.assert_zero_product(d, y);
        Ok(y)
    }

    /// Divide a scale-alpha^2 value by alpha: `ab + alpha*2^(nu-1) = alpha*q# + r`
    /// with `r` in `s` bits and `q#` in `nu` bits, `q = q# - 2^(nu-1)`.
    pub fn requantize(&mut self, ab: WireId, cfg: &QuantConfig) -> Result<Requant, GadgetError> {
        let alpha = cfg.alpha() as u64;
        let shift = self.constant_signed(cfg.shift());
        let translated = self.add(ab, shift);
        let q_sharp = self.hint(HintKind::IntDiv, translated, alpha);
        let r = self.hint(HintKind::IntMod, translated, alpha);
        let alpha_w = self.constant(alpha);
        let scaled = self.mul(alpha_w, q_sharp);
        let rhs = self.add(scaled, r);
        self.assert_equal(translated, rhs);
        self.range_check_unsigned(r, cfg.scale_exponent)?;
        let bits = self.range_check_unsigned(q_sharp, cfg.nu)?;
        let unshift = self.constant_signed(-(1i128 << (cfg.nu - 1)));
        let q = self.add(q_sharp, unshift);
        Ok(Requant {
            q,
            msb: bits[cfg.nu as usize - 1],
        })
    }

    /// Requantize then clamp at zero, reusing the sign bit of the quotient
    /// decomposition instead of a second comparison.
    pub fn fused_requant_relu(&mut self, ab: WireId, cfg: &QuantConfig) -> Result<WireId, GadgetError> {
        let Requant { q, msb } = self.requantize(ab, cfg)?;
        Ok(self.mul(msb, q))
    }

    /// Close the circuit with default metadata; IO shapes are flat.
    pub fn finish(self, outputs: Vec<WireId>) -> ConstraintSystem {
        let counts = CircuitCounts::recount(self.n_inputs, &self.gates, &self.hints, &self.constraints);
        ConstraintSystem {
            field: self.field,
            quant: QuantConfig::default(),
            cost: CostConfig::default(),
            options: CompileOptions::default(),
            input_shape: vec![self.n_inputs],
            output_shape: vec![outputs.len()],
            n_inputs: self.n_inputs,
            n_wires: self.next as usize,
            gates: self.gates,
            hints: self.hints,
            constraints: self.constraints,
            outputs,
            counts,
        }
    }
}
