//! Canonical text form of a constraint system.
//!
//! ```text
//! zkinfer-circuit 1
//! field 2305843009213693951 mersenne61
//! quant s=16 nu=32 kappa=32 input_bound=1 rescale=accumulate
//! cost c_input=1000 c_var=100 c_mul=10 c_add=3 c_const=3
//! options fuse_relu=1
//! io input=1,1,8,8 output=1,10
//! wires inputs=64 total=9000
//! counts n_inputs=64 n_gates=... n_mul=... n_add=... n_cst=... n_hints=... n_constraints=...
//! gates <n>
//! c <out> <value> | a <out> <a> <b> | m <out> <a> <b>
//! hints <n>
//! and|shr|div|mod <out> <operand> <imm>
//! constraints <n>
//! z <a> | zp <a> <b> | eq <a> <b> | bool <a>
//! outputs <n>
//! <wire>
//! end
//! ```
//!
//! The same system always renders to the same bytes, and the circuit digest
//! is SHA-256 over them.

use std::fmt::Write as _;
use std::str::{FromStr, SplitWhitespace};

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{
    CircuitCounts, CompileOptions, Constraint, ConstraintSystem, CostConfig, Gate, HintKind, HintSpec, WireId,
};
use crate::field::FieldConfig;
use crate::quant::{QuantConfig, RescaleMode};

pub const CIRCUIT_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "zkinfer-circuit";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CircuitFormatError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unsupported circuit format version {0}")]
    Version(u32),
    #[error("invalid circuit: {0}")]
    Invalid(String),
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl HintKind {
    fn tag(self) -> &'static str {
        match self {
            HintKind::BitAnd => "and",
            HintKind::ShiftRight => "shr",
            HintKind::IntDiv => "div",
            HintKind::IntMod => "mod",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "and" => HintKind::BitAnd,
            "shr" => HintKind::ShiftRight,
            "div" => HintKind::IntDiv,
            "mod" => HintKind::IntMod,
            _ => return None,
        })
    }
}

impl ConstraintSystem {
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(32 * (self.gates.len() + self.hints.len() + self.constraints.len()) + 512);
        let q = &self.quant;
        let c = &self.cost;
        let n = &self.counts;
        writeln!(s, "{MAGIC} {CIRCUIT_FORMAT_VERSION}").unwrap();
        writeln!(s, "field {} {}", self.field.modulus(), self.field.name()).unwrap();
        writeln!(
            s,
            "quant s={} nu={} kappa={} input_bound={} rescale={}",
            q.scale_exponent,
            q.nu,
            q.kappa,
            q.input_bound,
            q.rescale.name()
        )
        .unwrap();
        writeln!(
            s,
            "cost c_input={} c_var={} c_mul={} c_add={} c_const={}",
            c.c_input, c.c_var, c.c_mul, c.c_add, c.c_const
        )
        .unwrap();
        writeln!(s, "options fuse_relu={}", self.options.fuse_relu as u8).unwrap();
        writeln!(s, "io input={} output={}", join(&self.input_shape), join(&self.output_shape)).unwrap();
        writeln!(s, "wires inputs={} total={}", self.n_inputs, self.n_wires).unwrap();
        writeln!(
            s,
            "counts n_inputs={} n_gates={} n_mul={} n_add={} n_cst={} n_hints={} n_constraints={}",
            n.n_inputs, n.n_gates, n.n_mul, n.n_add, n.n_cst, n.n_hints, n.n_constraints
        )
        .unwrap();
        writeln!(s, "gates {}", self.gates.len()).unwrap();
        for g in &self.gates {
            match *g {
                Gate::Const { value, out } => writeln!(s, "c {} {value}", out.0),
                Gate::Add { a, b, out } => writeln!(s, "a {} {} {}", out.0, a.0, b.0),
                Gate::Mul { a, b, out } => writeln!(s, "m {} {} {}", out.0, a.0, b.0),
            }
            .unwrap();
        }
        writeln!(s, "hints {}", self.hints.len()).unwrap();
        for h in &self.hints {
            writeln!(s, "{} {} {} {}", h.kind.tag(), h.out.0, h.operand.0, h.imm).unwrap();
        }
        writeln!(s, "constraints {}", self.constraints.len()).unwrap();
        for c in &self.constraints {
            match *c {
                Constraint::AssertZero { a, b: None } => writeln!(s, "z {}", a.0),
                Constraint::AssertZero { a, b: Some(b) } => writeln!(s, "zp {} {}", a.0, b.0),
                Constraint::AssertEqual { a, b } => writeln!(s, "eq {} {}", a.0, b.0),
                Constraint::AssertBool { a } => writeln!(s, "bool {}", a.0),
            }
            .unwrap();
        }
        writeln!(s, "outputs {}", self.outputs.len()).unwrap();
        for w in &self.outputs {
            writeln!(s, "{}", w.0).unwrap();
        }
        s.push_str("end\n");
        s
    }

    /// SHA-256 of the canonical text.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }

    pub fn from_text(text: &str) -> Result<Self, CircuitFormatError> {
        let mut p = Parser {
            lines: text.lines().enumerate(),
            line: 0,
        };
        let mut head = p.next_line()?;
        head.keyword(MAGIC)?;
        let version: u32 = head.num()?;
        head.done()?;
        if version != CIRCUIT_FORMAT_VERSION {
            return Err(CircuitFormatError::Version(version));
        }

        let mut l = p.next_line()?;
        l.keyword("field")?;
        let modulus: u64 = l.num()?;
        let name = l.rest();
        let field = FieldConfig::new(modulus, name).map_err(|e| CircuitFormatError::Invalid(e.to_string()))?;

        let mut l = p.next_line()?;
        l.keyword("quant")?;
        let scale_exponent = l.kv("s")?;
        let nu = l.kv("nu")?;
        let kappa = l.kv("kappa")?;
        let input_bound = l.kv("input_bound")?;
        let rescale_name: String = l.kv("rescale")?;
        let rescale = RescaleMode::parse(&rescale_name).ok_or_else(|| l.err(format!("unknown rescale mode {rescale_name}")))?;
        l.done()?;
        let quant = QuantConfig {
            scale_exponent,
            nu,
            kappa,
            input_bound,
            rescale,
        };
        quant.validate(&field).map_err(|e| CircuitFormatError::Invalid(e.to_string()))?;

        let mut l = p.next_line()?;
        l.keyword("cost")?;
        let cost = CostConfig {
            c_input: l.kv("c_input")?,
            c_var: l.kv("c_var")?,
            c_mul: l.kv("c_mul")?,
            c_add: l.kv("c_add")?,
            c_const: l.kv("c_const")?,
        };
        l.done()?;

        let mut l = p.next_line()?;
        l.keyword("options")?;
        let fuse: u8 = l.kv("fuse_relu")?;
        if fuse > 1 {
            return Err(l.err("fuse_relu must be 0 or 1"));
        }
        l.done()?;
        let options = CompileOptions { fuse_relu: fuse == 1 };

        let mut l = p.next_line()?;
        l.keyword("io")?;
        let input_shape = l.shape("input")?;
        let output_shape = l.shape("output")?;
        l.done()?;

        let mut l = p.next_line()?;
        l.keyword("wires")?;
        let n_inputs: usize = l.kv("inputs")?;
        let n_wires: usize = l.kv("total")?;
        l.done()?;

        let mut l = p.next_line()?;
        l.keyword("counts")?;
        let counts = CircuitCounts {
            n_inputs: l.kv("n_inputs")?,
            n_gates: l.kv("n_gates")?,
            n_mul: l.kv("n_mul")?,
            n_add: l.kv("n_add")?,
            n_cst: l.kv("n_cst")?,
            n_hints: l.kv("n_hints")?,
            n_constraints: l.kv("n_constraints")?,
        };
        l.done()?;

        let n = p.section("gates")?;
        let mut gates = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let mut l = p.next_line()?;
            let tag = l.word()?;
            let out = WireId(l.num()?);
            let g = match tag {
                "c" => Gate::Const { value: l.num()?, out },
                "a" => Gate::Add { a: WireId(l.num()?), b: WireId(l.num()?), out },
                "m" => Gate::Mul { a: WireId(l.num()?), b: WireId(l.num()?), out },
                t => return Err(l.err(format!("unknown gate `{t}`"))),
            };
            l.done()?;
            gates.push(g);
        }

        let n = p.section("hints")?;
        let mut hints = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let mut l = p.next_line()?;
            let tag = l.word()?;
            let kind = HintKind::from_tag(tag).ok_or_else(|| l.err(format!("unknown hint `{tag}`")))?;
            let h = HintSpec {
                kind,
                out: WireId(l.num()?),
                operand: WireId(l.num()?),
                imm: l.num()?,
            };
            l.done()?;
            hints.push(h);
        }

        let n = p.section("constraints")?;
        let mut constraints = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let mut l = p.next_line()?;
            let c = match l.word()? {
                "z" => Constraint::AssertZero { a: WireId(l.num()?), b: None },
                "zp" => Constraint::AssertZero { a: WireId(l.num()?), b: Some(WireId(l.num()?)) },
                "eq" => Constraint::AssertEqual { a: WireId(l.num()?), b: WireId(l.num()?) },
                "bool" => Constraint::AssertBool { a: WireId(l.num()?) },
                t => return Err(l.err(format!("unknown constraint `{t}`"))),
            };
            l.done()?;
            constraints.push(c);
        }

        let n = p.section("outputs")?;
        let mut outputs = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let mut l = p.next_line()?;
            outputs.push(WireId(l.num()?));
            l.done()?;
        }
        let mut l = p.next_line()?;
        l.keyword("end")?;
        l.done()?;
        if let Some((i, extra)) = p.lines.next() {
            return Err(CircuitFormatError::Syntax {
                line: i + 1,
                msg: format!("trailing content `{extra}`"),
            });
        }

        let cs = ConstraintSystem {
            field,
            quant,
            cost,
            options,
            input_shape,
            output_shape,
            n_inputs,
            n_wires,
            gates,
            hints,
            constraints,
            outputs,
            counts,
        };
        cs.check_structure().map_err(CircuitFormatError::Invalid)?;
        Ok(cs)
    }
}

struct Parser<'a, I: Iterator<Item = (usize, &'a str)>> {
    lines: I,
    line: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Parser<'a, I> {
    fn next_line(&mut self) -> Result<Line<'a>, CircuitFormatError> {
        match self.lines.next() {
            Some((i, text)) => {
                self.line = i + 1;
                Ok(Line {
                    line: i + 1,
                    text,
                    words: text.split_whitespace(),
                })
            }
            None => Err(CircuitFormatError::Syntax {
                line: self.line + 1,
                msg: "unexpected end of file".into(),
            }),
        }
    }

    fn section(&mut self, name: &str) -> Result<usize, CircuitFormatError> {
        let mut l = self.next_line()?;
        l.keyword(name)?;
        let n = l.num()?;
        l.done()?;
        Ok(n)
    }
}

struct Line<'a> {
    line: usize,
    text: &'a str,
    words: SplitWhitespace<'a>,
}

impl<'a> Line<'a> {
    fn err(&self, msg: impl Into<String>) -> CircuitFormatError {
        CircuitFormatError::Syntax {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn word(&mut self) -> Result<&'a str, CircuitFormatError> {
        self.words.next().ok_or_else(|| self.err("missing field"))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), CircuitFormatError> {
        let w = self.word()?;
        if w != kw {
            return Err(self.err(format!("expected `{kw}`, found `{w}`")));
        }
        Ok(())
    }

    fn num<T: FromStr>(&mut self) -> Result<T, CircuitFormatError> {
        let w = self.word()?;
        w.parse().map_err(|_| self.err(format!("bad number `{w}`")))
    }

    fn kv<T: FromStr>(&mut self, key: &str) -> Result<T, CircuitFormatError> {
        let w = self.word()?;
        let v = w
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| self.err(format!("expected `{key}=...`, found `{w}`")))?;
        v.parse().map_err(|_| self.err(format!("bad value for {key}: `{v}`")))
    }

    fn shape(&mut self, key: &str) -> Result<Vec<usize>, CircuitFormatError> {
        let raw: String = self.kv(key)?;
        raw.split(',')
            .map(|d| d.parse().map_err(|_| self.err(format!("bad shape `{raw}`"))))
            .collect()
    }

    /// Everything after the words consumed so far, trimmed.
    fn rest(&mut self) -> String {
        let rest: Vec<&str> = self.words.by_ref().collect();
        rest.join(" ")
    }

    fn done(&mut self) -> Result<(), CircuitFormatError> {
        match self.words.next() {
            None => Ok(()),
            Some(w) => Err(self.err(format!("unexpected `{w}` in `{}`", self.text))),
        }
    }
}
