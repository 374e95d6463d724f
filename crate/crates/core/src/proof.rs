//! Designated-verifier proof artifacts and the Freivalds matmul checker.
//!
//! The reference backend is neither zero-knowledge nor succinct: the verifier
//! holds the witness and rechecks the full relation. The artifact binds the
//! circuit, the public IO and the witness by SHA-256 digest, derives its
//! challenge seed from those digests, and carries spot-check openings for a
//! seed-derived subset of constraints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::circuit::ConstraintSystem;
use crate::field::{FieldConfig, Fp};
use crate::witness::{check_constraints, constraint_holds, Witness, WitnessError};

pub const PROOF_FORMAT_VERSION: u32 = 1;
pub const HASH_SHA256: u8 = 1;
pub const DEFAULT_OPENINGS: usize = 64;
const PROOF_MAGIC: &[u8; 4] = b"ZKPF";
const SEED_DOMAIN: &[u8] = b"zkinfer/seed/v1";
const IO_DOMAIN: &[u8] = b"zkinfer/io/v1";
const SPOT_DOMAIN: &[u8] = b"zkinfer/spot/v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProofError {
    #[error("malformed proof: {0}")]
    Format(String),
    #[error("prover refuses: {0}")]
    Refused(String),
    #[error(transparent)]
    Witness(#[from] WitnessError),
}

/// Field residues of the public input and output wires.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicIo {
    pub inputs: Vec<u64>,
    pub outputs: Vec<u64>,
}

impl PublicIo {
    pub fn from_witness(cs: &ConstraintSystem, w: &Witness) -> Self {
        Self {
            inputs: w.public_inputs(cs).to_vec(),
            outputs: w.public_outputs(cs),
        }
    }

    /// Encode signed activations as residues.
    pub fn from_integers(field: &FieldConfig, inputs: &[i64], outputs: &[i64]) -> Self {
        let fp = field.arith();
        let enc = |xs: &[i64]| xs.iter().map(|&x| fp.reduce_i128(x as i128)).collect();
        Self {
            inputs: enc(inputs),
            outputs: enc(outputs),
        }
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(IO_DOMAIN);
        for part in [&self.inputs, &self.outputs] {
            h.update((part.len() as u64).to_le_bytes());
            for v in part {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Opening {
    pub constraint: u32,
    /// Values of the constraint's wires, in `Constraint::wires` order.
    pub values: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProofArtifact {
    pub hash_id: u8,
    pub circuit_digest: [u8; 32],
    pub io_digest: [u8; 32],
    pub witness_digest: [u8; 32],
    pub challenge_seed: [u8; 16],
    pub openings: Vec<Opening>,
}

/// Why a verifier rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reject {
    CircuitDigest,
    IoDigest,
    /// The presented IO disagrees with the witness's public wires.
    IoWitnessMismatch,
    WitnessDigest,
    Seed,
    OpeningSet,
    Opening { constraint: u32 },
    Relation(String),
    MissingWitness,
}

impl std::fmt::Display for Reject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Reject::CircuitDigest => write!(f, "circuit_digest mismatch"),
            Reject::IoDigest => write!(f, "io_digest mismatch"),
            Reject::IoWitnessMismatch => write!(f, "public IO does not match the witness"),
            Reject::WitnessDigest => write!(f, "witness_digest mismatch"),
            Reject::Seed => write!(f, "challenge seed mismatch"),
            Reject::OpeningSet => write!(f, "spot-check indices do not follow from the seed"),
            Reject::Opening { constraint } => write!(f, "opening for constraint {constraint} is invalid"),
            Reject::Relation(m) => write!(f, "constraint recheck failed: {m}"),
            Reject::MissingWitness => write!(f, "this backend needs the witness to verify"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(Reject),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

/// First 16 bytes of `SHA-256(domain || circuit || io || witness)`.
pub fn derive_seed(cd: &[u8; 32], iod: &[u8; 32], wd: &[u8; 32]) -> [u8; 16] {
    let mut h = Sha256::new();
    h.update(SEED_DOMAIN);
    h.update(cd);
    h.update(iod);
    h.update(wd);
    h.finalize()[..16].try_into().unwrap()
}

/// `min(k, n)` distinct constraint indices from a SHA-256 counter PRF.
pub fn spot_indices(seed: &[u8; 16], n_constraints: usize, k: usize) -> Vec<u32> {
    if n_constraints <= k {
        return (0..n_constraints as u32).collect();
    }
    let mut picked = Vec::with_capacity(k);
    let mut seen = std::collections::HashSet::with_capacity(k);
    let mut ctr = 0u64;
    while picked.len() < k {
        let mut h = Sha256::new();
        h.update(SPOT_DOMAIN);
        h.update(seed);
        h.update(ctr.to_le_bytes());
        let d = h.finalize();
        ctr += 1;
        // Rejection sampling keeps the draw unbiased.
        let x = u64::from_le_bytes(d[..8].try_into().unwrap());
        let n = n_constraints as u64;
        if x >= u64::MAX - u64::MAX % n {
            continue;
        }
        let i = (x % n) as u32;
        if seen.insert(i) {
            picked.push(i);
        }
    }
    picked
}

/// Proves against the full witness; refuses if any gate or constraint fails.
pub fn prove(cs: &ConstraintSystem, w: &Witness) -> Result<ProofArtifact, ProofError> {
    let report = check_constraints(cs, w)?;
    if let Some(first) = report.first(cs) {
        return Err(ProofError::Refused(format!(
            "{} violation(s), first at {first}",
            report.violations()
        )));
    }
    let circuit_digest = cs.digest();
    let io_digest = PublicIo::from_witness(cs, w).digest();
    let witness_digest = w.digest();
    let challenge_seed = derive_seed(&circuit_digest, &io_digest, &witness_digest);
    let openings = spot_indices(&challenge_seed, cs.constraints.len(), DEFAULT_OPENINGS)
        .into_iter()
        .map(|i| Opening {
            constraint: i,
            values: cs.constraints[i as usize].wires().iter().map(|&x| w.get(x)).collect(),
        })
        .collect();
    Ok(ProofArtifact {
        hash_id: HASH_SHA256,
        circuit_digest,
        io_digest,
        witness_digest,
        challenge_seed,
        openings,
    })
}

/// Check the artifact clause by clause and report the first failure.
pub fn verify(cs: &ConstraintSystem, io: &PublicIo, w: Option<&Witness>, pa: &ProofArtifact) -> Verdict {
    let reject = Verdict::Reject;
    if pa.circuit_digest != cs.digest() {
        return reject(Reject::CircuitDigest);
    }
    if pa.io_digest != io.digest() {
        return reject(Reject::IoDigest);
    }
    let Some(w) = w else {
        return reject(Reject::MissingWitness);
    };
    if w.len() != cs.n_wires || w.modulus() != cs.field.modulus() {
        return reject(Reject::WitnessDigest);
    }
    if PublicIo::from_witness(cs, w) != *io {
        return reject(Reject::IoWitnessMismatch);
    }
    if pa.witness_digest != w.digest() {
        return reject(Reject::WitnessDigest);
    }
    if pa.challenge_seed != derive_seed(&pa.circuit_digest, &pa.io_digest, &pa.witness_digest) {
        return reject(Reject::Seed);
    }
    let expected = spot_indices(&pa.challenge_seed, cs.constraints.len(), DEFAULT_OPENINGS);
    if pa.openings.iter().map(|o| o.constraint).ne(expected.iter().copied()) {
        return reject(Reject::OpeningSet);
    }
    for o in &pa.openings {
        let c = &cs.constraints[o.constraint as usize];
        let wires = c.wires();
        let matches = wires.len() == o.values.len() && wires.iter().zip(&o.values).all(|(x, v)| w.get(*x) == *v);
        if !matches || !constraint_holds(cs, c, w.values()) {
            return reject(Reject::Opening { constraint: o.constraint });
        }
    }
    match check_constraints(cs, w) {
        Ok(report) => match report.first(cs) {
            None => Verdict::Accept,
            Some(first) => reject(Reject::Relation(first)),
        },
        Err(e) => reject(Reject::Relation(e.to_string())),
    }
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8], ProofError> {
    if bytes.len() < n {
        return Err(ProofError::Format("truncated".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8]) -> Result<u32, ProofError> {
    Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().unwrap()))
}

impl ProofArtifact {
    /// `magic, version, hash id, three digests, seed, opening count, then
    /// per opening: index, value count, values`, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(128 + self.openings.len() * 32);
        out.extend_from_slice(PROOF_MAGIC);
        out.extend_from_slice(&PROOF_FORMAT_VERSION.to_le_bytes());
        out.push(self.hash_id);
        out.extend_from_slice(&self.circuit_digest);
        out.extend_from_slice(&self.io_digest);
        out.extend_from_slice(&self.witness_digest);
        out.extend_from_slice(&self.challenge_seed);
        out.extend_from_slice(&(self.openings.len() as u32).to_le_bytes());
        for o in &self.openings {
            out.extend_from_slice(&o.constraint.to_le_bytes());
            out.extend_from_slice(&(o.values.len() as u32).to_le_bytes());
            for v in &o.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, ProofError> {
        let b = &mut bytes;
        if take(b, 4)? != PROOF_MAGIC {
            return Err(ProofError::Format("bad magic".into()));
        }
        let version = take_u32(b)?;
        if version != PROOF_FORMAT_VERSION {
            return Err(ProofError::Format(format!("unsupported version {version}")));
        }
        let hash_id = take(b, 1)?[0];
        if hash_id != HASH_SHA256 {
            return Err(ProofError::Format(format!("unknown hash id {hash_id}")));
        }
        let circuit_digest = take(b, 32)?.try_into().unwrap();
        let io_digest = take(b, 32)?.try_into().unwrap();
        let witness_digest = take(b, 32)?.try_into().unwrap();
        let challenge_seed = take(b, 16)?.try_into().unwrap();
        let n = take_u32(b)? as usize;
        let mut openings = Vec::with_capacity(n.min(DEFAULT_OPENINGS));
        for _ in 0..n {
            let constraint = take_u32(b)?;
            let k = take_u32(b)? as usize;
            if k > 2 {
                return Err(ProofError::Format(format!("opening with {k} values")));
            }
            let values = (0..k)
                .map(|_| Ok(u64::from_le_bytes(take(b, 8)?.try_into().unwrap())))
                .collect::<Result<_, ProofError>>()?;
            openings.push(Opening { constraint, values });
        }
        if !b.is_empty() {
            return Err(ProofError::Format(format!("{} trailing bytes", b.len())));
        }
        Ok(Self {
            hash_id,
            circuit_digest,
            io_digest,
            witness_digest,
            challenge_seed,
            openings,
        })
    }
}

/// A prover/verifier pair that the pipeline can swap out.
pub trait ProofBackend {
    fn name(&self) -> &'static str;
    fn prove(&self, cs: &ConstraintSystem, w: &Witness) -> Result<Vec<u8>, ProofError>;
    fn verify(&self, cs: &ConstraintSystem, io: &PublicIo, w: Option<&Witness>, proof: &[u8]) -> Result<Verdict, ProofError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceBackend;

impl ProofBackend for ReferenceBackend {
    fn name(&self) -> &'static str {
        "reference-designated-verifier"
    }

    fn prove(&self, cs: &ConstraintSystem, w: &Witness) -> Result<Vec<u8>, ProofError> {
        Ok(prove(cs, w)?.to_bytes())
    }

    fn verify(&self, cs: &ConstraintSystem, io: &PublicIo, w: Option<&Witness>, proof: &[u8]) -> Result<Verdict, ProofError> {
        let pa = ProofArtifact::from_bytes(proof)?;
        Ok(verify(cs, io, w, &pa))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FreivaldsError {
    #[error("cannot check {0}")]
    Shape(String),
    #[error("at least one repetition is required")]
    Repetitions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreivaldsParams {
    pub repetitions: u32,
    pub seed: u64,
}

/// Row-major integer matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i64>,
}

impl IntMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self { rows, cols, data }
    }

    pub fn at(&self, i: usize, j: usize) -> i64 {
        self.data[i * self.cols + j]
    }

    pub fn reduce(&self, fp: Fp) -> FieldMatrix {
        FieldMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| fp.reduce_i128(x as i128)).collect(),
        }
    }
}

/// Row-major matrix of residues.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u64>,
}

impl FieldMatrix {
    /// `M v`, reducing each dot product once (or every 32 terms for wide fields).
    pub fn mul_vec(&self, fp: Fp, v: &[u64]) -> Vec<u64> {
        let small = fp.modulus() <= u32::MAX as u64;
        self.data
            .chunks_exact(self.cols)
            .map(|row| {
                let mut acc: u128 = 0;
                let mut out = 0u64;
                for (k, (&m, &x)) in row.iter().zip(v).enumerate() {
                    acc += m as u128 * x as u128;
                    if !small && k % 32 == 31 {
                        out = fp.add(out, fp.reduce_u128(acc));
                        acc = 0;
                    }
                }
                fp.add(out, fp.reduce_u128(acc))
            })
            .collect()
    }
}

/// One Freivalds round with a caller-chosen challenge: is `A (B v) = C v`?
pub fn freivalds_round(fp: Fp, a: &FieldMatrix, b: &FieldMatrix, c: &FieldMatrix, v: &[u64]) -> bool {
    let bv = b.mul_vec(fp, v);
    a.mul_vec(fp, &bv) == c.mul_vec(fp, v)
}

/// Probabilistic test of `C = A B` over the field with `t` random challenges.
pub fn freivalds_check(
    a: &IntMatrix,
    b: &IntMatrix,
    c: &IntMatrix,
    field: &FieldConfig,
    params: &FreivaldsParams,
) -> Result<bool, FreivaldsError> {
    if params.repetitions == 0 {
        return Err(FreivaldsError::Repetitions);
    }
    if a.cols != b.rows || c.rows != a.rows || c.cols != b.cols {
        return Err(FreivaldsError::Shape(format!(
            "{}x{} times {}x{} against {}x{}",
            a.rows, a.cols, b.rows, b.cols, c.rows, c.cols
        )));
    }
    let fp = field.arith();
    let (fa, fb, fc) = (a.reduce(fp), b.reduce(fp), c.reduce(fp));
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for _ in 0..params.repetitions {
        let v: Vec<u64> = (0..b.cols).map(|_| rng.random_range(0..fp.modulus())).collect();
        if !freivalds_round(fp, &fa, &fb, &fc, &v) {
            return Ok(false);
        }
    }
    Ok(true)
}
