//! Sweep model generators, per-phase timing with peak-RSS sampling, MAD
//! outlier flagging, least-squares fits and report output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelGraph, ModelNode, Op, OpKind, Tensor, TensorSpec};
use crate::pipeline::{self, PipelineConfig};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0}")]
    Input(String),
    #[error("x values are all equal; the fit is undetermined")]
    DegenerateX,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Output classes of the classifier head.
pub const CLASSES: usize = 10;
/// Channels of the first block; later blocks double it, capped after two
/// doublings.
pub const DEFAULT_CHANNELS: usize = 4;

/// Width of block `i` given the first block's width.
pub fn block_channels(first: usize, i: usize) -> usize {
    first << i.min(2)
}

/// Layer counts `(d, c, p, f, r)` as in the sweep tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCounts {
    pub d: usize,
    pub c: usize,
    pub p: usize,
    pub f: usize,
    pub r: usize,
}

pub fn layer_counts(graph: &ModelGraph) -> LayerCounts {
    let count = |k: OpKind| graph.nodes.iter().filter(|n| n.op.kind() == k).count();
    let c = count(OpKind::Conv2D);
    LayerCounts {
        d: c,
        c,
        p: count(OpKind::MaxPool2D),
        f: count(OpKind::Gemm),
        r: count(OpKind::Relu),
    }
}

/// Convolutional stack of depth `d` on a `1 x 1 x h x h` input: 3x3 convs
/// with padding 1, each followed by ReLU, with a 2x2/2 max-pool after the
/// first two blocks; then a reshape and a fully connected layer to
/// [`CLASSES`] outputs followed by a ReLU.
pub fn make_depth_model(d: usize, h: usize, channels: usize, seed: u64) -> Result<ModelGraph, ModelError> {
    make_depth_model_with(d, h, channels, seed, true)
}

/// As [`make_depth_model`]; `final_relu` controls the ReLU after the
/// classifier.
pub fn make_depth_model_with(
    d: usize,
    h: usize,
    channels: usize,
    seed: u64,
    final_relu: bool,
) -> Result<ModelGraph, ModelError> {
    let shape_err = |msg: String| ModelError::Shape {
        node: "input".into(),
        msg,
    };
    if d == 0 {
        return Err(shape_err("depth must be at least 1".into()));
    }
    if channels == 0 {
        return Err(shape_err("channels must be at least 1".into()));
    }
    let pools = d.min(2);
    let factor = 1 << pools;
    if !h.is_multiple_of(factor) || h / factor < 2 {
        return Err(shape_err(format!(
            "input side {h} cannot pass through {pools} 2x2 pool(s) and keep a 2x2 map"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = BTreeMap::new();
    let mut nodes = Vec::new();
    // Weights ~ U(-a, a) with a = 4 / fan_in, so the worst-case L1 gain per
    // layer stays near 2 and deep stacks pass the overflow audit.
    let mut tensor = |rng: &mut ChaCha8Rng, name: &str, shape: Vec<usize>, a: f64| {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
        init.insert(name.to_string(), Tensor { shape, data });
    };
    let mut prev = "x".to_string();
    let mut in_ch = 1;
    let mut side = h;
    for i in 0..d {
        let out_ch = block_channels(channels, i);
        let fan_in = (in_ch * 9) as f64;
        let (w, b) = (format!("conv{i}.w"), format!("conv{i}.b"));
        tensor(&mut rng, &w, vec![out_ch, in_ch, 3, 3], 4.0 / fan_in);
        tensor(&mut rng, &b, vec![out_ch], 0.1);
        nodes.push(ModelNode {
            name: format!("conv{i}"),
            op: Op::Conv2D {
                stride: [1, 1],
                padding: [1, 1],
                kernel_shape: Some([3, 3]),
            },
            inputs: vec![prev.clone(), w, b],
            output: format!("conv{i}.out"),
        });
        nodes.push(ModelNode {
            name: format!("relu{i}"),
            op: Op::Relu,
            inputs: vec![format!("conv{i}.out")],
            output: format!("relu{i}.out"),
        });
        prev = format!("relu{i}.out");
        if i < 2 {
            nodes.push(ModelNode {
                name: format!("pool{i}"),
                op: Op::MaxPool2D {
                    window: [2, 2],
                    stride: [2, 2],
                },
                inputs: vec![prev.clone()],
                output: format!("pool{i}.out"),
            });
            prev = format!("pool{i}.out");
            side /= 2;
        }
        in_ch = out_ch;
    }
    let flat = in_ch * side * side;
    nodes.push(ModelNode {
        name: "flatten".into(),
        op: Op::Reshape { shape: vec![1, -1] },
        inputs: vec![prev],
        output: "flat".into(),
    });
    tensor(&mut rng, "fc.w", vec![flat, CLASSES], 4.0 / flat as f64);
    tensor(&mut rng, "fc.b", vec![CLASSES], 0.1);
    let fc_out = if final_relu { "fc.out" } else { "y" };
    nodes.push(ModelNode {
        name: "fc".into(),
        op: Op::Gemm {
            trans_a: false,
            trans_b: false,
        },
        inputs: vec!["flat".into(), "fc.w".into(), "fc.b".into()],
        output: fc_out.into(),
    });
    if final_relu {
        nodes.push(ModelNode {
            name: "fc.relu".into(),
            op: Op::Relu,
            inputs: vec![fc_out.into()],
            output: "y".into(),
        });
    }
    let graph = ModelGraph {
        nodes,
        initializers: init,
        input: TensorSpec::new("x", vec![1, 1, h, h])?,
        output: "y".into(),
    };
    graph.validate()?;
    Ok(graph)
}

/// The fixed five-block architecture at input side `h`.
pub fn make_breadth_model(h: usize, seed: u64) -> Result<ModelGraph, ModelError> {
    make_depth_model(5, h, DEFAULT_CHANNELS, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Depth,
    Breadth,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepSpec {
    pub kind: SweepKind,
    /// Depths for a depth sweep, input sides for a breadth sweep.
    pub sizes: Vec<usize>,
    /// Input side of a depth sweep; ignored for breadth sweeps.
    pub height: usize,
    pub channels: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn depth(depths: Vec<usize>, height: usize) -> Self {
        Self {
            kind: SweepKind::Depth,
            sizes: depths,
            height,
            channels: DEFAULT_CHANNELS,
            seed: 0,
        }
    }

    pub fn breadth(heights: Vec<usize>) -> Self {
        Self {
            kind: SweepKind::Breadth,
            sizes: heights,
            height: 0,
            channels: DEFAULT_CHANNELS,
            seed: 0,
        }
    }

    pub fn model(&self, size: usize) -> Result<ModelGraph, ModelError> {
        match self.kind {
            SweepKind::Depth => make_depth_model(size, self.height, self.channels, self.seed),
            SweepKind::Breadth => make_depth_model(5, size, self.channels, self.seed),
        }
    }
}

pub const PHASES: [&str; 4] = ["compile", "witness", "prove", "verify"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    /// Depth for depth sweeps, input side for breadth sweeps.
    pub size: usize,
    pub d: usize,
    pub c: usize,
    pub p: usize,
    pub f: usize,
    pub r: usize,
    pub parameters: usize,
    pub total_cost: Option<u128>,
    pub constraints: Option<u64>,
    pub compile_s: Option<f64>,
    pub witness_s: Option<f64>,
    pub prove_s: Option<f64>,
    pub verify_s: Option<f64>,
    pub compile_peak_bytes: Option<u64>,
    pub witness_peak_bytes: Option<u64>,
    pub prove_peak_bytes: Option<u64>,
    pub verify_peak_bytes: Option<u64>,
    pub circuit_bytes: Option<u64>,
    pub witness_bytes: Option<u64>,
    pub proof_bytes: Option<u64>,
    pub error: Option<String>,
}

impl SweepRecord {
    pub fn runtime(&self, phase: usize) -> Option<f64> {
        [self.compile_s, self.witness_s, self.prove_s, self.verify_s][phase]
    }

    pub fn peak(&self, phase: usize) -> Option<u64> {
        [
            self.compile_peak_bytes,
            self.witness_peak_bytes,
            self.prove_peak_bytes,
            self.verify_peak_bytes,
        ][phase]
    }

    fn set_phase(&mut self, phase: usize, secs: f64, peak: Option<u64>) {
        let (t, m) = match phase {
            0 => (&mut self.compile_s, &mut self.compile_peak_bytes),
            1 => (&mut self.witness_s, &mut self.witness_peak_bytes),
            2 => (&mut self.prove_s, &mut self.prove_peak_bytes),
            _ => (&mut self.verify_s, &mut self.verify_peak_bytes),
        };
        *t = Some(secs);
        *m = peak;
    }
}

/// Resident set size of this process, from `/proc/self/status`.
pub fn current_rss() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Background thread recording the highest RSS seen since the last reset.
/// Sampling is periodic, so short spikes between samples are missed.
pub struct RssSampler {
    stop: Arc<AtomicBool>,
    peak: Arc<AtomicU64>,
    handle: Option<JoinHandle<()>>,
}

impl RssSampler {
    pub fn start(interval: Duration) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let peak = Arc::new(AtomicU64::new(current_rss().unwrap_or(0)));
        let handle = {
            let (stop, peak) = (stop.clone(), peak.clone());
            std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    if let Some(rss) = current_rss() {
                        peak.fetch_max(rss, Ordering::Relaxed);
                    }
                    std::thread::sleep(interval);
                }
            })
        };
        Self {
            stop,
            peak,
            handle: Some(handle),
        }
    }

    pub fn reset(&self) {
        self.peak.store(current_rss().unwrap_or(0), Ordering::Relaxed);
    }

    /// Peak since the last reset, including the current value.
    pub fn peak(&self) -> Option<u64> {
        let now = current_rss()?;
        Some(self.peak.fetch_max(now, Ordering::Relaxed).max(now))
    }
}

impl Drop for RssSampler {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn file_len(path: &Path) -> Option<u64> {
    fs::metadata(path).ok().map(|m| m.len())
}

/// A deterministic input in `[-1, 1)` for a model.
pub fn sample_input(graph: &ModelGraph, seed: u64) -> crate::model::InputData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    crate::model::InputData {
        input: (0..graph.input.numel()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        shape: graph.input.shape.clone(),
    }
}

/// Run all four phases `iterations` times per model and record mean
/// runtimes, the largest per-phase peak RSS and artifact sizes. A failing
/// phase ends that model's run; later phases stay empty and the error is
/// recorded.
pub fn run_sweep(
    spec: &SweepSpec,
    iterations: usize,
    cfg: &PipelineConfig,
    workdir: &Path,
) -> Result<Vec<SweepRecord>, BenchError> {
    if iterations == 0 {
        return Err(BenchError::Input("iterations must be at least 1".into()));
    }
    fs::create_dir_all(workdir).map_err(io_err(workdir))?;
    let sampler = RssSampler::start(Duration::from_millis(2));
    let mut records = Vec::with_capacity(spec.sizes.len());
    for &size in &spec.sizes {
        let mut rec = SweepRecord {
            size,
            d: 0,
            c: 0,
            p: 0,
            f: 0,
            r: 0,
            parameters: 0,
            total_cost: None,
            constraints: None,
            compile_s: None,
            witness_s: None,
            prove_s: None,
            verify_s: None,
            compile_peak_bytes: None,
            witness_peak_bytes: None,
            prove_peak_bytes: None,
            verify_peak_bytes: None,
            circuit_bytes: None,
            witness_bytes: None,
            proof_bytes: None,
            error: None,
        };
        let graph = match spec.model(size) {
            Ok(g) => g,
            Err(e) => {
                rec.error = Some(e.to_string());
                records.push(rec);
                continue;
            }
        };
        let lc = layer_counts(&graph);
        (rec.d, rec.c, rec.p, rec.f, rec.r) = (lc.d, lc.c, lc.p, lc.f, lc.r);
        rec.parameters = graph.parameter_count();

        let dir = workdir.join(format!("{:?}-{size}", spec.kind).to_lowercase());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let model = dir.join("model.json");
        let input = dir.join("input.json");
        let circuit = dir.join("circuit.txt");
        let output = dir.join("output.json");
        let witness = dir.join("witness.bin");
        let proof = dir.join("proof.bin");
        fs::write(&model, graph.to_json()).map_err(io_err(&model))?;
        fs::write(&input, sample_input(&graph, spec.seed).to_json()).map_err(io_err(&input))?;
        drop(graph);

        let mut totals = [0.0f64; 4];
        let mut peaks = [None::<u64>; 4];
        let mut failed_at = None;
        'iters: for _ in 0..iterations {
            for phase in 0..4 {
                sampler.reset();
                let res = match phase {
                    0 => pipeline::cmd_compile(&model, &circuit, cfg).map(|s| {
                        rec.total_cost = Some(s.total_cost);
                        rec.constraints = Some(s.counts.n_constraints);
                        s.seconds
                    }),
                    1 => pipeline::cmd_witness(&circuit, &input, &output, &witness).map(|s| s.seconds),
                    2 => pipeline::cmd_prove(&circuit, &witness, &proof).map(|s| s.seconds),
                    _ => pipeline::cmd_verify(&circuit, &input, &output, &witness, &proof).map(|s| s.seconds),
                };
                match res {
                    Ok(secs) => {
                        totals[phase] += secs;
                        peaks[phase] = peaks[phase].max(sampler.peak());
                    }
                    Err(e) => {
                        rec.error = Some(format!("{}: {e}", PHASES[phase]));
                        failed_at = Some(phase);
                        break 'iters;
                    }
                }
            }
        }
        let done = failed_at.unwrap_or(4);
        for phase in 0..done {
            rec.set_phase(phase, totals[phase] / iterations as f64, peaks[phase]);
        }
        if done < 4 {
            rec.total_cost = rec.total_cost.filter(|_| done > 0);
            rec.constraints = rec.constraints.filter(|_| done > 0);
        }
        rec.circuit_bytes = if done > 0 { file_len(&circuit) } else { None };
        rec.witness_bytes = if done > 1 { file_len(&witness) } else { None };
        rec.proof_bytes = if done > 2 { file_len(&proof) } else { None };
        records.push(rec);
    }
    Ok(records)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Modified z-scores `0.6745 |x - median| / MAD`. Infinite where MAD is zero
/// and the point differs from the median; zero where it equals it.
pub fn modified_z_scores(xs: &[f64]) -> Result<Vec<f64>, BenchError> {
    if xs.len() < 2 {
        return Err(BenchError::Input("need at least two values".into()));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(BenchError::Input("values must be finite".into()));
    }
    let med = median(&sorted(xs));
    let dev: Vec<f64> = xs.iter().map(|x| (x - med).abs()).collect();
    let mad = median(&sorted(&dev));
    Ok(dev
        .iter()
        .map(|&d| {
            if mad > 0.0 {
                0.6745 * d / mad
            } else if d > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect())
}

pub const MAD_THRESHOLD: f64 = 3.5;

pub fn mad_outliers(xs: &[f64]) -> Result<Vec<bool>, BenchError> {
    Ok(modified_z_scores(xs)?.into_iter().map(|z| z > MAD_THRESHOLD).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Points left out of the fit.
    pub excluded: Vec<bool>,
}

/// Ordinary least squares on the points not flagged in `exclude`. When `y`
/// has no variance, `r_squared` is 0.
pub fn linear_fit(x: &[f64], y: &[f64], exclude: &[bool]) -> Result<RegressionResult, BenchError> {
    if x.len() != y.len() || x.len() != exclude.len() {
        return Err(BenchError::Input(format!(
            "length mismatch: {} x, {} y, {} flags",
            x.len(),
            y.len(),
            exclude.len()
        )));
    }
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .zip(exclude)
        .filter(|(_, &e)| !e)
        .map(|((&a, &b), _)| (a, b))
        .collect();
    if pts.len() < 2 {
        return Err(BenchError::Input("need at least two included points".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(BenchError::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        0.0
    } else {
        let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (1.0 - sse / syy).clamp(0.0, 1.0)
    };
    Ok(RegressionResult {
        slope,
        intercept,
        r_squared,
        excluded: exclude.to_vec(),
    })
}

/// Fit `y` against `x` after dropping MAD outliers of `y`.
pub fn fit_excluding_outliers(x: &[f64], y: &[f64]) -> Result<RegressionResult, BenchError> {
    let flags = mad_outliers(y)?;
    linear_fit(x, y, &flags)
}

fn cell<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "--".to_string(), T::to_string)
}

/// Write `records.csv` and `report.md` into `dir`.
pub fn emit_report(
    records: &[SweepRecord],
    fits: &[(String, RegressionResult)],
    kind: SweepKind,
    dir: &Path,
) -> Result<(PathBuf, PathBuf), BenchError> {
    if records.is_empty() {
        return Err(BenchError::Input("no records to report".into()));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join("records.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(&csv_path))?;

    let size_col = match kind {
        SweepKind::Depth => "d",
        SweepKind::Breadth => "h",
    };
    let mut md = String::new();
    md.push_str("## Runtime (s) by phase\n\n");
    md.push_str(&format!(
        "| {size_col} | c | p | f | r | parameters | total cost | constraints | compile | witness | prove | verify |\n"
    ));
    md.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    let secs = |v: Option<f64>| v.map(|s| format!("{s:.4}"));
    for r in records {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            r.size,
            r.c,
            r.p,
            r.f,
            r.r,
            r.parameters,
            cell(&r.total_cost),
            cell(&r.constraints),
            cell(&secs(r.compile_s)),
            cell(&secs(r.witness_s)),
            cell(&secs(r.prove_s)),
            cell(&secs(r.verify_s)),
        ));
    }
    md.push_str("\n## Peak memory (MB) by phase\n\n");
    md.push_str(&format!("| {size_col} | compile | witness | prove | verify |\n|---|---|---|---|---|\n"));
    let mb = |v: Option<u64>| v.map(|b| format!("{:.1}", b as f64 / (1 << 20) as f64));
    for r in records {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            r.size,
            cell(&mb(r.compile_peak_bytes)),
            cell(&mb(r.witness_peak_bytes)),
            cell(&mb(r.prove_peak_bytes)),
            cell(&mb(r.verify_peak_bytes)),
        ));
    }
    md.push_str(&format!(
        "\n## Artifact sizes (bytes)\n\n| {size_col} | circuit | witness | proof |\n|---|---|---|---|\n"
    ));
    for r in records {
        md.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            r.size,
            cell(&r.circuit_bytes),
            cell(&r.witness_bytes),
            cell(&r.proof_bytes),
        ));
    }
    if !fits.is_empty() {
        md.push_str("\n## Fits\n\n| fit | slope | intercept | R^2 | excluded |\n|---|---|---|---|---|\n");
        for (name, f) in fits {
            md.push_str(&format!(
                "| {name} | {:.6e} | {:.6e} | {:.4} | {} |\n",
                f.slope,
                f.intercept,
                f.r_squared,
                f.excluded.iter().filter(|&&e| e).count()
            ));
        }
    }
    let failures: Vec<&SweepRecord> = records.iter().filter(|r| r.error.is_some()).collect();
    if !failures.is_empty() {
        md.push_str("\n## Failures\n\n");
        for r in failures {
            md.push_str(&format!("- {size_col}={}: {}\n", r.size, r.error.as_deref().unwrap_or("")));
        }
    }
    let md_path = dir.join("report.md");
    fs::write(&md_path, md).map_err(io_err(&md_path))?;
    Ok((csv_path, md_path))
}

pub fn read_records(path: &Path) -> Result<Vec<SweepRecord>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
