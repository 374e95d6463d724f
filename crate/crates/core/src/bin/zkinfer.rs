use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use zkinfer::bench::{self, SweepKind, SweepSpec};
use zkinfer::circuit::CircuitCounts;
use zkinfer::pipeline::{self, PipelineConfig, PipelineError};

#[derive(Parser)]
#[command(name = "zkinfer", version, about = "Compile neural networks to arithmetic circuits and prove inference")]
struct Cli {
    /// JSON config file (overrides the ZKINFER_CONFIG environment variable)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print a JSON summary instead of text
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Import, quantize and compile a model to a circuit
    Compile {
        #[arg(short = 'm', long = "model")]
        model: PathBuf,
        #[arg(short = 'c', long = "circuit")]
        circuit: PathBuf,
    },
    /// Run the quantized model and write the witness and output
    Witness {
        #[arg(short = 'c', long = "circuit")]
        circuit: PathBuf,
        #[arg(short = 'i', long = "input")]
        input: PathBuf,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
        #[arg(short = 'w', long = "witness")]
        witness: PathBuf,
    },
    /// Generate a proof
    Prove {
        #[arg(short = 'c', long = "circuit")]
        circuit: PathBuf,
        #[arg(short = 'w', long = "witness")]
        witness: PathBuf,
        #[arg(short = 'p', long = "proof")]
        proof: PathBuf,
    },
    /// Verify a proof
    Verify {
        #[arg(short = 'c', long = "circuit")]
        circuit: PathBuf,
        #[arg(short = 'i', long = "input")]
        input: PathBuf,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
        #[arg(short = 'w', long = "witness")]
        witness: PathBuf,
        #[arg(short = 'p', long = "proof")]
        proof: PathBuf,
    },
    /// Run a depth or breadth sweep and write records.csv and report.md
    Bench {
        #[arg(long, value_enum, default_value = "depth")]
        kind: Kind,
        /// Depths (depth sweep) or input sides (breadth sweep)
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Input side for depth sweeps
        #[arg(long, default_value_t = 16)]
        height: usize,
        #[arg(long, default_value_t = bench::DEFAULT_CHANNELS)]
        channels: usize,
        #[arg(long, default_value_t = 3)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "out", default_value = "bench-out")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Depth,
    Breadth,
}

fn distinct(paths: &[&Path]) -> Result<(), PipelineError> {
    let mut seen = HashSet::new();
    for p in paths {
        if !seen.insert(*p) {
            return Err(PipelineError::Malformed(format!("path {} given twice", p.display())));
        }
    }
    Ok(())
}

fn print_counts(c: &CircuitCounts) {
    println!("inputs       {}", c.n_inputs);
    println!("gates        {}", c.n_gates);
    println!("  mul        {}", c.n_mul);
    println!("  add        {}", c.n_add);
    println!("  const      {}", c.n_cst);
    println!("  hints      {}", c.n_hints);
    println!("constraints  {}", c.n_constraints);
}

fn emit<T: Serialize>(json: bool, summary: &T, text: impl FnOnce(&T)) {
    if json {
        println!("{}", serde_json::to_string_pretty(summary).expect("summary serializes"));
    } else {
        text(summary);
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let json = cli.json;
    match cli.cmd {
        Cmd::Compile { model, circuit } => {
            distinct(&[&model, &circuit])?;
            let cfg = PipelineConfig::load(cli.config.as_deref())?;
            let s = pipeline::cmd_compile(&model, &circuit, &cfg)?;
            emit(json, &s, |s| {
                print_counts(&s.counts);
                println!("wires        {}", s.n_wires);
                println!("parameters   {}", s.parameters);
                println!("total cost   {}", s.total_cost);
                println!("digest       {}", s.circuit_digest);
                println!("time         {:.3}s", s.seconds);
            });
        }
        Cmd::Witness {
            circuit,
            input,
            output,
            witness,
        } => {
            distinct(&[&circuit, &input, &output, &witness])?;
            let s = pipeline::cmd_witness(&circuit, &input, &output, &witness)?;
            emit(json, &s, |s| {
                println!("wires        {}", s.n_wires);
                println!("output       {:?}", s.output);
                println!("digest       {}", s.witness_digest);
                println!("time         {:.3}s", s.seconds);
            });
        }
        Cmd::Prove { circuit, witness, proof } => {
            distinct(&[&circuit, &witness, &proof])?;
            let s = pipeline::cmd_prove(&circuit, &witness, &proof)?;
            emit(json, &s, |s| {
                println!("openings     {}", s.openings);
                println!("circuit      {}", s.circuit_digest);
                println!("io           {}", s.io_digest);
                println!("witness      {}", s.witness_digest);
                println!("time         {:.3}s", s.seconds);
            });
        }
        Cmd::Verify {
            circuit,
            input,
            output,
            witness,
            proof,
        } => {
            distinct(&[&circuit, &input, &output, &witness, &proof])?;
            let s = pipeline::cmd_verify(&circuit, &input, &output, &witness, &proof)?;
            emit(json, &s, |s| println!("OK {} ({:.3}s)", s.circuit_digest, s.seconds));
        }
        Cmd::Bench {
            kind,
            sizes,
            height,
            channels,
            iterations,
            seed,
            out,
        } => {
            let cfg = PipelineConfig::load(cli.config.as_deref())?;
            let mut spec = match kind {
                Kind::Depth => SweepSpec::depth(sizes, height),
                Kind::Breadth => SweepSpec::breadth(sizes),
            };
            spec.channels = channels;
            spec.seed = seed;
            let bench_err = |e: bench::BenchError| PipelineError::Malformed(e.to_string());
            let records = bench::run_sweep(&spec, iterations, &cfg, &out.join("work")).map_err(bench_err)?;
            let mut fits = Vec::new();
            let ok: Vec<_> = records.iter().filter(|r| r.verify_s.is_some()).collect();
            if ok.len() >= 2 {
                let cost: Vec<f64> = ok.iter().map(|r| r.total_cost.unwrap_or(0) as f64).collect();
                for (phase, name) in bench::PHASES.iter().enumerate() {
                    let y: Vec<f64> = ok.iter().map(|r| r.runtime(phase).unwrap_or(0.0)).collect();
                    if let Ok(f) = bench::fit_excluding_outliers(&cost, &y) {
                        fits.push((format!("{name} time ~ total cost"), f));
                    }
                }
                if spec.kind == SweepKind::Breadth {
                    let params: Vec<f64> = ok.iter().map(|r| r.parameters as f64).collect();
                    let y: Vec<f64> = ok.iter().map(|r| r.runtime(2).unwrap_or(0.0)).collect();
                    if let Ok(f) = bench::fit_excluding_outliers(&params, &y) {
                        fits.push(("prove time ~ parameters".into(), f));
                    }
                }
            }
            let (csv, md) = bench::emit_report(&records, &fits, spec.kind, &out).map_err(bench_err)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&records).expect("records serialize"));
            } else {
                println!("{}", csv.display());
                println!("{}", md.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
