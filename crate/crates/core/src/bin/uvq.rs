use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use uvq::harness::{
    build_code, check_invariants, emit_outputs, fit_rate_exponent, read_csv, run_experiment, ExperimentConfig,
    HarnessError, Metric, RateFit, TrialRecord,
};
use uvq::sources::{ParamVector, SourceModel};
use uvq::vq::{lloyd_design, write_codebook, CodeShape};

#[derive(Parser)]
#[command(name = "uvq", about = "Two-stage universal block quantization experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Dv,
    Red,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Dv => Metric::DvError,
            MetricArg::Red => Metric::Redundancy,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment config; exits nonzero if an invariant fails.
    Run { config: PathBuf },
    /// Fit the rate exponent of a metric from a record CSV, per theta.
    Fit {
        csv: PathBuf,
        #[arg(long, value_enum)]
        metric: MetricArg,
    },
    /// Design a Lloyd codebook for one parameter and write it to a file.
    Design {
        /// Config whose family, p and design budget are used.
        #[arg(long)]
        family: PathBuf,
        /// Comma-separated parameter.
        #[arg(long, value_delimiter = ',')]
        theta: Vec<f64>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode or decode wire-format streams with the two-stage code of a config.
    Codec {
        #[command(subcommand)]
        op: CodecOp,
    },
    /// Write samples from one parameter, one block per line.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        theta: Vec<f64>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        blocks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum CodecOp {
    /// Whitespace-separated samples in, stream bytes out.
    Encode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Stream bytes in, one reproduction block per line out.
    Decode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

fn print_fit(label: &str, fit: &RateFit) {
    println!(
        "{label}: slope {:.4} [90% CI {:.4}, {:.4}] intercept {:.4} R^2 {:.4}",
        fit.slope, fit.ci_low, fit.ci_high, fit.intercept, fit.r_squared
    );
}

fn fits_per_theta(records: &[TrialRecord], metric: Metric) -> Vec<(String, Result<RateFit, HarnessError>)> {
    let mut thetas: Vec<&ParamVector> = Vec::new();
    for r in records {
        if !thetas.contains(&&r.theta) {
            thetas.push(&r.theta);
        }
    }
    thetas
        .into_iter()
        .map(|t| {
            let subset: Vec<TrialRecord> = records.iter().filter(|r| &r.theta == t).cloned().collect();
            (format!("{} theta={t}", metric.name()), fit_rate_exponent(&subset, metric))
        })
        .collect()
}

fn run(path: &Path) -> Result<bool, HarnessError> {
    let cfg = ExperimentConfig::load(path)?;
    let k = cfg.validate()?.family.dim();
    let records = run_experiment(&cfg)?;
    let mut fits = Vec::new();
    for metric in [Metric::DvError, Metric::Redundancy] {
        for (label, fit) in fits_per_theta(&records, metric) {
            match fit {
                Ok(f) => {
                    print_fit(&label, &f);
                    fits.push((label, f));
                }
                Err(e) => println!("{label}: no fit ({e})"),
            }
        }
    }
    emit_outputs(&records, &fits, &cfg.output)?;
    let checks = check_invariants(&records, k);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let flagged: usize = records.iter().map(|r| r.boundary_blocks).sum();
    if flagged > 0 {
        println!("note: {flagged} blocks used a cell whose representative lies on the parameter boundary");
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn read_samples(path: &Path) -> Result<Vec<f64>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| io_err(path, format!("{t:?}: {e}"))))
        .collect()
}

fn codec(op: CodecOp) -> Result<(), HarnessError> {
    match op {
        CodecOp::Encode { config, n, input, output } => {
            let cfg = ExperimentConfig::load(&config)?.validate()?;
            let code = build_code(&cfg, n)?;
            let samples = read_samples(&input)?;
            if samples.len() % n != 0 {
                return Err(io_err(&input, format!("{} samples do not form blocks of {n}", samples.len())));
            }
            let support = cfg.family.support();
            if let Some(x) = samples.iter().find(|x| !support.contains(**x)) {
                return Err(io_err(&input, format!("sample {x} outside the support")));
            }
            let blocks: Vec<Vec<f64>> = samples.chunks(n).map(<[f64]>::to_vec).collect();
            let bytes = code.write(&code.encode_stream(&blocks)?)?;
            fs::write(&output, bytes).map_err(|e| io_err(&output, e))
        }
        CodecOp::Decode { config, n, input, output } => {
            let cfg = ExperimentConfig::load(&config)?.validate()?;
            let code = build_code(&cfg, n)?;
            let bytes = fs::read(&input).map_err(|e| io_err(&input, e))?;
            let decoded = code.decode_stream(&code.read(&bytes)?)?;
            let mut text = String::new();
            for d in decoded {
                let line: Vec<String> = d.reproduction.iter().map(f64::to_string).collect();
                text.push_str(&line.join(" "));
                text.push('\n');
            }
            fs::write(&output, text).map_err(|e| io_err(&output, e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { config } => run(&config),
        Cmd::Fit { csv, metric } => read_csv(&csv).map(|records| {
            let mut ok = true;
            for (label, fit) in fits_per_theta(&records, metric.into()) {
                match fit {
                    Ok(f) => print_fit(&label, &f),
                    Err(e) => {
                        println!("{label}: no fit ({e})");
                        ok = false;
                    }
                }
            }
            ok
        }),
        Cmd::Design { family, theta, n, rate, seed, out } => (|| {
            let cfg = ExperimentConfig::load(&family)?.validate()?;
            let model = SourceModel::new(cfg.family.clone(), ParamVector::new(theta))?;
            let dim = cfg.raw.design.component_dim;
            let shape = CodeShape::new(n, dim, rate).map_err(|e| HarnessError::config("rate", e))?;
            let cb = lloyd_design(&model, shape, &cfg.spec, seed, &cfg.raw.budget())?;
            let file = fs::File::create(&out).map_err(|e| io_err(&out, e))?;
            write_codebook(&cb, std::io::BufWriter::new(file))?;
            println!("wrote {} words of length {dim} ({} bits per block of {n})", cb.word_count(), cb.rate_bits());
            Ok(true)
        })(),
        Cmd::Codec { op } => codec(op).map(|_| true),
        Cmd::Sample { config, theta, n, blocks, seed } => (|| {
            let cfg = ExperimentConfig::load(&config)?.validate()?;
            let model = SourceModel::new(cfg.family.clone(), ParamVector::new(theta))?;
            for block in uvq::vq::sample_blocks(&model, seed, blocks, n) {
                let line: Vec<String> = block.iter().map(f64::to_string).collect();
                println!("{}", line.join(" "));
            }
            Ok(true)
        })(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
