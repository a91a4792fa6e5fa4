use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sofar_core::arch::{parse_arch_name, ArchSpec, Dataset};
use sofar_core::complexity::{analyze_arch, ComplexityReport, CountPolicy};
use sofar_core::graph::Op;

use sofar::run::{self, exit, RunError};
use sofar::{bench, config::RunConfig, data, golden, graphio};

/// Fractal binary CNNs with residual and dense shortcuts: build, inspect, train, evaluate, benchmark.
///
/// Exit codes: 0 ok, 1 golden miss or other failure, 2 config or usage,
/// 3 divergence, 4 data, 5 kernel equivalence.
#[derive(Parser)]
#[command(name = "sofar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Imagenet,
    Cifar,
}

impl From<DatasetArg> for Dataset {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Imagenet => Dataset::Imagenet,
            DatasetArg::Cifar => Dataset::Cifar,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    CifarBinary,
    Idx,
}

impl From<FormatArg> for data::Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::CifarBinary => data::Format::CifarBinary,
            FormatArg::Idx => data::Format::Idx,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    /// Convolution and linear weights only.
    Weights,
    /// Also batch-norm parameters and biases.
    Everything,
}

#[derive(clap::Args)]
struct ArchArgs {
    /// Architecture name, e.g. "RF-c4d8 ResNet37(41)".
    #[arg(long, conflicts_with = "config")]
    arch: Option<String>,
    /// Run config whose [model] section names the architecture.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stem layout; inferred from --input-res when omitted (224 → imagenet).
    #[arg(long, value_enum)]
    dataset: Option<DatasetArg>,
    #[arg(long)]
    input_res: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parameter bits and Flops of an architecture.
    Summarize {
        #[command(flatten)]
        arch: ArchArgs,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
        /// Compare against the published table (±5%).
        #[arg(long)]
        golden: bool,
        #[arg(long, value_enum, default_value = "weights")]
        policy: PolicyArg,
        /// Leave full-precision downsampling convolutions out of the Flops.
        #[arg(long)]
        exclude_downsample: bool,
        /// Write per-layer costs to this CSV file.
        #[arg(long)]
        layers_csv: Option<PathBuf>,
    },
    /// Train one phase as described by a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Top-1/top-5 error of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file (CIFAR batch or IDX images).
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "cifar-binary")]
        format: FormatArg,
        /// IDX label file.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
        batch_size: u32,
    },
    /// Time packed against float binary convolution (CSV on stdout).
    Bench {
        /// Comma-separated spatial sizes.
        #[arg(long, value_delimiter = ',', default_values_t = bench::DEFAULT_SIZES.to_vec(),
              value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
        sizes: Vec<usize>,
    },
    /// Write a graph description as JSON.
    Export {
        #[command(flatten)]
        arch: ArchArgs,
        /// Export only one fractal block.
        #[arg(long)]
        block: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild a graph description and print its node counts.
    Import {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Write a synthetic 10-class 32×32 dataset in CIFAR binary format.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 500)]
        test: usize,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u8).range(2..))]
        classes: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// `println!` that ignores a closed stdout, e.g. when piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(io::stdout(), $($arg)*);
    }};
}

struct Failure(u8, String);

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure(e.exit_code(), e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn config_failure(e: impl std::fmt::Display) -> Failure {
    Failure(exit::CONFIG, e.to_string())
}

fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure(exit::FAILURE, format!("{}: {e}", path.display()))
}

fn resolve_arch(a: &ArchArgs) -> Result<ArchSpec, Failure> {
    let mut spec = match (&a.arch, &a.config) {
        (Some(name), None) => {
            let dataset = match (a.dataset, a.input_res) {
                (Some(d), _) => d.into(),
                (None, Some(r)) if r >= 64 => Dataset::Imagenet,
                _ => Dataset::Cifar,
            };
            parse_arch_name(name, dataset).map_err(config_failure)?
        }
        (None, Some(path)) => RunConfig::load(path).and_then(|c| c.arch()).map_err(config_failure)?,
        _ => return Err(config_failure("give --arch NAME or --config FILE")),
    };
    if let Some(r) = a.input_res {
        spec.input_resolution = r;
    }
    spec.validate().map_err(config_failure)?;
    Ok(spec)
}

fn print_report(arch: &ArchSpec, r: &ComplexityReport) {
    out!(
        "{}  ({:?}, {}×{} input, {} classes)",
        arch.name(),
        arch.dataset,
        arch.input_resolution,
        arch.input_resolution,
        arch.num_classes
    );
    out!("  parameters  {:>10.3} Mbit  ({} float, {} binary)", r.mbit(), r.float_params, r.binary_params);
    out!(
        "  flops       {:>10.4e}       ({} float mults, {} binary mults / 64)",
        r.flops(),
        r.float_mults,
        r.binary_mults
    );
    out!();
    out!("  {:<24} {:>14} {:>14}", "region", "bits", "flops");
    for (region, bits, flops) in r.by_region() {
        out!("  {:<24} {:>14} {:>14.4e}", golden::region_label(region), bits, flops);
    }
}

fn write_layers_csv(path: &Path, r: &ComplexityReport) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "name",
        "kind",
        "precision",
        "region",
        "channels",
        "height",
        "width",
        "params",
        "mults",
        "param_bits",
        "flops",
    ])?;
    for l in &r.layers {
        w.write_record([
            l.name.clone(),
            l.kind.clone(),
            format!("{:?}", l.precision).to_lowercase(),
            golden::region_label(l.region),
            l.output[0].to_string(),
            l.output[1].to_string(),
            l.output[2].to_string(),
            l.params.to_string(),
            l.mults.to_string(),
            l.param_bits().to_string(),
            l.flops().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn summarize(
    a: &ArchArgs,
    json: bool,
    check: bool,
    policy: PolicyArg,
    exclude_downsample: bool,
    layers: Option<&Path>,
) -> CmdResult {
    let arch = resolve_arch(a)?;
    let mut policy = match policy {
        PolicyArg::Weights => CountPolicy::default(),
        PolicyArg::Everything => CountPolicy::everything(),
    };
    policy.include_downsample = !exclude_downsample;
    let report = analyze_arch(&arch, policy).map_err(config_failure)?;
    if json {
        let doc = serde_json::json!({ "arch": arch.name(), "spec": arch, "param_bits": report.param_bits(),
            "mbit": report.mbit(), "flops": report.flops(), "report": report });
        out!("{}", serde_json::to_string_pretty(&doc).expect("report serializes"));
    } else {
        print_report(&arch, &report);
    }
    if let Some(path) = layers {
        write_layers_csv(path, &report).map_err(|e| Failure(exit::FAILURE, format!("{}: {e}", path.display())))?;
    }
    if check {
        let row = golden::lookup(arch.dataset, &arch.name())
            .filter(|r| r.dataset.default_resolution() == arch.input_resolution)
            .ok_or_else(|| {
                config_failure(format!(
                    "no table entry for {} at {}×{}",
                    arch.name(),
                    arch.input_resolution,
                    arch.input_resolution
                ))
            })?;
        let result = golden::check(row, policy).map_err(config_failure)?;
        eprintln!("{}", result.summary_line());
        if !result.pass() {
            eprint!("{}", result.diff());
            return Err(Failure(exit::FAILURE, "outside the ±5% golden tolerance".into()));
        }
    }
    Ok(())
}

fn train(config: &Path, resume: Option<&Path>) -> CmdResult {
    let cfg = RunConfig::load(config).map_err(config_failure)?;
    let summary = run::train(&cfg, resume, &mut io::stderr())?;
    eprintln!("wrote {} and {}", summary.checkpoint.display(), summary.metrics.display());
    Ok(())
}

fn eval(checkpoint: &Path, dataset: &Path, format: FormatArg, labels: Option<&Path>, batch_size: usize) -> CmdResult {
    let ckpt = run::load_checkpoint(checkpoint)?;
    let r = run::evaluate(&ckpt, format.into(), dataset, labels, batch_size)?;
    out!("n={} top1_error={:.2}% top5_error={:.2}%", r.n, r.top1_error, r.top5_error);
    Ok(())
}

fn bench_cmd(sizes: &[usize]) -> CmdResult {
    let rows = bench::run(sizes, &mut io::stderr()).map_err(|e| match e {
        bench::BenchError::Size => config_failure(e),
        other => Failure(exit::KERNEL, other.to_string()),
    })?;
    bench::write_csv(&rows, io::stdout().lock()).map_err(|e| Failure(exit::FAILURE, e.to_string()))
}

fn export(a: &ArchArgs, block: bool, out: &Path) -> CmdResult {
    let arch = resolve_arch(a)?;
    let graph = if block { graphio::first_block(&arch) } else { graphio::network(&arch) }.map_err(config_failure)?;
    fs::write(out, graphio::to_json(&graph)).map_err(io_failure(out))?;
    let convs = graph.nodes().iter().filter(|n| n.op.is_conv()).count();
    eprintln!("wrote {} nodes ({convs} convolutions) to {}", graph.len(), out.display());
    Ok(())
}

fn import(path: &Path) -> CmdResult {
    let text = fs::read_to_string(path).map_err(io_failure(path))?;
    let graph = graphio::from_json(&text).map_err(config_failure)?;
    let count = |f: fn(&Op) -> bool| graph.nodes().iter().filter(|n| f(&n.op)).count();
    out!(
        "nodes={} convs={} binary_convs={} adds={} joins={} concats={}",
        graph.len(),
        count(Op::is_conv),
        count(|o| matches!(o, Op::BinConv2d { .. })),
        count(|o| matches!(o, Op::Add)),
        count(|o| matches!(o, Op::JoinMean)),
        count(|o| matches!(o, Op::Concat)),
    );
    Ok(())
}

fn synth(out_dir: &Path, train: usize, test: usize, classes: u8, seed: u64) -> CmdResult {
    fs::create_dir_all(out_dir).map_err(io_failure(out_dir))?;
    for (name, n, s) in [("train.bin", train, seed), ("test.bin", test, seed.wrapping_add(1))] {
        let (images, labels) = data::synthesize(n, classes as usize, s);
        let path = out_dir.join(name);
        data::write_cifar(&path, &images, &labels).map_err(|e| Failure(exit::FAILURE, e.to_string()))?;
        eprintln!("wrote {n} samples to {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Summarize { arch, json, golden, policy, exclude_downsample, layers_csv } => {
            summarize(arch, *json, *golden, *policy, *exclude_downsample, layers_csv.as_deref())
        }
        Command::Train { config, resume } => train(config, resume.as_deref()),
        Command::Eval { checkpoint, dataset, format, labels, batch_size } => {
            eval(checkpoint, dataset, *format, labels.as_deref(), *batch_size as usize)
        }
        Command::Bench { sizes } => bench_cmd(sizes),
        Command::Export { arch, block, out } => export(arch, *block, out),
        Command::Import { graph } => import(graph),
        Command::Synth { out_dir, train, test, classes, seed } => synth(out_dir, *train, *test, *classes, *seed),
    };
    match result {
        Ok(()) => ExitCode::from(exit::OK),
        Err(Failure(code, msg)) => {
            let _ = writeln!(io::stderr(), "error: {msg}");
            ExitCode::from(code)
        }
    }
}
