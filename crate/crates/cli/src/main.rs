mod verify;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qpolar::codec::{self, EstimatorPolicy, KernelPolicy, Received};
use qpolar::gf::sample_invertible;
use qpolar::io::{self, ReceivedDoc};
use qpolar::kernsearch::{certify, search};
use qpolar::params::{holder_report, HolderReport};
use qpolar::procsim::{self, MergePolicy};
use qpolar::transform::transform;
use qpolar::util::rng_from;
use qpolar::{Channel, FieldElement, FieldSpec, Kernel, ParamVector, TransformConfig};

#[derive(Parser)]
#[command(name = "qpolar", version, about = "Polar coding over finite fields with per-node kernels")]
struct Cli {
    /// Worker threads for Monte Carlo trials and sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ChannelArgs {
    /// Channel JSON file.
    #[arg(long, conflicts_with_all = ["bec", "bsc", "zchan"])]
    channel: Option<PathBuf>,
    /// Binary erasure channel with this erasure probability.
    #[arg(long, conflicts_with_all = ["bsc", "zchan"])]
    bec: Option<f64>,
    /// Binary symmetric channel with this crossover probability.
    #[arg(long, conflicts_with = "zchan")]
    bsc: Option<f64>,
    /// Z-channel (1 → 0 with this probability), capacity input installed.
    #[arg(long)]
    zchan: Option<f64>,
}

impl ChannelArgs {
    fn load(&self) -> Result<Channel> {
        let w = match (&self.channel, self.bec, self.bsc, self.zchan) {
            (Some(path), ..) => io::channel_from_json(&read(path)?)?,
            (_, Some(e), ..) => Channel::bec(e)?,
            (_, _, Some(d), _) => Channel::bsc(d)?,
            (_, _, _, Some(e)) => Channel::z_channel(e)?,
            _ => bail!("a channel is required: --channel, --bec, --bsc or --zchan"),
        };
        Ok(w)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelChoice {
    Arikan,
    Random,
    Search,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorChoice {
    Exact,
    Mc,
    Auto,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelMode {
    Sample,
    Certify,
    Search,
}

#[derive(Args)]
struct Guards {
    /// Largest synthesized output alphabet allowed.
    #[arg(long, default_value_t = 10_000_000)]
    max_symbols: u128,
}

impl Guards {
    fn config(&self) -> TransformConfig {
        TransformConfig { max_symbols: self.max_symbols, ..TransformConfig::default() }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parameter vector and inequality report of a channel.
    Params {
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesized channel W^(i).
    Transform {
        #[command(flatten)]
        channel: ChannelArgs,
        /// Kernel JSON file; the 2×2 Arıkan kernel when absent.
        #[arg(long)]
        kernel: Option<PathBuf>,
        #[arg(long)]
        index: usize,
        #[command(flatten)]
        guards: Guards,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample, certify or search kernels.
    Kernel {
        #[arg(long, value_enum)]
        mode: KernelMode,
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long)]
        ell: Option<usize>,
        /// Field order for sampling without a channel.
        #[arg(long)]
        q: Option<u64>,
        #[arg(long)]
        kernel: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        budget: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        guards: Guards,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a code specification.
    Construct {
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long, default_value_t = 2)]
        ell: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        pi: f64,
        #[arg(long, value_enum, default_value = "arikan")]
        kernels: KernelChoice,
        #[arg(long, default_value_t = 100)]
        budget: usize,
        #[arg(long, value_enum, default_value = "exact")]
        estimator: EstimatorChoice,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        guards: Guards,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a message file (JSON array of symbols).
    Encode {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        message: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the frozen-symbol record.
        #[arg(long)]
        frozen_out: Option<PathBuf>,
    },
    /// Decode a received block (output symbols or posterior rows).
    Decode {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        received: PathBuf,
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo block error rate.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Polarization traces and statistics as CSV.
    Process {
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long, default_value_t = 2)]
        ell: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "arikan")]
        kernels: KernelChoice,
        #[arg(long, default_value_t = 100)]
        budget: usize,
        /// Quantize posteriors to this many cells per coordinate after each step.
        #[arg(long)]
        quantize: Option<u32>,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, default_value_t = 1e-6)]
        low: f64,
        #[arg(long, default_value_t = 1.0 - 1e-6)]
        high: f64,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        guards: Guards,
        /// CSV for a single sampled trace (W, then V rows).
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// CSV of polarization fractions for depths 0..=n.
        #[arg(long)]
        stats_out: Option<PathBuf>,
    },
    /// Run the full invariant suite; exit 2 on any failure.
    Verify {
        #[arg(long)]
        seed: u64,
        /// Random channels per field order in the sweeps.
        #[arg(long, default_value_t = 50)]
        channels: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    emit(&io::to_json(value)?, out)
}

fn kernel_policy(choice: KernelChoice, field: &std::sync::Arc<FieldSpec>, budget: usize) -> KernelPolicy {
    match choice {
        KernelChoice::Arikan => KernelPolicy::Fixed(Kernel::arikan(field)),
        KernelChoice::Random => KernelPolicy::Random,
        KernelChoice::Search => KernelPolicy::Search { budget },
    }
}

fn symbols(values: &[u64], q: usize) -> Result<Vec<FieldElement>> {
    values
        .iter()
        .map(|&v| {
            if v as usize >= q {
                bail!("symbol {v} outside the field of order {q}");
            }
            Ok(FieldElement(v as u16))
        })
        .collect()
}

#[derive(Serialize)]
struct ParamsReport {
    params: ParamVector,
    holder: HolderReport,
}

#[derive(Serialize)]
struct SearchReport {
    kernel: Vec<Vec<u16>>,
    attempts: usize,
    rejections: Vec<qpolar::kernsearch::Witness>,
    w_report: qpolar::CertReport,
    v_report: qpolar::CertReport,
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(k) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global().map_err(|e| anyhow!(e))?;
    }
    match cli.command {
        Command::Params { channel, out } => {
            let w = channel.load()?;
            let holder = holder_report(&w);
            emit_json(&ParamsReport { params: holder.params, holder }, out.as_deref())?;
        }
        Command::Transform { channel, kernel, index, guards, out } => {
            let w = channel.load()?;
            let g = match kernel {
                Some(p) => io::kernel_from_json(&read(&p)?)?,
                None => Kernel::arikan(w.field()),
            };
            let s = transform(&w, &g, index, &guards.config())?;
            emit(&io::synth_to_json(&s)?, out.as_deref())?;
        }
        Command::Kernel { mode, channel, ell, q, kernel, budget, seed, guards, out } => {
            let config = guards.config();
            match mode {
                KernelMode::Sample => {
                    let seed = seed.ok_or_else(|| anyhow!("--seed is required for sampling"))?;
                    let ell = ell.ok_or_else(|| anyhow!("--ell is required for sampling"))?;
                    let field = match q {
                        Some(q) => FieldSpec::with_order(q)?,
                        None => channel.load()?.field().clone(),
                    };
                    let g = sample_invertible(&field, ell, &mut rng_from(seed));
                    emit(&io::kernel_to_json(&g)?, out.as_deref())?;
                }
                KernelMode::Certify => {
                    let w = channel.load()?;
                    let path = kernel.ok_or_else(|| anyhow!("--kernel is required for certification"))?;
                    let g = io::kernel_from_json(&read(&path)?)?;
                    emit_json(&certify(&g, &w, &config)?, out.as_deref())?;
                }
                KernelMode::Search => {
                    let seed = seed.ok_or_else(|| anyhow!("--seed is required for search"))?;
                    let ell = ell.ok_or_else(|| anyhow!("--ell is required for search"))?;
                    let w = channel.load()?;
                    let found = search(&w, &w.flatten(), ell, budget, &mut rng_from(seed), &config)?;
                    let report = SearchReport {
                        kernel: found.kernel.rows(),
                        attempts: found.attempts,
                        rejections: found.rejections.into_iter().map(|r| r.witness).collect(),
                        w_report: found.w_report,
                        v_report: found.v_report,
                    };
                    emit_json(&report, out.as_deref())?;
                }
            }
        }
        Command::Construct { channel, ell, n, pi, kernels, budget, estimator, samples, seed, guards, out } => {
            let w = channel.load()?;
            let policy = kernel_policy(kernels, w.field(), budget);
            let est = match estimator {
                EstimatorChoice::Exact => EstimatorPolicy::Exact,
                EstimatorChoice::Mc => EstimatorPolicy::MonteCarlo { samples },
                EstimatorChoice::Auto => EstimatorPolicy::Auto { samples },
            };
            let spec = codec::construct(&w, ell, n, pi, &policy, est, seed, &guards.config())?;
            emit(&io::spec_to_json(&spec)?, Some(&out))?;
        }
        Command::Encode { spec, message, seed, out, frozen_out } => {
            let spec = io::spec_from_json(&read(&spec)?)?;
            let msg: Vec<u64> = io::from_json(&read(&message)?)?;
            let enc = codec::encode(&spec, &symbols(&msg, spec.q())?, seed)?;
            let word: Vec<u16> = enc.codeword.iter().map(|x| x.0).collect();
            emit_json(&word, Some(&out))?;
            if let Some(path) = frozen_out {
                emit_json(&enc.frozen, Some(&path))?;
            }
        }
        Command::Decode { spec, received, channel, seed, out } => {
            let spec = io::spec_from_json(&read(&spec)?)?;
            let doc: ReceivedDoc = io::from_json(&read(&received)?)?;
            let w = match doc {
                ReceivedDoc::Symbols(_) => Some(channel.load()?),
                ReceivedDoc::Posteriors(_) => None,
            };
            let dec = codec::decode(&spec, w.as_ref(), &Received::from(doc), seed)?;
            let msg: Vec<u16> = dec.message.iter().map(|x| x.0).collect();
            emit_json(&msg, Some(&out))?;
        }
        Command::Simulate { spec, channel, trials, seed, out } => {
            let spec = io::spec_from_json(&read(&spec)?)?;
            let w = channel.load()?;
            emit_json(&codec::simulate(&spec, &w, trials, seed)?, out.as_deref())?;
        }
        Command::Process {
            channel,
            ell,
            n,
            kernels,
            budget,
            quantize,
            paths,
            low,
            high,
            seed,
            guards,
            trace_out,
            stats_out,
        } => {
            let w = channel.load()?;
            let policy = kernel_policy(kernels, w.field(), budget);
            let config = guards.config();
            let merge = quantize.map_or(MergePolicy::Lossless, |resolution| MergePolicy::Quantize { resolution });
            if trace_out.is_none() && stats_out.is_none() {
                bail!("nothing to do: pass --trace-out and/or --stats-out");
            }
            if let Some(path) = trace_out {
                let t = procsim::sample_path(&w, &policy, ell, n, true, merge, &mut rng_from(seed), &config)?;
                let mut text = format!("# path {:?}\n", t.path);
                text.push_str(&procsim::steps_csv(&t.steps));
                if let Some(v) = &t.v_steps {
                    text.push_str("# flattened\n");
                    text.push_str(&procsim::steps_csv(v));
                }
                emit(&text, Some(&path))?;
            }
            if let Some(path) = stats_out {
                let rows = (0..=n)
                    .map(|d| {
                        procsim::polarization_stats(&w, &policy, ell, d, paths, low, high, seed, &config).map(|s| (d, s))
                    })
                    .collect::<qpolar::Result<Vec<_>>>()?;
                emit(&procsim::stats_csv(&rows), Some(&path))?;
            }
        }
        Command::Verify { seed, channels, out } => {
            let report = verify::run(seed, channels)?;
            emit_json(&report, out.as_deref())?;
            eprintln!("{}", report.summary());
            if !report.pass {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
