use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lapnet::data::SyntheticConfig;
use lapnet::harness::api::{AblateRequest, EvalRequest, GenDataRequest, OpenStreamRequest, TrainRequest};
use lapnet::harness::{drive_stream, open_frame_source, stream_csv_header, stream_csv_row, RunConfig, Sweep};
use lapnet_client::{Client, ClientError};
use tokio::runtime::Runtime;

/// Online action detection: train, evaluate, stream and ablate.
#[derive(Debug, Parser)]
#[command(name = "lapnet", version)]
struct Cli {
    /// Service URL. Without it an embedded service is started for this command.
    #[arg(long, global = true)]
    server: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset manifest, overriding the configuration's.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write its checkpoint and log.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a manifest split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a checkpoint over an input file one frame at a time, printing
    /// one CSV line per frame as soon as it is computed.
    Stream {
        #[arg(long)]
        checkpoint: PathBuf,
        /// LAPF file, or text with one comma/space separated frame per line.
        #[arg(long)]
        input: PathBuf,
    },
    /// Train and evaluate variants over a sweep.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// `afs`, `k=3,5,7` or `p=2,4,6`.
        #[arg(long, default_value = "afs")]
        sweep: String,
        /// Comma-separated seeds; defaults to the run seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Write a synthetic benchmark and its manifest.
    GenData {
        /// JSON generator configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).with_context(|| format!("resolving {}", path.display()))
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(m) = &self.manifest {
            cfg.manifest = Some(m.clone());
        }
        cfg.out_dir = absolute(&cfg.out_dir)?;
        cfg.manifest = cfg.manifest.as_deref().map(absolute).transpose()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli, rt: &Runtime) -> Result<()> {
    if let Command::Serve { addr } = cli.command {
        return rt.block_on(async {
            let listener = tokio::net::TcpListener::bind(addr).await?;
            eprintln!("listening on {}", listener.local_addr()?);
            lapnet_server::serve(listener).await?;
            Ok(())
        });
    }

    let client = match &cli.server {
        Some(url) => Client::new(url.clone()),
        None => {
            let (addr, _) = rt.block_on(lapnet_server::spawn(([127, 0, 0, 1], 0).into()))?;
            Client::new(format!("http://{addr}"))
        }
    };

    match cli.command {
        Command::Train { run, checkpoint } => {
            let req = TrainRequest {
                config: run.resolve()?,
                resume: checkpoint.as_deref().map(absolute).transpose()?,
            };
            let report = rt.block_on(client.train(&req))?;
            if let Some(last) = report.epochs.last() {
                println!("epochs: {} (final total loss {:.6})", last.epoch + 1, last.total);
            }
            println!("checkpoint: {}", report.checkpoint.display());
            println!("log: {}", report.log.display());
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
            out,
        } => {
            let req = EvalRequest {
                checkpoint: absolute(&checkpoint)?,
                manifest: manifest.as_deref().map(absolute).transpose()?,
                split,
                out_dir: out.as_deref().map(absolute).transpose()?,
            };
            let report = rt.block_on(client.eval(&req))?;
            let table = &report.metrics.table;
            println!("mAP: {:.4}", table.map);
            println!("mcAP: {:.4}", table.mcap);
            for c in &table.per_class {
                let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
                println!("class {}: AP {} cAP {}", c.class, fmt(c.ap), fmt(c.cap));
            }
            println!("metrics: {}", report.metrics_path.display());
            println!("frames: {}", report.frames_path.display());
        }
        Command::Stream { checkpoint, input } => {
            let info = rt.block_on(client.open_stream(&OpenStreamRequest {
                checkpoint: absolute(&checkpoint)?,
            }))?;
            let mut source = open_frame_source(&input, info.feature_dim)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            writeln!(out, "{}", stream_csv_header(info.num_classes))?;
            let result: Result<usize> = drive_stream(
                source.as_mut(),
                |frame| Ok(rt.block_on(client.push_frame(info.id, frame.to_vec()))?),
                |t, frame| {
                    debug_assert_eq!(t, frame.index);
                    writeln!(out, "{}", stream_csv_row(t, &frame.output))?;
                    out.flush()?;
                    Ok(())
                },
            );
            rt.block_on(client.close_stream(info.id))?;
            result?;
        }
        Command::Ablate { run, sweep, seeds } => {
            let config = run.resolve()?;
            let seeds = if seeds.is_empty() { vec![config.seed] } else { seeds };
            let req = AblateRequest {
                sweep: Sweep::parse(&sweep)?,
                seeds,
                config,
            };
            let table = rt.block_on(client.ablate(&req))?;
            print!("{}", table.render());
        }
        Command::GenData { config, seed, out } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text).map_err(lapnet::Error::from)?
                }
                None => SyntheticConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let report = rt.block_on(client.gen_data(&GenDataRequest {
                config: cfg,
                out_dir: absolute(&out)?,
            }))?;
            println!("manifest: {}", report.manifest.display());
            println!("sequences: {} train, {} test", report.train, report.test);
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
    Ok(())
}

/// 1 for bad input, 2 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<lapnet::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<ClientError>() {
            return if e.is_validation() { 1 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn,lapnet=info".into()),
        )
        .init();
    let rt = match Runtime::new() {
        Ok(rt) => rt,
        Err(err) => {
            eprintln!("error: cannot start runtime: {err}");
            return ExitCode::from(2);
        }
    };
    match run(cli, &rt) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
