use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gateway_bacnet::BacnetEndpoint;
use gateway_cli::config::{load_config, ConfigError};
use gateway_cli::daemon::{run_until, termination};
use gateway_cli::probe::{codec, parse_kind, parse_word_order, probe_bacnet, probe_modbus, ModbusProbe};
use gateway_cli::simulate::{start_all, SimulatorSection};
use gateway_cli::stats::{cmd_stats, fetch_stats, load_stats_file, parse_window};
use gateway_modbus::frame::RegisterKind;
use gateway_modbus::{ConnectionPolicy, DataType, WordOrder};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "gateway", version, about = "Multi-protocol IoT data gateway")]
struct Cli {
    /// Log as JSON lines instead of text.
    #[arg(long, global = true)]
    log_json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gateway until SIGTERM or Ctrl-C.
    Run {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Check a configuration file and list every problem found.
    Validate {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Read from one device and print the result as JSON.
    #[command(subcommand)]
    Probe(Probe),
    /// Points-per-hour report by device kind.
    Stats(StatsArgs),
    /// Start the simulators of a config file (its `simulators` section) or of
    /// a standalone simulator file.
    Simulate {
        #[arg(short, long, conflicts_with = "file")]
        config: Option<PathBuf>,
        file: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Probe {
    Modbus {
        #[arg(long)]
        host: String,
        #[arg(long, default_value_t = 502)]
        port: u16,
        #[arg(long, default_value_t = 1)]
        unit: u8,
        #[arg(long, default_value = "holding", value_parser = parse_kind)]
        kind: RegisterKind,
        #[arg(long, value_parser = parse_u16)]
        address: u16,
        #[arg(long)]
        count: Option<u16>,
        /// Decode the first registers as u16, i16, u32, i32 or f32.
        #[arg(long = "type")]
        datatype: Option<DataType>,
        #[arg(long, default_value = "big", value_parser = parse_word_order)]
        word_order: WordOrder,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0.0)]
        offset: f64,
        #[arg(long, default_value_t = 1)]
        retries: u32,
        #[arg(long, default_value_t = 3000)]
        timeout_ms: u64,
    },
    Bacnet {
        #[arg(long)]
        host: String,
        #[arg(long, default_value_t = 47808)]
        port: u16,
        #[arg(long)]
        instance: u32,
        #[arg(long, default_value_t = 2000)]
        timeout_ms: u64,
        #[arg(long, default_value_t = 2)]
        retries: u32,
        /// Object names to read; all named objects when omitted.
        names: Vec<String>,
    },
}

#[derive(Args)]
struct StatsArgs {
    /// Averaging window such as `1h` or `30m`; defaults to the span the
    /// counters cover.
    #[arg(long, value_parser = parse_window)]
    window: Option<std::time::Duration>,
    /// Stats file written by a running gateway.
    #[arg(long, conflicts_with_all = ["url", "config"])]
    from: Option<PathBuf>,
    /// Base URL of a gateway's health endpoint.
    #[arg(long, conflicts_with = "config")]
    url: Option<String>,
    #[arg(long)]
    token: Option<String>,
    /// Use the stats file or health endpoint named in this config.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Print JSON instead of the table.
    #[arg(long)]
    json: bool,
}

fn parse_u16(s: &str) -> Result<u16, String> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u16::from_str_radix(hex, 16),
        None => s.parse(),
    }
    .map_err(|e| format!("bad address `{s}`: {e}"))
}

fn init_logging(json: bool) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let b = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr);
    if json {
        b.json().init();
    } else {
        b.init();
    }
}

fn load(path: &std::path::Path) -> Result<gateway_cli::GatewayConfig, ConfigError> {
    let loaded = load_config(path)?;
    for w in &loaded.warnings {
        tracing::warn!("{w}");
    }
    Ok(loaded.config)
}

async fn stats(args: StatsArgs) -> anyhow::Result<()> {
    let rates = if let Some(path) = &args.from {
        load_stats_file(path)?
    } else if let Some(url) = &args.url {
        fetch_stats(url, args.token.as_deref()).await?
    } else if let Some(cfg) = &args.config {
        let cfg = load(cfg)?;
        match &cfg.gateway.stats_file {
            Some(p) if p.exists() => load_stats_file(p)?,
            _ => {
                let url = format!("http://{}", cfg.gateway.health_addr);
                fetch_stats(&url, args.token.as_deref().or(cfg.gateway.health_token.as_deref())).await?
            }
        }
    } else {
        bail!("give --from, --url or --config");
    };
    let report = cmd_stats(&rates, args.window)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.table());
    }
    Ok(())
}

async fn simulate(config: Option<PathBuf>, file: Option<PathBuf>) -> anyhow::Result<()> {
    let section = match (config, file) {
        (Some(c), _) => load(&c)?.simulators.context("the config has no `simulators` section")?,
        (None, Some(f)) => {
            let text = std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
            serde_yaml::from_str::<SimulatorSection>(&text).with_context(|| format!("parsing {}", f.display()))?
        }
        (None, None) => bail!("give a simulator file or --config"),
    };
    let sims = start_all(&section).await?;
    for line in sims.describe() {
        println!("{line}");
    }
    termination().await;
    sims.stop();
    Ok(())
}

async fn dispatch(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let report = run_until(cfg, termination()).await?;
            println!("{}", serde_json::to_string(&report)?);
            if report.undelivered > 0 {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Validate { config } => match load_config(&config) {
            Ok(loaded) => {
                for w in &loaded.warnings {
                    println!("warning: {w}");
                }
                println!("{}: ok, {} devices", config.display(), loaded.config.devices.len());
            }
            Err(e) => {
                eprintln!("{}: {e}", config.display());
                return Ok(ExitCode::from(2));
            }
        },
        Command::Probe(Probe::Modbus {
            host,
            port,
            unit,
            kind,
            address,
            count,
            datatype,
            word_order,
            scale,
            offset,
            retries,
            timeout_ms,
        }) => {
            let probe = ModbusProbe {
                host,
                policy: ConnectionPolicy::default()
                    .with_port(port)
                    .with_retries(retries)
                    .with_timeouts(timeout_ms, timeout_ms),
                unit,
                kind,
                address,
                count,
                codec: datatype.map(|d| codec(d, word_order, scale, offset)),
            };
            println!("{}", serde_json::to_string_pretty(&probe_modbus(&probe).await?)?);
        }
        Command::Probe(Probe::Bacnet { host, port, instance, timeout_ms, retries, names }) => {
            let ep = BacnetEndpoint::new(host, instance).with_port(port).with_timeout(timeout_ms, retries);
            println!("{}", serde_json::to_string_pretty(&probe_bacnet(ep, &names).await?)?);
        }
        Command::Stats(args) => stats(args).await?,
        Command::Simulate { config, file } => simulate(config, file).await?,
    }
    Ok(ExitCode::SUCCESS)
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log_json);
    match dispatch(cli.command).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
