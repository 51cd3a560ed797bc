//! Command-line entry point: serve a registry, register services,
//! compose requests, run benches and scripted scenarios.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use compositor::execution::{bench_composition, bench_exposure, rows_to_csv, Mode};
use compositor::gateway::{handle_request, load_config_from, run_scenario, System};
use compositor::model::service_from_json;
use compositor::server::{spawn, Client};

#[derive(Parser)]
#[command(name = "compositor", about = "QoS-driven dynamic service composition engine")]
struct Cli {
    /// Configuration file (JSON); COMPOSITOR_* env vars override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Registry operations
    Registry {
        #[command(subcommand)]
        command: RegistryCommand,
    },
    /// Register services at a running registry
    Register {
        /// Registry address, host:port
        #[arg(long)]
        addr: String,
        /// JSON file holding a service or an array of services
        #[arg(long)]
        services: PathBuf,
    },
    /// Compose (and execute) a request against a local in-process system
    Compose(ComposeArgs),
    /// Benchmarks
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Run a scripted scenario file
    Scenario {
        /// Scenario file: JSON array of steps
        file: PathBuf,
        /// Catalog to seed into the registries (defaults to the built-in demo catalog)
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Skip seeding any catalog
        #[arg(long)]
        empty: bool,
    },
}

#[derive(Subcommand)]
enum RegistryCommand {
    /// Serve a registry over TCP
    Serve {
        #[arg(long)]
        id: String,
        #[arg(long, default_value = "127.0.0.1:7411")]
        listen: String,
        /// Comma-separated peer addresses to pull from
        #[arg(long, value_delimiter = ',')]
        peers: Vec<String>,
        /// Override the configured sync interval, in seconds
        #[arg(long)]
        sync_interval: Option<u64>,
    },
}

#[derive(Args)]
struct ComposeArgs {
    /// Request JSON file; reads stdin when omitted
    #[arg(long)]
    request: Option<PathBuf>,
    /// Catalog JSON file (array of services); defaults to the built-in demo catalog
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Execute against a remote registry's COMPOSE endpoint instead
    #[arg(long)]
    addr: Option<String>,
    /// Dataflow mode for execution
    #[arg(long, value_parser = parse_mode, default_value = "decentralized")]
    mode: Mode,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Time composition across catalog sizes; CSV to stdout
    Compose {
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Time registry exposure (bulk registration) across counts; CSV to stdout
    Expose {
        #[arg(long, value_delimiter = ',', default_value = "100,1000")]
        counts: Vec<usize>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s.to_ascii_lowercase().as_str() {
        "centralized" => Ok(Mode::Centralized),
        "decentralized" => Ok(Mode::Decentralized),
        other => Err(format!("unknown mode {other:?}: expected centralized or decentralized")),
    }
}

fn env_map() -> BTreeMap<String, String> {
    std::env::vars().filter(|(k, _)| k.starts_with("COMPOSITOR_")).collect()
}

fn read_catalog(path: Option<&PathBuf>) -> Result<Vec<compositor::model::ServiceDescription>, String> {
    match path {
        None => Ok(compositor::fixtures::cat1()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            let value = compositor::model::json_from_bytes(text.as_bytes()).map_err(|e| e.to_string())?;
            let items = match &value {
                serde_json::Value::Array(items) => items.clone(),
                one => vec![one.clone()],
            };
            items.iter().map(|v| service_from_json(v).map_err(|e| e.to_string())).collect()
        }
    }
}

fn run() -> Result<(), String> {
    let cli = Cli::parse();
    let config = load_config_from(cli.config.as_deref(), &env_map()).map_err(|e| e.to_string())?;
    if cli.print_config {
        println!("{}", config.to_json());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err("no subcommand given; try --help".into());
    };
    match command {
        Command::Registry { command: RegistryCommand::Serve { id, listen, peers, sync_interval } } => {
            let mut config = config;
            if let Some(s) = sync_interval {
                config.sync_interval_s = s;
            }
            let system = System::new(config, &[id.as_str()]);
            let server = spawn(system, &listen, peers).map_err(|e| e.to_string())?;
            eprintln!("registry {id} listening on {}", server.addr);
            loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            }
        }
        Command::Register { addr, services } => {
            let catalog = read_catalog(Some(&services))?;
            let mut client = Client::connect(&addr, config.max_frame_bytes).map_err(|e| e.to_string())?;
            for desc in catalog {
                let id = desc.id.clone();
                client.register(desc).map_err(|e| e.to_string())?;
                eprintln!("registered {id}");
            }
            Ok(())
        }
        Command::Compose(args) => {
            let request_text = match &args.request {
                Some(p) => std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?,
                None => std::io::read_to_string(std::io::stdin()).map_err(|e| e.to_string())?,
            };
            if let Some(addr) = &args.addr {
                let value = compositor::model::json_from_bytes(request_text.as_bytes())
                    .map_err(|e| e.to_string())?;
                let mut client = Client::connect(addr, config.max_frame_bytes).map_err(|e| e.to_string())?;
                let doc = client.compose(value).map_err(|e| e.to_string())?;
                println!("{doc}");
                return if doc.get("error").is_some() { Err(doc["error"].to_string()) } else { Ok(()) };
            }
            let catalog = read_catalog(args.catalog.as_ref())?;
            let mut system = System::new(config, &["R1"]);
            system.mode = args.mode;
            system.seed_catalog(&catalog);
            let (rendered, _) = handle_request(&request_text, &mut system, 0);
            println!("{rendered}");
            let doc: serde_json::Value = serde_json::from_str(&rendered).expect("responses are JSON");
            if doc.get("error").is_some() { Err(doc["error"].to_string()) } else { Ok(()) }
        }
        Command::Bench { command } => {
            let csv = match command {
                BenchCommand::Compose { sizes, seed } => {
                    let rows = bench_composition(&sizes, seed, config.limits()).map_err(|e| e.to_string())?;
                    rows_to_csv("catalog_size,composition_time_ms", &rows)
                }
                BenchCommand::Expose { counts } => {
                    let rows = bench_exposure(&counts).map_err(|e| e.to_string())?;
                    rows_to_csv("service_count,exposure_time_ms", &rows)
                }
            };
            print!("{csv}");
            Ok(())
        }
        Command::Scenario { file, catalog, empty } => {
            let text = std::fs::read_to_string(&file)
                .map_err(|e| format!("cannot read {}: {e}", file.display()))?;
            let mut system = System::new(config, &["R1", "R2"]);
            if !empty {
                let catalog = read_catalog(catalog.as_ref())?;
                system.seed_catalog(&catalog);
            }
            let outputs = run_scenario(&text, &mut system).map_err(|e| e.to_string())?;
            for line in outputs {
                println!("{line}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
