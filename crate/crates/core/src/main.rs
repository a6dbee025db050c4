use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing::{error, info};
use tracing_subscriber::EnvFilter;

use quicoalesce::campaign::{self, CampaignConfig};
use quicoalesce::corpus;
use quicoalesce::emulink::{DatagramRelay, StreamRelay, StreamRelayOptions};
use quicoalesce::endpoint::{
    tls, Alpn, ContentStore, ListenAddrs, Server, ServerConfig, SettingsPolicy, ZoneStore, DEFAULT_SERVER_NAME,
};
use quicoalesce::scenario;
use quicoalesce::visit::{Client, ClientSettings, ProtocolCombo, RequestEmission, Targets, VisitRecord};

#[derive(Parser)]
#[command(name = "quicoalesce", version, about = "DoQ + HTTP/3 coalescing testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the combined DNS and web server.
    Serve(ServeArgs),
    /// Perform one page visit and print its record as JSON.
    Visit(VisitArgs),
    #[command(subcommand)]
    Campaign(CampaignCommand),
    #[command(subcommand)]
    Corpus(CorpusCommand),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    zone: PathBuf,
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8053")]
    udp: SocketAddr,
    #[arg(long, default_value = "127.0.0.1:8443")]
    tls: SocketAddr,
    #[arg(long, default_value = "127.0.0.1:8443")]
    quic: SocketAddr,
    #[arg(long, default_value = "deferred")]
    settings_policy: SettingsPolicy,
    /// Reset coalesced requests that arrive before the client's SETTINGS.
    #[arg(long)]
    strict_settings: bool,
    /// Where to write the per-run CA certificate that clients must pin.
    #[arg(long, default_value = "testbed-ca.pem")]
    ca_out: PathBuf,
}

#[derive(Args)]
struct VisitArgs {
    #[arg(long)]
    combo: ProtocolCombo,
    #[arg(long)]
    profile: String,
    #[arg(long)]
    profile_file: Option<PathBuf>,
    #[arg(long)]
    page: String,
    /// Server host address.
    #[arg(long)]
    server: IpAddr,
    #[arg(long, default_value_t = 8053)]
    udp_port: u16,
    #[arg(long, default_value_t = 8443)]
    tls_port: u16,
    #[arg(long, default_value_t = 8443)]
    quic_port: u16,
    /// CA certificate written by `serve`.
    #[arg(long, default_value = "testbed-ca.pem")]
    ca: PathBuf,
    #[arg(long, default_value = "after_handshake")]
    emission: RequestEmission,
    /// Put in-process relays shaped by the profile in front of the server.
    #[arg(long)]
    emulate: bool,
}

#[derive(Subcommand)]
enum CampaignCommand {
    /// Run a full grid from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize a JSONL dataset into CSV (and print the text table).
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Write the three-page corpus.
    Gen {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

fn serve(args: ServeArgs) -> Result<(), BoxError> {
    let zone = ZoneStore::load(&args.zone)?;
    let content = ContentStore::from_dir(&args.root)?;
    let mut config = ServerConfig::generate(&[DEFAULT_SERVER_NAME])?;
    config.settings_policy = args.settings_policy;
    config.strict_settings = args.strict_settings;
    std::fs::write(&args.ca_out, &config.certificate.ca_pem)?;
    let server = Server::start(
        zone,
        content,
        config,
        ListenAddrs {
            udp: args.udp,
            tls: args.tls,
            quic: args.quic,
        },
    )?;
    info!(
        udp = %server.udp_addr(),
        tls = %server.tls_addr(),
        quic = %server.quic_addr(),
        ca = %args.ca_out.display(),
        "serving; Ctrl-C to stop"
    );
    server.run_until_ctrl_c();
    Ok(())
}

fn visit(args: VisitArgs) -> Result<(), BoxError> {
    let extra = match &args.profile_file {
        Some(p) => scenario::load_profiles(p)?,
        None => Vec::new(),
    };
    let profile = scenario::find_profile(&args.profile, &extra)?;
    let ca = tls::ca_from_pem(&std::fs::read(&args.ca)?)?;
    let direct = Targets {
        doudp: SocketAddr::new(args.server, args.udp_port),
        doh: SocketAddr::new(args.server, args.tls_port),
        quic: SocketAddr::new(args.server, args.quic_port),
        prime: SocketAddr::new(args.server, args.quic_port),
    };
    let relays = if args.emulate {
        Some((
            DatagramRelay::start(&profile, direct.doudp)?,
            StreamRelay::start(&profile, direct.doh, StreamRelayOptions::default())?,
            DatagramRelay::start(&profile, direct.quic)?,
        ))
    } else {
        None
    };
    let targets = match &relays {
        Some((udp, tcp, quic)) => Targets {
            doudp: udp.local_addr(),
            doh: tcp.local_addr(),
            quic: quic.local_addr(),
            prime: direct.prime,
        },
        None => direct,
    };
    let mut settings = ClientSettings::new(ca);
    settings.emission = args.emission;
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    let outcome = rt.block_on(async {
        let client = Client::new(settings)?;
        if args.combo.needs_ticket() {
            client.prime(Alpn::H3, targets.prime).await?;
        }
        client.visit(args.combo, &args.page, &targets).await
    });
    let rec = VisitRecord::new(args.combo, &profile, &args.page, args.emission, 0.0, outcome);
    println!("{}", rec.to_json_line());
    if rec.failed {
        return Err(rec.fail_reason.unwrap_or_default().into());
    }
    Ok(())
}

fn run() -> Result<(), BoxError> {
    match Cli::parse().command {
        Command::Serve(args) => serve(args),
        Command::Visit(args) => visit(args),
        Command::Campaign(CampaignCommand::Run { config }) => {
            let outcome = campaign::run_campaign(CampaignConfig::load(&config)?)?;
            print!("{}", outcome.summary.to_table());
            info!(
                dataset = %outcome.dataset.display(),
                csv = %outcome.summary_csv.display(),
                records = outcome.records,
                failures = outcome.failures,
                "campaign finished"
            );
            Ok(())
        }
        Command::Campaign(CampaignCommand::Summarize { input, out }) => {
            let summary = campaign::summarize(&input)?;
            campaign::write_summary(&summary, &out, &out.with_extension("txt"))?;
            print!("{}", summary.to_table());
            Ok(())
        }
        Command::Corpus(CorpusCommand::Gen { root, seed }) => {
            for m in corpus::generate_corpus(&root, seed)? {
                println!("{} {} assets", m.index_path, m.assets.len());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
