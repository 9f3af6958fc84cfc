//! `vpki`: desk-scale vehicular-PKI toolkit. Runs the services (LTCA,
//! PCA, RA), the replica orchestrator, and the experiment tooling
//! (load generation, trace replay, analysis) from one binary.

mod benchcmd;
mod common;
mod domain;
mod ops;
mod serve;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "vpki", version, about = "Pseudonym-issuing vehicular PKI toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Mint a root of trust, authority credentials, and a transport CA.
    InitDomain(domain::InitDomainArgs),
    /// Run the long-term credential authority.
    Ltca(serve::LtcaArgs),
    /// Run a pseudonym certificate authority replica.
    Pca(serve::PcaArgs),
    /// Run the resolution authority.
    Ra(serve::RaArgs),
    /// Run the replica orchestrator with its front-door proxy.
    Orchestrate(serve::OrchestrateArgs),
    /// Enroll a vehicle with the LTCA and save its credential.
    Register(ops::RegisterArgs),
    /// Acquire a tiled pseudonym set for a trip.
    Acquire(ops::AcquireArgs),
    /// Drive open-loop acquisition load against the services.
    Loadgen(ops::LoadgenArgs),
    /// Mobility-trace utilities.
    #[command(subcommand)]
    Trace(benchcmd::TraceCmd),
    /// Replay a mobility trace against live services.
    Replay(benchcmd::ReplayArgs),
    /// Report latency percentiles from a record log.
    Cdf(benchcmd::CdfArgs),
    /// Render TSV plot data from event and record logs.
    Plotdata(benchcmd::PlotdataArgs),
    /// Fleet-wide pseudonym consumption per year.
    Sizing(benchcmd::SizingArgs),
    /// Resolve a pseudonym to its long-term credential via the RA.
    Resolve(ops::RaCallArgs),
    /// Resolve and then revoke everything the vehicle holds.
    Revoke(ops::RaCallArgs),
    /// Fetch a PCA's certificate revocation list.
    Crl(ops::CrlArgs),
}

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()).await {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

async fn run(cli: Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::InitDomain(args) => domain::run(args),
        Cmd::Ltca(args) => serve::run_ltca(args).await,
        Cmd::Pca(args) => serve::run_pca(args).await,
        Cmd::Ra(args) => serve::run_ra(args).await,
        Cmd::Orchestrate(args) => serve::run_orchestrate(args).await,
        Cmd::Register(args) => ops::run_register(args).await,
        Cmd::Acquire(args) => ops::run_acquire(args).await,
        Cmd::Loadgen(args) => ops::run_loadgen(args).await,
        Cmd::Trace(benchcmd::TraceCmd::Gen(args)) => benchcmd::run_trace_gen(args),
        Cmd::Replay(args) => benchcmd::run_replay(args).await,
        Cmd::Cdf(args) => benchcmd::run_cdf(args),
        Cmd::Plotdata(args) => benchcmd::run_plotdata(args),
        Cmd::Sizing(args) => benchcmd::run_sizing(args),
        Cmd::Resolve(args) => ops::run_resolve(args, false).await,
        Cmd::Revoke(args) => ops::run_resolve(args, true).await,
        Cmd::Crl(args) => ops::run_crl(args).await,
    }
}
