//! `bmux`: run a node daemon, or talk to one over its agent socket.
//!
//! Exit status: 0 on success, 1 when the daemon refuses or an operation
//! fails, 2 for usage and configuration errors.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use bmux_core::aap2::{Auth, AuthSet, Incoming, LinkOp};
use bmux_core::storage::command::{ReplyBody, ReplyStatus, Verb};
use bmux_core::storage::remote_command;
use bmux_core::{
    Aap2Client, BundleFilter, ClaAddress, Config, ConfigError, EndpointId, Node, NodeError, StorageCommand,
    SystemClock,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bmux", version, about = "Bundle Protocol v7 node and agent tools")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Conn {
    /// Agent socket: host:port or unix:<path>.
    #[arg(long, env = "BMUX_AAP2", default_value = "127.0.0.1:4244")]
    aap2: String,
}

#[derive(Args)]
struct Admin {
    /// Administrative secret; prefer the environment variable.
    #[arg(long, env = "BMUX_ADMIN_SECRET", hide_env_values = true)]
    secret: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a node from a JSON configuration file.
    Daemon {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Send one ADU read from a file or standard input.
    Send {
        #[command(flatten)]
        conn: Conn,
        #[arg(long)]
        to: EndpointId,
        #[arg(long, default_value = "bmux-send")]
        from_agent: String,
        /// Payload file; standard input if omitted.
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long)]
        lifetime: Option<u64>,
        /// Shared secret for the agent registration.
        #[arg(long, default_value = "")]
        agent_secret: String,
    },
    /// Receive ADUs for an agent and write their payloads to standard output.
    Recv {
        #[command(flatten)]
        conn: Conn,
        #[arg(long)]
        agent: String,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// One hex line per ADU instead of raw bytes.
        #[arg(long)]
        hex: bool,
        #[arg(long, default_value = "")]
        agent_secret: String,
    },
    /// Bring a link up or down.
    Link {
        #[command(flatten)]
        conn: Conn,
        #[command(flatten)]
        admin: Admin,
        op: UpDown,
        #[arg(long)]
        node: EndpointId,
        #[arg(long)]
        cla: ClaAddress,
        /// FIB flags: 1 DIRECT, 2 CONNECTED.
        #[arg(long)]
        flags: Option<u64>,
    },
    /// Query, delete or recall stored bundles.
    Storage {
        #[command(flatten)]
        conn: Conn,
        #[command(flatten)]
        admin: Admin,
        verb: VerbArg,
        /// Destination pattern; `*` matches any run of characters.
        #[arg(long)]
        dest: Option<String>,
        #[arg(long)]
        source: Option<EndpointId>,
        /// Creation time lower bound (DTN ms, inclusive).
        #[arg(long)]
        after: Option<u64>,
        /// Creation time upper bound (DTN ms, exclusive).
        #[arg(long)]
        before: Option<u64>,
        #[arg(long)]
        limit: Option<u64>,
        /// RECALL: keep the stored copies.
        #[arg(long)]
        keep: bool,
        #[arg(long, default_value = "sqa")]
        storage_agent: String,
        #[arg(long, default_value_t = 10_000)]
        timeout_ms: u64,
    },
    /// Inspect the forwarding information base.
    Fib {
        #[command(flatten)]
        conn: Conn,
        #[command(flatten)]
        admin: Admin,
        #[command(subcommand)]
        what: FibCmd,
    },
}

#[derive(Subcommand)]
enum FibCmd {
    Show,
}

#[derive(Clone, Copy, ValueEnum)]
enum UpDown {
    Up,
    Down,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerbArg {
    Query,
    Delete,
    Recall,
}

/// Failures that map to exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("bmux: {e}");
            return ExitCode::from(1);
        }
    };
    match rt.block_on(run(cli.cmd)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bmux: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

async fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Daemon { config } => daemon(config).await,
        Cmd::Send {
            conn,
            to,
            from_agent,
            file,
            lifetime,
            agent_secret,
        } => {
            let payload = match file {
                Some(p) => std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?,
                None => {
                    let mut buf = Vec::new();
                    std::io::stdin().read_to_end(&mut buf)?;
                    buf
                }
            };
            let mut c = Aap2Client::active(&conn.aap2, &from_agent, agent_secret.as_bytes()).await?;
            c.send_adu(&to, payload, lifetime).await?;
            Ok(())
        }
        Cmd::Recv {
            conn,
            agent,
            count,
            hex,
            agent_secret,
        } => {
            let mut c = Aap2Client::passive(&conn.aap2, &agent, agent_secret.as_bytes()).await?;
            let mut out = std::io::stdout().lock();
            for _ in 0..count {
                let adu = c.recv_adu().await?;
                if hex {
                    writeln!(out, "{}", hex::encode(&adu.payload))?;
                } else {
                    out.write_all(&adu.payload)?;
                }
                out.flush()?;
            }
            Ok(())
        }
        Cmd::Link {
            conn,
            admin,
            op,
            node,
            cla,
            flags,
        } => {
            let secret = admin.secret.unwrap_or_default();
            let mut c = Aap2Client::open(
                &conn.aap2,
                true,
                "",
                b"",
                AuthSet::from([Auth::LinkControl]),
                secret.as_bytes(),
            )
            .await?;
            let op = match op {
                UpDown::Up => LinkOp::Up,
                UpDown::Down => LinkOp::Down,
            };
            c.link(op, &node, &cla, flags).await?;
            Ok(())
        }
        Cmd::Storage {
            conn,
            admin,
            verb,
            dest,
            source,
            after,
            before,
            limit,
            keep,
            storage_agent,
            timeout_ms,
        } => {
            let verb = match verb {
                VerbArg::Query => Verb::Query,
                VerbArg::Delete => Verb::Delete,
                VerbArg::Recall => Verb::Recall,
            };
            let mut cmd = StorageCommand::new(
                verb,
                BundleFilter {
                    destination_pattern: dest,
                    source,
                    creation_after: after,
                    creation_before: before,
                    limit,
                },
            );
            cmd.delete_after = !keep;
            let reply = remote_command(
                &conn.aap2,
                &storage_agent,
                admin.secret.as_deref().map(str::as_bytes),
                &cmd,
                Duration::from_millis(timeout_ms),
            )
            .await?;
            if reply.status != ReplyStatus::Ok {
                return Err(anyhow!("storage refused ({:?}): {}", reply.status, reply.detail));
            }
            match reply.body {
                ReplyBody::Records(records) => {
                    for r in records {
                        println!(
                            "{} {} -> {} created {} size {} expires {}",
                            r.storage_id, r.meta.source, r.meta.destination, r.meta.creation, r.meta.size, r.meta.expires_at
                        );
                    }
                }
                ReplyBody::Count(n) => println!("{n}"),
                ReplyBody::None => {}
            }
            Ok(())
        }
        Cmd::Fib {
            conn,
            admin,
            what: FibCmd::Show,
        } => fib_show(&conn.aap2, admin.secret.unwrap_or_default().as_bytes()).await,
    }
}

async fn daemon(path: PathBuf) -> anyhow::Result<()> {
    let config = Config::load(&path).map_err(|e| match e {
        ConfigError::Invalid { .. } => anyhow!(Usage(e.to_string())),
        other => anyhow!(Usage(other.to_string())),
    })?;
    let node = Node::start(&config, Arc::new(SystemClock)).await.map_err(|e| match e {
        NodeError::Config(c) => anyhow!(Usage(c.to_string())),
        other => anyhow!(other),
    })?;
    let mut line = format!("bmux: {} ready", node.node_id());
    if let Some(a) = node.aap2_addr() {
        line.push_str(&format!(" aap2={a}"));
    }
    if let Some(a) = node.mtcp_addr() {
        line.push_str(&format!(" mtcp={a}"));
    }
    println!("{line}");
    std::io::stdout().flush()?;
    tokio::signal::ctrl_c().await?;
    log::info!("interrupted, shutting down");
    node.shutdown().await;
    Ok(())
}

/// The daemon replays its FIB to a new passive LINK_CONTROL connection as
/// NOTIFY_UP messages, then sends a Keepalive.
async fn fib_show(address: &str, secret: &[u8]) -> anyhow::Result<()> {
    let mut c = Aap2Client::open(address, false, "", b"", AuthSet::from([Auth::LinkControl]), secret).await?;
    loop {
        let incoming = tokio::time::timeout(Duration::from_secs(10), c.recv())
            .await
            .context("daemon did not finish the FIB listing")??;
        c.answer(bmux_core::Response::ok()).await?;
        match incoming {
            Incoming::Link(l) if l.op == LinkOp::NotifyUp => {
                println!("{} via {} flags {}", l.node_id, l.cla_address, l.flags.unwrap_or(0));
            }
            Incoming::Keepalive => return Ok(()),
            _ => {}
        }
    }
}
