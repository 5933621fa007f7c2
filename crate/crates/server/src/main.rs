use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use egostream::events::EventKind;
use egostream::mock_models::{self, MockModels};
use egostream::runtime::{RuntimeDeps, StreamRuntime};
use egostream::{router, AppState};
use egostream_core::corpus::{build_manifest, filter_corpus, read_jsonl, write_jsonl, ClipInput, ClipRecord};
use egostream_core::gateway::mock::HashingEmbedder;
use egostream_core::ingest::StreamSource;
use egostream_core::media::MediaStore;
use egostream_core::retrieval::RetrievalIndex;
use egostream_core::script::{ReplayScript, ScriptPaths};
use egostream_core::Config;

#[derive(Parser)]
#[command(name = "egostream", version, about = "Egocentric assistant backend")]
struct Cli {
    /// Config file (TOML or JSON); defaults to $EGOSTREAM_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP/WebSocket service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Replay a local file in-process and print every event as a JSON line.
    Replay {
        file: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        /// QA table for the scripted chat model.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Retrieval index tools.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Ask a running server a text question.
    Query {
        stream_id: String,
        text: String,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
    },
    /// How-to corpus tools.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Serve the deterministic mock models over the adapter protocol.
    MockModels {
        #[arg(long, default_value = "127.0.0.1:8090")]
        bind: String,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        qa: Option<PathBuf>,
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Load a manifest and report what the index holds.
    Build { manifest: PathBuf },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Keep clips below a motion threshold whose verbs are all frequent enough.
    Filter {
        #[arg(long)]
        motion_threshold: f64,
        #[arg(long)]
        min_verb_count: u64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Embed the narrations of kept clips into a retrieval manifest.
    Manifest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

type CliResult = Result<(), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[tokio::main]
async fn main() -> ExitCode {
    let level = match std::env::var("EGOSTREAM_LOG").as_deref() {
        Ok("debug") => tracing::Level::DEBUG,
        Ok("warn") => tracing::Level::WARN,
        Ok("error") => tracing::Level::ERROR,
        _ => tracing::Level::INFO,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    let result = match Config::resolve(cli.config.as_deref()) {
        Err(e) => Err(e.to_string()),
        Ok(cfg) => run(cli.command, cfg).await,
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

async fn run(command: Command, cfg: Config) -> CliResult {
    match command {
        Command::Serve { bind } => serve(cfg, bind).await,
        Command::Replay {
            file,
            rate,
            script,
            annotations,
            transcript,
        } => {
            let script = ScriptPaths {
                annotations,
                qa: script,
                transcript,
            };
            replay(cfg, file, rate, script).await
        }
        Command::Index {
            command: IndexCommand::Build { manifest },
        } => {
            let index = RetrievalIndex::build(&manifest, Some(cfg.retrieval.dim)).map_err(err)?;
            println!(
                "{}",
                serde_json::json!({
                    "records": index.len(),
                    "dim": index.dim(),
                    "normalized_on_load": index.normalized_on_load(),
                })
            );
            Ok(())
        }
        Command::Query { stream_id, text, server } => {
            let url = format!("{}/streams/{stream_id}/query", server.trim_end_matches('/'));
            let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
            let mut resp = agent.post(&url).send_json(serde_json::json!({ "text": text })).map_err(err)?;
            let status = resp.status();
            let body = resp.body_mut().read_to_string().map_err(err)?;
            println!("{body}");
            if status.is_success() {
                Ok(())
            } else {
                Err(format!("server answered {status}"))
            }
        }
        Command::Corpus { command } => corpus(command, &cfg),
        Command::MockModels {
            bind,
            annotations,
            qa,
            transcript,
        } => {
            let script = ReplayScript::load(&ScriptPaths {
                annotations,
                qa,
                transcript,
            })
            .map_err(err)?;
            let models = MockModels::new(Arc::new(script), cfg.models.embed_seed);
            let listener = tokio::net::TcpListener::bind(&bind).await.map_err(err)?;
            tracing::info!(addr = %listener.local_addr().map_err(err)?, "mock models listening");
            axum::serve(listener, mock_models::router(models))
                .with_graceful_shutdown(shutdown_signal())
                .await
                .map_err(err)
        }
    }
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

async fn serve(mut cfg: Config, bind: Option<String>) -> CliResult {
    if let Some(b) = bind {
        cfg.api.bind = b;
    }
    let retrieval = match &cfg.retrieval.manifest {
        Some(m) => Some(Arc::new(RetrievalIndex::build(m, Some(cfg.retrieval.dim)).map_err(err)?)),
        None => None,
    };
    let addr = cfg.api.bind.clone();
    let state = AppState::new(cfg, retrieval).map_err(err)?;
    let listener = tokio::net::TcpListener::bind(&addr).await.map_err(err)?;
    tracing::info!(addr = %listener.local_addr().map_err(err)?, "serving");
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(err)?;
    state.shutdown_all().await;
    Ok(())
}

async fn replay(cfg: Config, file: PathBuf, rate: f64, script: ScriptPaths) -> CliResult {
    let retrieval = match &cfg.retrieval.manifest {
        Some(m) => Some(Arc::new(RetrievalIndex::build(m, Some(cfg.retrieval.dim)).map_err(err)?)),
        None => None,
    };
    let deps = RuntimeDeps {
        config: Arc::new(cfg),
        media: MediaStore::new(),
        retrieval,
    };
    let source = StreamSource::local_file(&file, rate);
    let rt = tokio::task::spawn_blocking(move || StreamRuntime::start("replay".into(), source, &script, &deps))
        .await
        .map_err(err)?
        .map_err(err)?;
    let mut sub = rt.hub().subscribe();
    let mut responses = 0u64;
    loop {
        match tokio::time::timeout(Duration::from_millis(200), sub.recv()).await {
            Ok(Some(ev)) => {
                if ev.kind == EventKind::Response {
                    responses += 1;
                }
                println!("{}", serde_json::to_string(&ev).map_err(err)?);
            }
            Ok(None) => break,
            Err(_) => {
                let status = rt.status();
                if status.finished && status.phase == egostream_core::orchestrator::Phase::Idle {
                    break;
                }
            }
        }
    }
    let status = rt.status();
    tokio::task::spawn_blocking(move || rt.shutdown()).await.map_err(err)?;
    eprintln!(
        "replay done: {} memory entries, {} responses, {:.1} s wall",
        status.memory.entries,
        responses,
        status.replay_wall_s.unwrap_or_default()
    );
    Ok(())
}

/// Clip paths in a list are relative to the list's directory.
fn resolve_paths(list: &Path, clips: &mut [ClipInput]) {
    let base = list.parent().unwrap_or(Path::new("."));
    for c in clips {
        if c.path.is_relative() {
            c.path = base.join(&c.path);
        }
    }
}

fn corpus(command: CorpusCommand, cfg: &Config) -> CliResult {
    match command {
        CorpusCommand::Filter {
            motion_threshold,
            min_verb_count,
            input,
            out,
            report,
        } => {
            let mut clips: Vec<ClipInput> = read_jsonl(&input).map_err(err)?;
            resolve_paths(&input, &mut clips);
            let (kept, rep) = filter_corpus(&clips, motion_threshold, min_verb_count, &cfg.ingest).map_err(err)?;
            write_jsonl(&out, &kept).map_err(err)?;
            let text = serde_json::to_string_pretty(&rep).map_err(err)?;
            std::fs::write(&report, text + "\n").map_err(err)?;
            eprintln!(
                "kept {} of {} (motion {}, verb frequency {})",
                rep.kept, rep.total, rep.dropped_motion, rep.dropped_verb_freq
            );
            Ok(())
        }
        CorpusCommand::Manifest { input, out } => {
            let kept: Vec<ClipRecord> = read_jsonl(&input).map_err(err)?;
            let embedder = HashingEmbedder::new(cfg.memory.embed_dim, cfg.models.embed_seed);
            let n = build_manifest(&kept, &embedder, &out).map_err(err)?;
            eprintln!("wrote {n} manifest rows to {}", out.display());
            Ok(())
        }
    }
}
