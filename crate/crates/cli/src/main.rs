use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use truster_cli::server::{self, ReviewState};
use truster_core::compatibility::{format_score, render_report, AnswerReport};
use truster_core::config::{Config, CONFIG_FILE};
use truster_core::llm_gateway::Mode;
use truster_core::pipeline::Workspace;

/// Scores LLM answers against a reviewed knowledge base.
#[derive(Debug, Parser)]
#[command(name = "truster", version)]
struct Cli {
    /// Workspace directory.
    #[arg(long, global = true, env = "TRUSTER_WORKSPACE", default_value = ".")]
    workspace: PathBuf,

    /// Configuration file. `build` copies it into the workspace; other
    /// commands use it in place of the workspace copy.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured provider mode for this invocation.
    #[arg(long, global = true)]
    mode: Option<Mode>,

    /// Allow overwriting existing artifacts.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest a corpus, extract triplets and write the graph for review.
    Build {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Validate the extracted graph.
    Review {
        #[command(subcommand)]
        action: ReviewAction,
    },
    /// Embed the validated graph into the scoring index.
    Finalize,
    /// Ask the configured model a question and score its answer.
    Ask {
        #[arg(long)]
        question: String,
        #[arg(long)]
        json: bool,
    },
    /// Score an answer read from a file.
    Score {
        #[arg(long)]
        answer_file: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
enum ReviewAction {
    /// Copy the extracted graph to a GML file for editing.
    Export {
        /// Destination; defaults to `graph.edit.gml` in the workspace.
        file: Option<PathBuf>,
    },
    /// Accept an edited GML file as the validated graph.
    Import { file: PathBuf },
    /// Serve the review API until the graph is approved.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Static files for the review UI.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(path: &Path) -> Result<Config> {
    Ok(Config::load(path)?)
}

fn open(cli: &Cli) -> Result<Workspace> {
    let mut ws = Workspace::open(&cli.workspace)?;
    if let Some(path) = &cli.config {
        *ws.config_mut() = load_config(path)?;
    }
    if let Some(mode) = cli.mode {
        ws.config_mut().mode = mode;
    }
    Ok(ws)
}

fn print_report(report: &AnswerReport, json: bool) {
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", render_report(report));
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Build { corpus } => {
            let config = match &cli.config {
                Some(path) => load_config(path)?,
                None => {
                    let existing = cli.workspace.join(CONFIG_FILE);
                    if existing.exists() {
                        load_config(&existing)?
                    } else {
                        let mut c = Config::default();
                        c.resolve_paths(&std::env::current_dir()?);
                        c
                    }
                }
            };
            let mut ws = Workspace::create(&cli.workspace, config, cli.force)?;
            if let Some(mode) = cli.mode {
                ws.config_mut().mode = mode;
            }
            let s = ws.build(corpus)?;
            println!(
                "built {}: {} documents, {} chunks, {} triplets, graph with {} nodes and {} edges",
                ws.root().display(),
                s.documents,
                s.chunks,
                s.triplets,
                s.nodes,
                s.edges
            );
        }
        Command::Review { action } => {
            let mut ws = open(&cli)?;
            match action {
                ReviewAction::Export { file } => {
                    let dest = file.clone().unwrap_or_else(|| ws.path("graph.edit.gml"));
                    ws.review_export(&dest, cli.force)?;
                    println!("exported {}", dest.display());
                }
                ReviewAction::Import { file } => {
                    let delta = ws.review_import(file, cli.force)?;
                    println!("validated graph: {}", delta.summary());
                }
                ReviewAction::Serve { port, host, ui_dir } => {
                    let session = ws.review_session(cli.force)?;
                    let runtime = tokio::runtime::Runtime::new()?;
                    let delta = runtime.block_on(async {
                        let listener = tokio::net::TcpListener::bind((host.as_str(), *port))
                            .await
                            .with_context(|| format!("binding {host}:{port}"))?;
                        println!("review server listening on http://{}", listener.local_addr()?);
                        let state = ReviewState::new(ws, session);
                        anyhow::Ok(server::serve(listener, state, ui_dir.clone()).await?)
                    })?;
                    println!("validated graph: {}", delta.summary());
                }
            }
        }
        Command::Finalize => {
            let mut ws = open(&cli)?;
            let s = ws.finalize(cli.force)?;
            println!(
                "indexed {} sentences with {} (t1 = {}, a = {}, b = {}, t2 = {})",
                s.sentences,
                s.provider_id,
                s.thresholds.t1,
                s.thresholds.a,
                s.thresholds.b,
                format_score(s.thresholds.t2)
            );
        }
        Command::Ask { question, json } => {
            let report = open(&cli)?.ask(question)?;
            print_report(&report, *json);
        }
        Command::Score { answer_file, json } => {
            let answer = fs::read_to_string(answer_file)
                .with_context(|| format!("reading {}", answer_file.display()))?;
            let report = open(&cli)?.score(&answer)?;
            print_report(&report, *json);
        }
    }
    Ok(())
}
