use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use redcyan::commands::{self, ComposeOverrides, Sources};
use redcyan::server::{router, AppState};
use redcyan_core::pipeline::PipelineConfig;
use redcyan_core::scene::SceneBundle;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "redcyan", version, about = "Marker-based red/cyan anaglyph AR engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Scene file; supplies the dictionary and intrinsics it names.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Marker dictionary JSON (default: the built-in sample dictionary).
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Camera intrinsics JSON.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
}

impl From<SourceArgs> for Sources {
    fn from(a: SourceArgs) -> Self {
        Self {
            scene: a.scene,
            dictionary: a.dict,
            intrinsics: a.intrinsics,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print detected markers as JSON.
    Detect {
        frame: PathBuf,
        #[command(flatten)]
        sources: SourceArgs,
    },
    /// Print marker poses as JSON, or as ModelView16 lines with --modelview.
    Pose {
        frame: PathBuf,
        #[command(flatten)]
        sources: SourceArgs,
        #[arg(long)]
        modelview: bool,
    },
    /// Augment a frame with the scene's objects and write the result.
    Compose {
        frame: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Render a single center view instead of red/cyan.
        #[arg(long)]
        no_anaglyph: bool,
        /// Override the scene's eye separation, meters.
        #[arg(long)]
        separation: Option<f64>,
    },
    /// Render a synthetic frame and its ground truth from a spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Ground-truth JSON path (default: output with a .json extension).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Check a dictionary for self-symmetric and confusable patterns.
    ValidateDict { dict: PathBuf },
    /// Write a printable marker image.
    Marker {
        id: u32,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 40)]
        cell_px: usize,
        #[command(flatten)]
        sources: SourceArgs,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, env = "REDCYAN_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Detect { frame, sources } => print_json(&commands::detect_cmd(&frame, &sources.into())?)?,
        Command::Pose {
            frame,
            sources,
            modelview,
        } => {
            let out = commands::pose_cmd(&frame, &sources.into())?;
            if modelview {
                print!("{}", commands::modelview_dump(&out));
            } else {
                print_json(&out)?;
            }
        }
        Command::Compose {
            frame,
            scene,
            output,
            no_anaglyph,
            separation,
        } => {
            let overrides = ComposeOverrides {
                disable_anaglyph: no_anaglyph,
                separation,
            };
            print_json(&commands::compose_cmd(&frame, &scene, &output, overrides)?)?;
        }
        Command::Synth { spec, output, truth } => {
            let truth = commands::synth_cmd(&spec, &output, truth.as_deref())?;
            eprintln!("wrote {} and {}", output.display(), truth.display());
        }
        Command::ValidateDict { dict } => {
            let report = commands::validate_dict_cmd(&dict)?;
            print_json(&report)?;
            if !report.is_acceptable() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Marker {
            id,
            output,
            cell_px,
            sources,
        } => commands::marker_cmd(id, &sources.into(), cell_px, &output)?,
        Command::Serve { scene, port, bind } => serve(scene, SocketAddr::new(bind, port))?,
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(scene: PathBuf, addr: SocketAddr) -> Result<()> {
    let bundle = SceneBundle::load(&scene).with_context(|| format!("loading scene {}", scene.display()))?;
    let state = Arc::new(AppState::new(bundle, PipelineConfig::default()));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info,tower_http=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
