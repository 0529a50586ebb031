use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use emlab_cli::{presets, replay_manifest, run_config, validate, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "emlab", version, about = "Euler-Maruyama strong-rate experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file or a shipped preset.
    Run {
        #[arg(required_unless_present = "preset", conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Worker threads; overrides the config.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory; overrides the config and the environment.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Re-run the config recorded in a manifest.json.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// List or print the shipped presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    Show { name: String },
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn stem(path: &Path) -> Option<String> {
    path.file_stem().map(|s| s.to_string_lossy().into_owned())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            preset,
            threads,
            output_dir,
        } => {
            let loaded = match (&config, &preset) {
                (Some(path), _) => read(path).map(|t| (t, stem(path), path.display().to_string())),
                (None, Some(name)) => presets::get(name)
                    .map(|t| (t.to_string(), Some(name.clone()), format!("preset:{name}")))
                    .ok_or_else(|| CliError::Config(format!("unknown preset {name}"))),
                (None, None) => unreachable!("clap requires one"),
            };
            loaded.and_then(|(text, label, source)| {
                let opts = RunOptions {
                    output_dir,
                    threads,
                    label,
                    source: Some(source),
                };
                run_config(&text, &opts)
            })
            .map(|summary| {
                println!("{}", serde_json::to_string(&summary.report["verdict"]).unwrap());
                println!("outputs written to {}", summary.output_dir.display());
                summary.exit_code()
            })
        }
        Command::Validate { config } => read(&config).and_then(|t| validate(&t)).map(|cfg| {
            println!("ok: {} experiment", cfg.experiment.kind());
            0
        }),
        Command::Replay {
            manifest,
            threads,
            output_dir,
        } => read(&manifest).and_then(|text| {
            let opts = RunOptions {
                output_dir,
                threads,
                label: Some("replay".into()),
                source: Some(manifest.display().to_string()),
            };
            replay_manifest(&text, &opts).map(|s| {
                println!("outputs written to {}", s.output_dir.display());
                s.exit_code()
            })
        }),
        Command::Presets { action } => match action {
            PresetAction::List => {
                for (name, text) in presets::PRESETS {
                    println!("{name:<24} {}", presets::summary(text));
                }
                Ok(0)
            }
            PresetAction::Show { name } => presets::get(&name)
                .map(|t| {
                    print!("{t}");
                    0
                })
                .ok_or_else(|| CliError::Config(format!("unknown preset {name}"))),
        },
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("emlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
