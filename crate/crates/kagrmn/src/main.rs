use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use kagrmn::bundle::{sibling, Bundle};
use kagrmn::config::{resolve_config, Overrides};
use kagrmn::dataset::{load_dataset, save_dataset};
use kagrmn::graphs::dump;
use kagrmn::knowledge::{coverage, load_embeddings, load_kb, load_stopwords, retrieve};
use kagrmn::train::train;
use kagrmn::vocab::build_relations;
use kagrmn::{toy, write_atomic};
use kagrmn_core::gradcheck::{self, GradcheckConfig, TinyDims};
use kagrmn_core::retrieval::{default_stopwords, RetrievalConfig};
use kagrmn_core::{Metrics, Sample, Variant};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "kagrmn",
    version,
    about = "Knowledge-aware aspect-level sentiment classifier"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model variant, M0..M12.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    #[arg(long, global = true)]
    time_steps: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attach knowledge descriptions to a dataset.
    Retrieve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Dump the syntax graphs of every sample as JSON lines.
    BuildGraphs {
        #[arg(long)]
        data: PathBuf,
    },
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference gradient verification in double precision.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write the synthetic corpus and a matching config.
    GenToy,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    train: &'a Metrics,
    eval: Option<&'a Metrics>,
    best_epoch: Option<usize>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn samples(path: &Path) -> Result<Vec<Sample>> {
    let data = load_dataset(path)?;
    for w in &data.warnings {
        eprintln!("warning: {w}");
    }
    Ok(data.samples)
}

/// Writes lines to `out`, or to stdout when absent.
fn emit_lines<T: Serialize>(out: Option<&Path>, items: impl IntoIterator<Item = T>) -> Result<()> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = BufWriter::new(sink);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let overrides = Overrides {
        seed: cli.seed,
        variant: cli.variant,
        time_steps: cli.time_steps,
        ..Overrides::default()
    };
    let out = cli.out.as_deref();
    match cli.command {
        Command::Retrieve {
            data,
            kb,
            embeddings,
            stopwords,
        } => {
            let cfg = resolve_config(cli.config.as_deref(), &overrides)?;
            let stop = match stopwords {
                Some(p) => load_stopwords(&p)?,
                None => default_stopwords(),
            };
            let kb = load_kb(&kb, stop)?;
            let table = load_embeddings(&embeddings)?;
            let rcfg = RetrievalConfig {
                alpha: cfg.alpha,
                domain_label: cfg.domain_label.clone(),
            };
            rcfg.validate(&table)?;
            let mut samples = samples(&data)?;
            let records = retrieve(&mut samples, &kb, &table, &rcfg);
            eprintln!("coverage {:.4}", coverage(&records));
            emit_lines(None, &records)?;
            if let Some(p) = out {
                save_dataset(p, &samples)?;
            }
        }
        Command::BuildGraphs { data } => {
            let cfg = resolve_config(cli.config.as_deref(), &overrides)?;
            let samples = samples(&data)?;
            let relations = build_relations(&samples, cfg.max_distance);
            let dumps = samples
                .iter()
                .map(|s| dump(s, &relations, cfg.max_distance))
                .collect::<kagrmn::Result<Vec<_>>>()?;
            emit_lines(out, &dumps)?;
        }
        Command::Train {
            train: train_path,
            eval,
            epochs,
            learning_rate,
        } => {
            let overrides = Overrides {
                epochs,
                learning_rate,
                ..overrides
            };
            let cfg = resolve_config(cli.config.as_deref(), &overrides)?;
            let train_set = samples(&train_path)?;
            let eval_set = eval.as_deref().map(samples).transpose()?;
            let ckpt = out
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("model.ckpt"));
            if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let mut stdout = std::io::stdout().lock();
            let result = train(cfg, &train_set, eval_set.as_deref(), |log| {
                let _ = serde_json::to_writer(&mut stdout, log);
                let _ = writeln!(stdout);
            })?;
            result.bundle.save(&ckpt)?;
            if let Some((_, best)) = &result.best {
                best.save(&sibling(&ckpt, "best.ckpt"))?;
            }
            let metrics = MetricsFile {
                train: &result.train_metrics,
                eval: result.eval_metrics.as_ref(),
                best_epoch: result.best.as_ref().map(|(e, _)| *e),
            };
            write_atomic(&sibling(&ckpt, "metrics.json"), &serde_json::to_vec_pretty(&metrics)?)?;
        }
        Command::Eval { data, checkpoint } => {
            let bundle = Bundle::load(&checkpoint, None)?;
            let metrics = bundle.evaluate(&samples(&data)?)?;
            let text = serde_json::to_string(&metrics)?;
            println!("{text}");
            if let Some(p) = out {
                write_atomic(p, text.as_bytes())?;
            }
        }
        Command::Predict { data, checkpoint } => {
            let bundle = Bundle::load(&checkpoint, None)?;
            emit_lines(out, bundle.predict(&samples(&data)?)?)?;
        }
        Command::Gradcheck { tolerance } => {
            let cfg = resolve_config(cli.config.as_deref(), &overrides)?;
            let check = GradcheckConfig {
                tolerance,
                seed: cfg.seed,
                ..GradcheckConfig::default()
            };
            let dims = TinyDims {
                time_steps: cli.time_steps.unwrap_or(TinyDims::default().time_steps),
                ..TinyDims::default()
            };
            let report = gradcheck::run(&check, &dims, cfg.variant, None)?;
            emit_lines(None, &report.groups)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if !report.passed() {
                for g in report.failures() {
                    eprintln!("FAIL {}/{}: {:.3e} at {}", g.suite, g.group, g.max_rel_error, g.worst);
                }
                return Ok(ExitCode::FAILURE);
            }
            eprintln!("gradcheck passed, max relative error {:.3e}", report.max_rel_error());
        }
        Command::GenToy => {
            let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("toy"));
            let corpus = toy::generate(cli.seed.unwrap_or(0));
            corpus.write(&dir)?;
            let mut cfg = toy::toy_config();
            overrides.apply(&mut cfg);
            kagrmn::config::save_config(&dir.join("config.toml"), &cfg)?;
            eprintln!(
                "wrote {} train and {} test samples to {}",
                corpus.train.len(),
                corpus.test.len(),
                dir.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
