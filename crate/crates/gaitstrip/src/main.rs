use clap::{Parser, Subcommand};
use gaitstrip::error::{Error, Result};
use gaitstrip::io::{
    append_embedding, load_embeddings, load_sequence, load_weights, save_weights,
};
use gaitstrip::metric::{rank1_accuracy, EmbeddingSet};
use gaitstrip::model::{build_model, forward, ModelConfig, ModelWeights};
use gaitstrip::reparam::{fuse_model, verify_fusion};
use gaitstrip::selftest;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "gaitstrip",
    about = "Gait embedding network with single-kernel fused inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Initialize seeded random weights for a preset architecture
    Init {
        /// Architecture preset: casiab or oumvlp
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collapse branch blocks into single fused convolutions
    Fuse {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run both forms on random probes and report the divergence
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value_t = 3)]
        probes: usize,
    },
    /// Embed one silhouette sequence and append it to an embedding file
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Threshold pixels at 0.5 after the /255 mapping
        #[arg(long)]
        binarize: bool,
        #[arg(long, default_value_t = 0)]
        label: u32,
        #[arg(long, default_value = "")]
        view: String,
    },
    /// Rank-1 retrieval accuracy of a probe set against a gallery set
    Eval {
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        exclude_same_view: bool,
    },
    /// Mean per-sequence forward time, multi-branch vs fused
    Bench {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long, default_value_t = 10)]
        repeat: usize,
        /// Threshold pixels at 0.5 after the /255 mapping
        #[arg(long)]
        binarize: bool,
    },
    /// Run the built-in invariant suite; exit 0 iff all checks pass
    Selftest,
}

fn preset(name: &str) -> Result<ModelConfig> {
    match name {
        "casiab" => Ok(ModelConfig::casia_b()),
        "oumvlp" => Ok(ModelConfig::oumvlp()),
        other => Err(Error::InvalidParameter(format!(
            "unknown config {other:?}; expected casiab or oumvlp"
        ))),
    }
}

fn embedding_set_from_file(path: &PathBuf) -> Result<EmbeddingSet> {
    let (_, _, records) = load_embeddings(path)?;
    EmbeddingSet::from_embeddings(&records)
}

fn mean_forward_secs(w: &ModelWeights, x: &gaitstrip::Tensor, repeat: usize) -> Result<f64> {
    let start = Instant::now();
    for _ in 0..repeat {
        let e = forward(x, w)?;
        std::hint::black_box(&e);
    }
    Ok(start.elapsed().as_secs_f64() / repeat as f64)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init { config, seed, out } => {
            let cfg = preset(&config)?;
            let w = build_model(&cfg, seed)?;
            save_weights(&w, &out)?;
            println!("params={}", w.param_count());
        }
        Command::Fuse {
            input,
            out,
            verify,
            probes,
        } => {
            let w = load_weights(&input)?;
            let fused = fuse_model(&w)?;
            save_weights(&fused, &out)?;
            if verify {
                let report = verify_fusion(&w, &fused, probes, 0)?;
                println!(
                    "max_abs_divergence={} probes={} params_before={} params_after={}",
                    report.max_abs_divergence,
                    report.probes_run,
                    report.param_count_before,
                    report.param_count_after
                );
            }
        }
        Command::Infer {
            weights,
            seq,
            out,
            binarize,
            label,
            view,
        } => {
            let w = load_weights(&weights)?;
            let x = load_sequence(&seq, binarize, w.config.input_size)?;
            let mut e = forward(&x, &w)?;
            e.id = seq
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            e.label = Some(label);
            e.view = Some(view);
            append_embedding(&out, w.config.bins(), w.config.embedding_dim, e)?;
        }
        Command::Eval {
            gallery,
            probe,
            exclude_same_view,
        } => {
            let g = embedding_set_from_file(&gallery)?;
            let p = embedding_set_from_file(&probe)?;
            let acc = rank1_accuracy(&g, &p, exclude_same_view)?;
            println!("rank1={acc}");
        }
        Command::Bench {
            weights,
            seq,
            repeat,
            binarize,
        } => {
            if repeat == 0 {
                return Err(Error::InvalidParameter("repeat must be >= 1".into()));
            }
            let w = load_weights(&weights)?;
            if w.fused {
                return Err(Error::InvalidParameter(
                    "bench needs multi-branch weights; it fuses them itself".into(),
                ));
            }
            let x = load_sequence(&seq, binarize, w.config.input_size)?;
            let fused = fuse_model(&w)?;
            let unfused_s = mean_forward_secs(&w, &x, repeat)?;
            let fused_s = mean_forward_secs(&fused, &x, repeat)?;
            println!(
                "unfused_s={unfused_s:.6} fused_s={fused_s:.6} speedup={:.4}",
                unfused_s / fused_s
            );
        }
        Command::Selftest => {
            let failures = selftest::run(|line| println!("{line}"));
            if failures > 0 {
                return Err(Error::InvalidParameter(format!(
                    "{failures} selftest check(s) failed"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
