use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autograd::Scalar;
use clap::{Args, Parser, Subcommand, ValueEnum};

use pscc::distortions::Distortion;
use pscc::error::{Error, Result};
use pscc::harness::{
    evaluate_detection, evaluate_localization, infer, load_model, robustness, save_prediction, train, visualize_attention,
    Checkpoint, CorpusSource, DetectionMode, EpochSummary, EvalSummary, GeneratedSource, Precision, RunConfig, SampleSource,
    SourceSpec, StepLog, TrainObserver, Trainer,
};
use pscc::image::RgbImage;
use pscc::metrics::MetricReport;
use pscc::synth::Corpus;

#[derive(Parser)]
#[command(name = "pscc", version, about = "Image manipulation detection and localization")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled corpus of forgeries and pristine images.
    Synthesize {
        #[arg(long)]
        out: PathBuf,
        /// Overrides `data.corpus_per_class`.
        #[arg(long)]
        per_class: Option<usize>,
    },
    /// Train from scratch, or continue from a checkpoint.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Corpus written by `synthesize`; samples are generated on the fly otherwise.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Continue training pretrained weights on new source images.
    Finetune {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory of source images.
        #[arg(long, conflicts_with = "coco")]
        images: Option<PathBuf>,
        /// COCO-style instance annotations; needs `--coco-images`.
        #[arg(long, requires = "coco_images")]
        coco: Option<PathBuf>,
        #[arg(long)]
        coco_images: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
    },
    /// Pixel-level localization metrics.
    EvalLoc {
        #[command(flatten)]
        eval: EvalArgs,
        /// `resize:F`, `gsblur:K`, `gsnoise:S`, `jpeg:Q`, `mixed` or `none`.
        #[arg(long)]
        distortion: Option<Distortion>,
    },
    /// Image-level detection metrics.
    EvalDet {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value = "head")]
        mode: DetectionMode,
    },
    /// Localization under the ten-setting distortion grid.
    Robustness {
        #[command(flatten)]
        eval: EvalArgs,
        /// Row label in the table.
        #[arg(long, default_value = "synthetic")]
        dataset: String,
    },
    /// Predict masks and a forgery score for one image.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stop_at: Option<usize>,
    },
    /// Dump spatial attention for chosen pixels and one channel-attention slice.
    Visualize {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// 1 is the finest scale.
        #[arg(long, default_value_t = 1)]
        scale: usize,
        /// Query pixel as `x,y`; repeatable.
        #[arg(long = "pixel", value_parser = parse_pixel, required = true)]
        pixels: Vec<(usize, usize)>,
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Corpus written by `synthesize`; a held-out generated set otherwise.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Generated samples per class when no corpus is given.
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long)]
    stop_at: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Also write the report here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_pixel(s: &str) -> std::result::Result<(usize, usize), String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected x,y, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((p(x)?, p(y)?))
}

/// Offset applied to the generator seed for held-out evaluation data.
const HELD_OUT_SEED: u64 = 0x0e7a1;

struct Progress;

impl TrainObserver for Progress {
    fn step(&mut self, l: &StepLog) {
        if l.step % 50 == 0 {
            eprintln!("epoch {} step {} lr {:.2e} loss {:.5}", l.epoch, l.step, l.lr, l.loss);
        }
    }

    fn epoch(&mut self, s: &EpochSummary, _val: Option<&EvalSummary>) {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        eprintln!(
            "epoch {} done: mean loss {:.5}, val pixel-AUC {}, val image-AUC {}",
            s.epoch,
            s.mean_loss,
            f(s.val_pixel_auc),
            f(s.val_image_auc)
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match config.train.precision {
        Precision::Single => dispatch::<f32>(cli.command, config),
        Precision::Double => dispatch::<f64>(cli.command, config),
    }
}

fn dispatch<T: Scalar>(command: Command, mut config: RunConfig) -> Result<()> {
    match command {
        Command::Synthesize { out, per_class } => {
            let gen = config.data.generator()?;
            report_skipped(&gen.pool.skipped);
            let n = per_class.unwrap_or(config.data.corpus_per_class);
            let corpus = Corpus::synthesize(&out, &gen, n)?;
            eprintln!("wrote {} samples to {}", corpus.len(), out.display());
            Ok(())
        }
        Command::Train { out, corpus, resume } => {
            let trainer = match resume {
                Some(p) => {
                    let mut t = Trainer::<T>::from_checkpoint(Checkpoint::load(&p)?)?;
                    t.config.train.epochs = config.train.epochs.max(t.epoch);
                    t
                }
                None => Trainer::<T>::new(&config)?,
            };
            let source = training_source(&trainer.config, corpus.as_deref())?;
            let outcome = train(trainer, source.as_ref(), Some(&out), &mut Progress)?;
            eprintln!("best checkpoint after epoch {} in {}", outcome.best.epoch, out.display());
            Ok(())
        }
        Command::Finetune { weights, out, images, coco, coco_images, lr } => {
            if let Some(path) = images {
                config.data.source = SourceSpec::Directory { path };
            } else if let (Some(annotations), Some(images)) = (coco, coco_images) {
                config.data.source = SourceSpec::Coco { annotations, images };
            }
            config.train.lr = lr;
            config.validate()?;
            let source = training_source(&config, None)?;
            let (net, store) = load_model::<T>(&config.model, &weights)?;
            config.model = net.config().clone();
            let trainer = Trainer::with_store(&config, net, store);
            let outcome = train(trainer, source.as_ref(), Some(&out), &mut Progress)?;
            eprintln!("best checkpoint after epoch {} in {}", outcome.best.epoch, out.display());
            Ok(())
        }
        Command::EvalLoc { eval, distortion } => {
            let (net, store) = load_model::<T>(&config.model, &eval.weights)?;
            let source = eval_source(&config, &eval)?;
            let stop_at = eval.stop_at.unwrap_or(config.eval.stop_at);
            let mut r = evaluate_localization(&net, &store, source.as_ref(), distortion, config.eval.seed, stop_at)?;
            r.name = distortion.unwrap_or(Distortion::None).to_string();
            emit_report(&r, &eval)
        }
        Command::EvalDet { eval, mode } => {
            let (net, store) = load_model::<T>(&config.model, &eval.weights)?;
            let source = eval_source(&config, &eval)?;
            let r = evaluate_detection(&net, &store, source.as_ref(), mode)?;
            emit_report(&r, &eval)
        }
        Command::Robustness { eval, dataset } => {
            let (net, store) = load_model::<T>(&config.model, &eval.weights)?;
            let source = eval_source(&config, &eval)?;
            let stop_at = eval.stop_at.unwrap_or(config.eval.stop_at);
            let r = robustness(&net, &store, source.as_ref(), &dataset, config.eval.seed, stop_at)?;
            let text = match eval.format {
                Format::Csv => r.to_table(),
                Format::Json => serde_json::to_string_pretty(&r).expect("report serializes") + "\n",
            };
            emit(&text, eval.output.as_deref())
        }
        Command::Infer { weights, image, out, stop_at } => {
            let (net, store) = load_model::<T>(&config.model, &weights)?;
            let p = infer(&net, &store, &image, stop_at.unwrap_or(config.eval.stop_at))?;
            save_prediction(&p, &out)?;
            println!("score {:.6}", p.score);
            Ok(())
        }
        Command::Visualize { weights, image, out, scale, pixels, channel } => {
            let (net, store) = load_model::<T>(&config.model, &weights)?;
            let img = RgbImage::load(&image)?;
            let (maps, pair) = visualize_attention(&net, &store, &img, scale, &pixels, channel)?;
            pscc::harness::visualize::save_visualization(&img, &maps, &pair, &out)?;
            for m in &maps {
                println!("pixel {},{} -> row {} at scale {}", m.pixel.0, m.pixel.1, m.row_index, m.scale);
            }
            Ok(())
        }
    }
}

fn report_skipped(skipped: &[pscc::synth::SkipReport]) {
    for s in skipped {
        eprintln!("skipped {}: {}", s.path.display(), s.reason);
    }
}

fn training_source(config: &RunConfig, corpus: Option<&Path>) -> Result<Box<dyn SampleSource>> {
    Ok(match corpus {
        Some(root) => Box::new(CorpusSource::new(Corpus::load(root)?)),
        None => {
            let gen = config.data.generator()?;
            report_skipped(&gen.pool.skipped);
            Box::new(GeneratedSource { gen, per_class: config.data.corpus_per_class })
        }
    })
}

fn eval_source(config: &RunConfig, eval: &EvalArgs) -> Result<Box<dyn SampleSource>> {
    Ok(match &eval.corpus {
        Some(root) => Box::new(CorpusSource::new(Corpus::load(root)?)),
        None => {
            let mut data = config.data.clone();
            data.gen.seed = data.gen.seed.wrapping_add(HELD_OUT_SEED);
            if let SourceSpec::Procedural { seed, .. } = &mut data.source {
                *seed = seed.wrapping_add(HELD_OUT_SEED);
            }
            Box::new(GeneratedSource { gen: data.generator()?, per_class: eval.per_class })
        }
    })
}

fn emit_report(r: &MetricReport, eval: &EvalArgs) -> Result<()> {
    let text = match eval.format {
        Format::Csv => format!("{}\n{}\n", MetricReport::CSV_HEADER, r.csv_row()),
        Format::Json => serde_json::to_string_pretty(r).expect("report serializes") + "\n",
    };
    emit(&text, eval.output.as_deref())
}

fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    print!("{text}");
    if let Some(p) = path {
        std::fs::write(p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
    }
    Ok(())
}
