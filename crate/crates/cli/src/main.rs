use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use accent_core::dictgen::{build_dictionary, ClassifierConfig, CostConfig};
use accent_core::features::{featurize, select_candidates, Mode, SelectionConfig};
use accent_core::lattice::{build_lattice, nbest};
use accent_core::lexicon::{load_lexicon, Lexicon};
use accent_core::metrics::{evaluate, EvalItem};
use accent_core::model::checkpoint;
use accent_core::model::{Model, ModelConfig};
use accent_core::mora::{parse_kana, render_marked, AccentedReading};
use accent_core::sagisaka::{samples_to_tsv, synthesize_many};
use accent_core::train::{
    build_dataset, lexicon_items, train_loop, Dataset, Source, SplitConfig, TrainConfig,
};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Environment variable naming the default lexicon file.
const LEXICON_ENV: &str = "ACCENT_LEXICON";

#[derive(Parser, Debug)]
#[command(name = "accent", version, about = "Japanese pitch-accent estimation")]
struct Cli {
    /// Lexicon TSV or CSV (defaults to $ACCENT_LEXICON, then the bundled one).
    #[arg(long, global = true, env = LEXICON_ENV)]
    lexicon: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SelectionArgs {
    /// Lattice paths considered per word.
    #[arg(long, default_value_t = 20)]
    r_max: usize,
    /// Closest candidates sampled from during training.
    #[arg(long, default_value_t = 3)]
    m_train: usize,
    #[arg(long, default_value_t = 1)]
    m_infer: usize,
}

impl SelectionArgs {
    fn config(&self) -> SelectionConfig {
        SelectionConfig {
            r_max: self.r_max,
            m_train: self.m_train,
            m_infer: self.m_infer,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize)]
enum CliMode {
    Train,
    Infer,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
enum EvalSource {
    Annotated,
    Synthetic,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split a kana reading into morae.
    Morae { text: String },
    /// List the lowest-cost segmentations of a surface string.
    Nbest {
        surface: String,
        #[arg(short, long, default_value_t = 20)]
        k: usize,
    },
    /// Show the per-mora features fed to the model.
    Features {
        #[arg(long)]
        surface: String,
        #[arg(long)]
        yomi: String,
        #[arg(long, value_enum, default_value = "infer")]
        mode: CliMode,
        #[command(flatten)]
        selection: SelectionArgs,
    },
    /// Generate rule-labelled synthetic compounds as TSV.
    Synth {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write checkpoint.bin, metrics.jsonl and run.json.
    Train(TrainArgs),
    /// Score a checkpoint on annotated samples.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        by_category: bool,
        #[command(flatten)]
        selection: SelectionArgs,
    },
    /// Predict the accent of one word.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        surface: String,
        #[arg(long)]
        yomi: String,
        #[command(flatten)]
        selection: SelectionArgs,
    },
    /// Estimate accents for a surface/yomi word list and write a dictionary.
    BuildDict {
        #[arg(long)]
        words: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        base_cost: i32,
        /// Per-category cost offset as category=offset; repeatable.
        #[arg(long = "offset")]
        offsets: Vec<String>,
        /// Skip katakana spellings of kanji words.
        #[arg(long)]
        ignore_noisy: bool,
        #[command(flatten)]
        selection: SelectionArgs,
    },
}

#[derive(Args, Debug, Clone, Serialize)]
struct TrainArgs {
    /// Annotated sample TSV (surface, yomi, marked[, category]); repeatable.
    #[arg(long)]
    data: Vec<PathBuf>,
    /// Synthetic sample TSV files; repeatable.
    #[arg(long)]
    synth_data: Vec<PathBuf>,
    /// Synthetic compounds generated on the fly.
    #[arg(long, default_value_t = 0)]
    synth_count: usize,
    /// Also train on every lexicon entry.
    #[arg(long)]
    lexicon_words: bool,
    /// Source of the held-out split.
    #[arg(long, value_enum, default_value = "annotated")]
    eval_source: EvalSource,
    #[arg(long, default_value_t = 0.2)]
    eval_fraction: f64,
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 500)]
    eval_every: u64,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f32,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    selection: SelectionArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn lexicon(path: &Option<PathBuf>) -> Result<Lexicon> {
    match path {
        Some(p) => load_lexicon(p).with_context(|| format!("loading lexicon {}", p.display())),
        None => Ok(Lexicon::bundled()),
    }
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    Ok(checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?
        .model)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut out = String::new();
    match &cli.command {
        Command::Morae { text } => {
            for m in parse_kana(text)?.iter() {
                out.push_str(&format!("{}\t{}\n", m.kana, m.romaji()));
            }
        }
        Command::Nbest { surface, k } => {
            let lex = lexicon(&cli.lexicon)?;
            let lattice = build_lattice(surface, &lex)?;
            for seg in nbest(&lattice, *k)? {
                let parts: Vec<String> = seg
                    .entries
                    .iter()
                    .map(|e| format!("{}/{}/{}", e.surface, e.yomi.kana(), e.pos))
                    .collect();
                out.push_str(&format!("{}\t{}\t{}\t{}\n", seg.rank, seg.total_cost, seg.yomi().kana(), parts.join(" ")));
            }
        }
        Command::Features {
            surface,
            yomi,
            mode,
            selection,
        } => {
            let lex = lexicon(&cli.lexicon)?;
            let yomi = parse_kana(yomi)?;
            let mode = match mode {
                CliMode::Train => Mode::Train,
                CliMode::Infer => Mode::Infer,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let seg = select_candidates(surface, &yomi, &lex, &selection.config(), mode, &mut rng)?;
            out.push_str(&featurize(&seg, &yomi).to_tsv(&seg, &yomi));
        }
        Command::Synth { count, out: path } => {
            let lex = lexicon(&cli.lexicon)?;
            let samples = synthesize_many(cli.seed, &lex, *count)?;
            return emit(path, &samples_to_tsv(&samples));
        }
        Command::Train(args) => return train(&cli, args),
        Command::Eval {
            data,
            ckpt,
            by_category,
            selection,
        } => {
            let lex = lexicon(&cli.lexicon)?;
            let model = load_model(ckpt)?;
            let items = accent_core::train::load_samples(data, Source::AnnotatedFixture)?;
            let sel = selection.config();
            let mut scored = Vec::with_capacity(items.len());
            for it in &items {
                scored.push(EvalItem {
                    predicted: model.predict(&it.surface, &it.yomi, &lex, &sel)?.0,
                    gold: it.gold.0.clone(),
                    category: it.category.clone(),
                });
            }
            let report = evaluate(&scored)?;
            out.push_str(&report.to_text());
            if *by_category {
                out.push('\n');
                out.push_str(&report.category_table());
            }
        }
        Command::Predict {
            ckpt,
            surface,
            yomi,
            selection,
        } => {
            let lex = lexicon(&cli.lexicon)?;
            let model = load_model(ckpt)?;
            let yomi = parse_kana(yomi)?;
            let accent = model.predict(surface, &yomi, &lex, &selection.config())?;
            out.push_str(&render_marked(&AccentedReading { morae: yomi, accent }));
            out.push('\n');
        }
        Command::BuildDict {
            words,
            ckpt,
            out: path,
            base_cost,
            offsets,
            ignore_noisy,
            selection,
        } => {
            let lex = lexicon(&cli.lexicon)?;
            let model = load_model(ckpt)?;
            let mut costs = CostConfig {
                base: *base_cost,
                ..Default::default()
            };
            for o in offsets {
                costs.set_offset(o)?;
            }
            let classifier = ClassifierConfig {
                ignore_noisy: *ignore_noisy,
            };
            let m = build_dictionary(words, path, &model, &lex, &selection.config(), &costs, &classifier)?;
            out.push_str(&format!("accepted\t{}\nskipped\t{}\n", m.accepted, m.skipped.len()));
        }
    }
    emit(&None, &out)
}

#[derive(Serialize)]
struct RunManifest<'a> {
    args: &'a TrainArgs,
    seed: u64,
    lexicon: Option<&'a PathBuf>,
    config: &'a TrainConfig,
    items: usize,
    train_items: usize,
    eval_items: usize,
    final_step: u64,
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let lex = lexicon(&cli.lexicon)?;
    let mut files: Vec<(PathBuf, Source)> = args.data.iter().map(|p| (p.clone(), Source::AnnotatedFixture)).collect();
    files.extend(args.synth_data.iter().map(|p| (p.clone(), Source::Synthetic)));
    let synthetic = synthesize_many(cli.seed, &lex, args.synth_count)?;
    let split = SplitConfig {
        eval_fraction: args.eval_fraction,
        eval_sources: vec![match args.eval_source {
            EvalSource::Annotated => Source::AnnotatedFixture,
            EvalSource::Synthetic => Source::Synthetic,
        }],
    };
    let ds = if args.lexicon_words {
        let mut items = build_dataset(&files, &synthetic, &SplitConfig { eval_fraction: 0.0, ..split.clone() }, cli.seed)?.items;
        items.extend(lexicon_items(&lex));
        Dataset::from_items(items, &split, cli.seed)?
    } else {
        build_dataset(&files, &synthetic, &split, cli.seed)?
    };
    let cfg = TrainConfig {
        steps: args.steps,
        batch_size: args.batch_size,
        seed: cli.seed,
        selection: args.selection.config(),
        model: ModelConfig {
            channels: args.channels,
            embed_dim: args.embed_dim,
            dropout: args.dropout,
            ..Default::default()
        },
        eval_every: args.eval_every,
        checkpoint_every: args.checkpoint_every,
        out_dir: Some(args.out_dir.clone()),
        ..Default::default()
    };
    let resume = match &args.resume {
        Some(p) => Some(checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?),
        None => None,
    };
    let outcome = train_loop(&cfg, &ds, &lex, resume)?;
    outcome.audit(&ds)?;
    let manifest = RunManifest {
        args,
        seed: cli.seed,
        lexicon: cli.lexicon.as_ref(),
        config: &cfg,
        items: ds.items.len(),
        train_items: ds.train.len(),
        eval_items: ds.eval.len(),
        final_step: outcome.state.step,
    };
    let path = args.out_dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    if let Some(last) = outcome.log.last() {
        println!("{}", serde_json::to_string(last)?);
    }
    Ok(())
}
