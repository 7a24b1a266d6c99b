//! Dataset assembly and the training loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictgen::classify_category;
use crate::error::{Error, Result};
use crate::features::{featurize, ranked_candidates, shortlist, FeaturePair, SelectionConfig};
use crate::lexicon::Lexicon;
use crate::metrics::{evaluate, EvalItem, EvalReport};
use crate::model::checkpoint;
use crate::model::optim::{AdamConfig, TrainState};
use crate::model::{Model, ModelConfig, Pass};
use crate::mora::{parse_kana, parse_marked, AccentVector, Mark, MoraSeq};
use crate::sagisaka::SyntheticSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    AnnotatedFixture,
    LexiconWord,
    Synthetic,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::AnnotatedFixture => "annotated-fixture",
            Source::LexiconWord => "lexicon-word",
            Source::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub surface: String,
    pub yomi: MoraSeq,
    pub gold: AccentVector,
    pub category: String,
    pub source: Source,
}

impl Item {
    pub fn new(surface: &str, yomi: MoraSeq, gold: AccentVector, source: Source) -> Item {
        Item {
            category: classify_category(surface, &yomi).to_string(),
            surface: surface.to_string(),
            yomi,
            gold,
            source,
        }
    }

    pub fn from_synthetic(s: &SyntheticSample) -> Item {
        Item::new(&s.surface, s.yomi.clone(), s.accent.clone(), Source::Synthetic)
    }
}

/// Reads `surface TAB yomi TAB marked [TAB category]` rows. Blank lines and
/// `#` comments are skipped; the yomi must spell the marked reading.
pub fn load_samples(path: &Path, source: Source) -> Result<Vec<Item>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => e.into(),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&cols.len()) {
            return Err(bad(format!("expected 3 or 4 columns, found {}", cols.len())));
        }
        let yomi = parse_kana(cols[1]).map_err(|e| bad(e.to_string()))?;
        let marked = parse_marked(cols[2]).map_err(|e| bad(e.to_string()))?;
        if marked.morae != yomi {
            return Err(bad(format!("marked reading {} does not spell {}", cols[2], cols[1])));
        }
        if cols[0].is_empty() || yomi.is_empty() {
            return Err(bad("empty surface or reading".into()));
        }
        let mut item = Item::new(cols[0], yomi, marked.accent, source);
        if let Some(cat) = cols.get(3) {
            item.category = cat.to_string();
        }
        out.push(item);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub eval_fraction: f64,
    /// Sources whose items are eligible for evaluation; all others train.
    pub eval_sources: Vec<Source>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            eval_fraction: 0.2,
            eval_sources: vec![Source::AnnotatedFixture],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub items: Vec<Item>,
    /// Ascending item indices.
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

impl Dataset {
    /// Deduplicates by (surface, yomi), keeping the highest-priority source
    /// (annotated, then lexicon, then synthetic; first occurrence within a
    /// source), then splits eligible items with a seeded shuffle.
    pub fn from_items(items: Vec<Item>, split: &SplitConfig, seed: u64) -> Result<Dataset> {
        if !(0.0..=1.0).contains(&split.eval_fraction) {
            return Err(Error::InvalidArgument("eval fraction must lie in [0, 1]".into()));
        }
        let mut chosen: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (i, it) in items.iter().enumerate() {
            let key = (it.surface.clone(), it.yomi.kana());
            match chosen.get(&key) {
                Some(&j) if items[j].source <= it.source => {}
                _ => {
                    chosen.insert(key, i);
                }
            }
        }
        let keep: BTreeSet<usize> = chosen.into_values().collect();
        let items: Vec<Item> = items
            .into_iter()
            .enumerate()
            .filter(|(i, _)| keep.contains(i))
            .map(|(_, it)| it)
            .collect();
        if items.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut eligible: Vec<usize> = (0..items.len())
            .filter(|&i| split.eval_sources.contains(&items[i].source))
            .collect();
        let n_eval = (eligible.len() as f64 * split.eval_fraction).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        eligible.shuffle(&mut rng);
        let mut eval: Vec<usize> = eligible[..n_eval].to_vec();
        eval.sort_unstable();
        let eval_set: BTreeSet<usize> = eval.iter().copied().collect();
        let train = (0..items.len()).filter(|i| !eval_set.contains(i)).collect();
        Ok(Dataset { items, train, eval })
    }

    pub fn train_items(&self) -> impl Iterator<Item = &Item> {
        self.train.iter().map(|&i| &self.items[i])
    }

    pub fn eval_items(&self) -> impl Iterator<Item = &Item> {
        self.eval.iter().map(|&i| &self.items[i])
    }
}

/// Merges sample files and already generated synthetic samples.
pub fn build_dataset(
    files: &[(PathBuf, Source)],
    synthetic: &[SyntheticSample],
    split: &SplitConfig,
    seed: u64,
) -> Result<Dataset> {
    let mut items = Vec::new();
    for (path, source) in files {
        items.extend(load_samples(path, *source)?);
    }
    items.extend(synthetic.iter().map(Item::from_synthetic));
    Dataset::from_items(items, split, seed)
}

/// Dictionary entries as training items.
pub fn lexicon_items(lex: &Lexicon) -> Vec<Item> {
    lex.entries()
        .iter()
        .map(|e| Item::new(&e.surface, e.yomi.clone(), e.accent.clone(), Source::LexiconWord))
        .collect()
}

/// Features of every shortlisted candidate; index 0 is the inference choice.
#[derive(Debug, Clone)]
pub struct PreparedItem {
    pub candidates: Vec<FeaturePair>,
    pub gold: Vec<Mark>,
}

pub fn prepare_item(item: &Item, lex: &Lexicon, sel: &SelectionConfig) -> Result<PreparedItem> {
    let ranked = ranked_candidates(&item.surface, &item.yomi, lex, sel)?;
    let m = sel.m_train.max(sel.m_infer);
    let candidates = shortlist(ranked, m).iter().map(|seg| featurize(seg, &item.yomi)).collect();
    Ok(PreparedItem {
        candidates,
        gold: item.gold.0.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub selection: SelectionConfig,
    pub model: ModelConfig,
    pub adam: AdamConfig,
    /// Evaluate and log every this many steps; 0 logs only at the end.
    pub eval_every: u64,
    /// Save a checkpoint every this many steps; 0 saves only at the end.
    pub checkpoint_every: u64,
    /// Directory for `checkpoint.bin` and `metrics.jsonl`.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 32,
            seed: 0,
            selection: SelectionConfig::default(),
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
            eval_every: 500,
            checkpoint_every: 0,
            out_dir: None,
        }
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "metrics.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    /// Mean training loss since the previous record.
    pub loss: f64,
    pub emr: Option<f64>,
    pub ahd: Option<f64>,
}

pub struct TrainOutcome {
    pub state: TrainState<f32>,
    pub log: Vec<LogRecord>,
    /// Every item index that contributed to a gradient.
    pub used_items: BTreeSet<usize>,
}

impl TrainOutcome {
    /// Fails if any evaluation item was used for training.
    pub fn audit(&self, ds: &Dataset) -> Result<()> {
        match ds.eval.iter().find(|i| self.used_items.contains(i)) {
            Some(i) => Err(Error::InvalidArgument(format!("eval item {i} was trained on"))),
            None => Ok(()),
        }
    }
}

/// Inference-mode report over prepared items.
pub fn evaluate_prepared(model: &Model<f32>, items: &[(&PreparedItem, &str)]) -> Result<EvalReport> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(64) {
        let inputs: Vec<&FeaturePair> = chunk.iter().map(|(p, _)| &p.candidates[0]).collect();
        let (fwd, _) = model.forward(&inputs, Pass::Infer)?;
        for ((p, cat), logits) in chunk.iter().zip(&fwd.logits) {
            let raw: Vec<Mark> = logits
                .rows()
                .into_iter()
                .map(|r| {
                    let best = (0..r.len()).fold(0, |b, i| if r[i] > r[b] { i } else { b });
                    Mark::from_class(best)
                })
                .collect();
            out.push(EvalItem {
                predicted: crate::mora::repair_accent(&raw).0,
                gold: p.gold.clone(),
                category: cat.to_string(),
            });
        }
    }
    evaluate(&out)
}

fn append_log(path: &Path, rec: &LogRecord) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(rec)?)?;
    Ok(())
}

/// Trains from `resume` (or a fresh model seeded by `cfg.seed`) until
/// `cfg.steps` updates have been applied. Step `s` draws its batch, candidate
/// choices and dropout masks from stream `s` of the seed, so resuming
/// reproduces an uninterrupted run exactly.
pub fn train_loop(
    cfg: &TrainConfig,
    ds: &Dataset,
    lex: &Lexicon,
    resume: Option<TrainState<f32>>,
) -> Result<TrainOutcome> {
    cfg.selection.validate()?;
    if ds.train.is_empty() {
        return Err(Error::EmptyInput);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut state = match resume {
        Some(s) => s,
        None => TrainState::new(Model::new(cfg.model, cfg.seed)?, cfg.adam),
    };
    let ckpt_path = cfg.out_dir.as_ref().map(|d| d.join(CHECKPOINT_FILE));
    let log_path = cfg.out_dir.as_ref().map(|d| d.join(LOG_FILE));
    if let Some(d) = &cfg.out_dir {
        std::fs::create_dir_all(d)?;
    }

    let prepared: BTreeMap<usize, PreparedItem> = ds
        .train
        .iter()
        .chain(&ds.eval)
        .map(|&i| prepare_item(&ds.items[i], lex, &cfg.selection).map(|p| (i, p)))
        .collect::<Result<_>>()?;
    let eval_set: Vec<(&PreparedItem, &str)> = ds
        .eval
        .iter()
        .map(|i| (&prepared[i], ds.items[*i].category.as_str()))
        .collect();
    let m_train = cfg.selection.m_train;

    let mut log = Vec::new();
    let mut used = BTreeSet::new();
    let mut loss_sum = 0.0f64;
    let mut loss_n = 0u64;
    while state.step < cfg.steps {
        let step = state.step;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(step);
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let idx = ds.train[rng.random_range(0..ds.train.len())];
            let p = &prepared[&idx];
            let pick = rng.random_range(0..p.candidates.len().min(m_train));
            used.insert(idx);
            batch.push((&p.candidates[pick], p.gold.as_slice()));
        }
        let loss = match state.train_step(&batch, &mut rng) {
            Ok(l) => l,
            Err(e) => {
                warn!("halting at step {step}: {e}");
                if let Some(p) = &ckpt_path {
                    checkpoint::save(&state, p)?;
                }
                return Err(e);
            }
        };
        loss_sum += loss as f64;
        loss_n += 1;
        let done = state.step;
        let log_now = done == cfg.steps || (cfg.eval_every > 0 && done % cfg.eval_every == 0);
        if log_now {
            let report = if eval_set.is_empty() {
                None
            } else {
                Some(evaluate_prepared(&state.model, &eval_set)?)
            };
            let rec = LogRecord {
                step: done,
                loss: loss_sum / loss_n as f64,
                emr: report.as_ref().map(|r| r.emr()),
                ahd: report.as_ref().map(|r| r.ahd()),
            };
            info!("step {} loss {:.4} emr {:?} ahd {:?}", rec.step, rec.loss, rec.emr, rec.ahd);
            if let Some(p) = &log_path {
                append_log(p, &rec)?;
            }
            log.push(rec);
            loss_sum = 0.0;
            loss_n = 0;
        }
        if let Some(p) = &ckpt_path {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.steps {
                checkpoint::save(&state, p)?;
            }
        }
    }
    if let Some(p) = &ckpt_path {
        checkpoint::save(&state, p)?;
    }
    Ok(TrainOutcome {
        state,
        log,
        used_items: used,
    })
}
