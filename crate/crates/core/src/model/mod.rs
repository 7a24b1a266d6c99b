//! Two convolutional encoders (surface morae and reading morae), dot-product
//! attention from reading to surface, and a convolutional decoder emitting
//! raise / lower / level logits for each reading mora.

pub mod checkpoint;
pub mod layers;
pub mod optim;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    featurize, select_candidates, FeaturePair, Mode, SelectionConfig, SURFACE_FEATURES, SURFACE_VOCAB,
    YOMI_FEATURES, YOMI_VOCAB,
};
use crate::lexicon::Lexicon;
use crate::mora::{repair_accent, AccentVector, Mark, MoraSeq};

pub use layers::{Real, RenormLimits, RenormStats};
pub use optim::{AdamConfig, TrainState};
use layers::{
    cast, highway_backward, highway_forward, linear, linear_backward, HighwayCache, HighwayGrads,
    HighwayParams, NormMode, Packing,
};

pub const DILATIONS: [usize; 4] = [1, 3, 1, 3];
pub const CLASSES: usize = 3;
/// Surface, reading and decoder stacks.
pub const STACKS: usize = 3;

/// Float fields are `f32` so a checkpoint restores them bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    /// Width of each per-feature embedding before projection.
    pub embed_dim: usize,
    pub dropout: f32,
    /// Weight of the diagonal attention penalty.
    pub attention_weight: f32,
    /// Width of the diagonal band in the attention penalty.
    pub guide_width: f32,
    /// Target probability of the gold class; the rest is split evenly.
    pub gold_prob: f32,
    pub renorm_warmup: u32,
    pub r_max: f32,
    pub d_max: f32,
    pub momentum: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 64,
            embed_dim: 16,
            dropout: 0.5,
            attention_weight: 1.0,
            guide_width: 0.2,
            gold_prob: 0.4,
            renorm_warmup: 5000,
            r_max: 3.0,
            d_max: 5.0,
            momentum: 0.99,
        }
    }
}

impl ModelConfig {
    pub fn tiny() -> Self {
        ModelConfig {
            channels: 8,
            embed_dim: 4,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.channels > 0
            && self.embed_dim > 0
            && (0.0..1.0).contains(&self.dropout)
            && self.attention_weight >= 0.0
            && self.guide_width > 0.0
            && self.gold_prob > 0.0
            && self.gold_prob < 1.0
            && self.r_max >= 1.0
            && self.d_max >= 0.0
            && (0.0..=1.0).contains(&self.momentum);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad model config {self:?}")))
        }
    }

    /// Linear ramp from plain batch normalization to the final bounds.
    pub fn renorm_limits(&self, step: u64) -> RenormLimits {
        let frac = if self.renorm_warmup == 0 {
            1.0
        } else {
            (step as f64 / self.renorm_warmup as f64).min(1.0)
        };
        RenormLimits {
            r_max: 1.0 + (self.r_max as f64 - 1.0) * frac,
            d_max: self.d_max as f64 * frac,
        }
    }

    pub(crate) fn to_f32s(self) -> Vec<f32> {
        vec![
            self.channels as f32,
            self.embed_dim as f32,
            self.dropout,
            self.attention_weight,
            self.guide_width,
            self.gold_prob,
            self.renorm_warmup as f32,
            self.r_max,
            self.d_max,
            self.momentum,
        ]
    }

    pub(crate) fn from_f32s(v: &[f32]) -> Result<ModelConfig> {
        let [ch, emb, dropout, attention_weight, guide_width, gold_prob, warm, r_max, d_max, momentum] = v
        else {
            return Err(Error::Checkpoint(format!("config section has {} values", v.len())));
        };
        let cfg = ModelConfig {
            channels: *ch as usize,
            embed_dim: *emb as usize,
            dropout: *dropout,
            attention_weight: *attention_weight,
            guide_width: *guide_width,
            gold_prob: *gold_prob,
            renorm_warmup: *warm as u32,
            r_max: *r_max,
            d_max: *d_max,
            momentum: *momentum,
        };
        cfg.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Embedding,
    /// Normal with variance 1 / fan-in.
    Weight(usize),
    Ones,
    Zeros,
    /// Zeros for the candidate half, -1 for the gate half.
    GateBias,
}

#[derive(Debug, Clone)]
struct LayerIdx {
    conv: usize,
    gamma: usize,
    beta: usize,
    dilation: usize,
    stat: usize,
}

#[derive(Debug, Clone)]
struct EncoderIdx {
    emb: Vec<usize>,
    proj_w: usize,
    proj_b: usize,
    layers: Vec<LayerIdx>,
}

#[derive(Debug, Clone)]
struct Layout {
    surface: EncoderIdx,
    yomi: EncoderIdx,
    dec_in_w: usize,
    dec_in_b: usize,
    dec_layers: Vec<LayerIdx>,
    hid_w: usize,
    hid_b: usize,
    out_w: usize,
    out_b: usize,
}

#[derive(Default)]
struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
    stats: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn stack(&mut self, prefix: &str, c: usize) -> Vec<LayerIdx> {
        DILATIONS
            .iter()
            .enumerate()
            .map(|(i, &dilation)| {
                let stat = self.stats;
                self.stats += 1;
                LayerIdx {
                    conv: self.add(format!("{prefix}.conv{i}.w"), (3 * c, 2 * c), Init::Weight(3 * c)),
                    gamma: self.add(format!("{prefix}.conv{i}.gamma"), (1, 2 * c), Init::Ones),
                    beta: self.add(format!("{prefix}.conv{i}.beta"), (1, 2 * c), Init::GateBias),
                    dilation,
                    stat,
                }
            })
            .collect()
    }

    fn encoder(&mut self, prefix: &str, vocab: &[usize], e: usize, c: usize) -> EncoderIdx {
        let emb = vocab
            .iter()
            .enumerate()
            .map(|(i, &v)| self.add(format!("{prefix}.emb{i}"), (v, e), Init::Embedding))
            .collect();
        let k = vocab.len() * e;
        EncoderIdx {
            emb,
            proj_w: self.add(format!("{prefix}.proj.w"), (k, c), Init::Weight(k)),
            proj_b: self.add(format!("{prefix}.proj.b"), (1, c), Init::Zeros),
            layers: self.stack(prefix, c),
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Builder) {
    let c = cfg.channels;
    let e = cfg.embed_dim;
    let mut b = Builder::default();
    let surface = b.encoder("surface", &SURFACE_VOCAB, e, c);
    let yomi = b.encoder("yomi", &YOMI_VOCAB, e, c);
    let dec_in_w = b.add("decoder.in.w".into(), (2 * c, c), Init::Weight(2 * c));
    let dec_in_b = b.add("decoder.in.b".into(), (1, c), Init::Zeros);
    let dec_layers = b.stack("decoder", c);
    let hid_w = b.add("decoder.hidden.w".into(), (c, c), Init::Weight(c));
    let hid_b = b.add("decoder.hidden.b".into(), (1, c), Init::Zeros);
    let out_w = b.add("decoder.out.w".into(), (c, CLASSES), Init::Weight(c));
    let out_b = b.add("decoder.out.b".into(), (1, CLASSES), Init::Zeros);
    let layout = Layout {
        surface,
        yomi,
        dec_in_w,
        dec_in_b,
        dec_layers,
        hid_w,
        hid_b,
        out_w,
        out_b,
    };
    (layout, b)
}

#[derive(Debug, Clone)]
pub struct Model<F> {
    pub config: ModelConfig,
    names: Vec<String>,
    pub params: Vec<Array2<F>>,
    /// Moving statistics, surface stack first, then reading, then decoder.
    pub stats: Vec<RenormStats<F>>,
    layout: Layout,
}

/// Per-example outputs of a forward pass.
#[derive(Debug, Clone)]
pub struct Output<F> {
    /// |reading| × 3, classes ordered raise, lower, level.
    pub logits: Vec<Array2<F>>,
    /// |reading| × |surface morae|, rows sum to one.
    pub attention: Vec<Array2<F>>,
}

pub enum Pass<'r> {
    Train { step: u64, rng: &'r mut dyn RngCore },
    Infer,
}

struct EncoderCache<F> {
    emb: Array2<F>,
    layers: Vec<HighwayCache<F>>,
}

pub struct Cache<F> {
    surface_pack: Packing,
    yomi_pack: Packing,
    surface_ids: Vec<usize>,
    yomi_ids: Vec<usize>,
    surface: EncoderCache<F>,
    yomi: EncoderCache<F>,
    keys: Array2<F>,
    queries: Array2<F>,
    attention: Vec<Array2<F>>,
    dec_in: Array2<F>,
    dec_layers: Vec<HighwayCache<F>>,
    dec_out: Array2<F>,
    hidden: Array2<F>,
}

impl<F: Clone> Cache<F> {
    /// Batch statistics of each normalization layer, in `Model::stats` order.
    pub fn batch_stats(&self) -> Vec<Option<RenormStats<F>>> {
        self.surface
            .layers
            .iter()
            .chain(&self.yomi.layers)
            .chain(&self.dec_layers)
            .map(|c| c.batch_stats().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<F> {
    pub cross_entropy: F,
    pub attention: F,
}

pub struct StepOutput<F> {
    pub loss: F,
    pub parts: LossParts<F>,
    pub grads: Vec<Array2<F>>,
    pub batch_stats: Vec<Option<RenormStats<F>>>,
}

/// 1 - exp(-(n/N - t/T)^2 / (2 width^2)) for reading index t, surface index n.
pub fn guide_matrix<F: Real>(t_len: usize, n_len: usize, width: f64) -> Array2<F> {
    Array2::from_shape_fn((t_len, n_len), |(t, n)| {
        let diff = n as f64 / n_len as f64 - t as f64 / t_len as f64;
        cast(1.0 - (-diff * diff / (2.0 * width * width)).exp())
    })
}

fn smoothed_target<F: Real>(gold: Mark, gold_prob: f64) -> [F; CLASSES] {
    let other = (1.0 - gold_prob) / (CLASSES - 1) as f64;
    let mut q = [cast::<F>(other); CLASSES];
    q[gold.class()] = cast(gold_prob);
    q
}

fn log_softmax_row<F: Real>(row: ndarray::ArrayView1<F>) -> Vec<F> {
    let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
    let lse = row.fold(F::zero(), |acc, &v| acc + (v - max).exp()).ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

/// Loss of one example with gradients with respect to its logits and its
/// attention matrix. Cross-entropy is averaged over reading positions and
/// the attention penalty over all cells.
pub fn example_loss<F: Real>(
    logits: ArrayView2<F>,
    attention: ArrayView2<F>,
    gold: &[Mark],
    cfg: &ModelConfig,
) -> Result<(LossParts<F>, Array2<F>, Array2<F>)> {
    let t_len = logits.nrows();
    if gold.len() != t_len {
        return Err(Error::LengthMismatch {
            expected: t_len,
            actual: gold.len(),
        });
    }
    if attention.nrows() != t_len || t_len == 0 || attention.ncols() == 0 {
        return Err(Error::EmptyInput);
    }
    let inv_t = F::one() / cast::<F>(t_len as f64);
    let mut ce = F::zero();
    let mut dlogits = Array2::zeros(logits.dim());
    for (t, &g) in gold.iter().enumerate() {
        let logp = log_softmax_row(logits.row(t));
        let q = smoothed_target::<F>(g, cfg.gold_prob as f64);
        for c in 0..CLASSES {
            ce -= q[c] * logp[c];
            dlogits[[t, c]] = (logp[c].exp() - q[c]) * inv_t;
        }
    }
    ce *= inv_t;
    let guide = guide_matrix::<F>(t_len, attention.ncols(), cfg.guide_width as f64);
    let cells = cast::<F>(attention.len() as f64);
    let att = (&attention * &guide).sum() / cells;
    let dattn = guide * (cast::<F>(cfg.attention_weight as f64) / cells);
    Ok((
        LossParts {
            cross_entropy: ce,
            attention: att,
        },
        dlogits,
        dattn,
    ))
}

/// Cross-entropy against the smoothed target plus the weighted attention
/// penalty.
pub fn loss<F: Real>(logits: ArrayView2<F>, attention: ArrayView2<F>, gold: &[Mark], cfg: &ModelConfig) -> Result<F> {
    let (parts, _, _) = example_loss(logits, attention, gold, cfg)?;
    Ok(parts.cross_entropy + cast::<F>(cfg.attention_weight as f64) * parts.attention)
}

fn flat_ids<const K: usize>(rows: impl Iterator<Item = [usize; K]>, vocab: &[usize; K]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for row in rows {
        for (i, (&id, &v)) in row.iter().zip(vocab).enumerate() {
            if id >= v {
                return Err(Error::InvalidArgument(format!("feature {i} id {id} >= vocabulary {v}")));
            }
            out.push(id);
        }
    }
    Ok(out)
}

fn argmax<F: Real>(row: ndarray::ArrayView1<F>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl<F: Real> Model<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model<F>> {
        config.validate()?;
        let (layout, b) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let params = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(&shape, &init)| match init {
                Init::Embedding => sample(shape, 1.0, &mut rng),
                Init::Weight(fan_in) => sample(shape, (1.0 / fan_in as f64).sqrt(), &mut rng),
                Init::Ones => Array2::ones(shape),
                Init::Zeros => Array2::zeros(shape),
                Init::GateBias => Array2::from_shape_fn(shape, |(_, j)| if j < c { F::zero() } else { -F::one() }),
            })
            .collect();
        Ok(Model {
            config,
            names: b.names,
            params,
            stats: (0..b.stats).map(|_| RenormStats::new(2 * c)).collect(),
            layout,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<Array2<F>>, stats: Vec<RenormStats<F>>) -> Result<Self> {
        let mut m = Model::new(config, 0)?;
        if params.len() != m.params.len() || stats.len() != m.stats.len() {
            return Err(Error::Checkpoint("tensor count does not match config".into()));
        }
        for (i, (p, q)) in params.iter().zip(&m.params).enumerate() {
            if p.dim() != q.dim() {
                return Err(Error::Checkpoint(format!("shape mismatch for {}", m.names[i])));
            }
        }
        m.params = params;
        m.stats = stats;
        Ok(m)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn zeros_like_params(&self) -> Vec<Array2<F>> {
        self.params.iter().map(|p| Array2::zeros(p.dim())).collect()
    }

    /// Same weights and statistics in another float type.
    pub fn cast<G: Real>(&self) -> Model<G> {
        let conv = |a: &Array2<F>| a.mapv(|v| cast::<G>(v.to_f64().unwrap()));
        let conv1 = |a: &ndarray::Array1<F>| a.mapv(|v| cast::<G>(v.to_f64().unwrap()));
        Model {
            config: self.config,
            names: self.names.clone(),
            params: self.params.iter().map(conv).collect(),
            stats: self
                .stats
                .iter()
                .map(|s| RenormStats {
                    mean: conv1(&s.mean),
                    std: conv1(&s.std),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    fn layer_params(&self, l: &LayerIdx) -> HighwayParams<'_, F> {
        HighwayParams {
            conv: &self.params[l.conv],
            gamma: &self.params[l.gamma],
            beta: &self.params[l.beta],
            dilation: l.dilation,
        }
    }

    fn run_stack(
        &self,
        layers: &[LayerIdx],
        mut x: Array2<F>,
        pack: &Packing,
        norm: NormMode,
        mut rng: Option<&mut dyn RngCore>,
    ) -> (Array2<F>, Vec<HighwayCache<F>>) {
        let rate = self.config.dropout as f64;
        let mut caches = Vec::with_capacity(layers.len());
        for l in layers {
            let dropout = reborrow(&mut rng).map(|r| (rate, r));
            let (y, cache) = highway_forward(&self.layer_params(l), x, pack, &self.stats[l.stat], norm, dropout);
            caches.push(cache);
            x = y;
        }
        (x, caches)
    }

    fn encode(
        &self,
        enc: &EncoderIdx,
        ids: &[usize],
        pack: &Packing,
        norm: NormMode,
        rng: Option<&mut dyn RngCore>,
    ) -> (Array2<F>, EncoderCache<F>) {
        let e = self.config.embed_dim;
        let k = enc.emb.len();
        let rows = pack.rows();
        let mut emb = Array2::zeros((rows, k * e));
        for r in 0..rows {
            for (i, &table) in enc.emb.iter().enumerate() {
                emb.slice_mut(s![r, i * e..(i + 1) * e])
                    .assign(&self.params[table].row(ids[r * k + i]));
            }
        }
        let x = linear(&emb.view(), &self.params[enc.proj_w], &self.params[enc.proj_b]);
        let (out, layers) = self.run_stack(&enc.layers, x, pack, norm, rng);
        (out, EncoderCache { emb, layers })
    }

    pub fn forward(&self, batch: &[&FeaturePair], pass: Pass<'_>) -> Result<(Output<F>, Cache<F>)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        if batch.iter().any(|fp| fp.surface.is_empty() || fp.yomi.is_empty()) {
            return Err(Error::EmptyInput);
        }
        let (norm, mut rng) = match pass {
            Pass::Train { step, rng } => (NormMode::Batch(self.config.renorm_limits(step)), Some(rng)),
            Pass::Infer => (NormMode::Moving, None),
        };
        let c = self.config.channels;
        let surface_pack = Packing::from_lengths(batch.iter().map(|fp| fp.surface.len()));
        let yomi_pack = Packing::from_lengths(batch.iter().map(|fp| fp.yomi.len()));
        let surface_ids = flat_ids::<SURFACE_FEATURES>(batch.iter().flat_map(|fp| fp.surface.iter().copied()), &SURFACE_VOCAB)?;
        let yomi_ids = flat_ids::<YOMI_FEATURES>(batch.iter().flat_map(|fp| fp.yomi.iter().copied()), &YOMI_VOCAB)?;

        let l = &self.layout;
        let (keys, surface) = self.encode(&l.surface, &surface_ids, &surface_pack, norm, reborrow(&mut rng));
        let (queries, yomi) = self.encode(&l.yomi, &yomi_ids, &yomi_pack, norm, reborrow(&mut rng));

        let scale = F::one() / cast::<F>(c as f64).sqrt();
        let mut context = Array2::zeros((yomi_pack.rows(), c));
        let mut attention = Vec::with_capacity(batch.len());
        for b in 0..batch.len() {
            let q = queries.slice(s![yomi_pack.range(b), ..]);
            let k = keys.slice(s![surface_pack.range(b), ..]);
            let mut a = q.dot(&k.t()) * scale;
            for mut row in a.rows_mut() {
                let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
            }
            context.slice_mut(s![yomi_pack.range(b), ..]).assign(&a.dot(&k));
            attention.push(a);
        }

        let dec_in = concatenate![Axis(1), queries, context];
        let h = linear(&dec_in.view(), &self.params[l.dec_in_w], &self.params[l.dec_in_b]);
        let (dec_out, dec_layers) = self.run_stack(&l.dec_layers, h, &yomi_pack, norm, reborrow(&mut rng));
        let hidden = linear(&dec_out.view(), &self.params[l.hid_w], &self.params[l.hid_b]).mapv(|v| v.tanh());
        let logits_all = linear(&hidden.view(), &self.params[l.out_w], &self.params[l.out_b]);
        let logits = (0..batch.len())
            .map(|b| logits_all.slice(s![yomi_pack.range(b), ..]).to_owned())
            .collect();

        Ok((
            Output {
                logits,
                attention: attention.clone(),
            },
            Cache {
                surface_pack,
                yomi_pack,
                surface_ids,
                yomi_ids,
                surface,
                yomi,
                keys,
                queries,
                attention,
                dec_in,
                dec_layers,
                dec_out,
                hidden,
            },
        ))
    }

    /// Gradients of `sum_b (loss_b)` scaled by the caller, given per-example
    /// gradients with respect to logits and attention.
    pub fn backward(&self, cache: &Cache<F>, dlogits: &[Array2<F>], dattn: &[Array2<F>]) -> Vec<Array2<F>> {
        let l = &self.layout;
        let c = self.config.channels;
        let mut grads = self.zeros_like_params();
        let dlog = concatenate(Axis(0), &dlogits.iter().map(|a| a.view()).collect::<Vec<_>>())
            .expect("logit gradients share width");

        let dhidden = {
            let [gw, gb] = grads.get_disjoint_mut([l.out_w, l.out_b]).unwrap();
            linear_backward(&cache.hidden.view(), &self.params[l.out_w], &dlog, gw, gb)
        };
        let du = ndarray::Zip::from(&dhidden)
            .and(&cache.hidden)
            .map_collect(|&d, &v| d * (F::one() - v * v));
        let mut dh = {
            let [gw, gb] = grads.get_disjoint_mut([l.hid_w, l.hid_b]).unwrap();
            linear_backward(&cache.dec_out.view(), &self.params[l.hid_w], &du, gw, gb)
        };
        dh = self.stack_backward(&l.dec_layers, &cache.dec_layers, dh, &cache.yomi_pack, &mut grads);
        let ddec_in = {
            let [gw, gb] = grads.get_disjoint_mut([l.dec_in_w, l.dec_in_b]).unwrap();
            linear_backward(&cache.dec_in.view(), &self.params[l.dec_in_w], &dh, gw, gb)
        };

        let mut dq = ddec_in.slice(s![.., ..c]).to_owned();
        let dctx = ddec_in.slice(s![.., c..]);
        let mut dk = Array2::zeros(cache.keys.dim());
        let scale = F::one() / cast::<F>(c as f64).sqrt();
        for (b, a) in cache.attention.iter().enumerate() {
            let yr = cache.yomi_pack.range(b);
            let sr = cache.surface_pack.range(b);
            let q = cache.queries.slice(s![yr.clone(), ..]);
            let k = cache.keys.slice(s![sr.clone(), ..]);
            let dr = dctx.slice(s![yr.clone(), ..]);
            let da = dr.dot(&k.t()) + &dattn[b];
            let mut dkb = a.t().dot(&dr);
            let mut ds = a * &da;
            for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                let dot = row.sum();
                row.zip_mut_with(&arow, |v, &p| *v = *v - p * dot);
            }
            ds *= scale;
            let mut dqb = dq.slice_mut(s![yr, ..]);
            dqb += &ds.dot(&k);
            dkb += &ds.t().dot(&q);
            let mut dks = dk.slice_mut(s![sr, ..]);
            dks += &dkb;
        }

        self.encoder_backward(&l.yomi, &cache.yomi, &cache.yomi_ids, dq, &cache.yomi_pack, &mut grads);
        self.encoder_backward(&l.surface, &cache.surface, &cache.surface_ids, dk, &cache.surface_pack, &mut grads);
        grads
    }

    fn stack_backward(
        &self,
        layers: &[LayerIdx],
        caches: &[HighwayCache<F>],
        mut dx: Array2<F>,
        pack: &Packing,
        grads: &mut [Array2<F>],
    ) -> Array2<F> {
        for (li, cache) in layers.iter().zip(caches).rev() {
            let [conv, gamma, beta] = grads.get_disjoint_mut([li.conv, li.gamma, li.beta]).unwrap();
            dx = highway_backward(&self.layer_params(li), HighwayGrads { conv, gamma, beta }, cache, &dx, pack);
        }
        dx
    }

    fn encoder_backward(
        &self,
        enc: &EncoderIdx,
        cache: &EncoderCache<F>,
        ids: &[usize],
        dout: Array2<F>,
        pack: &Packing,
        grads: &mut [Array2<F>],
    ) {
        let dx = self.stack_backward(&enc.layers, &cache.layers, dout, pack, grads);
        let demb = {
            let [gw, gb] = grads.get_disjoint_mut([enc.proj_w, enc.proj_b]).unwrap();
            linear_backward(&cache.emb.view(), &self.params[enc.proj_w], &dx, gw, gb)
        };
        let e = self.config.embed_dim;
        let k = enc.emb.len();
        for r in 0..pack.rows() {
            for (i, &table) in enc.emb.iter().enumerate() {
                let mut row = grads[table].row_mut(ids[r * k + i]);
                row += &demb.slice(s![r, i * e..(i + 1) * e]);
            }
        }
    }

    /// Mean loss over the batch and its exact gradient.
    pub fn loss_and_gradients(
        &self,
        batch: &[(&FeaturePair, &[Mark])],
        step: u64,
        rng: &mut dyn RngCore,
    ) -> Result<StepOutput<F>> {
        let inputs: Vec<&FeaturePair> = batch.iter().map(|(fp, _)| *fp).collect();
        let (out, cache) = self.forward(&inputs, Pass::Train { step, rng })?;
        let inv_b = F::one() / cast::<F>(batch.len() as f64);
        let lambda = cast::<F>(self.config.attention_weight as f64);
        let mut parts = LossParts {
            cross_entropy: F::zero(),
            attention: F::zero(),
        };
        let mut dlogits = Vec::with_capacity(batch.len());
        let mut dattn = Vec::with_capacity(batch.len());
        for (b, (_, gold)) in batch.iter().enumerate() {
            let (p, dl, da) = example_loss(out.logits[b].view(), out.attention[b].view(), gold, &self.config)?;
            parts.cross_entropy += p.cross_entropy * inv_b;
            parts.attention += p.attention * inv_b;
            dlogits.push(dl * inv_b);
            dattn.push(da * inv_b);
        }
        let grads = self.backward(&cache, &dlogits, &dattn);
        Ok(StepOutput {
            loss: parts.cross_entropy + lambda * parts.attention,
            parts,
            grads,
            batch_stats: cache.batch_stats(),
        })
    }

    /// Folds the batch statistics of a training step into the moving ones.
    pub fn update_stats(&mut self, batch_stats: &[Option<RenormStats<F>>]) {
        let momentum = cast::<F>(self.config.momentum as f64);
        for (s, b) in self.stats.iter_mut().zip(batch_stats) {
            if let Some(b) = b {
                s.update(b, momentum);
            }
        }
    }

    /// Inference-mode logits and attention for one example.
    pub fn infer(&self, fp: &FeaturePair) -> Result<(Array2<F>, Array2<F>)> {
        let (mut out, _) = self.forward(&[fp], Pass::Infer)?;
        Ok((out.logits.pop().unwrap(), out.attention.pop().unwrap()))
    }

    /// Argmax labels with alternation repaired.
    pub fn predict_features(&self, fp: &FeaturePair) -> Result<AccentVector> {
        let (logits, _) = self.infer(fp)?;
        let raw: Vec<Mark> = logits.rows().into_iter().map(|r| Mark::from_class(argmax(r))).collect();
        Ok(repair_accent(&raw))
    }

    pub fn predict(&self, surface: &str, yomi: &MoraSeq, lex: &Lexicon, sel: &SelectionConfig) -> Result<AccentVector> {
        if yomi.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let seg = select_candidates(surface, yomi, lex, sel, Mode::Infer, &mut unused)?;
        self.predict_features(&featurize(&seg, yomi))
    }
}

fn reborrow<'s>(rng: &'s mut Option<&mut dyn RngCore>) -> Option<&'s mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

fn sample<F: Real>(shape: (usize, usize), std: f64, rng: &mut ChaCha8Rng) -> Array2<F> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn(shape, || cast(normal.sample(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mora::validate_accent;

    fn pair(surface: usize, yomi: usize, salt: usize) -> FeaturePair {
        FeaturePair {
            surface: (0..surface)
                .map(|i| std::array::from_fn(|j| (i * 7 + j * 3 + salt) % SURFACE_VOCAB[j]))
                .collect(),
            yomi: (0..yomi)
                .map(|i| std::array::from_fn(|j| (i * 5 + j + salt) % YOMI_VOCAB[j]))
                .collect(),
        }
    }

    #[test]
    fn shapes_and_normalization() {
        let m = Model::<f32>::new(ModelConfig::tiny(), 1).unwrap();
        for (s, y) in [(1, 1), (3, 5), (7, 2)] {
            let (logits, a) = m.infer(&pair(s, y, 0)).unwrap();
            assert_eq!(logits.dim(), (y, CLASSES));
            assert_eq!(a.dim(), (y, s));
            for row in a.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
        let (_, a) = m.infer(&pair(1, 1, 0)).unwrap();
        assert_eq!(a[[0, 0]], 1.0);
    }

    #[test]
    fn infer_is_pure() {
        let m = Model::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        let fp = pair(4, 6, 1);
        assert_eq!(m.infer(&fp).unwrap(), m.infer(&fp).unwrap());
    }

    #[test]
    fn empty_sequences_rejected() {
        let m = Model::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        assert!(matches!(m.infer(&pair(0, 2, 0)), Err(Error::EmptyInput)));
        assert!(matches!(m.infer(&pair(2, 0, 0)), Err(Error::EmptyInput)));
    }

    #[test]
    fn loss_closed_forms() {
        let cfg = ModelConfig::default();
        let gold = [Mark::Raise, Mark::Level];
        let a = Array2::<f64>::from_elem((2, 1), 1.0);
        // logits whose softmax equals the smoothed target
        let g = cfg.gold_prob as f64;
        let q = |m: Mark| smoothed_target::<f64>(m, g).map(f64::ln);
        let logits = Array2::from_shape_fn((2, 3), |(t, c)| q(gold[t])[c]);
        let (p, _, _) = example_loss(logits.view(), a.view(), &gold, &cfg).unwrap();
        let other = (1.0 - g) / 2.0;
        let entropy = -(g * g.ln() + 2.0 * other * other.ln());
        assert!((entropy - 1.0889).abs() < 1e-4);
        assert!((p.cross_entropy - entropy).abs() < 1e-12);
        let uniform = Array2::<f64>::zeros((2, 3));
        let (p, _, _) = example_loss(uniform.view(), a.view(), &gold, &cfg).unwrap();
        assert!((p.cross_entropy - 3f64.ln()).abs() < 1e-12);
        assert!(example_loss(uniform.view(), a.view(), &gold[..1], &cfg).is_err());
    }

    #[test]
    fn diagonal_attention_is_cheaper() {
        let cfg = ModelConfig::default();
        let n = 5;
        let eye = Array2::<f64>::from_shape_fn((n, n), |(i, j)| f64::from(u8::from(i == j)));
        let anti = Array2::<f64>::from_shape_fn((n, n), |(i, j)| f64::from(u8::from(i + j == n - 1)));
        let logits = Array2::<f64>::zeros((n, 3));
        let gold = vec![Mark::Level; n];
        let (d, _, _) = example_loss(logits.view(), eye.view(), &gold, &cfg).unwrap();
        let (x, _, _) = example_loss(logits.view(), anti.view(), &gold, &cfg).unwrap();
        assert!(d.attention < x.attention);
        assert!(loss(logits.view(), eye.view(), &gold, &cfg).unwrap() >= 0.0);
    }

    #[test]
    fn unused_embedding_rows_have_zero_gradient() {
        let m = Model::<f64>::new(ModelConfig::tiny(), 5).unwrap();
        let fp = pair(3, 4, 0);
        let gold = vec![Mark::Raise, Mark::Level, Mark::Lower, Mark::Level];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = m.loss_and_gradients(&[(&fp, &gold)], 0, &mut rng).unwrap();
        let table = m.layout.surface.emb[0];
        let used: std::collections::BTreeSet<usize> = fp.surface.iter().map(|r| r[0]).collect();
        for (row, g) in out.grads[table].rows().into_iter().enumerate() {
            if !used.contains(&row) {
                assert!(g.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn duplicated_example_gives_same_gradient() {
        let cfg = ModelConfig {
            dropout: 0.0,
            ..ModelConfig::tiny()
        };
        let m = Model::<f64>::new(cfg, 9).unwrap();
        let fp = pair(4, 5, 2);
        let gold = vec![Mark::Lower, Mark::Level, Mark::Level, Mark::Raise, Mark::Level];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = m.loss_and_gradients(&[(&fp, &gold)], 0, &mut rng).unwrap();
        let two = m.loss_and_gradients(&[(&fp, &gold), (&fp, &gold)], 0, &mut rng).unwrap();
        assert!((one.loss - two.loss).abs() < 1e-12);
        for (a, b) in one.grads.iter().zip(&two.grads) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn renorm_schedule() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.renorm_limits(0), RenormLimits { r_max: 1.0, d_max: 0.0 });
        let mid = cfg.renorm_limits(2500);
        assert!((mid.r_max - 2.0).abs() < 1e-12 && (mid.d_max - 2.5).abs() < 1e-12);
        assert_eq!(cfg.renorm_limits(50_000), RenormLimits { r_max: 3.0, d_max: 5.0 });
    }

    #[test]
    fn config_round_trips_through_f32() {
        let cfg = ModelConfig::default();
        assert_eq!(ModelConfig::from_f32s(&cfg.to_f32s()).unwrap(), cfg);
    }

    #[test]
    fn prediction_is_valid() {
        let m = Model::<f32>::new(ModelConfig::tiny(), 2).unwrap();
        let lex = Lexicon::bundled();
        let yomi: MoraSeq = "しんそうがくしゅう".parse().unwrap();
        let a = m.predict("深層学習", &yomi, &lex, &SelectionConfig::default()).unwrap();
        assert_eq!(a.len(), yomi.len());
        validate_accent(&a).unwrap();
    }
}
