//! Packed-batch building blocks with hand-written backward passes.
//!
//! Activations are `rows × channels` matrices holding every position of every
//! sequence in the batch back to back; `Packing` records where each sequence
//! starts so convolutions never read across sequence boundaries.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, NdFloat, Zip};
use num_traits::FromPrimitive;
use rand::RngCore;

pub trait Real: NdFloat + FromPrimitive {}
impl<T: NdFloat + FromPrimitive> Real for T {}

pub fn cast<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("finite constant")
}

pub const KERNEL: usize = 3;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packing {
    offsets: Vec<usize>,
}

impl Packing {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Packing {
        let mut offsets = vec![0];
        for l in lengths {
            offsets.push(offsets.last().unwrap() + l);
        }
        Packing { offsets }
    }

    pub fn rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn sequences(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }
}

pub fn linear<F: Real>(x: &ArrayView2<F>, w: &Array2<F>, b: &Array2<F>) -> Array2<F> {
    let mut y = x.dot(w);
    y += &b.row(0);
    y
}

/// Accumulates weight and bias gradients of `linear` and returns the input
/// gradient.
pub fn linear_backward<F: Real>(
    x: &ArrayView2<F>,
    w: &Array2<F>,
    dy: &Array2<F>,
    dw: &mut Array2<F>,
    db: &mut Array2<F>,
) -> Array2<F> {
    *dw += &x.t().dot(dy);
    let mut dbr = db.row_mut(0);
    dbr += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

/// Kernel-3 dilated windows with zero padding per sequence:
/// row t holds [x[t-d], x[t], x[t+d]].
pub fn im2col<F: Real>(x: &ArrayView2<F>, pack: &Packing, dilation: usize) -> Array2<F> {
    let (rows, c) = x.dim();
    let mut cols = Array2::zeros((rows, KERNEL * c));
    for b in 0..pack.sequences() {
        let r = pack.range(b);
        for t in r.clone() {
            for k in 0..KERNEL {
                let src = t as isize + (k as isize - 1) * dilation as isize;
                if src >= r.start as isize && src < r.end as isize {
                    cols.slice_mut(s![t, k * c..(k + 1) * c]).assign(&x.row(src as usize));
                }
            }
        }
    }
    cols
}

pub fn col2im<F: Real>(dcols: &Array2<F>, pack: &Packing, dilation: usize) -> Array2<F> {
    let (rows, kc) = dcols.dim();
    let c = kc / KERNEL;
    let mut dx = Array2::zeros((rows, c));
    for b in 0..pack.sequences() {
        let r = pack.range(b);
        for t in r.clone() {
            for k in 0..KERNEL {
                let src = t as isize + (k as isize - 1) * dilation as isize;
                if src >= r.start as isize && src < r.end as isize {
                    let mut row = dx.row_mut(src as usize);
                    row += &dcols.slice(s![t, k * c..(k + 1) * c]);
                }
            }
        }
    }
    dx
}

pub fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Moving statistics of one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RenormStats<F> {
    pub mean: Array1<F>,
    pub std: Array1<F>,
}

impl<F: Real> RenormStats<F> {
    pub fn new(width: usize) -> Self {
        RenormStats {
            mean: Array1::zeros(width),
            std: Array1::ones(width),
        }
    }

    pub fn update(&mut self, batch: &RenormStats<F>, momentum: F) {
        let keep = momentum;
        let take = F::one() - momentum;
        Zip::from(&mut self.mean).and(&batch.mean).for_each(|m, &b| *m = keep * *m + take * b);
        Zip::from(&mut self.std).and(&batch.std).for_each(|m, &b| *m = keep * *m + take * b);
    }
}

/// Correction bounds; `r_max = 1, d_max = 0` reduces to batch normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenormLimits {
    pub r_max: f64,
    pub d_max: f64,
}

#[derive(Debug, Clone, Copy)]
pub enum NormMode {
    Batch(RenormLimits),
    Moving,
}

pub struct NormCache<F> {
    xhat: Array2<F>,
    zhat: Array2<F>,
    /// r / sigma_batch, per channel; zero-sized in moving mode.
    scale: Array1<F>,
    pub batch: Option<RenormStats<F>>,
}

/// Returns normalized `z` before the affine step, plus cache.
fn renorm_forward<F: Real>(z: &Array2<F>, stats: &RenormStats<F>, mode: NormMode) -> NormCache<F> {
    match mode {
        NormMode::Moving => {
            let zhat = (z - &stats.mean) / &stats.std;
            NormCache {
                xhat: Array2::zeros((0, 0)),
                zhat,
                scale: Array1::zeros(0),
                batch: None,
            }
        }
        NormMode::Batch(lim) => {
            let n = cast::<F>(z.nrows() as f64);
            let mean = z.sum_axis(Axis(0)) / n;
            let centered = z - &mean;
            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
            let sd = var.mapv(|v| (v + cast(BN_EPS)).sqrt());
            let xhat = &centered / &sd;
            let r_max = cast::<F>(lim.r_max);
            let d_max = cast::<F>(lim.d_max);
            let r = Zip::from(&sd)
                .and(&stats.std)
                .map_collect(|&s, &m| (s / m).max(F::one() / r_max).min(r_max));
            let d = Zip::from(&mean)
                .and(&stats.mean)
                .and(&stats.std)
                .map_collect(|&mu, &mm, &ms| ((mu - mm) / ms).max(-d_max).min(d_max));
            let zhat = &xhat * &r + &d;
            let scale = &r / &sd;
            NormCache {
                xhat,
                zhat,
                scale,
                batch: Some(RenormStats { mean, std: sd }),
            }
        }
    }
}

/// Gradient through the batch-statistics path with r and d held constant.
fn renorm_backward<F: Real>(cache: &NormCache<F>, dzhat: &Array2<F>) -> Array2<F> {
    let n = cast::<F>(dzhat.nrows() as f64);
    let mean_d = dzhat.sum_axis(Axis(0)) / n;
    let mean_dx = (dzhat * &cache.xhat).sum_axis(Axis(0)) / n;
    let mut dz = dzhat - &mean_d;
    dz -= &(&cache.xhat * &mean_dx);
    dz *= &cache.scale;
    dz
}

/// Parameters of one gated convolution layer, borrowed from the model.
pub struct HighwayParams<'a, F> {
    /// (3 * C) × (2 * C); first C outputs are the candidate, last C the gate.
    pub conv: &'a Array2<F>,
    pub gamma: &'a Array2<F>,
    pub beta: &'a Array2<F>,
    pub dilation: usize,
}

pub struct HighwayGrads<'a, F> {
    pub conv: &'a mut Array2<F>,
    pub gamma: &'a mut Array2<F>,
    pub beta: &'a mut Array2<F>,
}

pub struct HighwayCache<F> {
    x: Array2<F>,
    mask: Option<Array2<F>>,
    cols: Array2<F>,
    norm: NormCache<F>,
    cand: Array2<F>,
    gate: Array2<F>,
}

impl<F> HighwayCache<F> {
    pub fn batch_stats(&self) -> Option<&RenormStats<F>> {
        self.norm.batch.as_ref()
    }
}

/// Inverted dropout mask with entries 0 or 1/keep.
pub fn dropout_mask<F: Real>(shape: (usize, usize), rate: f64, rng: &mut dyn RngCore) -> Array2<F> {
    use rand::Rng;
    let keep = 1.0 - rate;
    let scale = cast::<F>(1.0 / keep);
    Array2::from_shape_simple_fn(shape, || if rng.random_bool(keep) { scale } else { F::zero() })
}

/// dropout → dilated conv → renorm → gated mix of candidate and input.
pub fn highway_forward<F: Real>(
    p: &HighwayParams<'_, F>,
    x: Array2<F>,
    pack: &Packing,
    stats: &RenormStats<F>,
    mode: NormMode,
    dropout: Option<(f64, &mut dyn RngCore)>,
) -> (Array2<F>, HighwayCache<F>) {
    let c = x.ncols();
    let mask = match dropout {
        Some((rate, rng)) if rate > 0.0 => Some(dropout_mask::<F>(x.dim(), rate, rng)),
        _ => None,
    };
    let cols = match &mask {
        Some(m) => im2col(&(&x * m).view(), pack, p.dilation),
        None => im2col(&x.view(), pack, p.dilation),
    };
    let z = cols.dot(p.conv);
    let norm = renorm_forward(&z, stats, mode);
    let y = &norm.zhat * &p.gamma.row(0) + &p.beta.row(0);
    let cand = y.slice(s![.., ..c]).to_owned();
    let gate = y.slice(s![.., c..]).mapv(sigmoid);
    let mut out = &gate * &cand;
    Zip::from(&mut out).and(&gate).and(&x).for_each(|o, &g, &xi| *o += (F::one() - g) * xi);
    (
        out,
        HighwayCache {
            x,
            mask,
            cols,
            norm,
            cand,
            gate,
        },
    )
}

pub fn highway_backward<F: Real>(
    p: &HighwayParams<'_, F>,
    g: HighwayGrads<'_, F>,
    cache: &HighwayCache<F>,
    dout: &Array2<F>,
    pack: &Packing,
) -> Array2<F> {
    let c = dout.ncols();
    let rows = dout.nrows();
    let mut dy = Array2::zeros((rows, 2 * c));
    Zip::from(dy.slice_mut(s![.., ..c]))
        .and(dout)
        .and(&cache.gate)
        .for_each(|d, &o, &gt| *d = o * gt);
    Zip::from(dy.slice_mut(s![.., c..]))
        .and(dout)
        .and(&cache.gate)
        .and(&cache.cand)
        .and(&cache.x)
        .for_each(|d, &o, &gt, &h, &xi| *d = o * (h - xi) * gt * (F::one() - gt));
    let mut dx = Zip::from(dout).and(&cache.gate).map_collect(|&o, &gt| o * (F::one() - gt));

    {
        let mut dgamma = g.gamma.row_mut(0);
        dgamma += &(&dy * &cache.norm.zhat).sum_axis(Axis(0));
        let mut dbeta = g.beta.row_mut(0);
        dbeta += &dy.sum_axis(Axis(0));
    }
    let dzhat = &dy * &p.gamma.row(0);
    let dz = renorm_backward(&cache.norm, &dzhat);
    *g.conv += &cache.cols.t().dot(&dz);
    let dcols = dz.dot(&p.conv.t());
    let mut dxin = col2im(&dcols, pack, p.dilation);
    if let Some(m) = &cache.mask {
        dxin *= m;
    }
    dx += &dxin;
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn im2col_respects_sequence_bounds() {
        let x = array![[1.0], [2.0], [3.0], [4.0], [5.0]];
        let pack = Packing::from_lengths([3, 2]);
        let cols = im2col(&x.view(), &pack, 1);
        assert_eq!(
            cols,
            array![[0.0, 1.0, 2.0], [1.0, 2.0, 3.0], [2.0, 3.0, 0.0], [0.0, 4.0, 5.0], [4.0, 5.0, 0.0]]
        );
        let cols3 = im2col(&x.view(), &pack, 3);
        assert_eq!(cols3.column(0).to_vec(), [0.0; 5]);
        assert_eq!(cols3.column(2).to_vec(), [0.0; 5]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let pack = Packing::from_lengths([4, 3]);
        let x = Array2::from_shape_fn((7, 2), |(i, j)| (i * 2 + j) as f64 * 0.1 - 0.3);
        let y = Array2::from_shape_fn((7, 6), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        for d in [1, 3] {
            let lhs = (&im2col(&x.view(), &pack, d) * &y).sum();
            let rhs = (&x * &col2im(&y, &pack, d)).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn moving_update() {
        let mut s = RenormStats::<f64>::new(2);
        let b = RenormStats {
            mean: array![1.0, -1.0],
            std: array![3.0, 1.0],
        };
        s.update(&b, 0.99);
        assert!((s.mean[0] - 0.01).abs() < 1e-12);
        assert!((s.std[0] - 1.02).abs() < 1e-12);
        assert!((s.std[1] - 1.0).abs() < 1e-12);
    }
}
