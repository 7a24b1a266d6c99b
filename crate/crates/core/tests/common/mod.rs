//! Helpers shared by integration tests.
#![allow(dead_code)]

use accent_core::features::{featurize, select_candidates, FeaturePair, Mode, SelectionConfig};
use accent_core::lexicon::Lexicon;
use accent_core::model::{Model, ModelConfig};
use accent_core::mora::{parse_marked, Mark};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Featurized (surface, marked reading) pairs under inference selection.
pub fn featurized(lex: &Lexicon, items: &[(&str, &str)]) -> Vec<(FeaturePair, Vec<Mark>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    items
        .iter()
        .map(|(surface, marked)| {
            let r = parse_marked(marked).unwrap();
            let seg = select_candidates(surface, &r.morae, lex, &SelectionConfig::default(), Mode::Infer, &mut rng)
                .unwrap();
            (featurize(&seg, &r.morae), r.accent.0)
        })
        .collect()
}

pub struct GradCheck {
    pub checked: usize,
    pub failures: Vec<String>,
    pub worst_relative: f64,
}

/// Central differences of the training-mode batch loss at step 0 with a
/// fixed dropout stream, compared with the analytic gradient entry by entry.
/// An entry passes when |a - n| <= tol * max(|a|, |n|) or |a - n| < floor.
pub fn gradient_check(
    config: ModelConfig,
    seed: u64,
    batch: &[(FeaturePair, Vec<Mark>)],
    h: f64,
    tol: f64,
    floor: f64,
) -> GradCheck {
    let mut model = Model::<f64>::new(config, seed).unwrap();
    let refs: Vec<(&FeaturePair, &[Mark])> = batch.iter().map(|(f, g)| (f, g.as_slice())).collect();
    let loss_of = |m: &Model<f64>| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        m.loss_and_gradients(&refs, 0, &mut rng).unwrap()
    };
    let analytic = loss_of(&model).grads;
    let mut out = GradCheck {
        checked: 0,
        failures: Vec::new(),
        worst_relative: 0.0,
    };
    for t in 0..model.params.len() {
        for idx in 0..model.params[t].len() {
            let (r, c) = (idx / model.params[t].ncols(), idx % model.params[t].ncols());
            let orig = model.params[t][[r, c]];
            model.params[t][[r, c]] = orig + h;
            let up = loss_of(&model).loss;
            model.params[t][[r, c]] = orig - h;
            let down = loss_of(&model).loss;
            model.params[t][[r, c]] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[t][[r, c]];
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            out.checked += 1;
            if diff >= floor {
                out.worst_relative = out.worst_relative.max(diff / scale);
            }
            if !(diff <= tol * scale || diff < floor) {
                out.failures
                    .push(format!("{}[{r},{c}]: analytic {a:e} numeric {numeric:e}", model.names()[t]));
            }
        }
    }
    out
}

/// Two examples with at most six morae on each side.
pub fn gradcheck_batch(lex: &Lexicon) -> Vec<(FeaturePair, Vec<Mark>)> {
    featurized(lex, &[("一日", "い[ちにち]"), ("千秋", "せ[んしゅう")])
}
