use accent_core::dictgen::classify_category;
use accent_core::features::{featurize, levenshtein, select_candidates, Mode, SelectionConfig};
use accent_core::lattice::{build_lattice, nbest};
use accent_core::lexicon::Lexicon;
use accent_core::metrics::{evaluate, EvalItem};
use accent_core::model::{Model, ModelConfig, Pass};
use accent_core::mora::{
    parse_kana, parse_marked, render_marked, repair_accent, validate_accent, AccentedReading, Mark, MoraSeq,
};
use accent_core::sagisaka::{compound_accent, noun_pool, synthesize, Rule};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const KANA: &[&str] = &[
    "あ", "い", "う", "か", "き", "しゃ", "ちゅ", "ん", "っ", "ー", "が", "ぱ", "ふぁ", "を", "ヴ", "ジョ",
];

fn mark() -> impl Strategy<Value = Mark> {
    prop_oneof![Just(Mark::Raise), Just(Mark::Lower), Just(Mark::Level)]
}

/// Parseable mora sequences: the first mora is never a bar or small tsu.
fn morae(max: usize) -> impl Strategy<Value = MoraSeq> {
    (0usize..4, prop::collection::vec(0..KANA.len(), 0..max)).prop_map(|(head, rest)| {
        let text: String = std::iter::once(KANA[head]).chain(rest.into_iter().map(|i| KANA[i])).collect();
        parse_kana(&text).unwrap()
    })
}

fn reading(max: usize) -> impl Strategy<Value = AccentedReading> {
    morae(max).prop_flat_map(|m| {
        let n = m.len();
        prop::collection::vec(mark(), n).prop_map(move |raw| AccentedReading {
            morae: m.clone(),
            accent: repair_accent(&raw),
        })
    })
}

fn eval_items() -> impl Strategy<Value = Vec<EvalItem>> {
    let item = (1usize..9).prop_flat_map(|n| {
        (
            prop::collection::vec(mark(), n),
            prop::collection::vec(mark(), n),
            prop::sample::select(vec!["a", "b", "c"]),
        )
            .prop_map(|(p, g, c)| EvalItem {
                predicted: repair_accent(&p).0,
                gold: repair_accent(&g).0,
                category: c.to_string(),
            })
    });
    prop::collection::vec(item, 1..20)
}

proptest! {
    #[test]
    fn marked_notation_round_trips(r in reading(10)) {
        let text = render_marked(&r);
        prop_assert_eq!(parse_marked(&text).unwrap(), r);
    }

    #[test]
    fn repair_always_validates(raw in prop::collection::vec(mark(), 0..20)) {
        let fixed = repair_accent(&raw);
        prop_assert!(validate_accent(&fixed.0).is_ok());
        prop_assert_eq!(fixed.len(), raw.len());
    }

    #[test]
    fn edit_distance_is_a_metric(a in morae(8), b in morae(8), c in morae(8)) {
        let (ab, ba) = (levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert!(ab <= a.len().max(b.len()));
        prop_assert!(ab >= a.len().abs_diff(b.len()));
        prop_assert!(ab <= levenshtein(&a, &c) + levenshtein(&c, &b));
    }

    #[test]
    fn exact_match_rate_one_iff_zero_hamming(items in eval_items()) {
        let r = evaluate(&items).unwrap();
        prop_assert_eq!(r.emr() == 1.0, r.ahd() == 0.0);
        let longest = items.iter().map(|i| i.gold.len()).max().unwrap();
        prop_assert!(r.ahd() <= longest as f64);
        prop_assert!((0.0..=1.0).contains(&r.emr()));
    }

    #[test]
    fn metrics_ignore_item_order(items in eval_items(), seed in any::<u64>()) {
        let mut shuffled = items.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut rng);
        prop_assert_eq!(evaluate(&items).unwrap(), evaluate(&shuffled).unwrap());
    }

    #[test]
    fn classifier_is_total(surface in "\\PC{0,12}", yomi in morae(6)) {
        let name = classify_category(&surface, &yomi).to_string();
        prop_assert!(!name.is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn synthesized_compounds_are_consistent(seed in any::<u64>(), quad in any::<bool>()) {
        let lex = Lexicon::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rule = if quad { Rule::Quad } else { Rule::Pair };
        let s = synthesize(&mut rng, &lex, rule).unwrap();
        prop_assert_eq!(s.accent.len(), s.yomi.len());
        prop_assert!(validate_accent(&s.accent.0).is_ok());
        prop_assert_eq!(parse_marked(&s.marked()).unwrap().morae, s.yomi.clone());
    }

    #[test]
    fn compound_accent_spans_both_words(i in 0usize..1000, j in 0usize..1000) {
        let lex = Lexicon::bundled();
        let pool = noun_pool(&lex);
        let (front, rear) = (pool[i % pool.len()], pool[j % pool.len()]);
        let acc = compound_accent(&front.reading(), rear).unwrap();
        prop_assert_eq!(acc.len(), front.yomi.len() + rear.yomi.len());
        prop_assert!(validate_accent(&acc.0).is_ok());
    }

    #[test]
    fn nbest_is_sorted_and_costed(idx in prop::collection::vec(0usize..400, 1..4)) {
        let lex = Lexicon::bundled();
        let surface: String = idx.iter().map(|&i| lex.entries()[i % lex.len()].surface.as_str()).collect();
        let paths = nbest(&build_lattice(&surface, &lex).unwrap(), 10).unwrap();
        prop_assert!(!paths.is_empty());
        for (k, p) in paths.iter().enumerate() {
            prop_assert_eq!(p.rank, k + 1);
            prop_assert_eq!(p.surface(), surface.clone());
            prop_assert_eq!(p.recompute_cost(&lex).unwrap(), p.total_cost);
        }
        prop_assert!(paths.windows(2).all(|w| w[0].total_cost <= w[1].total_cost));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_rows_are_distributions_and_predictions_valid(
        idx in prop::collection::vec(0usize..400, 1..3),
        seed in 0u64..4,
    ) {
        let lex = Lexicon::bundled();
        let entries: Vec<_> = idx.iter().map(|&i| &lex.entries()[i % lex.len()]).collect();
        let surface: String = entries.iter().map(|e| e.surface.as_str()).collect();
        let yomi = MoraSeq::concat(entries.iter().map(|e| &e.yomi));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seg = select_candidates(&surface, &yomi, &lex, &SelectionConfig::default(), Mode::Infer, &mut rng).unwrap();
        let fp = featurize(&seg, &yomi);
        let model = Model::<f32>::new(ModelConfig::tiny(), seed).unwrap();
        let (out, _) = model.forward(&[&fp], Pass::Infer).unwrap();
        let attn = &out.attention[0];
        prop_assert_eq!(attn.dim(), (fp.yomi.len(), fp.surface.len()));
        for row in attn.rows() {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.sum() - 1.0).abs() < 1e-5);
        }
        let acc = model.predict(&surface, &yomi, &lex, &SelectionConfig::default()).unwrap();
        prop_assert_eq!(acc.len(), yomi.len());
        prop_assert!(validate_accent(&acc.0).is_ok());
    }
}
