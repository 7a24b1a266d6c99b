use std::path::Path;

use accent_core::dictgen::{build_dictionary, manifest_path, Category, ClassifierConfig, CostConfig, Manifest};
use accent_core::features::SelectionConfig;
use accent_core::lexicon::{load_lexicon, Lexicon};
use accent_core::model::{Model, ModelConfig};
use accent_core::mora::parse_marked;

fn build(words: &str, costs: &CostConfig, classifier: &ClassifierConfig) -> (tempfile::TempDir, Manifest, String) {
    let dir = tempfile::tempdir().unwrap();
    let list = dir.path().join("words.tsv");
    std::fs::write(&list, words).unwrap();
    let out = dir.path().join("dict.csv");
    let model = Model::<f32>::new(ModelConfig::tiny(), 0).unwrap();
    let manifest = build_dictionary(
        &list,
        &out,
        &model,
        &Lexicon::bundled(),
        &SelectionConfig::default(),
        costs,
        classifier,
    )
    .unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    (dir, manifest, text)
}

#[test]
fn three_words_give_three_parseable_rows() {
    let (dir, manifest, text) = build(
        "機械学習\tきかいがくしゅう\nPython\tパイソン\n10月21日\tじゅうがつにじゅういちにち\n",
        &CostConfig::default(),
        &ClassifierConfig::default(),
    );
    assert_eq!(manifest.accepted, 3);
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert_eq!(row.len(), 7);
        let r = parse_marked(row[6]).unwrap();
        assert_eq!(r.morae.kana(), row[5]);
    }
    // readings are stored in hiragana
    assert_eq!(rows[1][5], "ぱいそん");
    assert_eq!(manifest.categories[&Category::Date], 1);
    let saved: Manifest = serde_json::from_str(&std::fs::read_to_string(manifest_path(&dir.path().join("dict.csv"))).unwrap()).unwrap();
    assert_eq!(saved, manifest);
}

#[test]
fn unreadable_rows_are_skipped_with_their_line() {
    let words = "# comment\n酒\tさけ\nIEEE\tIEEE\n\n鮭\n富士\tふじ\n";
    let (dir, manifest, text) = build(words, &CostConfig::default(), &ClassifierConfig::default());
    assert_eq!(manifest.accepted, 2);
    let skipped: Vec<(usize, &str)> = manifest.skipped.iter().map(|s| (s.line, s.surface.as_str())).collect();
    assert_eq!(skipped, [(3, "IEEE"), (5, "鮭")]);
    assert_eq!(text.lines().count(), 2);
    let reloaded = load_lexicon(&dir.path().join("dict.csv")).unwrap();
    let surfaces: Vec<&str> = reloaded.entries().iter().map(|e| e.surface.as_str()).collect();
    assert_eq!(surfaces, ["酒", "富士"]);
}

#[test]
fn category_offsets_and_noisy_filter_apply() {
    let mut costs = CostConfig {
        base: 6000,
        ..Default::default()
    };
    costs.set_offset("date=-1000").unwrap();
    let classifier = ClassifierConfig { ignore_noisy: true };
    let (_dir, manifest, text) = build(
        "10月21日\tじゅうがつにじゅういちにち\nジンコウ\tじんこう\n電気\tでんき\n",
        &costs,
        &classifier,
    );
    let costs: Vec<&str> = text.lines().map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(costs, ["5000", "6000"]);
    assert_eq!(manifest.skipped.len(), 1);
    assert_eq!(manifest.skipped[0].surface, "ジンコウ");
}

#[test]
fn missing_word_list_is_reported() {
    let model = Model::<f32>::new(ModelConfig::tiny(), 0).unwrap();
    let err = build_dictionary(
        Path::new("/nonexistent/words.tsv"),
        Path::new("/tmp/unused.csv"),
        &model,
        &Lexicon::bundled(),
        &SelectionConfig::default(),
        &CostConfig::default(),
        &ClassifierConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, accent_core::Error::FileNotFound(_)), "{err}");
}
