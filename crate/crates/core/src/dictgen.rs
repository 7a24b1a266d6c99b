//! Word-list to dictionary conversion: rough category classification, accent
//! estimation and analyzer-compatible CSV output.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::LazyLock;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{featurize, select_candidates, Mode, SelectionConfig};
use crate::lexicon::{Lexicon, Pos, COST_MAX, COST_MIN};
use crate::model::Model;
use crate::mora::{parse_kana, render_marked, to_hiragana, AccentedReading, MoraSeq};

macro_rules! categories {
    ($($variant:ident => $text:literal),+ $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(into = "String", try_from = "String")]
        pub enum Category { $($variant),+ }

        impl Category {
            pub const ALL: &'static [Category] = &[$(Category::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $(Category::$variant => $text),+ }
            }
        }

        impl FromStr for Category {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok(Category::$variant),)+
                    _ => Err(Error::InvalidArgument(format!("unknown category {s:?}"))),
                }
            }
        }
    };
}

categories! {
    EmojiSymbol => "emoji-symbol",
    CompanyKk => "company-kk",
    CompanyYk => "company-yk",
    Station => "station",
    Road => "road",
    School => "school",
    Address => "address",
    PersonKatakana => "person-katakana",
    PersonKanjiKana => "person-kanji-kana",
    PersonOther => "person-other",
    Numeral => "numeral",
    Date => "date",
    NumeralLike => "numeral-like",
    KatakanaWords => "katakana-words",
    RomajiSymbols => "romaji-symbols",
    KanjiKana => "kanji-kana",
    KanjiKanaRomaji => "kanji-kana-romaji",
    Other => "other",
    Ignored => "ignored",
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<Category> for String {
    fn from(c: Category) -> String {
        c.as_str().to_string()
    }
}

impl TryFrom<String> for Category {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

const DIGIT: &str = "0-9０-９";
const KANJI_DIGIT: &str = "〇一二三四五六七八九十百千";

/// Ordered (category, pattern) list; the first match wins.
static PATTERNS: LazyLock<Vec<(Category, Regex)>> = LazyLock::new(|| {
    let num = format!("[{DIGIT}{KANJI_DIGIT}]+");
    let table = [
        (Category::EmojiSymbol, r"^[\p{So}\p{Sk}\p{Sm}\p{Sc}\p{P}\s]+$".to_string()),
        (Category::CompanyKk, r"株式会社|\(株\)|（株）|㈱".to_string()),
        (Category::CompanyYk, r"有限会社|\(有\)|（有）|㈲".to_string()),
        (Category::Station, r"..駅$".to_string()),
        (
            Category::Road,
            format!(r"(道路|街道|国道{num}号|通り|自動車道|バイパス|号線)$"),
        ),
        (
            Category::School,
            r"(小学校|中学校|高等学校|高校|大学|学院|学園|専門学校|幼稚園|保育園)$".to_string(),
        ),
        (
            Category::Address,
            r"^\p{Han}{2,3}[都道府県]\p{Han}+[市区町村郡]|\p{Han}+[市区郡]\p{Han}+[町村]|丁目|番地".to_string(),
        ),
        (
            Category::Date,
            format!(r"^(?:{num}年{num}月(?:{num}日)?|{num}月{num}日|{num}年|{num}日)$"),
        ),
        (Category::Numeral, format!(r"^[{DIGIT}{KANJI_DIGIT}万億兆,，.．]+$")),
        (Category::NumeralLike, format!(r"^第|[{DIGIT}]")),
        (Category::PersonKatakana, r"^[\p{Katakana}ー]+[・＝=][\p{Katakana}ー]+$".to_string()),
        (
            Category::PersonOther,
            r"^[A-Z][a-z]+ [A-Z][a-z]+$|(さん|氏|様|ちゃん)$".to_string(),
        ),
        (
            Category::PersonKanjiKana,
            r"^\p{Han}{1,3}[ 　][\p{Han}\p{Hiragana}\p{Katakana}]{1,4}$".to_string(),
        ),
        (Category::KatakanaWords, r"^[\p{Katakana}ー・]+$".to_string()),
        (Category::RomajiSymbols, r"^[A-Za-z][A-Za-z '\-!.&]*$".to_string()),
        (Category::KanjiKana, r"^[\p{Han}\p{Hiragana}\p{Katakana}ー々]+$".to_string()),
        (
            Category::KanjiKanaRomaji,
            r"^[\p{Han}\p{Hiragana}\p{Katakana}ー々・A-Za-zＡ-Ｚａ-ｚ0-9０-９ ]+$".to_string(),
        ),
    ];
    table
        .into_iter()
        .map(|(c, p)| (c, Regex::new(&p).expect("category pattern compiles")))
        .collect()
});

/// Katakana spellings of Sino-Japanese readings: long vowels written with
/// ウ or イ instead of ー.
static NOISY_KATAKANA: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[ァ-ヶ]*(?:[オコゴソゾトドノホボポモヨロョ]ウ|[クグスズツヌフブプムユルュ]ウ|[エケゲセゼテデネヘベペメレ]イ)[ァ-ヶ]*$")
        .unwrap()
});

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Route katakana spellings of kanji words to `Ignored`.
    pub ignore_noisy: bool,
}

pub fn classify_category(surface: &str, yomi: &MoraSeq) -> Category {
    classify_category_with(surface, yomi, &ClassifierConfig::default())
}

pub fn classify_category_with(surface: &str, yomi: &MoraSeq, cfg: &ClassifierConfig) -> Category {
    if cfg.ignore_noisy && NOISY_KATAKANA.is_match(surface) {
        let spelled: String = surface.chars().map(to_hiragana).collect();
        let read: String = yomi.kana().chars().map(to_hiragana).collect();
        if spelled == read {
            return Category::Ignored;
        }
    }
    PATTERNS
        .iter()
        .find(|(_, re)| re.is_match(surface))
        .map_or(Category::Other, |(c, _)| *c)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostConfig {
    pub base: i32,
    pub offsets: BTreeMap<Category, i32>,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            base: 5000,
            offsets: BTreeMap::new(),
        }
    }
}

impl CostConfig {
    /// Parses `category=offset`.
    pub fn set_offset(&mut self, text: &str) -> Result<()> {
        let (cat, off) = text
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected category=offset, got {text:?}")))?;
        let off: i32 = off
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad offset in {text:?}")))?;
        self.offsets.insert(cat.trim().parse()?, off);
        Ok(())
    }
}

/// `base_cost` plus the category offset, clamped to the cost range.
pub fn adjust_cost(base_cost: i32, cat: Category, cfg: &CostConfig) -> i32 {
    let off = cfg.offsets.get(&cat).copied().unwrap_or(0);
    base_cost.saturating_add(off).clamp(COST_MIN, COST_MAX)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub line: usize,
    pub surface: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub input: PathBuf,
    pub output: PathBuf,
    pub accepted: usize,
    pub skipped: Vec<Skipped>,
    pub categories: BTreeMap<Category, usize>,
    pub costs: CostConfig,
    pub classifier: ClassifierConfig,
    pub selection: SelectionConfig,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Predicts an accent for every `surface TAB yomi` row of `wordlist` and
/// writes `surface,left_id,right_id,cost,pos,yomi,marked` rows to `output`
/// in input order, plus a manifest next to it. Rows that cannot be read or
/// analysed are skipped and recorded.
pub fn build_dictionary(
    wordlist: &Path,
    output: &Path,
    model: &Model<f32>,
    lex: &Lexicon,
    selection: &SelectionConfig,
    costs: &CostConfig,
    classifier: &ClassifierConfig,
) -> Result<Manifest> {
    let text = std::fs::read_to_string(wordlist).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(wordlist.to_path_buf()),
        _ => e.into(),
    })?;
    let fallback = lex
        .entries()
        .iter()
        .find(|e| e.pos == Pos::Noun)
        .map_or((0, 0), |e| (e.left_id, e.right_id));
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let mut manifest = Manifest {
        input: wordlist.to_path_buf(),
        output: output.to_path_buf(),
        accepted: 0,
        skipped: Vec::new(),
        categories: BTreeMap::new(),
        costs: costs.clone(),
        classifier: *classifier,
        selection: *selection,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut skip = |surface: &str, reason: String| {
            warn!("{}:{}: skipped {surface:?}: {reason}", wordlist.display(), i + 1);
            manifest.skipped.push(Skipped {
                line: i + 1,
                surface: surface.to_string(),
                reason,
            });
        };
        let cols: Vec<&str> = line.split('\t').collect();
        let [surface, yomi_text] = cols[..] else {
            skip(cols[0], format!("expected 2 columns, found {}", cols.len()));
            continue;
        };
        if surface.is_empty() {
            skip(surface, "empty surface".into());
            continue;
        }
        let hira: String = yomi_text.chars().map(to_hiragana).collect();
        let yomi = match parse_kana(&hira) {
            Ok(y) if !y.is_empty() => y,
            Ok(_) => {
                skip(surface, "empty reading".into());
                continue;
            }
            Err(e) => {
                skip(surface, e.to_string());
                continue;
            }
        };
        let cat = classify_category_with(surface, &yomi, classifier);
        if cat == Category::Ignored {
            skip(surface, "ignored category".into());
            continue;
        }
        let seg = match select_candidates(surface, &yomi, lex, selection, Mode::Infer, &mut rng) {
            Ok(s) => s,
            Err(e) => {
                skip(surface, e.to_string());
                continue;
            }
        };
        let accent = model.predict_features(&featurize(&seg, &yomi))?;
        let (left, right, pos) = match seg.entries.last() {
            Some(e) if !e.is_unknown() => (e.left_id, e.right_id, e.pos),
            _ => (fallback.0, fallback.1, Pos::Noun),
        };
        let marked = render_marked(&AccentedReading { morae: yomi.clone(), accent });
        let cost = adjust_cost(costs.base, cat, costs);
        writer.write_record([
            surface,
            &left.to_string(),
            &right.to_string(),
            &cost.to_string(),
            pos.as_str(),
            &yomi.kana(),
            &marked,
        ])?;
        manifest.accepted += 1;
        *manifest.categories.entry(cat).or_default() += 1;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    std::fs::write(output, bytes)?;
    std::fs::write(manifest_path(output), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(surface: &str) -> Category {
        classify_category(surface, &MoraSeq::default())
    }

    #[test]
    fn examples() {
        assert_eq!(cat("10月21日"), Category::Date);
        assert_eq!(cat("バスケットボールリーグ"), Category::KatakanaWords);
        assert_eq!(cat("xyz!!??"), Category::Other);
        assert_eq!(cat("Python"), Category::RomajiSymbols);
        assert_eq!(cat("深層学習"), Category::KanjiKana);
        assert_eq!(cat("株式会社ほげ"), Category::CompanyKk);
        assert_eq!(cat("有限会社ふが"), Category::CompanyYk);
        assert_eq!(cat("新宿駅"), Category::Station);
        assert_eq!(cat("甲州街道"), Category::Road);
        assert_eq!(cat("東京大学"), Category::School);
        assert_eq!(cat("神奈川県横浜市"), Category::Address);
        assert_eq!(cat("2468"), Category::Numeral);
        assert_eq!(cat("35kg"), Category::NumeralLike);
        assert_eq!(cat("ジョン・スミス"), Category::PersonKatakana);
        assert_eq!(cat("山田 太郎"), Category::PersonKanjiKana);
        assert_eq!(cat("Jane Doe"), Category::PersonOther);
        assert_eq!(cat("♪★"), Category::EmojiSymbol);
        assert_eq!(cat("Tシャツ売り場"), Category::KanjiKanaRomaji);
        assert_eq!(cat(""), Category::Other);
    }

    #[test]
    fn noisy_filter_is_opt_in() {
        let yomi = parse_kana("じんこう").unwrap();
        assert_eq!(classify_category("ジンコウ", &yomi), Category::KatakanaWords);
        let cfg = ClassifierConfig { ignore_noisy: true };
        assert_eq!(classify_category_with("ジンコウ", &yomi, &cfg), Category::Ignored);
        let yomi = parse_kana("ぱいそん").unwrap();
        assert_eq!(classify_category_with("パイソン", &yomi, &cfg), Category::KatakanaWords);
    }

    #[test]
    fn cost_adjustment() {
        let mut cfg = CostConfig::default();
        assert_eq!(adjust_cost(4000, Category::PersonOther, &cfg), 4000);
        cfg.set_offset("person-other=500").unwrap();
        assert_eq!(adjust_cost(4000, Category::PersonOther, &cfg), 4500);
        assert_eq!(adjust_cost(COST_MAX - 10, Category::PersonOther, &cfg), COST_MAX);
        cfg.set_offset("numeral=-70000").unwrap();
        assert_eq!(adjust_cost(0, Category::Numeral, &cfg), COST_MIN);
        assert!(cfg.set_offset("nosuch=1").is_err());
        assert!(cfg.set_offset("numeral").is_err());
    }

    #[test]
    fn category_names_round_trip() {
        for &c in Category::ALL {
            assert_eq!(c.as_str().parse::<Category>().unwrap(), c);
        }
    }
}
