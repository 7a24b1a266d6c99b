//! Morae, readings and the accent-mark notation.
//!
//! A reading (yomi) is a kana string split into morae using the bundled kana
//! table (`data/kana_table.tsv`). An accent is one [`Mark`] per mora, placed on
//! the boundary immediately after that mora. The textual notation writes `[`
//! for a pitch raise and `]` for a pitch fall, e.g. `し[んそうが]くしゅう`.

use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Consonant inventory. Index 0 is "no consonant".
pub const CONSONANTS: &[&str] = &[
    "none", "k", "g", "s", "sh", "z", "j", "t", "ch", "ts", "d", "n", "h", "f", "b", "p", "m",
    "r", "y", "w", "v", "ky", "gy", "ny", "hy", "by", "py", "my", "ry", "ty", "dy", "kw", "gw",
];

/// Size of the consonant feature vocabulary: the consonants plus one
/// pseudo-consonant each for the moraic nasal, the geminate and pauses.
pub const CONSONANT_FEATURES: usize = CONSONANTS.len() + 3;

/// Size of the vowel feature vocabulary: none, five vowels, five long vowels.
pub const VOWEL_FEATURES: usize = 11;

const KANA_TABLE_SRC: &str = include_str!("../data/kana_table.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Vowel {
    None,
    A,
    I,
    U,
    E,
    O,
}

impl Vowel {
    fn parse(s: &str) -> Option<Vowel> {
        Some(match s {
            "none" => Vowel::None,
            "a" => Vowel::A,
            "i" => Vowel::I,
            "u" => Vowel::U,
            "e" => Vowel::E,
            "o" => Vowel::O,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Vowel::None => "none",
            Vowel::A => "a",
            Vowel::I => "i",
            Vowel::U => "u",
            Vowel::E => "e",
            Vowel::O => "o",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Special {
    Plain,
    /// ん
    Nasal,
    /// っ
    Geminate,
    /// ー, or う extending a preceding o/u
    LongVowel,
    Pause,
}

impl Special {
    fn parse(s: &str) -> Option<Special> {
        Some(match s {
            "plain" => Special::Plain,
            "N" => Special::Nasal,
            "Q" => Special::Geminate,
            "long" => Special::LongVowel,
            "pause" => Special::Pause,
            _ => return None,
        })
    }
}

/// One mora. `kana` keeps the exact input characters so that readings
/// round-trip, including hiragana/katakana choice.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mora {
    pub kana: String,
    pub consonant: u8,
    pub vowel: Vowel,
    pub special: Special,
}

impl Mora {
    /// Stand-in mora used for characters that have no known reading.
    pub fn placeholder() -> Mora {
        Mora {
            kana: "・".to_string(),
            consonant: 0,
            vowel: Vowel::None,
            special: Special::Pause,
        }
    }

    pub fn consonant_name(&self) -> &'static str {
        match self.special {
            Special::Nasal => "N",
            Special::Geminate => "Q",
            Special::Pause => "pau",
            _ => CONSONANTS[self.consonant as usize],
        }
    }

    /// Phonemic identity, ignoring spelling. A long vowel compares equal to
    /// a plain mora with the same vowel.
    pub fn phone(&self) -> (u8, Vowel, Special) {
        let special = match self.special {
            Special::LongVowel => Special::Plain,
            s => s,
        };
        (self.consonant, self.vowel, special)
    }

    pub fn consonant_feature(&self) -> usize {
        let base = CONSONANTS.len();
        match self.special {
            Special::Nasal => base,
            Special::Geminate => base + 1,
            Special::Pause => base + 2,
            _ => self.consonant as usize,
        }
    }

    pub fn vowel_feature(&self) -> usize {
        let v = self.vowel as usize;
        if self.special == Special::LongVowel && v > 0 {
            v + 5
        } else {
            v
        }
    }

    /// Romanized form, for logs and debugging output.
    pub fn romaji(&self) -> String {
        match self.special {
            Special::Nasal => "N".into(),
            Special::Geminate => "Q".into(),
            Special::Pause => "_".into(),
            Special::LongVowel => self.vowel.as_str().into(),
            Special::Plain => {
                let c = CONSONANTS[self.consonant as usize];
                let c = if c == "none" { "" } else { c };
                format!("{c}{}", self.vowel.as_str())
            }
        }
    }
}

/// A reading as a sequence of morae.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MoraSeq(pub Vec<Mora>);

impl MoraSeq {
    pub fn kana(&self) -> String {
        self.0.iter().map(|m| m.kana.as_str()).collect()
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a MoraSeq>) -> MoraSeq {
        MoraSeq(parts.into_iter().flat_map(|p| p.0.iter().cloned()).collect())
    }
}

impl Deref for MoraSeq {
    type Target = [Mora];

    fn deref(&self) -> &[Mora] {
        &self.0
    }
}

impl fmt::Display for MoraSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.kana())
    }
}

impl std::str::FromStr for MoraSeq {
    type Err = Error;

    fn from_str(s: &str) -> Result<MoraSeq> {
        parse_kana(s)
    }
}

#[derive(Debug, Clone, Copy)]
struct TableRow {
    consonant: u8,
    vowel: Vowel,
    special: Special,
}

struct KanaTable {
    rows: HashMap<String, TableRow>,
}

static KANA_TABLE: LazyLock<KanaTable> = LazyLock::new(|| {
    KanaTable::parse(KANA_TABLE_SRC).expect("bundled kana table is well formed")
});

impl KanaTable {
    fn parse(src: &str) -> std::result::Result<KanaTable, String> {
        let mut rows = HashMap::new();
        for (n, line) in src.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(format!("line {}: expected 4 columns", n + 1));
            }
            let consonant = CONSONANTS
                .iter()
                .position(|c| *c == cols[1])
                .ok_or_else(|| format!("line {}: unknown consonant {}", n + 1, cols[1]))?;
            let vowel = Vowel::parse(cols[2]).ok_or_else(|| format!("line {}: bad vowel", n + 1))?;
            let special =
                Special::parse(cols[3]).ok_or_else(|| format!("line {}: bad special", n + 1))?;
            rows.insert(
                cols[0].to_string(),
                TableRow {
                    consonant: consonant as u8,
                    vowel,
                    special,
                },
            );
        }
        Ok(KanaTable { rows })
    }
}

/// Maps katakana to hiragana; everything else is returned unchanged.
pub fn to_hiragana(c: char) -> char {
    match c {
        'ァ'..='ヶ' => char::from_u32(c as u32 - 0x60).unwrap_or(c),
        _ => c,
    }
}

pub fn is_small_kana(c: char) -> bool {
    matches!(
        to_hiragana(c),
        'ぁ' | 'ぃ' | 'ぅ' | 'ぇ' | 'ぉ' | 'ゃ' | 'ゅ' | 'ょ' | 'ゎ'
    )
}

/// Splits a kana string into morae. Digraphs (a base kana followed by a
/// small kana) form one mora; `ー`, and `う` after an o- or u-row mora, become
/// long-vowel morae carrying the preceding vowel.
pub fn parse_kana(text: &str) -> Result<MoraSeq> {
    let table = &*KANA_TABLE;
    let chars: Vec<char> = text.chars().collect();
    let mut out: Vec<Mora> = Vec::with_capacity(chars.len());
    let mut i = 0;
    while i < chars.len() {
        let mut matched = None;
        if i + 1 < chars.len() && is_small_kana(chars[i + 1]) {
            let key: String = [to_hiragana(chars[i]), to_hiragana(chars[i + 1])]
                .iter()
                .collect();
            if let Some(row) = table.rows.get(&key) {
                matched = Some((*row, 2));
            }
        }
        if matched.is_none() {
            let key = to_hiragana(chars[i]).to_string();
            match table.rows.get(&key) {
                Some(row) => matched = Some((*row, 1)),
                None => return Err(Error::NotKana { ch: chars[i], pos: i }),
            }
        }
        let (row, len) = matched.expect("set above");
        let kana: String = chars[i..i + len].iter().collect();
        let prev_vowel = out
            .iter()
            .rev()
            .find(|m| m.vowel != Vowel::None)
            .map(|m| m.vowel);
        let mut mora = Mora {
            kana,
            consonant: row.consonant,
            vowel: row.vowel,
            special: row.special,
        };
        if row.special == Special::LongVowel {
            mora.vowel = prev_vowel.ok_or(Error::DanglingLongVowel { pos: i })?;
        } else if len == 1 && to_hiragana(chars[i]) == 'う' {
            if let Some(prev) = out.last() {
                if matches!(prev.vowel, Vowel::O | Vowel::U)
                    && matches!(prev.special, Special::Plain | Special::LongVowel)
                {
                    mora.vowel = prev.vowel;
                    mora.special = Special::LongVowel;
                }
            }
        }
        out.push(mora);
        i += len;
    }
    Ok(MoraSeq(out))
}

/// A pitch-change mark on the boundary after a mora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mark {
    /// +1, written `[`
    Raise,
    /// −1, written `]`
    Lower,
    /// 0
    Level,
}

impl Mark {
    pub const ALL: [Mark; 3] = [Mark::Raise, Mark::Lower, Mark::Level];

    pub fn value(self) -> i8 {
        match self {
            Mark::Raise => 1,
            Mark::Lower => -1,
            Mark::Level => 0,
        }
    }

    pub fn from_value(v: i8) -> Option<Mark> {
        match v {
            1 => Some(Mark::Raise),
            -1 => Some(Mark::Lower),
            0 => Some(Mark::Level),
            _ => None,
        }
    }

    /// Class index used by the model's output layer: order is (+1, −1, 0).
    pub fn class(self) -> usize {
        match self {
            Mark::Raise => 0,
            Mark::Lower => 1,
            Mark::Level => 2,
        }
    }

    pub fn from_class(c: usize) -> Mark {
        Mark::ALL[c]
    }

    pub fn symbol(self) -> Option<char> {
        match self {
            Mark::Raise => Some('['),
            Mark::Lower => Some(']'),
            Mark::Level => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccentVector(pub Vec<Mark>);

impl AccentVector {
    pub fn level(len: usize) -> AccentVector {
        AccentVector(vec![Mark::Level; len])
    }

    pub fn from_values(values: &[i8]) -> Option<AccentVector> {
        values.iter().map(|&v| Mark::from_value(v)).collect::<Option<Vec<_>>>().map(AccentVector)
    }

    pub fn values(&self) -> Vec<i8> {
        self.0.iter().map(|m| m.value()).collect()
    }
}

impl Deref for AccentVector {
    type Target = [Mark];

    fn deref(&self) -> &[Mark] {
        &self.0
    }
}

/// Checks that nonzero marks alternate in sign. Returns the index of the
/// first mark that repeats the sign of the previous nonzero mark.
pub fn validate_accent(accent: &[Mark]) -> Result<()> {
    let mut last = Mark::Level;
    for (index, &m) in accent.iter().enumerate() {
        if m == Mark::Level {
            continue;
        }
        if m == last {
            return Err(Error::Alternation { index });
        }
        last = m;
    }
    Ok(())
}

/// Drops every nonzero mark whose sign equals the previous surviving nonzero
/// mark, scanning left to right.
pub fn repair_accent(raw: &[Mark]) -> AccentVector {
    let mut last = Mark::Level;
    let out = raw
        .iter()
        .map(|&m| {
            if m == Mark::Level || m == last {
                Mark::Level
            } else {
                last = m;
                m
            }
        })
        .collect();
    AccentVector(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccentedReading {
    pub morae: MoraSeq,
    pub accent: AccentVector,
}

impl AccentedReading {
    pub fn new(morae: MoraSeq, accent: AccentVector) -> Result<AccentedReading> {
        if morae.len() != accent.len() {
            return Err(Error::LengthMismatch {
                expected: morae.len(),
                actual: accent.len(),
            });
        }
        validate_accent(&accent)?;
        Ok(AccentedReading { morae, accent })
    }

    pub fn len(&self) -> usize {
        self.morae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.morae.is_empty()
    }
}

impl fmt::Display for AccentedReading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_marked(self))
    }
}

/// Parses a reading with inline `[`/`]` marks.
pub fn parse_marked(text: &str) -> Result<AccentedReading> {
    let mut plain = String::with_capacity(text.len());
    // (char offset into `plain`, mark, char position in `text`)
    let mut marks: Vec<(usize, Mark, usize)> = Vec::new();
    let mut plain_len = 0;
    for (pos, c) in text.chars().enumerate() {
        match c {
            '[' => marks.push((plain_len, Mark::Raise, pos)),
            ']' => marks.push((plain_len, Mark::Lower, pos)),
            _ => {
                plain.push(c);
                plain_len += 1;
            }
        }
    }
    let morae = parse_kana(&plain)?;
    // mora index by char offset of its end
    let mut end_to_mora = HashMap::with_capacity(morae.len());
    let mut offset = 0;
    for (i, m) in morae.iter().enumerate() {
        offset += m.kana.chars().count();
        end_to_mora.insert(offset, i);
    }
    let mut accent = vec![Mark::Level; morae.len()];
    for (offset, mark, pos) in marks {
        if offset == 0 {
            return Err(Error::Notation {
                pos,
                reason: "mark before the first mora".into(),
            });
        }
        let Some(&i) = end_to_mora.get(&offset) else {
            return Err(Error::Notation {
                pos,
                reason: "mark inside a mora".into(),
            });
        };
        if accent[i] != Mark::Level {
            return Err(Error::Notation {
                pos,
                reason: "two marks on one boundary".into(),
            });
        }
        accent[i] = mark;
    }
    if let Err(Error::Alternation { index }) = validate_accent(&accent) {
        return Err(Error::Notation {
            pos: index,
            reason: format!("repeated {} without the opposite mark", accent[index].symbol().unwrap_or(' ')),
        });
    }
    Ok(AccentedReading {
        morae,
        accent: AccentVector(accent),
    })
}

pub fn render_marked(r: &AccentedReading) -> String {
    let mut out = String::new();
    for (m, a) in r.morae.iter().zip(r.accent.iter()) {
        out.push_str(&m.kana);
        if let Some(c) = a.symbol() {
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn romaji(s: &MoraSeq) -> Vec<String> {
        s.iter().map(|m| m.romaji()).collect()
    }

    #[test]
    fn parses_deep_learning_reading() {
        let m = parse_kana("しんそうがくしゅう").unwrap();
        assert_eq!(romaji(&m), ["shi", "N", "so", "o", "ga", "ku", "shu", "u"]);
        assert_eq!(m.kana(), "しんそうがくしゅう");
    }

    #[test]
    fn empty_and_digraph() {
        assert!(parse_kana("").unwrap().is_empty());
        let m = parse_kana("きょう").unwrap();
        assert_eq!(romaji(&m), ["kyo", "o"]);
        assert_eq!(m[0].kana, "きょ");
    }

    #[test]
    fn katakana_and_long_bar() {
        let m = parse_kana("コーヒー").unwrap();
        assert_eq!(romaji(&m), ["ko", "o", "hi", "i"]);
        assert_eq!(m[1].special, Special::LongVowel);
        assert_eq!(m.kana(), "コーヒー");
        let m = parse_kana("パイソン").unwrap();
        assert_eq!(romaji(&m), ["pa", "i", "so", "N"]);
    }

    #[test]
    fn rejects_non_kana_with_position() {
        match parse_kana("かa") {
            Err(Error::NotKana { ch: 'a', pos: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_kana("ーあ"),
            Err(Error::DanglingLongVowel { pos: 0 })
        ));
    }

    #[test]
    fn marked_examples() {
        let r = parse_marked("さ[け").unwrap();
        assert_eq!(romaji(&r.morae), ["sa", "ke"]);
        assert_eq!(r.accent.values(), [1, 0]);
        let r = parse_marked("た[ま]").unwrap();
        assert_eq!(r.accent.values(), [1, -1]);
        let r = parse_marked("はし").unwrap();
        assert_eq!(r.accent.values(), [0, 0]);
    }

    #[test]
    fn renders_deep_learning() {
        let morae = parse_kana("しんそうがくしゅう").unwrap();
        let accent = AccentVector::from_values(&[1, 0, 0, 0, -1, 0, 0, 0]).unwrap();
        let r = AccentedReading::new(morae, accent).unwrap();
        assert_eq!(render_marked(&r), "し[んそうが]くしゅう");
        assert_eq!(parse_marked("し[んそうが]くしゅう").unwrap(), r);
        let r = AccentedReading::new(
            parse_kana("さけ").unwrap(),
            AccentVector::from_values(&[1, 0]).unwrap(),
        )
        .unwrap();
        assert_eq!(render_marked(&r), "さ[け");
        let r = parse_marked("はし").unwrap();
        assert_eq!(render_marked(&r), "はし");
    }

    #[test]
    fn notation_errors() {
        assert!(matches!(parse_marked("[さけ"), Err(Error::Notation { pos: 0, .. })));
        assert!(matches!(parse_marked("さ[け["), Err(Error::Notation { .. })));
        assert!(matches!(parse_marked("き[ょう"), Err(Error::Notation { .. })));
        assert!(matches!(parse_marked("さ[]け"), Err(Error::Notation { .. })));
    }

    #[test]
    fn validate_examples() {
        use Mark::*;
        assert!(validate_accent(&[Raise, Lower]).is_ok());
        assert!(matches!(
            validate_accent(&[Raise, Raise]),
            Err(Error::Alternation { index: 1 })
        ));
        assert!(validate_accent(&[]).is_ok());
        assert!(validate_accent(&[Lower, Level, Raise, Lower]).is_ok());
    }

    #[test]
    fn repair_examples() {
        use Mark::*;
        assert_eq!(repair_accent(&[Raise, Raise, Lower]).0, [Raise, Level, Lower]);
        assert_eq!(repair_accent(&[Raise, Level, Lower]).0, [Raise, Level, Lower]);
        assert_eq!(repair_accent(&[Level, Level]).0, [Level, Level]);
    }

    #[test]
    fn feature_ids_in_range() {
        let m = parse_kana("しんそうがくしゅうっ・ヴァー").unwrap();
        for mora in m.iter() {
            assert!(mora.consonant_feature() < CONSONANT_FEATURES);
            assert!(mora.vowel_feature() < VOWEL_FEATURES);
        }
    }
}
