//! Dictionary entries, prefix lookup and connection costs.
//!
//! Lexicon files are tab-separated with the columns
//! `surface yomi accent pos goshu sandhi left_id right_id cost`, where
//! `accent` is the marked reading (`い[ち]`). Lines starting with `#` are
//! comments. Files with a `.csv` extension are read in the analyzer layout
//! written by the dictionary builder: `surface,left_id,right_id,cost,pos,yomi,accent`.
//!
//! The connection matrix is a dense text file: a `R L` header followed by
//! `R * L` integers in row-major order, indexed by (right id of the previous
//! entry, left id of the next entry). Context id 0 is used for sentence
//! boundaries and unknown words.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mora::{parse_kana, parse_marked, render_marked, AccentVector, AccentedReading, Mora, MoraSeq};

pub const COST_MIN: i32 = i16::MIN as i32;
pub const COST_MAX: i32 = i16::MAX as i32;

/// File name of the connection matrix looked up next to a lexicon file.
pub const MATRIX_FILE: &str = "matrix.def";

const BUNDLED_LEXICON: &str = include_str!("../data/mini_lexicon.tsv");
const BUNDLED_MATRIX: &str = include_str!("../data/matrix.def");

macro_rules! vocab {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            pub fn id(self) -> usize {
                self as usize
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("unknown {} {:?}", stringify!($name), s)),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

vocab!(
    /// Part of speech. `Unknown` is only produced by unknown-word templates.
    Pos {
        Noun => "noun",
        ProperNoun => "proper-noun",
        GivenName => "given-name",
        Surname => "surname",
        PlaceName => "place-name",
        Numeral => "numeral",
        Counter => "counter",
        Suffix => "suffix",
        Prefix => "prefix",
        Particle => "particle",
        Verb => "verb",
        Adjective => "adjective",
        Symbol => "symbol",
        Unknown => "unk",
    }
);

vocab!(
    /// Word origin.
    Goshu {
        Native => "native",
        Sino => "sino",
        Western => "western",
        Mixed => "mixed",
        Proper => "proper",
        Symbol => "symbol",
        Unknown => "unk",
    }
);

vocab!(
    /// Accent sandhi class of an entry when it is the rear part of a compound.
    Sandhi {
        C1 => "C1",
        C2 => "C2",
        C3 => "C3",
        C4 => "C4",
        C5 => "C5",
        None => "none",
        Unknown => "unk",
    }
);

impl Pos {
    pub fn is_noun(self) -> bool {
        matches!(
            self,
            Pos::Noun | Pos::ProperNoun | Pos::GivenName | Pos::Surname | Pos::PlaceName
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LexEntry {
    /// Row index in the lexicon; unknown-word nodes use ids from
    /// [`UNKNOWN_ID_BASE`] upward.
    pub id: u32,
    pub surface: String,
    pub yomi: MoraSeq,
    pub accent: AccentVector,
    pub pos: Pos,
    pub goshu: Goshu,
    pub sandhi: Sandhi,
    pub left_id: u16,
    pub right_id: u16,
    pub cost: i32,
}

impl LexEntry {
    pub fn reading(&self) -> AccentedReading {
        AccentedReading {
            morae: self.yomi.clone(),
            accent: self.accent.clone(),
        }
    }

    pub fn is_unknown(&self) -> bool {
        self.id >= UNKNOWN_ID_BASE
    }

    pub fn char_len(&self) -> usize {
        self.surface.chars().count()
    }
}

pub const UNKNOWN_ID_BASE: u32 = u32::MAX - 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CharClass {
    Kanji,
    Hiragana,
    Katakana,
    Latin,
    Digit,
    Symbol,
}

impl CharClass {
    pub fn of(c: char) -> CharClass {
        match c {
            '\u{4E00}'..='\u{9FFF}' | '\u{3400}'..='\u{4DBF}' | '々' | '〆' | 'ヶ' => CharClass::Kanji,
            '\u{3041}'..='\u{309F}' => CharClass::Hiragana,
            '\u{30A1}'..='\u{30FA}' | 'ー' | '\u{FF66}'..='\u{FF9D}' => CharClass::Katakana,
            'a'..='z' | 'A'..='Z' | 'ａ'..='ｚ' | 'Ａ'..='Ｚ' => CharClass::Latin,
            '0'..='9' | '０'..='９' => CharClass::Digit,
            _ => CharClass::Symbol,
        }
    }
}

/// Cost and context ids assigned to unknown-word nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnknownTemplate {
    pub left_id: u16,
    pub right_id: u16,
    pub cost: i32,
}

impl Default for UnknownTemplate {
    fn default() -> Self {
        UnknownTemplate {
            left_id: 0,
            right_id: 0,
            cost: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionMatrix {
    rights: usize,
    lefts: usize,
    costs: Vec<i32>,
}

impl ConnectionMatrix {
    pub fn zeros(rights: usize, lefts: usize) -> ConnectionMatrix {
        ConnectionMatrix {
            rights,
            lefts,
            costs: vec![0; rights * lefts],
        }
    }

    pub fn parse(src: &str) -> std::result::Result<ConnectionMatrix, String> {
        let mut tokens = src.split_whitespace();
        let mut next = |what: &str| -> std::result::Result<i64, String> {
            tokens
                .next()
                .ok_or_else(|| format!("missing {what}"))?
                .parse::<i64>()
                .map_err(|e| format!("{what}: {e}"))
        };
        let rights = next("row count")?;
        let lefts = next("column count")?;
        if rights <= 0 || lefts <= 0 || rights > u16::MAX as i64 || lefts > u16::MAX as i64 {
            return Err("matrix dimensions out of range".into());
        }
        let (rights, lefts) = (rights as usize, lefts as usize);
        let mut costs = Vec::with_capacity(rights * lefts);
        for i in 0..rights * lefts {
            let v = next(&format!("cell {i}"))?;
            costs.push(i32::try_from(v).map_err(|e| format!("cell {i}: {e}"))?);
        }
        if tokens.next().is_some() {
            return Err("trailing data after matrix".into());
        }
        Ok(ConnectionMatrix {
            rights,
            lefts,
            costs,
        })
    }

    pub fn get(&self, right_id: u16, left_id: u16) -> Result<i32> {
        let (r, l) = (right_id as usize, left_id as usize);
        if r >= self.rights || l >= self.lefts {
            return Err(Error::UnknownConnection {
                right: right_id,
                left: left_id,
            });
        }
        Ok(self.costs[r * self.lefts + l])
    }

    pub fn set(&mut self, right_id: u16, left_id: u16, cost: i32) -> Result<()> {
        let (r, l) = (right_id as usize, left_id as usize);
        if r >= self.rights || l >= self.lefts {
            return Err(Error::UnknownConnection {
                right: right_id,
                left: left_id,
            });
        }
        self.costs[r * self.lefts + l] = cost;
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rights, self.lefts)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.rights, self.lefts);
        for row in self.costs.chunks(self.lefts) {
            let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Default, Clone)]
struct TrieNode {
    children: HashMap<char, usize>,
    entries: Vec<u32>,
}

/// Character trie over entry surfaces.
#[derive(Debug, Clone)]
struct PrefixIndex {
    nodes: Vec<TrieNode>,
}

impl PrefixIndex {
    fn new() -> Self {
        PrefixIndex {
            nodes: vec![TrieNode::default()],
        }
    }

    fn insert(&mut self, key: &str, id: u32) {
        let mut cur = 0;
        for c in key.chars() {
            cur = match self.nodes[cur].children.get(&c) {
                Some(&n) => n,
                None => {
                    self.nodes.push(TrieNode::default());
                    let n = self.nodes.len() - 1;
                    self.nodes[cur].children.insert(c, n);
                    n
                }
            };
        }
        self.nodes[cur].entries.push(id);
    }

    /// Calls `f(entry_id, span)` for every key that is a prefix of `text`.
    fn common_prefixes(&self, text: &[char], mut f: impl FnMut(u32, usize)) {
        let mut cur = 0;
        for (i, c) in text.iter().enumerate() {
            match self.nodes[cur].children.get(c) {
                Some(&n) => cur = n,
                None => return,
            }
            for &id in &self.nodes[cur].entries {
                f(id, i + 1);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<LexEntry>,
    index: PrefixIndex,
    matrix: ConnectionMatrix,
    unknown: UnknownTemplate,
}

impl Lexicon {
    /// Builds a lexicon, checking that every context id used by an entry or
    /// by the unknown template is covered by the matrix.
    pub fn new(
        mut entries: Vec<LexEntry>,
        matrix: ConnectionMatrix,
        unknown: UnknownTemplate,
    ) -> Result<Lexicon> {
        let (rights, lefts) = matrix.dims();
        let mut index = PrefixIndex::new();
        for (i, e) in entries.iter_mut().enumerate() {
            e.id = i as u32;
            if e.right_id as usize >= rights || e.left_id as usize >= lefts {
                return Err(Error::UnknownConnection {
                    right: e.right_id,
                    left: e.left_id,
                });
            }
            index.insert(&e.surface, e.id);
        }
        if unknown.right_id as usize >= rights || unknown.left_id as usize >= lefts {
            return Err(Error::UnknownConnection {
                right: unknown.right_id,
                left: unknown.left_id,
            });
        }
        Ok(Lexicon {
            entries,
            index,
            matrix,
            unknown,
        })
    }

    /// The mini-lexicon and matrix shipped with the crate.
    pub fn bundled() -> Lexicon {
        let entries = parse_tsv(BUNDLED_LEXICON, Path::new("<bundled>"))
            .expect("bundled lexicon parses");
        let matrix = ConnectionMatrix::parse(BUNDLED_MATRIX).expect("bundled matrix parses");
        Lexicon::new(entries, matrix, UnknownTemplate::default()).expect("bundled lexicon is consistent")
    }

    pub fn entries(&self) -> &[LexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn matrix(&self) -> &ConnectionMatrix {
        &self.matrix
    }

    pub fn unknown_template(&self) -> UnknownTemplate {
        self.unknown
    }

    pub fn connection_cost(&self, right_id: u16, left_id: u16) -> Result<i32> {
        self.matrix.get(right_id, left_id)
    }

    /// Entries whose surface is a prefix of `text[pos..]`, with their span in
    /// characters. When no entry starts at `pos`, a single unknown-word node
    /// covering the run of same-class characters is returned instead.
    pub fn prefix_lookup_chars(&self, text: &[char], pos: usize) -> Result<Vec<(Cow<'_, LexEntry>, usize)>> {
        if pos >= text.len() {
            return Err(Error::OutOfRange { pos, len: text.len() });
        }
        let mut out = Vec::new();
        self.index.common_prefixes(&text[pos..], |id, span| {
            out.push((Cow::Borrowed(&self.entries[id as usize]), span));
        });
        if out.is_empty() {
            let entry = self.unknown_entry(text, pos);
            let span = entry.char_len();
            out.push((Cow::Owned(entry), span));
        }
        Ok(out)
    }

    pub fn prefix_lookup(&self, surface: &str, pos: usize) -> Result<Vec<(Cow<'_, LexEntry>, usize)>> {
        let chars: Vec<char> = surface.chars().collect();
        self.prefix_lookup_chars(&chars, pos)
    }

    fn unknown_entry(&self, text: &[char], pos: usize) -> LexEntry {
        let class = CharClass::of(text[pos]);
        let end = text[pos..]
            .iter()
            .position(|&c| CharClass::of(c) != class)
            .map_or(text.len(), |n| pos + n);
        let surface: String = text[pos..end].iter().collect();
        let yomi = match class {
            CharClass::Hiragana | CharClass::Katakana => parse_kana(&surface).ok(),
            _ => None,
        }
        .unwrap_or_else(|| MoraSeq(vec![Mora::placeholder(); end - pos]));
        LexEntry {
            id: UNKNOWN_ID_BASE + class as u32,
            accent: AccentVector::level(yomi.len()),
            surface,
            yomi,
            pos: Pos::Unknown,
            goshu: Goshu::Unknown,
            sandhi: Sandhi::Unknown,
            left_id: self.unknown.left_id,
            right_id: self.unknown.right_id,
            cost: self.unknown.cost,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# surface\tyomi\taccent\tpos\tgoshu\tsandhi\tleft_id\tright_id\tcost\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.surface,
                e.yomi.kana(),
                render_marked(&e.reading()),
                e.pos,
                e.goshu,
                e.sandhi,
                e.left_id,
                e.right_id,
                e.cost
            ));
        }
        out
    }

    /// Writes the entries as TSV at `path` and the matrix as `matrix.def`
    /// next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        fs::write(matrix_path_for(path), self.matrix.to_text())?;
        Ok(())
    }
}

fn matrix_path_for(path: &Path) -> PathBuf {
    path.parent()
        .map_or_else(|| PathBuf::from(MATRIX_FILE), |p| p.join(MATRIX_FILE))
}

/// Loads a lexicon file. A `matrix.def` next to the file is used when
/// present; otherwise the matrix is all zeros, sized to the largest context
/// id in use.
pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::FileNotFound(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let entries = if is_csv {
        parse_csv(&text, path)?
    } else {
        parse_tsv(&text, path)?
    };
    let matrix_path = matrix_path_for(path);
    let matrix = if matrix_path.is_file() {
        let src = fs::read_to_string(&matrix_path)?;
        ConnectionMatrix::parse(&src).map_err(|reason| Error::Malformed {
            path: matrix_path.clone(),
            line: 1,
            reason,
        })?
    } else {
        let max_id = entries
            .iter()
            .flat_map(|e| [e.left_id, e.right_id])
            .max()
            .unwrap_or(0) as usize;
        ConnectionMatrix::zeros(max_id + 1, max_id + 1)
    };
    Lexicon::new(entries, matrix, UnknownTemplate::default())
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

struct RawRow<'a> {
    surface: &'a str,
    yomi: &'a str,
    accent: &'a str,
    pos: &'a str,
    goshu: &'a str,
    sandhi: &'a str,
    left_id: &'a str,
    right_id: &'a str,
    cost: &'a str,
}

fn build_entry(row: RawRow<'_>, path: &Path, line: usize) -> Result<LexEntry> {
    let bad = |reason: String| malformed(path, line, reason);
    if row.surface.is_empty() {
        return Err(bad("empty surface".into()));
    }
    let yomi = parse_kana(row.yomi).map_err(|e| bad(format!("yomi: {e}")))?;
    let reading = parse_marked(row.accent).map_err(|e| bad(format!("accent: {e}")))?;
    if reading.morae.len() != yomi.len() {
        return Err(bad(format!(
            "accent/yomi length mismatch ({} vs {} morae)",
            reading.morae.len(),
            yomi.len()
        )));
    }
    if reading.morae.kana() != yomi.kana() {
        return Err(bad("accent reading does not spell the yomi".into()));
    }
    let pos = row.pos.parse::<Pos>().map_err(bad)?;
    let goshu = row.goshu.parse::<Goshu>().map_err(bad)?;
    let sandhi = row.sandhi.parse::<Sandhi>().map_err(bad)?;
    let left_id = row.left_id.parse::<u16>().map_err(|e| bad(format!("left_id: {e}")))?;
    let right_id = row.right_id.parse::<u16>().map_err(|e| bad(format!("right_id: {e}")))?;
    let cost = row.cost.parse::<i32>().map_err(|e| bad(format!("cost: {e}")))?;
    if !(COST_MIN..=COST_MAX).contains(&cost) {
        return Err(bad(format!("cost {cost} out of range")));
    }
    Ok(LexEntry {
        id: 0,
        surface: row.surface.to_string(),
        yomi,
        accent: reading.accent,
        pos,
        goshu,
        sandhi,
        left_id,
        right_id,
        cost,
    })
}

fn parse_tsv(text: &str, path: &Path) -> Result<Vec<LexEntry>> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 9 {
            return Err(malformed(path, line_no, format!("expected 9 columns, found {}", cols.len())));
        }
        let row = RawRow {
            surface: cols[0],
            yomi: cols[1],
            accent: cols[2],
            pos: cols[3],
            goshu: cols[4],
            sandhi: cols[5],
            left_id: cols[6],
            right_id: cols[7],
            cost: cols[8],
        };
        entries.push(build_entry(row, path, line_no)?);
    }
    Ok(entries)
}

fn parse_csv(text: &str, path: &Path) -> Result<Vec<LexEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line_no = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 7 {
            return Err(malformed(path, line_no, format!("expected 7 fields, found {}", record.len())));
        }
        let row = RawRow {
            surface: &record[0],
            left_id: &record[1],
            right_id: &record[2],
            cost: &record[3],
            pos: &record[4],
            yomi: &record[5],
            accent: &record[6],
            goshu: "unk",
            sandhi: "none",
        };
        entries.push(build_entry(row, path, line_no)?);
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_lexicon() -> Lexicon {
        let tsv = "\
一\tいち\tい[ち]\tnumeral\tsino\tC3\t1\t1\t2000
一日\tいちにち\tい[ちにち]\tnoun\tsino\tC1\t2\t2\t6000
日\tにち\tに]ち\tcounter\tsino\tC3\t3\t3\t2500
";
        let entries = parse_tsv(tsv, Path::new("t.tsv")).unwrap();
        let mut m = ConnectionMatrix::zeros(4, 4);
        m.set(2, 3, 77).unwrap();
        Lexicon::new(entries, m, UnknownTemplate::default()).unwrap()
    }

    #[test]
    fn prefix_lookup_finds_all_prefixes() {
        let lex = small_lexicon();
        let hits = lex.prefix_lookup("一日千秋", 0).unwrap();
        let mut got: Vec<(&str, usize)> = hits.iter().map(|(e, s)| (e.surface.as_str(), *s)).collect();
        got.sort();
        assert_eq!(got, [("一", 1), ("一日", 2)]);
    }

    #[test]
    fn unknown_symbol_is_single_node() {
        let lex = small_lexicon();
        let hits = lex.prefix_lookup("♪", 0).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].1, 1);
        assert!(hits[0].0.is_unknown());
        assert_eq!(hits[0].0.pos, Pos::Unknown);
    }

    #[test]
    fn unknown_runs_cover_same_class() {
        let lex = small_lexicon();
        let hits = lex.prefix_lookup("一千秋カタカナ", 1).unwrap();
        assert_eq!(hits[0].0.surface, "千秋");
        let hits = lex.prefix_lookup("一千秋カタカナ", 3).unwrap();
        assert_eq!(hits[0].0.surface, "カタカナ");
        assert_eq!(hits[0].0.yomi.kana(), "カタカナ");
        assert_eq!(hits[0].0.accent.len(), 4);
    }

    #[test]
    fn lookup_out_of_range() {
        let lex = small_lexicon();
        assert!(matches!(
            lex.prefix_lookup("一日", 2),
            Err(Error::OutOfRange { pos: 2, len: 2 })
        ));
    }

    #[test]
    fn connection_costs() {
        let lex = small_lexicon();
        assert_eq!(lex.connection_cost(2, 3).unwrap(), 77);
        assert_eq!(lex.connection_cost(0, 1).unwrap(), 0);
        assert!(lex.connection_cost(4, 0).is_err());
        let z = ConnectionMatrix::zeros(3, 3);
        for r in 0..3 {
            for l in 0..3 {
                assert_eq!(z.get(r, l).unwrap(), 0);
            }
        }
    }

    #[test]
    fn rejects_bad_rows() {
        let bad = "一\tいち\tい[ちに]\tnumeral\tsino\tC3\t1\t1\t2000\n";
        match parse_tsv(bad, Path::new("x.tsv")) {
            Err(Error::Malformed { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        let bad = "# c\n一\tいち\tい[ち]\tnumeral\tsino\tC9\t1\t1\t2000\n";
        assert!(matches!(parse_tsv(bad, Path::new("x.tsv")), Err(Error::Malformed { line: 2, .. })));
        let bad = "一\tいち\n";
        assert!(parse_tsv(bad, Path::new("x.tsv")).is_err());
    }

    #[test]
    fn entry_ids_must_exist_in_matrix() {
        let tsv = "一\tいち\tい[ち]\tnumeral\tsino\tC3\t5\t5\t2000\n";
        let entries = parse_tsv(tsv, Path::new("t.tsv")).unwrap();
        assert!(Lexicon::new(entries, ConnectionMatrix::zeros(2, 2), UnknownTemplate::default()).is_err());
    }

    #[test]
    fn matrix_text_round_trip() {
        let m = ConnectionMatrix::parse("2 3\n1 2 3\n-4 5 6\n").unwrap();
        assert_eq!(m.get(1, 0).unwrap(), -4);
        assert_eq!(ConnectionMatrix::parse(&m.to_text()).unwrap(), m);
        assert!(ConnectionMatrix::parse("2 2\n1 2 3\n").is_err());
    }

    #[test]
    fn bundled_lexicon_loads() {
        let lex = Lexicon::bundled();
        let rows = BUNDLED_LEXICON
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .count();
        assert_eq!(lex.len(), rows);
    }
}
