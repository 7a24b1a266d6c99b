//! Feature extraction: numeral normalization, reading-guided choice among
//! the N-best segmentations, and per-mora categorical features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{build_lattice, nbest, Segmentation};
use crate::lexicon::{Goshu, Lexicon, Pos, Sandhi};
use crate::mora::{Mora, MoraSeq, CONSONANT_FEATURES, VOWEL_FEATURES};

/// Columns of a surface-side record: consonant, vowel, pos, goshu, accent
/// mark of the constituent entry at this mora, sandhi class.
pub const SURFACE_FEATURES: usize = 6;
/// Columns of a yomi-side record: consonant, vowel.
pub const YOMI_FEATURES: usize = 2;

pub const SURFACE_VOCAB: [usize; SURFACE_FEATURES] = [
    CONSONANT_FEATURES,
    VOWEL_FEATURES,
    Pos::ALL.len(),
    Goshu::ALL.len(),
    3,
    Sandhi::ALL.len(),
];
pub const YOMI_VOCAB: [usize; YOMI_FEATURES] = [CONSONANT_FEATURES, VOWEL_FEATURES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub r_max: usize,
    pub m_train: usize,
    pub m_infer: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            r_max: 20,
            m_train: 3,
            m_infer: 1,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        for m in [self.m_train, self.m_infer] {
            if m == 0 || m > self.r_max {
                return Err(Error::InvalidArgument(format!(
                    "m = {m} must satisfy 1 <= m <= r_max = {}",
                    self.r_max
                )));
            }
        }
        Ok(())
    }

    pub fn m(&self, mode: Mode) -> usize {
        match mode {
            Mode::Train => self.m_train,
            Mode::Infer => self.m_infer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Infer,
}

const DIGITS: [char; 10] = ['〇', '一', '二', '三', '四', '五', '六', '七', '八', '九'];
const GROUP_UNITS: [&str; 5] = ["", "万", "億", "兆", "京"];

fn digit_value(c: char) -> Option<u32> {
    match c {
        '0'..='9' => Some(c as u32 - '0' as u32),
        '０'..='９' => Some(c as u32 - '０' as u32),
        _ => None,
    }
}

fn read_digits(digits: &[u32]) -> String {
    digits.iter().map(|&d| DIGITS[d as usize]).collect()
}

fn read_integer(digits: &[u32]) -> String {
    if digits.len() > 1 && digits[0] == 0 {
        return read_digits(digits);
    }
    if digits.iter().all(|&d| d == 0) {
        return "〇".to_string();
    }
    let groups = digits.len().div_ceil(4);
    if groups > GROUP_UNITS.len() {
        return read_digits(digits);
    }
    let mut out = String::new();
    for g in (0..groups).rev() {
        // digits of this group, most significant first, left-padded to 4
        let hi = digits.len() - g * 4;
        let lo = hi.saturating_sub(4);
        let mut group = [0u32; 4];
        group[4 - (hi - lo)..].copy_from_slice(&digits[lo..hi]);
        if group == [0; 4] {
            continue;
        }
        for (d, unit) in group[..3].iter().zip(["千", "百", "十"]) {
            match d {
                0 => {}
                1 => out.push_str(unit),
                _ => {
                    out.push(DIGITS[*d as usize]);
                    out.push_str(unit);
                }
            }
        }
        if group[3] != 0 {
            out.push(DIGITS[group[3] as usize]);
        }
        out.push_str(GROUP_UNITS[g]);
    }
    out
}

/// Rewrites every run of digits (optionally with one decimal part) as its
/// kanji reading using positional units. Other characters pass through.
pub fn normalize_numerals(surface: &str) -> String {
    let chars: Vec<char> = surface.chars().collect();
    let mut out = String::with_capacity(surface.len());
    let mut i = 0;
    while i < chars.len() {
        let Some(_) = digit_value(chars[i]) else {
            out.push(chars[i]);
            i += 1;
            continue;
        };
        let mut int_digits = Vec::new();
        while let Some(d) = chars.get(i).and_then(|&c| digit_value(c)) {
            int_digits.push(d);
            i += 1;
        }
        out.push_str(&read_integer(&int_digits));
        let is_point = matches!(chars.get(i), Some('.') | Some('．'));
        if is_point && chars.get(i + 1).and_then(|&c| digit_value(c)).is_some() {
            i += 1;
            let mut frac = Vec::new();
            while let Some(d) = chars.get(i).and_then(|&c| digit_value(c)) {
                frac.push(d);
                i += 1;
            }
            out.push('点');
            out.push_str(&read_digits(&frac));
        }
    }
    out
}

/// Unit-cost edit distance over arbitrary tokens.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance between readings, comparing morae by sound.
pub fn levenshtein(a: &[Mora], b: &[Mora]) -> usize {
    let pa: Vec<_> = a.iter().map(Mora::phone).collect();
    let pb: Vec<_> = b.iter().map(Mora::phone).collect();
    edit_distance(&pa, &pb)
}

/// The N-best segmentations of the normalized surface, reordered by
/// (reading distance to `yomi`, lattice cost, lattice rank).
pub fn ranked_candidates(
    surface: &str,
    yomi: &MoraSeq,
    lex: &Lexicon,
    cfg: &SelectionConfig,
) -> Result<Vec<(usize, Segmentation)>> {
    cfg.validate()?;
    if surface.is_empty() {
        return Err(Error::EmptyInput);
    }
    let normalized = normalize_numerals(surface);
    let lattice = build_lattice(&normalized, lex)?;
    let mut ranked: Vec<(usize, Segmentation)> = nbest(&lattice, cfg.r_max)?
        .into_iter()
        .map(|seg| (levenshtein(&seg.yomi(), yomi), seg))
        .collect();
    ranked.sort_by_key(|(d, seg)| (*d, seg.total_cost, seg.rank));
    Ok(ranked)
}

/// Picks the segmentation used as the surface-side input: the closest
/// candidate in inference mode, a uniform draw from the `m_train` closest
/// in training mode.
pub fn select_candidates<R: Rng + ?Sized>(
    surface: &str,
    yomi: &MoraSeq,
    lex: &Lexicon,
    cfg: &SelectionConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Segmentation> {
    let ranked = ranked_candidates(surface, yomi, lex, cfg)?;
    let mut top = shortlist(ranked, cfg.m(mode));
    let pick = match mode {
        Mode::Infer => 0,
        Mode::Train => rng.random_range(0..top.len()),
    };
    Ok(top.swap_remove(pick))
}

/// The first `m` candidates (at least one).
pub fn shortlist(ranked: Vec<(usize, Segmentation)>, m: usize) -> Vec<Segmentation> {
    let keep = m.max(1);
    ranked.into_iter().take(keep).map(|(_, s)| s).collect()
}

/// Aligned categorical inputs for one word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturePair {
    pub surface: Vec<[usize; SURFACE_FEATURES]>,
    pub yomi: Vec<[usize; YOMI_FEATURES]>,
}

pub fn featurize(seg: &Segmentation, yomi: &MoraSeq) -> FeaturePair {
    let mut surface = Vec::new();
    for e in &seg.entries {
        for (m, a) in e.yomi.iter().zip(e.accent.iter()) {
            surface.push([
                m.consonant_feature(),
                m.vowel_feature(),
                e.pos.id(),
                e.goshu.id(),
                a.class(),
                e.sandhi.id(),
            ]);
        }
    }
    let yomi = yomi
        .iter()
        .map(|m| [m.consonant_feature(), m.vowel_feature()])
        .collect();
    FeaturePair { surface, yomi }
}

impl FeaturePair {
    /// Human-readable dump: one row per mora, surface side then yomi side.
    pub fn to_tsv(&self, seg: &Segmentation, yomi: &MoraSeq) -> String {
        let mut out = String::from("side\tindex\tkana\tconsonant\tvowel\tpos\tgoshu\taccent\tsandhi\n");
        let mut i = 0;
        for e in &seg.entries {
            for (m, a) in e.yomi.iter().zip(e.accent.iter()) {
                out.push_str(&format!(
                    "surface\t{i}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    m.kana,
                    m.consonant_name(),
                    vowel_label(m),
                    e.pos,
                    e.goshu,
                    a.value(),
                    e.sandhi
                ));
                i += 1;
            }
        }
        for (i, m) in yomi.iter().enumerate() {
            out.push_str(&format!(
                "yomi\t{i}\t{}\t{}\t{}\t-\t-\t-\t-\n",
                m.kana,
                m.consonant_name(),
                vowel_label(m)
            ));
        }
        out
    }
}

fn vowel_label(m: &Mora) -> String {
    let f = m.vowel_feature();
    if f > 5 {
        format!("{}:", m.vowel.as_str())
    } else {
        m.vowel.as_str().to_string()
    }
}
