//! Compound accent rules keyed on the rear word's sandhi class, and a
//! generator of synthetic compound words labelled by those rules.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{LexEntry, Lexicon, Sandhi};
use crate::mora::{
    parse_kana, render_marked, repair_accent, AccentVector, AccentedReading, Mark, MoraSeq,
};

/// Connectives inserted into the reading only, between the two nouns of a
/// compound. The empty string means direct concatenation.
pub const INFIXES: [&str; 5] = ["", "の", "が", "つ", "わ"];

/// Particles joining two compounds: (surface, reading).
pub const JOINERS: [(&str, &str); 5] = [
    ("と", "と"),
    ("は", "わ"),
    ("が", "が"),
    ("の", "の"),
    ("も", "も"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Pair,
    Quad,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Pair => "pair",
            Rule::Quad => "quad",
        })
    }
}

/// Accent of a single phrase of `len` morae whose pitch falls after mora
/// index `nucleus`, or never when `None`.
fn phrase(len: usize, nucleus: Option<usize>) -> Vec<Mark> {
    let mut out = vec![Mark::Level; len];
    match nucleus {
        Some(0) => out[0] = Mark::Lower,
        Some(k) => {
            out[0] = Mark::Raise;
            out[k] = Mark::Lower;
        }
        None => out[0] = Mark::Raise,
    }
    out
}

/// Accent of `front` followed by `rear` read as one compound.
///
/// C1 keeps the rear's own fall, C2 falls after the rear's first mora, C3
/// falls after the front's last mora, C4 rises and never falls, C5 keeps the
/// front's accent over a flat rear, and `none` concatenates both accents.
/// The result always passes alternation.
pub fn compound_accent(front: &AccentedReading, rear: &LexEntry) -> Result<AccentVector> {
    let f = front.len();
    let r = rear.yomi.len();
    if f == 0 || r == 0 || rear.accent.len() != r {
        return Err(Error::EmptyInput);
    }
    let n = f + r;
    let raw = match rear.sandhi {
        Sandhi::C1 => {
            let fall = rear.accent.iter().position(|&m| m == Mark::Lower);
            phrase(n, fall.map(|j| f + j))
        }
        Sandhi::C2 => phrase(n, Some(f)),
        Sandhi::C3 => phrase(n, Some(f - 1)),
        Sandhi::C4 => phrase(n, None),
        Sandhi::C5 => {
            let mut v = front.accent.0.clone();
            v.resize(n, Mark::Level);
            v
        }
        Sandhi::None => front.accent.iter().chain(rear.accent.iter()).copied().collect(),
        Sandhi::Unknown => {
            return Err(Error::InvalidArgument(format!(
                "rear word {} has no sandhi class",
                rear.surface
            )))
        }
    };
    Ok(repair_accent(&raw))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub surface: String,
    pub yomi: MoraSeq,
    pub accent: AccentVector,
    pub rule_used: Rule,
}

impl SyntheticSample {
    pub fn marked(&self) -> String {
        render_marked(&AccentedReading {
            morae: self.yomi.clone(),
            accent: self.accent.clone(),
        })
    }

    pub fn to_tsv_row(&self) -> String {
        format!("{}\t{}\t{}", self.surface, self.yomi.kana(), self.marked())
    }
}

fn draw_infix<R: Rng + ?Sized>(rng: &mut R) -> &'static str {
    INFIXES[rng.random_range(0..INFIXES.len())]
}

fn draw_joiner<R: Rng + ?Sized>(rng: &mut R) -> (&'static str, &'static str) {
    JOINERS[rng.random_range(0..JOINERS.len())]
}

fn kana(text: &str) -> MoraSeq {
    parse_kana(text).expect("connective tables are kana")
}

/// `w1` with the connective's morae appended as level marks.
fn front_with_infix(w1: &LexEntry, infix: &str) -> AccentedReading {
    let extra = kana(infix);
    let mut accent = w1.accent.0.clone();
    accent.resize(accent.len() + extra.len(), Mark::Level);
    AccentedReading {
        morae: MoraSeq::concat([&w1.yomi, &extra]),
        accent: AccentVector(accent),
    }
}

/// One compound: surface, reading and accent, before any phrase joining.
fn compound<R: Rng + ?Sized>(
    rng: &mut R,
    nouns: &[&LexEntry],
) -> Result<(String, AccentedReading)> {
    let w1 = nouns[rng.random_range(0..nouns.len())];
    let w2 = nouns[rng.random_range(0..nouns.len())];
    let infix = draw_infix(rng);
    let front = front_with_infix(w1, infix);
    let accent = compound_accent(&front, w2)?;
    let surface = format!("{}{}", w1.surface, w2.surface);
    let morae = MoraSeq::concat([&front.morae, &w2.yomi]);
    Ok((surface, AccentedReading { morae, accent }))
}

/// Nouns usable as compound parts.
pub fn noun_pool(lex: &Lexicon) -> Vec<&LexEntry> {
    lex.entries()
        .iter()
        .filter(|e| e.pos.is_noun() && e.sandhi != Sandhi::Unknown && !e.yomi.is_empty())
        .collect()
}

/// Draws one synthetic compound. A pair joins two nouns with an optional
/// reading-only infix; a quad joins two such pairs with a particle, each
/// pair keeping its own accent phrase.
pub fn synthesize<R: Rng + ?Sized>(rng: &mut R, lex: &Lexicon, rule: Rule) -> Result<SyntheticSample> {
    let nouns = noun_pool(lex);
    if nouns.len() < 2 {
        return Err(Error::InsufficientNouns(nouns.len()));
    }
    let (surface, reading) = match rule {
        Rule::Pair => compound(rng, &nouns)?,
        Rule::Quad => {
            let (s1, r1) = compound(rng, &nouns)?;
            let (joiner_surface, joiner_kana) = draw_joiner(rng);
            let (s2, r2) = compound(rng, &nouns)?;
            let joiner = kana(joiner_kana);
            let raw: Vec<Mark> = r1
                .accent
                .iter()
                .copied()
                .chain(std::iter::repeat_n(Mark::Level, joiner.len()))
                .chain(r2.accent.iter().copied())
                .collect();
            (
                format!("{s1}{joiner_surface}{s2}"),
                AccentedReading {
                    morae: MoraSeq::concat([&r1.morae, &joiner, &r2.morae]),
                    accent: repair_accent(&raw),
                },
            )
        }
    };
    // Reparse the joined kana so the sample matches what its TSV row reads
    // back as; a long-vowel う may straddle a word boundary.
    let yomi = parse_kana(&reading.morae.kana())?;
    debug_assert_eq!(yomi.len(), reading.accent.len());
    Ok(SyntheticSample {
        surface,
        yomi,
        accent: reading.accent,
        rule_used: rule,
    })
}

/// `count` samples, sample `i` drawn from its own stream of `seed` so the
/// output does not depend on generation order. Rules are drawn uniformly.
pub fn synthesize_many(seed: u64, lex: &Lexicon, count: usize) -> Result<Vec<SyntheticSample>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let rule = if rng.random_bool(0.5) { Rule::Pair } else { Rule::Quad };
            synthesize(&mut rng, lex, rule)
        })
        .collect()
}

pub fn samples_to_tsv(samples: &[SyntheticSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&s.to_tsv_row());
        out.push('\n');
    }
    out
}
