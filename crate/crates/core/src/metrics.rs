//! Word-level accuracy and position-level raise/lower precision and recall.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mora::Mark;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub predicted: Vec<Mark>,
    pub gold: Vec<Mark>,
    pub category: String,
}

/// Position counts for one mark.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl MarkCounts {
    /// Predicted occurrences.
    pub fn precision_support(&self) -> u64 {
        self.true_pos + self.false_pos
    }

    /// Gold occurrences.
    pub fn recall_support(&self) -> u64 {
        self.true_pos + self.false_neg
    }

    /// 1.0 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.true_pos, self.precision_support())
    }

    /// 1.0 when nothing was expected.
    pub fn recall(&self) -> f64 {
        ratio(self.true_pos, self.recall_support())
    }

    fn add(&mut self, other: &MarkCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Exact integer tallies; every reported figure is a ratio of these.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub words: u64,
    pub exact: u64,
    pub hamming: u64,
    pub raise: MarkCounts,
    pub lower: MarkCounts,
}

impl Counts {
    pub fn emr(&self) -> f64 {
        self.exact as f64 / self.words as f64
    }

    pub fn ahd(&self) -> f64 {
        self.hamming as f64 / self.words as f64
    }

    fn add(&mut self, other: &Counts) {
        self.words += other.words;
        self.exact += other.exact;
        self.hamming += other.hamming;
        self.raise.add(&other.raise);
        self.lower.add(&other.lower);
    }

    fn of_word(predicted: &[Mark], gold: &[Mark]) -> Counts {
        let mut c = Counts {
            words: 1,
            ..Default::default()
        };
        for (&p, &g) in predicted.iter().zip(gold) {
            if p != g {
                c.hamming += 1;
            }
            for (mark, counts) in [(Mark::Raise, &mut c.raise), (Mark::Lower, &mut c.lower)] {
                match (p == mark, g == mark) {
                    (true, true) => counts.true_pos += 1,
                    (true, false) => counts.false_pos += 1,
                    (false, true) => counts.false_neg += 1,
                    (false, false) => {}
                }
            }
        }
        c.exact = u64::from(c.hamming == 0);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Counts,
    pub by_category: BTreeMap<String, Counts>,
}

pub fn evaluate(items: &[EvalItem]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut overall = Counts::default();
    let mut by_category: BTreeMap<String, Counts> = BTreeMap::new();
    for item in items {
        if item.predicted.len() != item.gold.len() {
            return Err(Error::LengthMismatch {
                expected: item.gold.len(),
                actual: item.predicted.len(),
            });
        }
        let c = Counts::of_word(&item.predicted, &item.gold);
        overall.add(&c);
        by_category.entry(item.category.clone()).or_default().add(&c);
    }
    Ok(EvalReport { overall, by_category })
}

impl EvalReport {
    pub fn emr(&self) -> f64 {
        self.overall.emr()
    }

    pub fn ahd(&self) -> f64 {
        self.overall.ahd()
    }

    /// `key<TAB>value` lines.
    pub fn to_text(&self) -> String {
        let c = &self.overall;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}\t{v}");
        };
        kv("words", c.words.to_string());
        kv("exact", c.exact.to_string());
        kv("hamming", c.hamming.to_string());
        kv("emr", format!("{:.6}", c.emr()));
        kv("ahd", format!("{:.6}", c.ahd()));
        for (name, m) in [("raise", &c.raise), ("lower", &c.lower)] {
            kv(&format!("{name}_precision"), format!("{:.6}", m.precision()));
            kv(&format!("{name}_precision_support"), m.precision_support().to_string());
            kv(&format!("{name}_recall"), format!("{:.6}", m.recall()));
            kv(&format!("{name}_recall_support"), m.recall_support().to_string());
        }
        out
    }

    /// One row per category: words, EMR, AHD, raise P/R, lower P/R.
    pub fn category_table(&self) -> String {
        let mut out = String::from("category\twords\temr\tahd\traise_p\traise_r\tlower_p\tlower_r\n");
        let rows = self
            .by_category
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .chain([("all", &self.overall)]);
        for (name, c) in rows {
            let _ = writeln!(
                out,
                "{name}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                c.words,
                c.emr(),
                c.ahd(),
                c.raise.precision(),
                c.raise.recall(),
                c.lower.precision(),
                c.lower.recall()
            );
        }
        out
    }
}
