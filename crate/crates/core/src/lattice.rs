//! N-best morphological analysis.
//!
//! The lattice holds one node per (dictionary entry, start position) match
//! plus BOS/EOS. `nbest` runs a forward Viterbi pass and then enumerates
//! complete paths backwards from EOS with A*, using the forward costs as an
//! exact heuristic. Paths therefore come off the queue in non-decreasing cost
//! order; ties are resolved by sorting on (cost, entry spans, entry ids).

use std::borrow::Cow;
use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lexicon::{LexEntry, Lexicon};
use crate::mora::MoraSeq;

const BOS: usize = 0;
const EOS: usize = 1;

#[derive(Debug, Clone)]
pub struct Node<'a> {
    pub start: usize,
    pub end: usize,
    pub entry: Option<Cow<'a, LexEntry>>,
}

impl Node<'_> {
    fn left_id(&self) -> u16 {
        self.entry.as_ref().map_or(0, |e| e.left_id)
    }

    fn right_id(&self) -> u16 {
        self.entry.as_ref().map_or(0, |e| e.right_id)
    }

    fn cost(&self) -> i64 {
        self.entry.as_ref().map_or(0, |e| e.cost as i64)
    }
}

#[derive(Debug, Clone)]
pub struct Lattice<'a> {
    lex: &'a Lexicon,
    len: usize,
    nodes: Vec<Node<'a>>,
    /// Node indices by end position.
    ends_at: Vec<Vec<usize>>,
}

impl<'a> Lattice<'a> {
    pub fn nodes(&self) -> impl Iterator<Item = &Node<'a>> {
        self.nodes[2..].iter()
    }

    pub fn char_len(&self) -> usize {
        self.len
    }

    fn predecessors(&self, node: usize) -> &[usize] {
        &self.ends_at[self.nodes[node].start]
    }
}

/// One ranked path through the lattice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segmentation {
    pub entries: Vec<LexEntry>,
    pub total_cost: i64,
    pub rank: usize,
}

impl Segmentation {
    pub fn yomi(&self) -> MoraSeq {
        MoraSeq::concat(self.entries.iter().map(|e| &e.yomi))
    }

    pub fn surface(&self) -> String {
        self.entries.iter().map(|e| e.surface.as_str()).collect()
    }

    /// (start, end) character offsets of each entry.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let mut pos = 0;
        self.entries
            .iter()
            .map(|e| {
                let start = pos;
                pos += e.char_len();
                (start, pos)
            })
            .collect()
    }

    /// Sum of unigram costs and connection costs, including BOS and EOS.
    pub fn recompute_cost(&self, lex: &Lexicon) -> Result<i64> {
        let mut total = 0i64;
        let mut prev_right = 0u16;
        for e in &self.entries {
            total += lex.connection_cost(prev_right, e.left_id)? as i64 + e.cost as i64;
            prev_right = e.right_id;
        }
        total += lex.connection_cost(prev_right, 0)? as i64;
        Ok(total)
    }

    /// Ordering used to rank paths of equal cost.
    pub fn tie_key(&self) -> (Vec<(usize, usize)>, Vec<u32>) {
        (self.spans(), self.entries.iter().map(|e| e.id).collect())
    }
}

pub fn compare_paths(a: &Segmentation, b: &Segmentation) -> Ordering {
    a.total_cost
        .cmp(&b.total_cost)
        .then_with(|| a.tie_key().cmp(&b.tie_key()))
}

pub fn build_lattice<'a>(surface: &str, lex: &'a Lexicon) -> Result<Lattice<'a>> {
    let chars: Vec<char> = surface.chars().collect();
    if chars.is_empty() {
        return Err(Error::EmptyInput);
    }
    let len = chars.len();
    let mut nodes = vec![
        Node { start: 0, end: 0, entry: None },
        Node { start: len, end: len, entry: None },
    ];
    let mut ends_at: Vec<Vec<usize>> = vec![Vec::new(); len + 1];
    ends_at[0].push(BOS);
    for pos in 0..len {
        if ends_at[pos].is_empty() {
            continue;
        }
        for (entry, span) in lex.prefix_lookup_chars(&chars, pos)? {
            let idx = nodes.len();
            nodes.push(Node {
                start: pos,
                end: pos + span,
                entry: Some(entry),
            });
            ends_at[pos + span].push(idx);
        }
    }
    Ok(Lattice {
        lex,
        len,
        nodes,
        ends_at,
    })
}

/// Best cost from BOS through each node, inclusive of the node's own cost.
fn forward(lattice: &Lattice<'_>) -> Result<Vec<Option<i64>>> {
    let lex = lattice.lex;
    let mut best: Vec<Option<i64>> = vec![None; lattice.nodes.len()];
    best[BOS] = Some(0);
    let mut order: Vec<usize> = (2..lattice.nodes.len()).collect();
    order.push(EOS);
    for n in order {
        let node = &lattice.nodes[n];
        let mut min: Option<i64> = None;
        for &p in lattice.predecessors(n) {
            let Some(bp) = best[p] else { continue };
            let c = bp + lex.connection_cost(lattice.nodes[p].right_id(), node.left_id())? as i64;
            if min.is_none_or(|m| c < m) {
                min = Some(c);
            }
        }
        best[n] = min.map(|m| m + node.cost());
    }
    Ok(best)
}

struct PartialPath {
    node: usize,
    /// cost of everything after `node` up to EOS, excluding `node` itself
    suffix: i64,
    next: Option<usize>,
}

/// The `k` lowest-cost segmentations, ascending by cost.
pub fn nbest(lattice: &Lattice<'_>, k: usize) -> Result<Vec<Segmentation>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let lex = lattice.lex;
    let best = forward(lattice)?;
    let Some(total_best) = best[EOS] else {
        return Ok(Vec::new());
    };

    let mut arena = vec![PartialPath {
        node: EOS,
        suffix: 0,
        next: None,
    }];
    let mut heap = BinaryHeap::new();
    heap.push((Reverse(total_best), Reverse(0usize)));
    let mut found: Vec<(i64, usize)> = Vec::new();

    while let Some((Reverse(f), Reverse(state))) = heap.pop() {
        if found.len() >= k && f > found[k - 1].0 {
            break;
        }
        let (node, suffix) = (arena[state].node, arena[state].suffix);
        if node == BOS {
            found.push((suffix, state));
            continue;
        }
        let here = &lattice.nodes[node];
        let with_self = suffix + here.cost();
        for &p in lattice.predecessors(node) {
            let Some(bp) = best[p] else { continue };
            let conn = lex.connection_cost(lattice.nodes[p].right_id(), here.left_id())? as i64;
            let g = with_self + conn;
            arena.push(PartialPath {
                node: p,
                suffix: g,
                next: Some(state),
            });
            let id = arena.len() - 1;
            heap.push((Reverse(bp + g), Reverse(id)));
        }
    }

    let mut paths: Vec<Segmentation> = found
        .into_iter()
        .map(|(cost, state)| {
            let mut entries = Vec::new();
            let mut cur = arena[state].next;
            while let Some(s) = cur {
                if let Some(e) = &lattice.nodes[arena[s].node].entry {
                    entries.push(e.as_ref().clone());
                }
                cur = arena[s].next;
            }
            Segmentation {
                entries,
                total_cost: cost,
                rank: 0,
            }
        })
        .collect();
    paths.sort_by(compare_paths);
    paths.truncate(k);
    for (i, p) in paths.iter_mut().enumerate() {
        p.rank = i + 1;
    }
    Ok(paths)
}
