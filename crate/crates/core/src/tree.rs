//! Patch adjacency and random bottom-up merge trees.
//!
//! Leaves are numbered `1..=k`; internal nodes get ids `k+1..=2k-1` in the
//! order they are created, so the last merge always produces the root.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;

use crate::error::{size, Error, Result};
use crate::SeedRng;

const TREE_STREAM: u64 = 0x7472_6565;
/// Upper bound on leaves accepted by [`enumerate_trees`].
pub const MAX_ENUMERATION_LEAVES: usize = 5;

/// Symmetric leaf adjacency with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    size: usize,
    entries: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn from_entries(size: usize, entries: Vec<bool>) -> Result<Self> {
        if size == 0 || size > 32 {
            return self::size(format!("adjacency over {size} leaves is not supported"));
        }
        if entries.len() != size * size {
            return self::size(format!("{} entries for a {size}×{size} matrix", entries.len()));
        }
        for i in 0..size {
            if entries[i * size + i] {
                return Err(Error::Structure(format!("leaf {} adjacent to itself", i + 1)));
            }
            for j in 0..i {
                if entries[i * size + j] != entries[j * size + i] {
                    return Err(Error::Structure(format!(
                        "adjacency not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { size, entries })
    }

    /// 4-connectivity on a `rows × cols` grid numbered row-major from 1.
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        let n = rows * cols;
        let mut entries = vec![false; n * n];
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    entries[i * n + i + 1] = true;
                    entries[(i + 1) * n + i] = true;
                }
                if r + 1 < rows {
                    entries[i * n + i + cols] = true;
                    entries[(i + cols) * n + i] = true;
                }
            }
        }
        Self::from_entries(n, entries)
    }

    /// Chain `1 - 2 - … - k`.
    pub fn path(k: usize) -> Result<Self> {
        Self::grid(1, k)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Adjacency of leaves `i` and `j` (1-based).
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[(i - 1) * self.size + (j - 1)]
    }

    pub fn degree(&self, i: usize) -> usize {
        (1..=self.size).filter(|&j| self.get(i, j)).count()
    }

    pub fn edge_count(&self) -> usize {
        self.entries.iter().filter(|&&e| e).count() / 2
    }

    fn neighbor_mask(&self, leaf: usize) -> u32 {
        (1..=self.size)
            .filter(|&j| self.get(leaf, j))
            .fold(0, |m, j| m | 1 << (j - 1))
    }

    /// Whether any leaf of `a` is adjacent to any leaf of `b` (bitmasks over leaves).
    fn sets_adjacent(&self, a: u32, b: u32) -> bool {
        (1..=self.size)
            .filter(|&i| a & (1 << (i - 1)) != 0)
            .any(|i| self.neighbor_mask(i) & b != 0)
    }
}

/// The fixed 3×3 patch layout.
pub fn grid_adjacency() -> AdjacencyMatrix {
    AdjacencyMatrix::grid(3, 3).expect("3×3 grid is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub new: usize,
}

/// A full binary tree over `leaves` leaves, stored as its merge sequence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MergeTree {
    leaves: usize,
    merges: Vec<Merge>,
}

impl MergeTree {
    /// Builds a tree from raw merges, checking only id bookkeeping (not adjacency).
    pub fn new(leaves: usize, merges: Vec<Merge>) -> Result<Self> {
        let tree = Self { leaves, merges };
        tree.check_ids()?;
        Ok(tree)
    }

    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn node_count(&self) -> usize {
        self.leaves + self.merges.len()
    }

    pub fn root(&self) -> usize {
        2 * self.leaves - 1
    }

    fn check_ids(&self) -> Result<()> {
        let k = self.leaves;
        if k == 0 {
            return Err(Error::Structure("tree without leaves".into()));
        }
        if self.merges.len() != k - 1 {
            return Err(Error::Structure(format!(
                "{} merges for {k} leaves, expected {}",
                self.merges.len(),
                k - 1
            )));
        }
        let mut consumed = vec![false; 2 * k];
        for (step, m) in self.merges.iter().enumerate() {
            let expected = k + 1 + step;
            if m.new != expected {
                return Err(Error::Structure(format!(
                    "merge {} creates node {}, expected {expected}",
                    step + 1,
                    m.new
                )));
            }
            for child in [m.left, m.right] {
                if child == 0 || child >= expected {
                    return Err(Error::Structure(format!(
                        "merge {} uses node {child} before it exists",
                        step + 1
                    )));
                }
                if consumed[child] {
                    return Err(Error::Structure(format!("node {child} consumed twice")));
                }
                consumed[child] = true;
            }
            if m.left == m.right {
                return Err(Error::Structure(format!("merge {} joins a node with itself", step + 1)));
            }
        }
        Ok(())
    }

    /// Leaf sets (bitmask over leaves) of every node, indexed by node id.
    fn leaf_sets(&self) -> Vec<u32> {
        let mut sets = vec![0u32; self.node_count() + 1];
        for leaf in 1..=self.leaves {
            sets[leaf] = 1 << (leaf - 1);
        }
        for m in &self.merges {
            sets[m.new] = sets[m.left] | sets[m.right];
        }
        sets
    }

    /// Full structural check against `adjacency`.
    pub fn validate(&self, adjacency: &AdjacencyMatrix) -> Result<()> {
        if adjacency.size() != self.leaves {
            return size(format!(
                "tree over {} leaves, adjacency over {}",
                self.leaves,
                adjacency.size()
            ));
        }
        self.check_ids()?;
        let sets = self.leaf_sets();
        for m in &self.merges {
            if !adjacency.sets_adjacent(sets[m.left], sets[m.right]) {
                return Err(Error::Structure(format!(
                    "merge of {} and {} joins non-adjacent regions",
                    m.left, m.right
                )));
            }
        }
        let all = if self.leaves == 32 { u32::MAX } else { (1u32 << self.leaves) - 1 };
        if sets[self.root()] != all {
            return Err(Error::Structure("root does not cover every leaf".into()));
        }
        Ok(())
    }

    /// Copy with every merge's children ordered `(smaller, larger)`.
    pub fn canonical(&self) -> Self {
        let merges = self
            .merges
            .iter()
            .map(|m| Merge {
                left: m.left.min(m.right),
                right: m.left.max(m.right),
                new: m.new,
            })
            .collect();
        Self { leaves: self.leaves, merges }
    }

    /// Merge-order-independent nested form such as `((1,2),3)`.
    pub fn shape(&self) -> String {
        let mut repr: Vec<String> = (0..=self.node_count()).map(|i| i.to_string()).collect();
        for m in &self.merges {
            let (a, b) = (&repr[m.left], &repr[m.right]);
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            repr[m.new] = format!("({a},{b})");
        }
        repr.swap_remove(self.root())
    }

    /// Line-oriented text form: one `left right new` triple per merge.
    pub fn to_text(&self) -> String {
        self.merges
            .iter()
            .map(|m| format!("{} {} {}\n", m.left, m.right, m.new))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let ids: Vec<usize> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Structure(format!("line {}: {e}", lineno + 1)))?;
            let [left, right, new] = ids[..] else {
                return Err(Error::Structure(format!(
                    "line {}: expected `left right new`",
                    lineno + 1
                )));
            };
            merges.push(Merge { left, right, new });
        }
        Self::new(merges.len() + 1, merges)
    }
}

impl fmt::Display for MergeTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Active nodes and the candidate child pairs among them.
#[derive(Debug, Clone)]
pub struct MergeWorklist<'a> {
    adjacency: &'a AdjacencyMatrix,
    active: BTreeMap<usize, u32>,
    pairs: BTreeSet<(usize, usize)>,
    next_id: usize,
}

impl<'a> MergeWorklist<'a> {
    /// Every leaf active; pairs are the adjacent leaf pairs.
    pub fn new(adjacency: &'a AdjacencyMatrix) -> Self {
        let k = adjacency.size();
        let active = (1..=k).map(|i| (i, 1u32 << (i - 1))).collect();
        let pairs = (1..=k)
            .flat_map(|i| (i + 1..=k).map(move |j| (i, j)))
            .filter(|&(i, j)| adjacency.get(i, j))
            .collect();
        Self {
            adjacency,
            active,
            pairs,
            next_id: k + 1,
        }
    }

    pub fn candidate_pairs(&self) -> &BTreeSet<(usize, usize)> {
        &self.pairs
    }

    pub fn active_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.keys().copied()
    }

    pub fn is_done(&self) -> bool {
        self.active.len() == 1
    }

    /// Merges a candidate pair and returns the new node id. Pairs touching
    /// either child are dropped and the new node is paired with every active
    /// node adjacent to its combined leaf set.
    pub fn merge(&mut self, a: usize, b: usize) -> Result<Merge> {
        let key = (a.min(b), a.max(b));
        if !self.pairs.contains(&key) {
            return Err(Error::Structure(format!("({a}, {b}) is not a candidate pair")));
        }
        let set = self.active.remove(&a).unwrap() | self.active.remove(&b).unwrap();
        self.pairs.retain(|&(x, y)| x != a && x != b && y != a && y != b);
        let new = self.next_id;
        self.next_id += 1;
        for (&other, &other_set) in &self.active {
            if self.adjacency.sets_adjacent(set, other_set) {
                self.pairs.insert((other, new));
            }
        }
        self.active.insert(new, set);
        Ok(Merge {
            left: key.0,
            right: key.1,
            new,
        })
    }
}

/// Grows a tree by repeatedly merging a uniformly chosen candidate pair.
pub fn generate_tree_with(adjacency: &AdjacencyMatrix, rng: &mut SeedRng) -> Result<MergeTree> {
    let mut work = MergeWorklist::new(adjacency);
    let mut merges = Vec::with_capacity(adjacency.size() - 1);
    while !work.is_done() {
        let len = work.candidate_pairs().len();
        if len == 0 {
            return Err(Error::Structure("adjacency graph is disconnected".into()));
        }
        let pick = rng.random_range(0..len);
        let &(a, b) = work.candidate_pairs().iter().nth(pick).unwrap();
        merges.push(work.merge(a, b)?);
    }
    Ok(MergeTree {
        leaves: adjacency.size(),
        merges,
    })
}

pub fn generate_tree(adjacency: &AdjacencyMatrix, seed: u64) -> Result<MergeTree> {
    generate_tree_with(adjacency, &mut crate::seeded_rng(seed, TREE_STREAM))
}

/// Every merge tree the random procedure can produce, in canonical child order.
pub fn enumerate_trees(adjacency: &AdjacencyMatrix) -> Result<BTreeSet<MergeTree>> {
    let k = adjacency.size();
    if k > MAX_ENUMERATION_LEAVES {
        return size(format!(
            "enumeration limited to {MAX_ENUMERATION_LEAVES} leaves, got {k}"
        ));
    }
    fn walk(
        work: &MergeWorklist<'_>,
        merges: &mut Vec<Merge>,
        leaves: usize,
        out: &mut BTreeSet<MergeTree>,
    ) {
        if work.is_done() {
            out.insert(MergeTree {
                leaves,
                merges: merges.clone(),
            });
            return;
        }
        for &(a, b) in work.candidate_pairs() {
            let mut next = work.clone();
            merges.push(next.merge(a, b).expect("pair came from the worklist"));
            walk(&next, merges, leaves, out);
            merges.pop();
        }
    }
    let mut out = BTreeSet::new();
    walk(&MergeWorklist::new(adjacency), &mut Vec::new(), k, &mut out);
    Ok(out)
}
