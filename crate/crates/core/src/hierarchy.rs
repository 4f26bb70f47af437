//! Balanced semantic hierarchies and the item → feature datasets built on them.
//!
//! Nodes are numbered breadth-first, so node `i` is also feature row `i` of the
//! target matrix. Leaves are the items, indexed left to right from 0.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeSpec {
    pub branching: usize,
    pub depth: usize,
    /// Reserved for label shuffling; never affects structure.
    pub seed: u64,
}

impl Default for TreeSpec {
    fn default() -> Self {
        TreeSpec {
            branching: 2,
            depth: 4,
            seed: 0,
        }
    }
}

impl TreeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.branching < 2 {
            return Err(Error::Config(format!(
                "branching must be >= 2, got {}",
                self.branching
            )));
        }
        if self.depth < 2 {
            return Err(Error::Config(format!(
                "depth must be >= 2, got {}",
                self.depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    pub id: usize,
    /// 1 (root) ..= depth (leaves).
    pub level: usize,
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierarchyTree {
    branching: usize,
    depth: usize,
    nodes: Vec<Node>,
    items: Vec<usize>,
    feature_of_node: Vec<usize>,
}

impl HierarchyTree {
    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Node ids of the leaves, in item order.
    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn feature_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn feature_of_node(&self, node: usize) -> usize {
        self.feature_of_node[node]
    }

    /// Index of the first node at `level` in breadth-first order.
    fn level_offset(&self, level: usize) -> usize {
        (0..level - 1).map(|k| self.branching.pow(k as u32)).sum()
    }

    /// Node id of the ancestor of `item` at `level` (the item's own leaf at `level == depth`).
    pub fn ancestor(&self, item: usize, level: usize) -> usize {
        let span = self.branching.pow((self.depth - level) as u32);
        self.level_offset(level) + item / span
    }

    fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.items.len() {
            return Err(Error::UnknownItem {
                item,
                items: self.items.len(),
            });
        }
        Ok(())
    }
}

pub fn build_hierarchy(spec: &TreeSpec) -> Result<HierarchyTree> {
    spec.validate()?;
    let b = spec.branching;
    let mut nodes = Vec::new();
    let mut level_start = 0;
    for level in 1..=spec.depth {
        let count = b.pow((level - 1) as u32);
        let parent_start = level_start - if level > 1 { count / b } else { 0 };
        for j in 0..count {
            let id = nodes.len();
            let parent = (level > 1).then(|| parent_start + j / b);
            nodes.push(Node { id, level, parent });
        }
        level_start += count;
    }
    let leaf_count = b.pow((spec.depth - 1) as u32);
    let items = (nodes.len() - leaf_count..nodes.len()).collect();
    let feature_of_node = (0..nodes.len()).collect();
    Ok(HierarchyTree {
        branching: b,
        depth: spec.depth,
        nodes,
        items,
        feature_of_node,
    })
}

/// Level of the deepest common ancestor of two items; `depth` when they coincide.
pub fn hierarchy_distance(tree: &HierarchyTree, a: usize, b: usize) -> Result<usize> {
    tree.check_item(a)?;
    tree.check_item(b)?;
    let level = (1..=tree.depth)
        .rev()
        .find(|&k| tree.ancestor(a, k) == tree.ancestor(b, k))
        .unwrap_or(1);
    Ok(level)
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrequencyRule {
    Uniform,
    /// Doubles items with odd 1-based index (0-based 0, 2, 4, ...).
    OddItemsDouble,
    Explicit(Vec<f64>),
}

impl FrequencyRule {
    pub fn weights(&self, items: usize) -> Result<Vec<f64>> {
        match self {
            FrequencyRule::Uniform => Ok(vec![1.0; items]),
            FrequencyRule::OddItemsDouble => Ok((0..items)
                .map(|p| if p % 2 == 0 { 2.0 } else { 1.0 })
                .collect()),
            FrequencyRule::Explicit(w) => {
                if w.len() != items {
                    return Err(Error::Shape(format!(
                        "explicit frequency vector has {} entries, dataset has {items} items",
                        w.len()
                    )));
                }
                if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                    return Err(Error::Config(format!(
                        "frequency weights must be positive and finite, got {bad}"
                    )));
                }
                Ok(w.clone())
            }
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, FrequencyRule::Uniform)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Inputs, one column per training pattern.
    pub x: DMatrix<f64>,
    /// Targets, features × patterns.
    pub y: DMatrix<f64>,
    /// Per-pattern loss weight.
    pub freq: Vec<f64>,
    /// Hierarchy level (1-based) of each feature row.
    pub level_of_feature: Vec<usize>,
    pub branching: usize,
    pub depth: usize,
}

impl Dataset {
    /// Assembles a dataset from raw parts, checking shapes and weights.
    pub fn from_parts(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        freq: Vec<f64>,
        level_of_feature: Vec<usize>,
        branching: usize,
        depth: usize,
    ) -> Result<Dataset> {
        if x.ncols() != y.ncols() || freq.len() != y.ncols() {
            return Err(Error::Shape(format!(
                "x has {} columns, y has {}, freq has {}",
                x.ncols(),
                y.ncols(),
                freq.len()
            )));
        }
        if level_of_feature.len() != y.nrows() {
            return Err(Error::Shape(format!(
                "level map has {} entries for {} features",
                level_of_feature.len(),
                y.nrows()
            )));
        }
        if level_of_feature.iter().any(|&k| k == 0 || k > depth) {
            return Err(Error::Config(format!(
                "feature levels must lie in 1..={depth}"
            )));
        }
        FrequencyRule::Explicit(freq.clone()).weights(freq.len())?;
        Ok(Dataset {
            x,
            y,
            freq,
            level_of_feature,
            branching,
            depth,
        })
    }

    pub fn items(&self) -> usize {
        self.y.ncols()
    }

    pub fn features(&self) -> usize {
        self.y.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.x.nrows()
    }

    /// True when every pattern carries the same weight.
    pub fn is_uniform(&self) -> bool {
        self.freq.windows(2).all(|w| w[0] == w[1])
    }

    pub fn features_at_level(&self, level: usize) -> impl Iterator<Item = usize> + '_ {
        self.level_of_feature
            .iter()
            .enumerate()
            .filter(move |(_, &k)| k == level)
            .map(|(f, _)| f)
    }

    /// True when `x` is the identity, i.e. patterns are the items themselves.
    pub fn has_identity_input(&self) -> bool {
        self.x.is_square() && self.x == DMatrix::identity(self.x.nrows(), self.x.ncols())
    }

    /// Same leaf structure as [`hierarchy_distance`], derived from the dataset's shape.
    pub fn distance(&self, a: usize, b: usize) -> Result<usize> {
        let items = self.items();
        for item in [a, b] {
            if item >= items {
                return Err(Error::UnknownItem { item, items });
            }
        }
        let level = (1..=self.depth)
            .rev()
            .find(|&k| {
                let span = self.branching.pow((self.depth - k) as u32);
                a / span == b / span
            })
            .unwrap_or(1);
        Ok(level)
    }

    /// Text bundle: header `P F D branching`, target rows, freq line, level line.
    pub fn to_bundle(&self) -> String {
        let mut out = format!(
            "{} {} {} {}\n",
            self.items(),
            self.features(),
            self.depth,
            self.branching
        );
        for row in self.y.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{}", *v as u8)).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        let freq: Vec<String> = self.freq.iter().map(|w| format!("{w:?}")).collect();
        out.push_str(&freq.join(" "));
        out.push('\n');
        let levels: Vec<String> = self
            .level_of_feature
            .iter()
            .map(|k| k.to_string())
            .collect();
        out.push_str(&levels.join(" "));
        out.push('\n');
        out
    }

    pub fn from_bundle(text: &str) -> Result<Dataset> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let header: Vec<usize> = parse_row(line, header)?;
        let [p, f, d, b] = header[..] else {
            return Err(Error::Parse {
                line,
                msg: "header must be `P F D branching`".into(),
            });
        };
        let mut y = DMatrix::zeros(f, p);
        for r in 0..f {
            let (line, text) = lines.next().ok_or(Error::Parse {
                line: 0,
                msg: format!("expected {f} target rows, found {r}"),
            })?;
            let row: Vec<u8> = parse_row(line, text)?;
            if row.len() != p || row.iter().any(|&v| v > 1) {
                return Err(Error::Parse {
                    line,
                    msg: format!("target row must hold {p} binary entries"),
                });
            }
            for (c, v) in row.into_iter().enumerate() {
                y[(r, c)] = v as f64;
            }
        }
        let (line, text) = lines.next().ok_or(Error::Parse {
            line: 0,
            msg: "missing frequency line".into(),
        })?;
        let freq: Vec<f64> = parse_row(line, text)?;
        let (line, text) = lines.next().ok_or(Error::Parse {
            line: 0,
            msg: "missing level line".into(),
        })?;
        let levels: Vec<usize> = parse_row(line, text)?;
        if let Some((line, _)) = lines.next() {
            return Err(Error::Parse {
                line,
                msg: "trailing content".into(),
            });
        }
        Dataset::from_parts(DMatrix::identity(p, p), y, freq, levels, b, d)
    }
}

fn parse_row<T: std::str::FromStr>(line: usize, text: &str) -> Result<Vec<T>> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("cannot parse `{tok}`"),
            })
        })
        .collect()
}

pub fn make_dataset(tree: &HierarchyTree) -> Dataset {
    let p = tree.item_count();
    let f = tree.feature_count();
    let mut y = DMatrix::zeros(f, p);
    for item in 0..p {
        for level in 1..=tree.depth() {
            let node = tree.ancestor(item, level);
            y[(tree.feature_of_node(node), item)] = 1.0;
        }
    }
    let mut level_of_feature = vec![0; f];
    for node in tree.nodes() {
        level_of_feature[tree.feature_of_node(node.id)] = node.level;
    }
    Dataset {
        x: DMatrix::identity(p, p),
        y,
        freq: vec![1.0; p],
        level_of_feature,
        branching: tree.branching(),
        depth: tree.depth(),
    }
}

pub fn apply_frequency(ds: &Dataset, rule: &FrequencyRule) -> Result<Dataset> {
    let freq = rule.weights(ds.items())?;
    Ok(Dataset { freq, ..ds.clone() })
}
