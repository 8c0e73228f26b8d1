use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Indeterminate blocks used across the toolkit, in their declaration order.
///
/// The order of the variants is the block order used by the graded
/// lexicographic monomial ordering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    /// Tracking error `e`.
    E,
    /// Planner state `x̂`.
    Xhat,
    /// Planner input `û`.
    Uhat,
    /// Disturbance `δ`.
    Delta,
    /// Constraint-set parameter `θ`.
    Theta,
    /// Tracker state `x`.
    X,
}

impl Block {
    pub const ALL: [Block; 6] = [
        Block::E,
        Block::Xhat,
        Block::Uhat,
        Block::Delta,
        Block::Theta,
        Block::X,
    ];

    /// Prefix used in textual variable names (`e1`, `xh2`, `th1`, ...).
    pub fn prefix(self) -> &'static str {
        match self {
            Block::E => "e",
            Block::Xhat => "xh",
            Block::Uhat => "uh",
            Block::Delta => "d",
            Block::Theta => "th",
            Block::X => "x",
        }
    }

    pub fn slot(self) -> usize {
        self as usize
    }

    /// Element `index` (zero based) of this block.
    pub fn var(self, index: usize) -> Var {
        Var::new(self, index)
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

/// A single scalar indeterminate: component `index` of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub block: Block,
    pub index: u16,
}

impl Var {
    pub fn new(block: Block, index: usize) -> Self {
        Var {
            block,
            index: index as u16,
        }
    }

    /// One-based textual name, e.g. `e4` or `xh1`.
    pub fn name(self) -> String {
        format!("{}{}", self.block.prefix(), self.index + 1)
    }

    pub fn parse(name: &str) -> Result<Self> {
        // longest prefix first so that "xh1" is not read as block x
        let mut prefixes: Vec<Block> = Block::ALL.to_vec();
        prefixes.sort_by_key(|b| std::cmp::Reverse(b.prefix().len()));
        for block in prefixes {
            if let Some(rest) = name.strip_prefix(block.prefix()) {
                if let Ok(k) = rest.parse::<usize>() {
                    if k >= 1 {
                        return Ok(Var::new(block, k - 1));
                    }
                }
            }
        }
        Err(Error::Parse(format!("unknown variable name `{name}`")))
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.block.prefix(), self.index + 1)
    }
}

/// A named block of indeterminates with its dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndeterminateBlock {
    pub block: Block,
    pub dim: usize,
}

impl IndeterminateBlock {
    pub fn new(block: Block, dim: usize) -> Self {
        assert!(dim >= 1, "indeterminate block {block} must have dim >= 1");
        IndeterminateBlock { block, dim }
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        (0..self.dim).map(move |i| Var::new(self.block, i))
    }
}

/// The variable universe of a polynomial: blocks sorted in declaration order,
/// each block appearing at most once.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Universe {
    blocks: Vec<IndeterminateBlock>,
}

impl Universe {
    pub fn empty() -> Self {
        Universe { blocks: Vec::new() }
    }

    pub fn new(blocks: impl IntoIterator<Item = IndeterminateBlock>) -> Self {
        let mut u = Universe::empty();
        for b in blocks {
            u.insert(b);
        }
        u
    }

    pub fn single(block: Block, dim: usize) -> Self {
        Universe::new([IndeterminateBlock::new(block, dim)])
    }

    /// Inserts a block; a repeated block keeps the larger dimension.
    pub fn insert(&mut self, b: IndeterminateBlock) {
        match self.blocks.binary_search_by(|x| x.block.cmp(&b.block)) {
            Ok(i) => self.blocks[i].dim = self.blocks[i].dim.max(b.dim),
            Err(i) => self.blocks.insert(i, b),
        }
    }

    pub fn union(&self, other: &Universe) -> Universe {
        let mut u = self.clone();
        for b in &other.blocks {
            u.insert(*b);
        }
        u
    }

    pub fn without(&self, block: Block) -> Universe {
        Universe {
            blocks: self
                .blocks
                .iter()
                .copied()
                .filter(|b| b.block != block)
                .collect(),
        }
    }

    pub fn blocks(&self) -> &[IndeterminateBlock] {
        &self.blocks
    }

    pub fn dim_of(&self, block: Block) -> Option<usize> {
        self.blocks.iter().find(|b| b.block == block).map(|b| b.dim)
    }

    pub fn contains_block(&self, block: Block) -> bool {
        self.dim_of(block).is_some()
    }

    /// All scalar variables, in monomial order.
    pub fn vars(&self) -> Vec<Var> {
        self.blocks.iter().flat_map(|b| b.vars()).collect()
    }

    pub fn nvars(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for b in Block::ALL {
            for i in 0..5 {
                let v = Var::new(b, i);
                assert_eq!(Var::parse(&v.name()).unwrap(), v);
            }
        }
        assert_eq!(Var::parse("xh2").unwrap(), Var::new(Block::Xhat, 1));
        assert_eq!(Var::parse("x2").unwrap(), Var::new(Block::X, 1));
        assert!(Var::parse("q1").is_err());
        assert!(Var::parse("e0").is_err());
    }

    #[test]
    fn universe_union_is_ordered() {
        let a = Universe::new([
            IndeterminateBlock::new(Block::Theta, 2),
            IndeterminateBlock::new(Block::E, 4),
        ]);
        let b = Universe::single(Block::Xhat, 2);
        let u = a.union(&b);
        let order: Vec<Block> = u.blocks().iter().map(|b| b.block).collect();
        assert_eq!(order, vec![Block::E, Block::Xhat, Block::Theta]);
        assert_eq!(u.nvars(), 8);
    }
}
