use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{AlignError, SentenceAlignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetrizeMode {
    Intersection,
    Union,
    GrowDiagFinalAnd,
}

impl std::str::FromStr for SymmetrizeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "int" | "intersection" => Ok(Self::Intersection),
            "union" => Ok(Self::Union),
            "gdfa" | "grow_diag_final_and" | "grow-diag-final-and" => Ok(Self::GrowDiagFinalAnd),
            other => Err(format!("unknown symmetrization {other:?} (expected int, union or gdfa)")),
        }
    }
}

const NEIGHBORS: [(i64, i64); 8] = [(-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)];

/// Combines a forward and a reverse alignment of the same sentence pair.
/// Both must be oriented source-to-target.
pub fn symmetrize(
    forward: &SentenceAlignment,
    reverse: &SentenceAlignment,
    mode: SymmetrizeMode,
) -> Result<SentenceAlignment, AlignError> {
    if (forward.source_len, forward.target_len) != (reverse.source_len, reverse.target_len) {
        return Err(AlignError::DimensionMismatch {
            ordinal: forward.ordinal,
            a_src: forward.source_len,
            a_tgt: forward.target_len,
            b_src: reverse.source_len,
            b_tgt: reverse.target_len,
        });
    }
    forward.check_bounds()?;
    reverse.check_bounds()?;
    let a: BTreeSet<_> = forward.links.iter().copied().collect();
    let b: BTreeSet<_> = reverse.links.iter().copied().collect();
    let links = match mode {
        SymmetrizeMode::Intersection => a.intersection(&b).copied().collect(),
        SymmetrizeMode::Union => a.union(&b).copied().collect(),
        SymmetrizeMode::GrowDiagFinalAnd => grow_diag_final_and(forward, &a, &b),
    };
    Ok(SentenceAlignment::new(forward.ordinal, forward.source_len, forward.target_len, links))
}

struct Grid {
    n: usize,
    linked: Vec<bool>,
    src_used: Vec<bool>,
    tgt_used: Vec<bool>,
}

impl Grid {
    fn new(m: usize, n: usize) -> Self {
        Self {
            n,
            linked: vec![false; m * n],
            src_used: vec![false; m + 1],
            tgt_used: vec![false; n + 1],
        }
    }

    fn has(&self, i: u32, j: u32) -> bool {
        self.linked[(i as usize - 1) * self.n + (j as usize - 1)]
    }

    fn add(&mut self, i: u32, j: u32) {
        self.linked[(i as usize - 1) * self.n + (j as usize - 1)] = true;
        self.src_used[i as usize] = true;
        self.tgt_used[j as usize] = true;
    }
}

fn grow_diag_final_and(
    shape: &SentenceAlignment,
    a: &BTreeSet<(u32, u32)>,
    b: &BTreeSet<(u32, u32)>,
) -> Vec<(u32, u32)> {
    let (m, n) = (shape.source_len as u32, shape.target_len as u32);
    let union: BTreeSet<_> = a.union(b).copied().collect();
    let mut grid = Grid::new(m as usize, n as usize);
    for &(i, j) in a.intersection(b) {
        grid.add(i, j);
    }

    let mut changed = true;
    while changed {
        changed = false;
        for i in 1..=m {
            for j in 1..=n {
                if !grid.has(i, j) {
                    continue;
                }
                for (di, dj) in NEIGHBORS {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 1 || nj < 1 || ni > m as i64 || nj > n as i64 {
                        continue;
                    }
                    let (ni, nj) = (ni as u32, nj as u32);
                    if grid.has(ni, nj) || !union.contains(&(ni, nj)) {
                        continue;
                    }
                    if !grid.src_used[ni as usize] || !grid.tgt_used[nj as usize] {
                        grid.add(ni, nj);
                        changed = true;
                    }
                }
            }
        }
    }

    for side in [a, b] {
        for &(i, j) in side {
            if !grid.src_used[i as usize] && !grid.tgt_used[j as usize] {
                grid.add(i, j);
            }
        }
    }

    let mut out = Vec::new();
    for i in 1..=m {
        for j in 1..=n {
            if grid.has(i, j) {
                out.push((i, j));
            }
        }
    }
    out
}
