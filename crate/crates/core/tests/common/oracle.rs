//! Brute-force reference for the diagonal alignment model: every alignment
//! vector is enumerated, nothing relies on per-position factorization.

use std::collections::BTreeMap;

pub const FLOOR: f64 = 1e-12;

pub type Pair = (Vec<u32>, Vec<u32>);

/// Prior over `0..=m` for 1-based target position `j`, normalized by a
/// direct sum.
pub fn prior(j: usize, m: usize, n: usize, lambda: f64, p0: f64) -> Vec<f64> {
    if m == 0 {
        return vec![1.0];
    }
    let h = |i: usize| -((i as f64 / m as f64) - (j as f64 / n as f64)).abs();
    let z: f64 = (1..=m).map(|i| (lambda * h(i)).exp()).sum();
    let mut out = vec![p0];
    out.extend((1..=m).map(|i| (1.0 - p0) * (lambda * h(i)).exp() / z));
    out
}

#[derive(Debug, Clone)]
pub struct Table {
    pub probs: BTreeMap<(Option<u32>, u32), f64>,
}

impl Table {
    /// Uniform `1 / |target types|` over co-occurring pairs and null.
    pub fn initial(pairs: &[Pair], target_types: usize) -> Self {
        let mut probs = BTreeMap::new();
        for (src, tgt) in pairs {
            for &t in tgt {
                probs.insert((None, t), 1.0 / target_types as f64);
                for &s in src {
                    probs.insert((Some(s), t), 1.0 / target_types as f64);
                }
            }
        }
        Table { probs }
    }

    pub fn get(&self, s: Option<u32>, t: u32) -> f64 {
        self.probs.get(&(s, t)).copied().unwrap_or(FLOOR)
    }
}

fn for_each_alignment(m: usize, n: usize, mut f: impl FnMut(&[usize])) {
    let mut a = vec![0usize; n];
    loop {
        f(&a);
        let mut k = n;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            if a[k] < m {
                a[k] += 1;
                break;
            }
            a[k] = 0;
        }
    }
}

fn joint(table: &Table, src: &[u32], tgt: &[u32], a: &[usize], lambda: f64, p0: f64) -> f64 {
    let (m, n) = (src.len(), tgt.len());
    a.iter()
        .enumerate()
        .map(|(jj, &i)| {
            let d = prior(jj + 1, m, n, lambda, p0)[i];
            let s = if i == 0 { None } else { Some(src[i - 1]) };
            d * table.get(s, tgt[jj])
        })
        .product()
}

/// Posterior marginals `q(a_j = i)` and the sentence likelihood.
pub fn posteriors(table: &Table, src: &[u32], tgt: &[u32], lambda: f64, p0: f64) -> (Vec<Vec<f64>>, f64) {
    let (m, n) = (src.len(), tgt.len());
    let mut mass = vec![vec![0.0; m + 1]; n];
    let mut total = 0.0;
    for_each_alignment(m, n, |a| {
        let p = joint(table, src, tgt, a, lambda, p0);
        total += p;
        for (j, &i) in a.iter().enumerate() {
            mass[j][i] += p;
        }
    });
    for row in &mut mass {
        row.iter_mut().for_each(|v| *v /= total);
    }
    (mass, total)
}

/// Most probable alignment vector; the first in lexicographic order wins
/// ties, where values within a relative 1e-12 count as tied. Returns
/// 1-based `(i, j)` links, null omitted.
pub fn viterbi(table: &Table, src: &[u32], tgt: &[u32], lambda: f64, p0: f64) -> Vec<(u32, u32)> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_alignment(src.len(), tgt.len(), |a| {
        let p = joint(table, src, tgt, a, lambda, p0);
        if best.as_ref().is_none_or(|(b, _)| p > *b * (1.0 + 1e-12)) {
            best = Some((p, a.to_vec()));
        }
    });
    let (_, a) = best.expect("at least one alignment");
    a.iter()
        .enumerate()
        .filter(|(_, &i)| i > 0)
        .map(|(j, &i)| (i as u32, j as u32 + 1))
        .collect()
}

/// One maximum-likelihood EM iteration. Returns the new table and the
/// log-likelihood under the old one.
pub fn em_step(table: &Table, pairs: &[Pair], lambda: f64, p0: f64) -> (Table, f64) {
    let mut counts: BTreeMap<(Option<u32>, u32), f64> = table.probs.keys().map(|&k| (k, 0.0)).collect();
    let mut ll = 0.0;
    for (src, tgt) in pairs {
        let (post, total) = posteriors(table, src, tgt, lambda, p0);
        ll += total.ln();
        for (j, row) in post.iter().enumerate() {
            for (i, &q) in row.iter().enumerate() {
                let s = if i == 0 { None } else { Some(src[i - 1]) };
                *counts.get_mut(&(s, tgt[j])).expect("co-occurring key") += q;
            }
        }
    }
    let mut totals: BTreeMap<Option<u32>, f64> = BTreeMap::new();
    for (&(s, _), &c) in &counts {
        *totals.entry(s).or_default() += c;
    }
    let probs = counts.iter().map(|(&(s, t), &c)| ((s, t), c / totals[&s])).collect();
    (Table { probs }, ll)
}
