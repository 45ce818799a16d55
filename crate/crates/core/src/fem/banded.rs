//! Banded LU with partial pivoting and reverse Cuthill-McKee ordering, used
//! for the indefinite saddle-point system of the mixed biharmonic problem.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// LU factors of a banded matrix with `kl` sub- and `ku` super-diagonals.
///
/// Row `i` of the working array stores columns `i - kl ..= i + kl + ku`; the
/// extra `kl` columns hold fill-in caused by row interchanges.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    upper: Vec<f64>,
    multipliers: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    /// Factors the matrix given by `(row, col, value)` entries (duplicates
    /// summed).
    pub fn factor(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let (mut kl, mut ku) = (0, 0);
        for &(r, c, _) in entries {
            if r >= n || c >= n {
                return Err(Error::Dimension {
                    expected: n,
                    actual: r.max(c) + 1,
                    context: "banded entry",
                });
            }
            if r > c {
                kl = kl.max(r - c);
            } else {
                ku = ku.max(c - r);
            }
        }
        let width = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            ku,
            width,
            upper: vec![0.0; n * width],
            multipliers: vec![0.0; n * kl],
            pivots: vec![0; n],
        };
        for &(r, c, v) in entries {
            *lu.at_mut(r, c) += v;
        }
        lu.eliminate()?;
        Ok(lu)
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.kl >= r && c <= r + self.kl + self.ku);
        r * self.width + (c + self.kl - r)
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.upper[self.idx(r, c)]
    }

    #[inline]
    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        let i = self.idx(r, c);
        &mut self.upper[i]
    }

    fn eliminate(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = self.at(k, k).abs();
            for r in k + 1..=last_row {
                let v = self.at(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::Solver(format!(
                    "singular banded system: zero pivot in column {k} of {n}"
                )));
            }
            self.pivots[k] = p;
            if p != k {
                for c in k..=last_col {
                    let (a, b) = (self.idx(k, c), self.idx(p, c));
                    self.upper.swap(a, b);
                }
            }
            let pivot = self.at(k, k);
            for r in k + 1..=last_row {
                let m = self.at(r, k) / pivot;
                self.multipliers[k * kl + (r - k - 1)] = m;
                *self.at_mut(r, k) = 0.0;
                if m != 0.0 {
                    for c in k + 1..=last_col {
                        let v = self.at(k, c);
                        *self.at_mut(r, c) -= m * v;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        if b.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: b.len(),
                context: "banded right-hand side",
            });
        }
        let mut y = b.to_vec();
        for k in 0..n {
            y.swap(k, self.pivots[k]);
            let yk = y[k];
            for r in k + 1..=(k + kl).min(n - 1) {
                y[r] -= self.multipliers[k * kl + (r - k - 1)] * yk;
            }
        }
        for k in (0..n).rev() {
            let mut s = y[k];
            for c in k + 1..=(k + kl + ku).min(n - 1) {
                s -= self.at(k, c) * y[c];
            }
            y[k] = s / self.at(k, k);
        }
        Ok(y)
    }
}

/// Reverse Cuthill-McKee ordering of a graph given by sorted neighbour lists.
/// Returns `order` with `order[k]` the vertex placed at position `k`.
pub fn reverse_cuthill_mckee(neighbors: &[Vec<usize>]) -> Vec<usize> {
    let n = neighbors.len();
    let degree = |v: usize| neighbors[v].len();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n)
            .filter(|&v| !placed[v])
            .min_by_key(|&v| (degree(v), v))
            .expect("unplaced vertex exists");
        let start = pseudo_peripheral(neighbors, seed);
        let mut queue = VecDeque::from([start]);
        placed[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = neighbors[v]
                .iter()
                .copied()
                .filter(|&w| !placed[w])
                .collect();
            next.sort_by_key(|&w| (degree(w), w));
            for w in next {
                placed[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// BFS levels from `root`: returns (eccentricity, last level).
fn level_structure(neighbors: &[Vec<usize>], root: usize) -> (usize, Vec<usize>) {
    let mut depth = vec![usize::MAX; neighbors.len()];
    depth[root] = 0;
    let mut frontier = vec![root];
    let mut level = 0;
    loop {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in &neighbors[v] {
                if depth[w] == usize::MAX {
                    depth[w] = level + 1;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return (level, frontier);
        }
        frontier = next;
        level += 1;
    }
}

fn pseudo_peripheral(neighbors: &[Vec<usize>], seed: usize) -> usize {
    let mut root = seed;
    let (mut ecc, mut last) = level_structure(neighbors, root);
    loop {
        let candidate = *last
            .iter()
            .min_by_key(|&&v| (neighbors[v].len(), v))
            .expect("nonempty level");
        let (e, l) = level_structure(neighbors, candidate);
        if e <= ecc {
            return root;
        }
        root = candidate;
        ecc = e;
        last = l;
    }
}
