use crate::error::{Error, Result};

/// In-neighbor lists in compressed row form.
///
/// Receiver `v` hears from `sources[offsets[v]..offsets[v + 1]]`, always in
/// ascending order. Edge `e` is the position of a source inside `sources`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    sources: Vec<usize>,
}

impl Neighborhoods {
    /// Builds from per-receiver source lists; lists are sorted and deduplicated.
    pub fn from_lists(lists: Vec<Vec<usize>>) -> Result<Self> {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut sources = Vec::new();
        offsets.push(0);
        for mut list in lists {
            list.sort_unstable();
            list.dedup();
            if let Some(&bad) = list.iter().find(|&&u| u >= n) {
                return Err(Error::Index {
                    what: "neighbor",
                    index: bad,
                    bound: n,
                });
            }
            sources.extend(list);
            offsets.push(sources.len());
        }
        Ok(Neighborhoods { offsets, sources })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.sources.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.sources[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn edge_range(&self, v: usize) -> std::ops::Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    /// Uniform weights `1 / |N(v)|` for every edge.
    pub fn uniform_weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.sources.len());
        for v in 0..self.num_nodes() {
            let d = self.degree(v);
            w.extend(std::iter::repeat_n(1.0 / d as f64, d));
        }
        w
    }
}

/// Sum with a canonical, order-independent evaluation order.
///
/// Terms are added in ascending value order so any permutation of the input
/// produces a bit-identical result.
pub(crate) fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}
