//! Graph statistics on small weighted digraphs over node indices `0..n`.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};

/// Relative tolerance under which two weighted path lengths count as equal.
pub const PATH_TIE_TOLERANCE: f64 = 1e-9;

pub fn lengths_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= PATH_TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Directed graph with positive edge lengths.
#[derive(Debug, Clone)]
pub struct Digraph {
    n: usize,
    succ: Vec<Vec<(usize, f64)>>,
    pred: Vec<Vec<usize>>,
    edge_count: usize,
}

impl Digraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut succ = vec![Vec::new(); n];
        let mut pred = vec![Vec::new(); n];
        let mut edge_count = 0;
        for (s, t, len) in edges {
            succ[s].push((t, len));
            pred[t].push(s);
            edge_count += 1;
        }
        for list in &mut succ {
            list.sort_by_key(|&(t, _)| t);
        }
        Digraph {
            n,
            succ,
            pred,
            edge_count,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// `|E| / (|V| (|V| - 1))`, zero below two nodes.
    pub fn density(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.edge_count as f64 / (self.n * (self.n - 1)) as f64
    }

    /// `(in + out degree) / (|V| - 1)` per node.
    pub fn degree_centrality(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![0.0; self.n];
        }
        let scale = (self.n - 1) as f64;
        (0..self.n)
            .map(|v| (self.succ[v].len() + self.pred[v].len()) as f64 / scale)
            .collect()
    }

    fn undirected_neighbors(&self) -> Vec<BTreeSet<usize>> {
        let mut nb = vec![BTreeSet::new(); self.n];
        for (s, list) in self.succ.iter().enumerate() {
            for &(t, _) in list {
                if s != t {
                    nb[s].insert(t);
                    nb[t].insert(s);
                }
            }
        }
        nb
    }

    /// Weakly connected component label per node; labels are numbered in
    /// order of each component's smallest node.
    pub fn weak_components(&self) -> Vec<usize> {
        let nb = self.undirected_neighbors();
        let mut label = vec![usize::MAX; self.n];
        let mut next = 0;
        for start in 0..self.n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &u in &nb[v] {
                    if label[u] == usize::MAX {
                        label[u] = next;
                        queue.push_back(u);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn weak_component_count(&self) -> usize {
        self.weak_components().into_iter().max().map_or(0, |m| m + 1)
    }

    /// Average local clustering on the undirected projection; nodes with
    /// fewer than two neighbors contribute zero.
    pub fn average_clustering(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let nb = self.undirected_neighbors();
        let mut total = 0.0;
        for v in 0..self.n {
            let k = nb[v].len();
            if k < 2 {
                continue;
            }
            let ns: Vec<usize> = nb[v].iter().copied().collect();
            let mut links = 0usize;
            for (i, &a) in ns.iter().enumerate() {
                for &b in &ns[i + 1..] {
                    if nb[a].contains(&b) {
                        links += 1;
                    }
                }
            }
            total += 2.0 * links as f64 / (k * (k - 1)) as f64;
        }
        total / self.n as f64
    }

    /// Unweighted hop distances from `source` (`None` when unreachable).
    pub fn hop_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].expect("queued nodes have a distance");
            for &(t, _) in &self.succ[v] {
                if dist[t].is_none() {
                    dist[t] = Some(d + 1);
                    queue.push_back(t);
                }
            }
        }
        dist
    }

    /// Mean hop distance over ordered reachable pairs inside the largest
    /// weakly connected component (ties go to the component holding the
    /// smaller node). `None` when that component has no reachable pair.
    pub fn average_shortest_path_in_largest_component(&self) -> Option<f64> {
        if self.n == 0 {
            return None;
        }
        let label = self.weak_components();
        let count = label.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; count];
        for &l in &label {
            sizes[l] += 1;
        }
        // max_by_key keeps the last maximum; scan in reverse so the first wins
        let biggest = (0..count).rev().max_by_key(|&c| sizes[c])?;
        let mut sum = 0usize;
        let mut pairs = 0usize;
        for s in (0..self.n).filter(|&s| label[s] == biggest) {
            for (t, d) in self.hop_distances(s).into_iter().enumerate() {
                if t != s {
                    if let Some(d) = d {
                        sum += d;
                        pairs += 1;
                    }
                }
            }
        }
        (pairs > 0).then(|| sum as f64 / pairs as f64)
    }

    /// Fewest hops from any node in `sources` to any node in `targets`.
    pub fn min_hops(&self, sources: &[usize], targets: &[usize]) -> Option<usize> {
        sources
            .iter()
            .filter_map(|&s| {
                let dist = self.hop_distances(s);
                targets.iter().filter_map(|&t| dist[t]).min()
            })
            .min()
    }

    /// Unnormalized betweenness `C_B(v) = sum_{s != v != t} sigma_st(v) / sigma_st`
    /// over weighted shortest paths (Brandes).
    pub fn betweenness(&self) -> Vec<f64> {
        let n = self.n;
        let mut cb = vec![0.0; n];
        for s in 0..n {
            let mut stack = Vec::with_capacity(n);
            let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
            let mut sigma = vec![0.0f64; n];
            let mut dist = vec![f64::INFINITY; n];
            let mut settled = vec![false; n];
            sigma[s] = 1.0;
            dist[s] = 0.0;
            let mut heap = BinaryHeap::new();
            heap.push(Pending { dist: 0.0, node: s });
            while let Some(Pending { node: v, .. }) = heap.pop() {
                if settled[v] {
                    continue;
                }
                settled[v] = true;
                stack.push(v);
                for &(w, len) in &self.succ[v] {
                    if settled[w] {
                        continue;
                    }
                    let alt = dist[v] + len;
                    if dist[w].is_infinite() || (alt < dist[w] && !lengths_tie(alt, dist[w])) {
                        dist[w] = alt;
                        sigma[w] = sigma[v];
                        preds[w].clear();
                        preds[w].push(v);
                        heap.push(Pending { dist: alt, node: w });
                    } else if lengths_tie(alt, dist[w]) {
                        sigma[w] += sigma[v];
                        preds[w].push(v);
                    }
                }
            }
            let mut delta = vec![0.0; n];
            while let Some(w) = stack.pop() {
                for &v in &preds[w] {
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
                }
                if w != s {
                    cb[w] += delta[w];
                }
            }
        }
        cb
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    dist: f64,
    node: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.node.cmp(&self.node))
    }
}
