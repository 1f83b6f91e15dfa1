//! Node-level connectivity characters of the street network.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rayon::prelude::*;

use crate::ingest::StreetNetwork;

/// Multigraph view of the network: edges keep multiplicity and self-loops.
#[derive(Debug, Clone)]
pub struct Graph {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    /// Per node: (neighbor, edge index); a self-loop appears twice.
    pub adj: Vec<Vec<(usize, usize)>>,
}

impl Graph {
    pub fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for (k, &(u, v, _)) in edges.iter().enumerate() {
            adj[u].push((v, k));
            adj[v].push((u, k));
        }
        Graph { n, edges, adj }
    }

    pub fn from_network(net: &StreetNetwork) -> Self {
        Graph::new(net.nodes.len(), net.segments.iter().map(|s| (s.start_node, s.end_node, s.length_m())).collect())
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    /// Nodes within network distance `r` of `src` (including `src`), ascending.
    pub fn within(&self, src: usize, r: f64) -> Vec<usize> {
        #[derive(PartialEq)]
        struct St(f64, usize);
        impl Eq for St {}
        impl Ord for St {
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
            }
        }
        impl PartialOrd for St {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        let mut dist = std::collections::HashMap::new();
        let mut heap = BinaryHeap::new();
        dist.insert(src, 0.0);
        heap.push(St(0.0, src));
        while let Some(St(d, u)) = heap.pop() {
            if d > dist[&u] {
                continue;
            }
            for &(v, k) in &self.adj[u] {
                let nd = d + self.edges[k].2;
                if nd <= r && dist.get(&v).is_none_or(|&old| nd < old) {
                    dist.insert(v, nd);
                    heap.push(St(nd, v));
                }
            }
        }
        let mut v: Vec<usize> = dist.into_keys().collect();
        v.sort_unstable();
        v
    }
}

/// Per-node values of the radius-dependent characters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgraphMetrics {
    pub mean_degree: f64,
    pub density: f64,
    pub edge_node_ratio: f64,
    pub culdesac_length: f64,
    pub cyclomatic: f64,
    pub gamma: f64,
    pub meshedness: f64,
}

impl SubgraphMetrics {
    const MISSING: SubgraphMetrics = SubgraphMetrics {
        mean_degree: f64::NAN,
        density: f64::NAN,
        edge_node_ratio: f64::NAN,
        culdesac_length: f64::NAN,
        cyclomatic: f64::NAN,
        gamma: f64::NAN,
        meshedness: f64::NAN,
    };
}

/// Characters of the subgraph induced by nodes within network distance `r`.
/// Degrees are taken from the whole network. A subgraph holding only the
/// source node yields missing values.
pub fn subgraph_metrics(g: &Graph, src: usize, r: f64) -> SubgraphMetrics {
    let nodes = g.within(src, r);
    let v = nodes.len();
    if v <= 1 {
        return SubgraphMetrics::MISSING;
    }
    let mut inside = vec![false; g.n];
    for &u in &nodes {
        inside[u] = true;
    }
    let mut edge_ids = BTreeSet::new();
    for &u in &nodes {
        for &(w, k) in &g.adj[u] {
            if inside[w] {
                edge_ids.insert(k);
            }
        }
    }
    let e = edge_ids.len();
    let total_len: f64 = edge_ids.iter().map(|&k| g.edges[k].2).sum();
    let culdesac: f64 = edge_ids
        .iter()
        .filter(|&&k| g.degree(g.edges[k].0) == 1 || g.degree(g.edges[k].1) == 1)
        .map(|&k| g.edges[k].2)
        .sum();
    // components of the subgraph
    let pos = |u: usize| nodes.binary_search(&u).expect("member");
    let mut parent: Vec<usize> = (0..v).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &k in &edge_ids {
        let (a, b) = (find(&mut parent, pos(g.edges[k].0)), find(&mut parent, pos(g.edges[k].1)));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let p = (0..v).filter(|&i| find(&mut parent, i) == i).count();
    let (vf, ef) = (v as f64, e as f64);
    SubgraphMetrics {
        mean_degree: nodes.iter().map(|&u| g.degree(u) as f64).sum::<f64>() / vf,
        density: if total_len > 0.0 { vf / (total_len / 1000.0) } else { f64::NAN },
        edge_node_ratio: ef / vf,
        culdesac_length: culdesac,
        cyclomatic: ef - vf + p as f64,
        gamma: if v >= 3 { ef / (3.0 * (vf - 2.0)) } else { f64::NAN },
        meshedness: if v >= 3 { (ef - vf + 1.0) / (2.0 * vf - 5.0) } else { f64::NAN },
    }
}

/// Mean length of the edges incident to `v`.
pub fn mean_node_distance(g: &Graph, v: usize) -> f64 {
    let ids: BTreeSet<usize> = g.adj[v].iter().map(|&(_, k)| k).collect();
    if ids.is_empty() {
        return f64::NAN;
    }
    ids.iter().map(|&k| g.edges[k].2).sum::<f64>() / ids.len() as f64
}

/// Square clustering coefficient on the simple graph (multi-edges collapsed,
/// self-loops dropped).
pub fn squares_clustering(g: &Graph) -> Vec<f64> {
    let nbrs: Vec<BTreeSet<usize>> = (0..g.n)
        .map(|v| g.adj[v].iter().map(|&(w, _)| w).filter(|&w| w != v).collect())
        .collect();
    (0..g.n)
        .into_par_iter()
        .map(|v| {
            let nv: Vec<usize> = nbrs[v].iter().copied().collect();
            let mut squares_total = 0.0;
            let mut potential = 0.0;
            for (i, &u) in nv.iter().enumerate() {
                for &w in &nv[i + 1..] {
                    let squares = nbrs[u].intersection(&nbrs[w]).filter(|&&x| x != v).count() as f64;
                    squares_total += squares;
                    let mut degm = squares + 1.0;
                    if nbrs[u].contains(&w) {
                        degm += 1.0;
                    }
                    potential += (nbrs[u].len() as f64 - degm) + (nbrs[w].len() as f64 - degm) + squares;
                }
            }
            if potential > 0.0 {
                squares_total / potential
            } else {
                0.0
            }
        })
        .collect()
}
