//! Simple undirected graphs with an ordered edge list, and the plain-text
//! edge-list format: a header line `n m` followed by `m` lines `u v`
//! (0-based vertex ids).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SimpleGraph {
    pub n_vertices: usize,
    /// Edge `i` is `(u, v)` with `u < v`. Order is significant: it is the
    /// row order of the incidence matrix.
    pub edges: Vec<(usize, usize)>,
}

impl SimpleGraph {
    pub fn new(n_vertices: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut normalized = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u == v {
                return Err(Error::invalid(format!("self-loop at vertex {u}")));
            }
            if u >= n_vertices || v >= n_vertices {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) outside {n_vertices} vertices"
                )));
            }
            normalized.push((u.min(v), u.max(v)));
        }
        let mut sorted = normalized.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("parallel edges in a simple graph"));
        }
        Ok(SimpleGraph {
            n_vertices,
            edges: normalized,
        })
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .collect();
        SimpleGraph {
            n_vertices: n,
            edges,
        }
    }

    pub fn cycle(n: usize) -> Self {
        let edges = (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n))).collect();
        SimpleGraph {
            n_vertices: n,
            edges,
        }
    }

    pub fn path(n: usize) -> Self {
        SimpleGraph {
            n_vertices: n,
            edges: (1..n).map(|i| (i - 1, i)).collect(),
        }
    }

    pub fn star(leaves: usize) -> Self {
        SimpleGraph {
            n_vertices: leaves + 1,
            edges: (1..=leaves).map(|i| (0, i)).collect(),
        }
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_vertices];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn is_regular(&self, degree: usize) -> bool {
        self.degrees().iter().all(|&d| d == degree)
    }

    /// Connectivity of the multigraph on `n` vertices with the given edges
    /// (isolated vertices count as separate components).
    pub fn multigraph_is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
        let mut dsu = Dsu::new(n);
        for &(u, v) in edges {
            dsu.union(u, v);
        }
        dsu.components() <= 1
    }

    /// Relabels vertices in order of first appearance along the edge list and
    /// drops isolated vertices. When an edge introduces two new vertices both
    /// orders are tried and the lexicographically smallest edge list wins, so
    /// two edge-ordered graphs are equal up to vertex relabeling iff their
    /// canonical forms are equal.
    pub fn canonical(&self) -> SimpleGraph {
        let mut label = vec![usize::MAX; self.n_vertices];
        let mut prefix = Vec::with_capacity(self.edges.len());
        let mut best: Option<Vec<(usize, usize)>> = None;
        self.canonical_search(&mut label, 0, &mut prefix, &mut best);
        let edges = best.unwrap_or_default();
        let n_vertices = edges.iter().map(|&(_, v)| v + 1).max().unwrap_or(0);
        SimpleGraph { n_vertices, edges }
    }

    fn canonical_search(
        &self,
        label: &mut Vec<usize>,
        next: usize,
        prefix: &mut Vec<(usize, usize)>,
        best: &mut Option<Vec<(usize, usize)>>,
    ) {
        let i = prefix.len();
        if let Some(b) = best.as_ref() {
            // prune once the prefix is already worse than the incumbent
            if prefix.as_slice() > &b[..i] {
                return;
            }
        }
        if i == self.edges.len() {
            if best.as_ref().map_or(true, |b| &**prefix < b) {
                *best = Some(prefix.clone());
            }
            return;
        }
        let (u, v) = self.edges[i];
        let orders: &[(usize, usize)] = if label[u] == usize::MAX && label[v] == usize::MAX {
            &[(u, v), (v, u)]
        } else {
            &[(u, v)]
        };
        for &(a, b) in orders {
            let mut fresh = Vec::new();
            let mut n = next;
            for x in [a, b] {
                if label[x] == usize::MAX {
                    label[x] = n;
                    fresh.push(x);
                    n += 1;
                }
            }
            prefix.push((label[a].min(label[b]), label[a].max(label[b])));
            self.canonical_search(label, n, prefix, best);
            prefix.pop();
            for x in fresh {
                label[x] = usize::MAX;
            }
        }
    }

    /// Canonical form that also forgets edge order: the lexicographically
    /// smallest sorted edge set over all vertex relabelings reachable by
    /// first-appearance labeling of some edge order. Exponential; intended
    /// for isomorphism checks on small graphs.
    pub fn isomorphism_key(&self) -> Vec<(usize, usize)> {
        let n = self.n_vertices;
        let mut best: Option<Vec<(usize, usize)>> = None;
        let mut perm: Vec<usize> = (0..n).collect();
        permute(&mut perm, 0, &mut |p| {
            let mut e: Vec<(usize, usize)> = self
                .edges
                .iter()
                .map(|&(u, v)| (p[u].min(p[v]), p[u].max(p[v])))
                .collect();
            e.sort_unstable();
            if best.as_ref().map_or(true, |b| e < *b) {
                best = Some(e);
            }
        });
        best.unwrap_or_default()
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{} {}\n", self.n_vertices, self.m());
        for &(u, v) in &self.edges {
            writeln!(out, "{u} {v}").unwrap();
        }
        out
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let parse_pair = |line: usize, l: &str| -> Result<(usize, usize)> {
            let fields: Vec<&str> = l.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected two integers, found {:?}", l),
                });
            }
            let num = |s: &str| {
                s.parse::<usize>().map_err(|e| Error::Parse {
                    line,
                    message: format!("{s:?}: {e}"),
                })
            };
            Ok((num(fields[0])?, num(fields[1])?))
        };
        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header line".into(),
        })?;
        let (n, m) = parse_pair(line, header)?;
        let mut edges = Vec::with_capacity(m);
        let mut last_line = line;
        for (line, l) in lines {
            last_line = line;
            if edges.len() == m {
                return Err(Error::Parse {
                    line,
                    message: format!("more than the declared {m} edges"),
                });
            }
            let (u, v) = parse_pair(line, l)?;
            if u == v || u >= n || v >= n {
                return Err(Error::Parse {
                    line,
                    message: format!("invalid edge ({u}, {v}) for {n} vertices"),
                });
            }
            edges.push((u, v));
        }
        if edges.len() != m {
            return Err(Error::Parse {
                line: last_line,
                message: format!("declared {m} edges, found {}", edges.len()),
            });
        }
        SimpleGraph::new(n, edges).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edge_list(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_edge_list()).map_err(|e| Error::io(path, e))
    }
}

fn permute(perm: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        f(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, f);
        perm.swap(k, i);
    }
}

/// Union-find over `0..n`.
#[derive(Debug, Clone)]
pub struct Dsu {
    parent: Vec<usize>,
    count: usize,
}

impl Dsu {
    pub fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
            count: n,
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        self.count -= 1;
        true
    }

    pub fn components(&self) -> usize {
        self.count
    }
}
