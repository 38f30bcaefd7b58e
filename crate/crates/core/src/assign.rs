//! Recovery of `W_priv` from `M_priv = W_priv W_privᵀ`.
//!
//! With two private images per mix, `W_priv` is the incidence matrix of a
//! multigraph `G` on the private images and `M_priv - 2I` is the adjacency
//! matrix of its line graph (after collapsing parallel edges). Reconstruction
//! builds a Krausz partition of the line graph: every root vertex becomes the
//! clique of edges incident to it, and every line-graph vertex lies in exactly
//! two such cliques.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::PrivateGram;
use crate::graph::{Dsu, SimpleGraph};
use crate::matrix::Matrix;

/// Largest private-image count accepted by [`brute_force_root`].
pub const BRUTE_FORCE_MAX_VERTICES: usize = 6;
/// Below this many private images the brute-force branch is used.
pub const BRUTE_FORCE_BELOW: usize = 5;
const MAX_ROOTS: usize = 64;

/// Symmetric 0/1 adjacency matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineGraphMatrix {
    m: usize,
    adj: Vec<bool>,
}

impl LineGraphMatrix {
    pub fn new(m: usize, adj: Vec<bool>) -> Result<Self> {
        if adj.len() != m * m {
            return Err(Error::invalid("adjacency has wrong number of entries"));
        }
        for i in 0..m {
            if adj[i * m + i] {
                return Err(Error::invalid(format!("self-loop at line-graph vertex {i}")));
            }
            for j in 0..i {
                if adj[i * m + j] != adj[j * m + i] {
                    return Err(Error::invalid("line-graph adjacency is not symmetric"));
                }
            }
        }
        Ok(LineGraphMatrix { m, adj })
    }

    pub fn from_matrix(mat: &Matrix) -> Result<Self> {
        if mat.rows() != mat.cols() {
            return Err(Error::invalid("adjacency is not square"));
        }
        let mut adj = Vec::with_capacity(mat.rows() * mat.cols());
        for &v in mat.as_slice() {
            match v {
                x if x == 0.0 => adj.push(false),
                x if x == 1.0 => adj.push(true),
                _ => return Err(Error::invalid(format!("adjacency entry {v} not in {{0,1}}"))),
            }
        }
        Self::new(mat.rows(), adj)
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.m, self.m, |i, j| self.adjacent(i, j) as u8 as f64)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.m + j]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.m).filter(move |&j| self.adjacent(i, j))
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut dsu = Dsu::new(self.m);
        for i in 0..self.m {
            for j in 0..i {
                if self.adjacent(i, j) {
                    dsu.union(i, j);
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut slot = vec![usize::MAX; self.m];
        for i in 0..self.m {
            let r = dsu.find(i);
            if slot[r] == usize::MAX {
                slot[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[r]].push(i);
        }
        groups
    }

    pub fn induced(&self, vertices: &[usize]) -> LineGraphMatrix {
        let k = vertices.len();
        let mut adj = vec![false; k * k];
        for (a, &i) in vertices.iter().enumerate() {
            for (b, &j) in vertices.iter().enumerate() {
                adj[a * k + b] = self.adjacent(i, j);
            }
        }
        LineGraphMatrix { m: k, adj }
    }
}

/// `A_ij = 1` iff edges `i != j` share exactly one endpoint.
pub fn line_graph_of(graph: &SimpleGraph) -> LineGraphMatrix {
    let m = graph.m();
    let mut adj = vec![false; m * m];
    for (i, &(a, b)) in graph.edges.iter().enumerate() {
        for (j, &(c, d)) in graph.edges.iter().enumerate() {
            if i != j {
                let shared = (a == c) as u8 + (a == d) as u8 + (b == c) as u8 + (b == d) as u8;
                adj[i * m + j] = shared == 1;
            }
        }
    }
    LineGraphMatrix { m, adj }
}

/// Grouping of the original rows of `M_priv` into distinct private pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeMultiplicity {
    /// `groups[e]` lists the original rows that realize deduplicated edge
    /// `e`, ascending. Groups are ordered by their first row.
    pub groups: Vec<Vec<usize>>,
}

impl EdgeMultiplicity {
    pub fn original_rows(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_identity(&self) -> bool {
        self.groups.iter().all(|g| g.len() == 1)
    }
}

/// Collapses rows whose off-diagonal entry is 2 (the same private pair).
pub fn dedupe_parallel_edges(
    m_priv: &PrivateGram,
) -> Result<(LineGraphMatrix, EdgeMultiplicity)> {
    let m = m_priv.m();
    let mut group_of = vec![usize::MAX; m];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..m {
        if group_of[i] != usize::MAX {
            continue;
        }
        let g = groups.len();
        let members: Vec<usize> = (i..m).filter(|&j| j == i || m_priv.get(i, j) == 2).collect();
        for &j in &members {
            if group_of[j] != usize::MAX {
                return Err(Error::InconsistentGram(format!(
                    "row {j} duplicates two different pairs"
                )));
            }
            group_of[j] = g;
        }
        groups.push(members);
    }
    // members of one group must relate identically to every other row
    for members in &groups {
        let rep = members[0];
        for &j in &members[1..] {
            for k in 0..m {
                let expected = if group_of[k] == group_of[rep] { 2 } else { m_priv.get(rep, k) };
                if m_priv.get(j, k) != expected {
                    return Err(Error::InconsistentGram(format!(
                        "rows {rep} and {j} are duplicates but differ against row {k}"
                    )));
                }
            }
        }
    }
    let k = groups.len();
    let mut adj = vec![false; k * k];
    for a in 0..k {
        for b in 0..k {
            if a != b {
                adj[a * k + b] = m_priv.get(groups[a][0], groups[b][0]) == 1;
            }
        }
    }
    Ok((LineGraphMatrix { m: k, adj }, EdgeMultiplicity { groups }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbiguityFlag {
    /// Triangle and claw share the line graph `K3`.
    WhitneyTriangleStar,
    /// A lone edge: which two images it joins is unconstrained.
    SingleEdge,
    /// Several non-equivalent edge-labeled roots exist (small graphs).
    MultipleRoots,
    /// The line graph splits into components reconstructed independently.
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootReconstruction {
    /// Canonically labeled root graph; edge `i` corresponds to row `i` of `L`.
    pub graph: SimpleGraph,
    /// Every canonical root found, including `graph`.
    pub alternatives: Vec<SimpleGraph>,
    pub flags: Vec<AmbiguityFlag>,
}

impl RootReconstruction {
    pub fn is_ambiguous(&self) -> bool {
        !self.flags.is_empty()
    }
}

struct RootSearch<'a> {
    line: &'a LineGraphMatrix,
    order: Vec<usize>,
    max_vertices: usize,
    ends: Vec<(usize, usize)>,
    used_vertices: usize,
    found: BTreeSet<SimpleGraph>,
}

impl RootSearch<'_> {
    fn consistent(&self, e: usize, s: usize, t: usize, placed: &[usize]) -> bool {
        placed.iter().all(|&g| {
            let (a, b) = self.ends[g];
            let shared = (a == s || a == t) as u8 + (b == s || b == t) as u8;
            shared == self.line.adjacent(e, g) as u8
        })
    }

    fn extend(&mut self, step: usize) {
        if self.found.len() >= MAX_ROOTS {
            return;
        }
        if step == self.order.len() {
            let g = SimpleGraph {
                n_vertices: self.used_vertices,
                edges: self.ends.clone(),
            };
            self.found.insert(g.canonical());
            return;
        }
        let e = self.order[step];
        let placed: Vec<usize> = self.order[..step].to_vec();
        let anchor = placed.iter().copied().find(|&g| self.line.adjacent(e, g));
        let Some(anchor) = anchor else {
            // first vertex of a component
            if self.used_vertices + 2 > self.max_vertices {
                return;
            }
            let (s, t) = (self.used_vertices, self.used_vertices + 1);
            self.ends[e] = (s, t);
            self.used_vertices += 2;
            self.extend(step + 1);
            self.used_vertices -= 2;
            return;
        };
        let (a, b) = self.ends[anchor];
        for s in [a, b] {
            let fresh = self.used_vertices;
            let candidates = (0..self.used_vertices)
                .chain((fresh < self.max_vertices).then_some(fresh))
                .filter(|&t| t != s);
            for t in candidates.collect::<Vec<_>>() {
                if !self.consistent(e, s, t, &placed) {
                    continue;
                }
                self.ends[e] = (s.min(t), s.max(t));
                let grew = t == fresh;
                if grew {
                    self.used_vertices += 1;
                }
                self.extend(step + 1);
                if grew {
                    self.used_vertices -= 1;
                }
            }
        }
    }
}

/// All canonical edge-labeled root graphs of `line` with at most
/// `max_vertices` vertices, by backtracking over a BFS order of `line`.
pub fn root_graph_candidates(line: &LineGraphMatrix, max_vertices: usize) -> Vec<SimpleGraph> {
    let m = line.m();
    if m == 0 {
        return vec![SimpleGraph {
            n_vertices: 0,
            edges: vec![],
        }];
    }
    let mut order = Vec::with_capacity(m);
    let mut seen = vec![false; m];
    for root in 0..m {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for w in line.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    let mut search = RootSearch {
        line,
        order,
        max_vertices,
        ends: vec![(0, 0); m],
        used_vertices: 0,
        found: BTreeSet::new(),
    };
    search.extend(0);
    search.found.into_iter().collect()
}

fn pick_primary(candidates: &[SimpleGraph]) -> SimpleGraph {
    // more vertices first (claw over triangle), then lexicographic
    candidates
        .iter()
        .max_by(|a, b| a.n_vertices.cmp(&b.n_vertices).then(b.cmp(a)))
        .cloned()
        .expect("nonempty candidate list")
}

fn classify(line: &LineGraphMatrix, candidates: &[SimpleGraph]) -> Vec<AmbiguityFlag> {
    let mut flags = Vec::new();
    if line.m() == 1 {
        flags.push(AmbiguityFlag::SingleEdge);
    }
    if candidates.len() > 1 {
        let triangle_star = line.m() == 3
            && (0..3).all(|i| (0..3).all(|j| i == j || line.adjacent(i, j)));
        flags.push(if triangle_star {
            AmbiguityFlag::WhitneyTriangleStar
        } else {
            AmbiguityFlag::MultipleRoots
        });
    }
    flags
}

/// Reconstructs a connected root graph on at most `n_priv` vertices.
pub fn reconstruct_root_graph(line: &LineGraphMatrix, n_priv: usize) -> Result<RootReconstruction> {
    if line.m() == 0 {
        return Err(Error::invalid("empty line graph"));
    }
    let components = line.components().len();
    if components > 1 {
        return Err(Error::Disconnected { components });
    }
    let candidates = root_graph_candidates(line, n_priv);
    if candidates.is_empty() {
        return Err(Error::NotLineGraph);
    }
    Ok(RootReconstruction {
        graph: pick_primary(&candidates),
        flags: classify(line, &candidates),
        alternatives: candidates,
    })
}

/// Exhaustive search over all graphs on `n_priv` labeled vertices for those
/// whose line graph equals `line` under some assignment of edges to rows.
/// Results are canonical (see [`SimpleGraph::canonical`]).
pub fn brute_force_root(line: &LineGraphMatrix, n_priv: usize) -> Result<BTreeSet<SimpleGraph>> {
    if n_priv > BRUTE_FORCE_MAX_VERTICES {
        return Err(Error::invalid(format!(
            "brute force limited to {BRUTE_FORCE_MAX_VERTICES} vertices, got {n_priv}"
        )));
    }
    let pairs = SimpleGraph::complete(n_priv).edges;
    let m = line.m();
    let mut out = BTreeSet::new();
    if m > pairs.len() {
        return Ok(out);
    }
    for mask in 0u32..(1u32 << pairs.len()) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let edges: Vec<(usize, usize)> = (0..pairs.len())
            .filter(|&b| mask >> b & 1 == 1)
            .map(|b| pairs[b])
            .collect();
        let mut assignment = vec![usize::MAX; m];
        let mut used = vec![false; m];
        match_rows(line, &edges, 0, &mut assignment, &mut used, &mut |assign| {
            let g = SimpleGraph {
                n_vertices: n_priv,
                edges: assign.iter().map(|&k| edges[k]).collect(),
            };
            out.insert(g.canonical());
        });
    }
    Ok(out)
}

fn match_rows(
    line: &LineGraphMatrix,
    edges: &[(usize, usize)],
    row: usize,
    assignment: &mut Vec<usize>,
    used: &mut Vec<bool>,
    emit: &mut impl FnMut(&[usize]),
) {
    if row == assignment.len() {
        emit(assignment);
        return;
    }
    for k in 0..edges.len() {
        if used[k] {
            continue;
        }
        let (a, b) = edges[k];
        let ok = (0..row).all(|r| {
            let (c, d) = edges[assignment[r]];
            let touch = a == c || a == d || b == c || b == d;
            touch == line.adjacent(row, r)
        });
        if ok {
            used[k] = true;
            assignment[row] = k;
            match_rows(line, edges, row + 1, assignment, used, emit);
            used[k] = false;
        }
    }
}

/// Result of recovering `W_priv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// 0/1 `m x n_priv` incidence matrix, two ones per row.
    pub w_priv: Matrix,
    /// Root graph on deduplicated edges, canonically labeled.
    pub graph: SimpleGraph,
    pub multiplicity: EdgeMultiplicity,
    pub flags: Vec<AmbiguityFlag>,
}

/// Recovers `W_priv` (up to a permutation of private images) from `M_priv`.
pub fn assign_original_images(m_priv: &PrivateGram, n_priv: usize) -> Result<Assignment> {
    if m_priv.m() == 0 {
        return Err(Error::invalid("empty private gram"));
    }
    let (line, multiplicity) = dedupe_parallel_edges(m_priv)?;
    let mut flags = BTreeSet::new();

    let deduped_edges: Vec<(usize, usize)> = if n_priv < BRUTE_FORCE_BELOW {
        let roots: Vec<SimpleGraph> = brute_force_root(&line, n_priv)?.into_iter().collect();
        if roots.is_empty() {
            return Err(Error::NotLineGraph);
        }
        flags.extend(classify(&line, &roots));
        if line.components().len() > 1 {
            flags.insert(AmbiguityFlag::Disconnected);
        }
        pick_primary(&roots).edges
    } else {
        let components = line.components();
        if components.len() > 1 {
            flags.insert(AmbiguityFlag::Disconnected);
        }
        let mut per_component = Vec::with_capacity(components.len());
        for comp in &components {
            let rec = reconstruct_root_graph(&line.induced(comp), n_priv)?;
            flags.extend(rec.flags.iter().copied());
            per_component.push(rec);
        }
        let mut chosen: Vec<SimpleGraph> = per_component.iter().map(|r| r.graph.clone()).collect();
        let total = |c: &[SimpleGraph]| c.iter().map(|g| g.n_vertices).sum::<usize>();
        if total(&chosen) > n_priv {
            // fall back to the most compact root of each component
            for (slot, rec) in chosen.iter_mut().zip(&per_component) {
                if let Some(small) = rec.alternatives.iter().min_by_key(|g| g.n_vertices) {
                    *slot = small.clone();
                }
            }
            if total(&chosen) > n_priv {
                return Err(Error::NotLineGraph);
            }
        }
        let mut edges = vec![(0, 0); line.m()];
        let mut offset = 0;
        for (comp, g) in components.iter().zip(&chosen) {
            for (&row, &(u, v)) in comp.iter().zip(&g.edges) {
                edges[row] = (u + offset, v + offset);
            }
            offset += g.n_vertices;
        }
        edges
    };

    // re-expand duplicates onto the original row order, then relabel
    let m = m_priv.m();
    let mut row_edges = vec![(0, 0); m];
    for (g, rows) in multiplicity.groups.iter().enumerate() {
        for &r in rows {
            row_edges[r] = deduped_edges[g];
        }
    }
    let expanded = SimpleGraph {
        n_vertices: n_priv,
        edges: row_edges,
    }
    .canonical();
    let mut w_priv = Matrix::zeros(m, n_priv);
    for (r, &(u, v)) in expanded.edges.iter().enumerate() {
        w_priv.set(r, u, 1.0);
        w_priv.set(r, v, 1.0);
    }
    if PrivateGram::from_incidence(&w_priv).ok().as_ref() != Some(m_priv) {
        return Err(Error::Internal(
            "reconstructed W_priv does not reproduce M_priv".into(),
        ));
    }
    let graph = SimpleGraph {
        n_vertices: expanded.n_vertices,
        edges: multiplicity.groups.iter().map(|g| expanded.edges[g[0]]).collect(),
    };
    Ok(Assignment {
        w_priv,
        graph,
        multiplicity,
        flags: flags.into_iter().collect(),
    })
}
