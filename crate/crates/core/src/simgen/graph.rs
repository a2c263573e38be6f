//! Undirected graph structures and synthetic generators.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Symmetric boolean adjacency with an empty diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    p: usize,
    cells: Vec<bool>,
}

impl Adjacency {
    pub fn empty(p: usize) -> Self {
        Adjacency {
            p,
            cells: vec![false; p * p],
        }
    }

    pub fn complete(p: usize) -> Self {
        let mut a = Self::empty(p);
        for i in 0..p {
            for j in i + 1..p {
                a.set(i, j, true);
            }
        }
        a
    }

    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Self::empty(p);
        for &(i, j) in edges {
            if i >= p || j >= p {
                return invalid(format!("edge ({i}, {j}) out of range for {p} nodes"));
            }
            if i != j {
                a.set(i, j, true);
            }
        }
        Ok(a)
    }

    /// Reads the pattern of non-zero off-diagonal entries.
    pub fn from_support(m: &DMatrix<f64>) -> Self {
        let p = m.nrows();
        let mut a = Self::empty(p);
        for i in 0..p {
            for j in i + 1..p {
                if m[(i, j)] != 0.0 || m[(j, i)] != 0.0 {
                    a.set(i, j, true);
                }
            }
        }
        a
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn has(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.p + j]
    }

    /// Sets both (i, j) and (j, i); the diagonal is ignored.
    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        if i == j {
            return;
        }
        self.cells[i * self.p + j] = on;
        self.cells[j * self.p + i] = on;
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.p).filter(|&j| self.has(i, j)).count()
    }

    /// Edges as (i, j) with i < j, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.p {
            for j in i + 1..self.p {
                if self.has(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.p).all(|i| !self.has(i, i) && (0..self.p).all(|j| self.has(i, j) == self.has(j, i)))
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.p, |i, j| if self.has(i, j) { 1.0 } else { 0.0 })
    }

    /// |A ∩ B| / |A ∪ B| over edges; 1 when both are empty.
    pub fn jaccard(&self, other: &Adjacency) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for i in 0..self.p {
            for j in i + 1..self.p {
                let (a, b) = (self.has(i, j), other.has(i, j));
                inter += usize::from(a && b);
                union += usize::from(a || b);
            }
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GraphKind {
    /// Preferential attachment: a clique on `attachment + 1` seed nodes, then
    /// each new node links to `attachment` existing nodes chosen with
    /// probability proportional to degree.
    ScaleFree { attachment: usize },
    /// Band of the given width. `target_edges` deletes random band edges
    /// until that count remains.
    Lattice {
        bandwidth: usize,
        #[serde(default)]
        target_edges: Option<usize>,
    },
    /// Nodes split into `hubs` contiguous blocks, the first node of each
    /// block linked to the rest of it.
    Hub { hubs: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacencySpec {
    pub kind: GraphKind,
    pub p: usize,
    pub seed: u64,
}

pub fn gen_adjacency(spec: &AdjacencySpec) -> Result<Adjacency> {
    let p = spec.p;
    if p < 2 {
        return invalid("graphs need at least two nodes");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut a = Adjacency::empty(p);
    match spec.kind {
        GraphKind::ScaleFree { attachment } => {
            if attachment == 0 {
                return invalid("scale-free attachment must be positive");
            }
            let seed_nodes = (attachment + 1).min(p);
            for i in 0..seed_nodes {
                for j in i + 1..seed_nodes {
                    a.set(i, j, true);
                }
            }
            // Each edge endpoint appears once, so uniform draws from this
            // list are degree-proportional.
            let mut ends: Vec<usize> = a.edges().iter().flat_map(|&(i, j)| [i, j]).collect();
            for v in seed_nodes..p {
                let mut targets = Vec::with_capacity(attachment);
                while targets.len() < attachment.min(v) {
                    let u = if ends.is_empty() {
                        rng.gen_range(0..v)
                    } else {
                        ends[rng.gen_range(0..ends.len())]
                    };
                    if !targets.contains(&u) {
                        targets.push(u);
                    }
                }
                for u in targets {
                    a.set(u, v, true);
                    ends.push(u);
                    ends.push(v);
                }
            }
        }
        GraphKind::Lattice {
            bandwidth,
            target_edges,
        } => {
            if bandwidth == 0 {
                return invalid("lattice bandwidth must be positive");
            }
            for i in 0..p {
                for j in i + 1..(i + bandwidth + 1).min(p) {
                    a.set(i, j, true);
                }
            }
            if let Some(target) = target_edges {
                let mut edges = a.edges();
                if target > edges.len() {
                    return invalid(format!(
                        "lattice of bandwidth {bandwidth} has only {} edges, {target} requested",
                        edges.len()
                    ));
                }
                edges.shuffle(&mut rng);
                for &(i, j) in &edges[target..] {
                    a.set(i, j, false);
                }
            }
        }
        GraphKind::Hub { hubs } => {
            if hubs == 0 || hubs > p {
                return invalid(format!("hub count must lie in 1..={p}"));
            }
            let base = p / hubs;
            let extra = p % hubs;
            let mut start = 0;
            for b in 0..hubs {
                let size = base + usize::from(b < extra);
                for v in start + 1..start + size {
                    a.set(start, v, true);
                }
                start += size;
            }
        }
    }
    Ok(a)
}
