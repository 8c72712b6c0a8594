//! Positional graphs, direction-based edge selections and the per-selection
//! adjacency matrices that selection convolution runs on.
//!
//! Coordinates follow the image convention: `x` grows to the right and `y`
//! grows downwards. Selection 1 points right and the labels increase
//! counter-clockwise as displayed, so 3 is up, 5 is left and 7 is down.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::{sparse_compose, SparseMatrix};

/// Number of selections including the self selection.
pub const SELECTION_COUNT: usize = 9;

const DIAG: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Unit vectors for selections 1..=8.
const DIRECTIONS: [[f64; 2]; 8] = [
    [1.0, 0.0],
    [DIAG, -DIAG],
    [0.0, -1.0],
    [-DIAG, -DIAG],
    [-1.0, 0.0],
    [-DIAG, DIAG],
    [0.0, 1.0],
    [DIAG, DIAG],
];

/// Integer king-move step for selections 1..=8.
const STEPS: [(i32, i32); 8] = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)];

/// Edge label: 0 is the self selection, 1..=8 are the eight compass directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Selection(u8);

impl Selection {
    pub const SELF: Selection = Selection(0);
    pub const RIGHT: Selection = Selection(1);
    pub const UP_RIGHT: Selection = Selection(2);
    pub const UP: Selection = Selection(3);
    pub const UP_LEFT: Selection = Selection(4);
    pub const LEFT: Selection = Selection(5);
    pub const DOWN_LEFT: Selection = Selection(6);
    pub const DOWN: Selection = Selection(7);
    pub const DOWN_RIGHT: Selection = Selection(8);

    pub fn new(value: u8) -> Result<Self> {
        if value as usize >= SELECTION_COUNT {
            return Err(Error::InvalidArgument(format!("selection {value} out of range 0..=8")));
        }
        Ok(Selection(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_self(self) -> bool {
        self.0 == 0
    }

    /// The eight directional selections in label order.
    pub fn directions() -> impl Iterator<Item = Selection> {
        (1..=8).map(Selection)
    }

    /// Selection pointing the other way; the self selection is its own opposite.
    pub fn opposite(self) -> Selection {
        if self.0 == 0 {
            self
        } else {
            Selection((self.0 + 3) % 8 + 1)
        }
    }

    /// Integer step `(dx, dy)` for a directional selection, `(0, 0)` for self.
    pub fn step(self) -> (i32, i32) {
        if self.0 == 0 {
            (0, 0)
        } else {
            STEPS[self.0 as usize - 1]
        }
    }

    /// Selection of a king move with the given component signs.
    pub fn from_step(dx: i32, dy: i32) -> Selection {
        let s = (dx.signum(), dy.signum());
        if s == (0, 0) {
            return Selection::SELF;
        }
        let k = STEPS.iter().position(|&t| t == s).expect("all sign pairs are listed");
        Selection(k as u8 + 1)
    }

    pub fn unit_vector(self) -> [f64; 2] {
        if self.0 == 0 {
            [0.0, 0.0]
        } else {
            DIRECTIONS[self.0 as usize - 1]
        }
    }

    /// Compass angle in degrees, counter-clockwise from the right.
    pub fn angle_degrees(self) -> f64 {
        (self.0 as f64 - 1.0) * 45.0
    }
}

impl std::fmt::Display for Selection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Classifies the displacement `delta` from one node to another.
///
/// Displacements shorter than `epsilon` map to the self selection; anything
/// else goes to the direction with the largest dot product, the lowest label
/// winning exact ties.
pub fn select(delta: [f64; 2], epsilon: f64) -> Result<Selection> {
    if !delta[0].is_finite() || !delta[1].is_finite() {
        return Err(Error::NonFinite(format!("selection delta {delta:?}")));
    }
    if (delta[0] * delta[0] + delta[1] * delta[1]).sqrt() < epsilon {
        return Ok(Selection::SELF);
    }
    let mut best = 0;
    let mut best_dot = f64::NEG_INFINITY;
    for (k, d) in DIRECTIONS.iter().enumerate() {
        let dot = d[0] * delta[0] + d[1] * delta[1];
        if dot > best_dot {
            best_dot = dot;
            best = k;
        }
    }
    Ok(Selection(best as u8 + 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub selection: Selection,
}

impl Edge {
    pub fn new(src: usize, dst: usize, selection: Selection) -> Self {
        Edge { src, dst, selection }
    }
}

/// Nodes with 2-D positions joined by directed, selection-labelled edges.
///
/// Every node carries exactly one self edge and no `(src, dst)` pair occurs
/// twice. Edges are kept sorted by `(src, dst)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalGraph {
    positions: Vec<[f64; 2]>,
    edges: Vec<Edge>,
    epsilon: f64,
}

impl PositionalGraph {
    pub fn new(positions: Vec<[f64; 2]>, mut edges: Vec<Edge>, epsilon: f64) -> Result<Self> {
        let n = positions.len();
        if let Some(p) = positions.iter().find(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::NonFinite(format!("node position {p:?}")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon}")));
        }
        edges.sort_by_key(|e| (e.src, e.dst));
        let mut self_edges = vec![0usize; n];
        for (k, e) in edges.iter().enumerate() {
            if e.src >= n || e.dst >= n {
                return Err(Error::InvalidGraph(format!("edge {}->{} outside {} nodes", e.src, e.dst, n)));
            }
            if k > 0 && edges[k - 1].src == e.src && edges[k - 1].dst == e.dst {
                return Err(Error::InvalidGraph(format!("duplicate edge {}->{}", e.src, e.dst)));
            }
            if e.src == e.dst {
                if !e.selection.is_self() {
                    return Err(Error::InvalidGraph(format!("self edge at {} has selection {}", e.src, e.selection)));
                }
                self_edges[e.src] += 1;
            }
        }
        if let Some(i) = self_edges.iter().position(|&c| c != 1) {
            return Err(Error::InvalidGraph(format!("node {i} has no self edge")));
        }
        Ok(PositionalGraph { positions, edges, epsilon })
    }

    /// Builds a graph from directed `(src, dst)` pairs, labelling each
    /// pair with [`select`] and adding the self edges. With `epsilon == None`
    /// the threshold defaults to `1e-6` times the median pair length.
    pub fn from_pairs(positions: Vec<[f64; 2]>, pairs: &[(usize, usize)], epsilon: Option<f64>) -> Result<Self> {
        let n = positions.len();
        if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= n || b >= n) {
            return Err(Error::InvalidGraph(format!("pair {a}->{b} outside {n} nodes")));
        }
        let eps = match epsilon {
            Some(e) => e,
            None => default_epsilon(&positions, pairs),
        };
        let mut edges: Vec<Edge> = (0..n).map(|i| Edge::new(i, i, Selection::SELF)).collect();
        for &(a, b) in pairs {
            if a == b {
                continue;
            }
            let d = delta(&positions, a, b);
            edges.push(Edge::new(a, b, select(d, eps)?));
        }
        PositionalGraph::new(positions, edges, eps)
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> [f64; 2] {
        self.positions[i]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Outgoing edges of `node` (including its self edge).
    pub fn out_edges(&self, node: usize) -> &[Edge] {
        let start = self.edges.partition_point(|e| e.src < node);
        let end = self.edges.partition_point(|e| e.src <= node);
        &self.edges[start..end]
    }

    /// Non-self neighbours of `node`.
    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.out_edges(node).iter().filter(|e| e.dst != e.src).map(|e| e.dst)
    }

    pub fn find_edge(&self, src: usize, dst: usize) -> Option<&Edge> {
        let out = self.out_edges(src);
        out.binary_search_by_key(&dst, |e| e.dst).ok().map(|k| &out[k])
    }

    /// Same graph with new positions; edges and their selections are kept.
    pub fn with_positions(&self, positions: Vec<[f64; 2]>) -> Result<Self> {
        if positions.len() != self.positions.len() {
            return Err(Error::DimensionMismatch("position count changed".into()));
        }
        PositionalGraph::new(positions, self.edges.clone(), self.epsilon)
    }

    /// Relabels node `i` as `perm[i]`. Selections are unchanged.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.node_count())?;
        let mut positions = vec![[0.0; 2]; self.node_count()];
        for (old, &new) in perm.iter().enumerate() {
            positions[new] = self.positions[old];
        }
        let edges = self.edges.iter().map(|e| Edge::new(perm[e.src], perm[e.dst], e.selection)).collect();
        PositionalGraph::new(positions, edges, self.epsilon)
    }

    /// Text dump: `n <count>`, one `v <id> <x> <y>` per node, then one
    /// `e <src> <dst> <selection>` per edge in `(src, dst)` order.
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        writeln!(out, "n {}", self.node_count()).unwrap();
        for (i, p) in self.positions.iter().enumerate() {
            writeln!(out, "v {} {} {}", i, p[0], p[1]).unwrap();
        }
        for e in &self.edges {
            writeln!(out, "e {} {} {}", e.src, e.dst, e.selection).unwrap();
        }
        out
    }

    /// Parses the dump written by [`PositionalGraph::to_dump`]. The self
    /// threshold is not part of the dump and falls back to the default.
    pub fn from_dump(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::parse("<graph dump>", format!("line {}: {}", line + 1, msg));
        let mut count: Option<usize> = None;
        let mut positions: Vec<Option<[f64; 2]>> = Vec::new();
        let mut edges = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let Some(tag) = it.next() else { continue };
            let fields: Vec<&str> = it.collect();
            match (tag, fields.as_slice()) {
                ("n", [c]) => {
                    let c: usize = c.parse().map_err(|_| bad(ln, "bad node count"))?;
                    count = Some(c);
                    positions = vec![None; c];
                }
                ("v", [id, x, y]) => {
                    let id: usize = id.parse().map_err(|_| bad(ln, "bad node id"))?;
                    let x: f64 = x.parse().map_err(|_| bad(ln, "bad x"))?;
                    let y: f64 = y.parse().map_err(|_| bad(ln, "bad y"))?;
                    let slot = positions.get_mut(id).ok_or_else(|| bad(ln, "node id out of range"))?;
                    *slot = Some([x, y]);
                }
                ("e", [s, d, m]) => {
                    let s: usize = s.parse().map_err(|_| bad(ln, "bad source"))?;
                    let d: usize = d.parse().map_err(|_| bad(ln, "bad destination"))?;
                    let m: u8 = m.parse().map_err(|_| bad(ln, "bad selection"))?;
                    edges.push(Edge::new(s, d, Selection::new(m)?));
                }
                _ => return Err(bad(ln, "unrecognised record")),
            }
        }
        if count.is_none() {
            return Err(Error::parse("<graph dump>", "missing node count"));
        }
        let positions: Vec<[f64; 2]> = positions
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| Error::parse("<graph dump>", format!("node {i} has no position"))))
            .collect::<Result<_>>()?;
        let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.src, e.dst)).collect();
        let eps = default_epsilon(&positions, &pairs);
        PositionalGraph::new(positions, edges, eps)
    }
}

fn delta(positions: &[[f64; 2]], a: usize, b: usize) -> [f64; 2] {
    [positions[b][0] - positions[a][0], positions[b][1] - positions[a][1]]
}

/// `1e-6` times the median length over the non-self pairs; zero when there
/// are none.
pub fn default_epsilon(positions: &[[f64; 2]], pairs: &[(usize, usize)]) -> f64 {
    let mut lengths: Vec<f64> = pairs
        .iter()
        .filter(|(a, b)| a != b)
        .map(|&(a, b)| {
            let d = delta(positions, a, b);
            (d[0] * d[0] + d[1] * d[1]).sqrt()
        })
        .collect();
    if lengths.is_empty() {
        return 0.0;
    }
    let mid = lengths.len() / 2;
    let (_, m, _) = lengths.select_nth_unstable_by(mid, f64::total_cmp);
    *m * 1e-6
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::InvalidArgument(format!("permutation of length {} for {} nodes", perm.len(), n)));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidArgument("permutation is not a bijection".into()));
        }
    }
    Ok(())
}

/// One sparse matrix per selection; entry `(i, j)` of matrix `m` is set when
/// the edge `i -> j` carries selection `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionAdjacency {
    mats: Vec<SparseMatrix>,
    normalized: bool,
}

impl SelectionAdjacency {
    pub fn mats(&self) -> &[SparseMatrix] {
        &self.mats
    }

    pub fn mat(&self, selection: Selection) -> &SparseMatrix {
        &self.mats[selection.index()]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn node_count(&self) -> usize {
        self.mats[0].rows()
    }

    /// Whether `node` has at least one edge with `selection`.
    pub fn has(&self, node: usize, selection: Selection) -> bool {
        self.mats[selection.index()].row_nnz(node) > 0
    }

    pub fn total_nnz(&self) -> usize {
        self.mats.iter().map(SparseMatrix::nnz).sum()
    }
}

/// Partitions the edges of `g` into per-selection 0/1 matrices.
pub fn build_adjacency(g: &PositionalGraph) -> SelectionAdjacency {
    let n = g.node_count();
    let mut parts: Vec<Vec<(usize, usize, f32)>> = vec![Vec::new(); SELECTION_COUNT];
    for e in g.edges() {
        parts[e.selection.index()].push((e.src, e.dst, 1.0));
    }
    let mats = parts
        .into_iter()
        .map(|t| SparseMatrix::from_triplets(n, n, t).expect("graph edges are unique and in range"))
        .collect();
    SelectionAdjacency { mats, normalized: false }
}

/// Divides each row of each selection matrix by its entry count, so a node
/// with several same-selection edges takes their mean.
pub fn normalize(adj: &SelectionAdjacency) -> Result<SelectionAdjacency> {
    if adj.normalized {
        return Err(Error::InvalidArgument("adjacency is already normalized".into()));
    }
    let mats = adj
        .mats
        .iter()
        .map(|m| {
            m.scale_rows(|i| match m.row_nnz(i) {
                0 | 1 => 1.0,
                k => 1.0 / k as f32,
            })
        })
        .collect();
    Ok(SelectionAdjacency { mats, normalized: true })
}

/// Convenience for `normalize(&build_adjacency(g))`.
pub fn normalized_adjacency(g: &PositionalGraph) -> SelectionAdjacency {
    normalize(&build_adjacency(g)).expect("fresh adjacency is unnormalized")
}

/// Ordered sequence of directional selections walked one edge at a time.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HopPath {
    steps: Vec<Selection>,
}

impl HopPath {
    pub fn new(steps: Vec<Selection>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidArgument("hop path must not be empty".into()));
        }
        if steps.iter().any(|s| s.is_self()) {
            return Err(Error::InvalidArgument("hop path steps must be directional".into()));
        }
        Ok(HopPath { steps })
    }

    pub fn single(selection: Selection) -> Result<Self> {
        HopPath::new(vec![selection])
    }

    pub fn steps(&self) -> &[Selection] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Grid offset reached by walking every step.
    pub fn offset(&self) -> (i32, i32) {
        self.steps.iter().fold((0, 0), |(x, y), s| {
            let (dx, dy) = s.step();
            (x + dx, y + dy)
        })
    }
}

/// Largest offset (Chebyshev norm) a hop path may encode.
pub const MAX_HOP_OFFSET: i32 = 64;

/// Decomposes a grid offset into king moves, diagonal steps first.
pub fn offset_to_path(offset: (i32, i32)) -> Result<HopPath> {
    let (mut dx, mut dy) = offset;
    if (dx, dy) == (0, 0) {
        return Err(Error::InvalidArgument("zero offset has no hop path".into()));
    }
    if dx.abs().max(dy.abs()) > MAX_HOP_OFFSET {
        return Err(Error::InvalidArgument(format!("offset {offset:?} exceeds {MAX_HOP_OFFSET}")));
    }
    let mut steps = Vec::new();
    while (dx, dy) != (0, 0) {
        let s = Selection::from_step(dx, dy);
        let (sx, sy) = s.step();
        dx -= sx;
        dy -= sy;
        steps.push(s);
    }
    HopPath::new(steps)
}

/// Product of the path's normalized selection matrices in step order.
pub fn compose_hops(adj: &SelectionAdjacency, path: &HopPath) -> Result<SparseMatrix> {
    if !adj.normalized {
        return Err(Error::InvalidArgument("hop composition needs a normalized adjacency".into()));
    }
    let mut steps = path.steps().iter();
    let first = steps.next().ok_or_else(|| Error::InvalidArgument("empty hop path".into()))?;
    let mut acc = adj.mat(*first).clone();
    for s in steps {
        acc = sparse_compose(&acc, adj.mat(*s))?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{matmul, spmm, Tensor};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive argmax written against the raw direction table, tracking
    /// whether the maximum is shared.
    fn brute_select(delta: [f64; 2]) -> (u8, bool) {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let d = [[1.0, 0.0], [s, -s], [0.0, -1.0], [-s, -s], [-1.0, 0.0], [-s, s], [0.0, 1.0], [s, s]];
        let dots: Vec<f64> = d.iter().map(|v| v[0] * delta[0] + v[1] * delta[1]).collect();
        let max = dots.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = (0..8).filter(|&k| (dots[k] - max).abs() < 1e-12).collect();
        (winners[0] as u8 + 1, winners.len() > 1)
    }

    fn grid_pairs(h: usize, w: usize) -> (Vec<[f64; 2]>, Vec<(usize, usize)>) {
        let positions = (0..h * w).map(|i| [(i % w) as f64, (i / w) as f64]).collect();
        let mut pairs = Vec::new();
        for r in 0..h as i64 {
            for c in 0..w as i64 {
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (rr, cc) = (r + dr, c + dc);
                        if (dr, dc) != (0, 0) && rr >= 0 && cc >= 0 && rr < h as i64 && cc < w as i64 {
                            pairs.push(((r * w as i64 + c) as usize, (rr * w as i64 + cc) as usize));
                        }
                    }
                }
            }
        }
        (positions, pairs)
    }

    #[test]
    fn select_examples() {
        assert_eq!(select([1.0, 0.0], 1e-6).unwrap(), Selection::RIGHT);
        assert_eq!(select([0.0, 0.0], 1e-6).unwrap(), Selection::SELF);
        assert_eq!(select([-3.0, 0.0], 1e-6).unwrap(), Selection::LEFT);
        let (expect, tie) = brute_select([0.6, -0.9]);
        assert!(!tie);
        assert_eq!(select([0.6, -0.9], 1e-6).unwrap().value(), expect);
        assert_eq!(expect, 2);
        assert!(select([f64::NAN, 0.0], 1e-6).is_err());
        assert_eq!(select([0.0, 1.0], 1e-6).unwrap(), Selection::DOWN);
    }

    #[test]
    fn select_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut checked = 0;
        while checked < 10_000 {
            let d = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let (expect, tie) = brute_select(d);
            if tie {
                continue;
            }
            assert_eq!(select(d, 1e-9).unwrap().value(), expect, "delta {d:?}");
            checked += 1;
        }
    }

    #[test]
    fn select_is_antipodal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let d = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            if brute_select(d).1 {
                continue;
            }
            let m = select(d, 1e-9).unwrap();
            let back = select([-d[0], -d[1]], 1e-9).unwrap();
            assert_eq!(back.value(), (m.value() + 3) % 8 + 1);
            assert_eq!(back, m.opposite());
        }
    }

    #[test]
    fn steps_and_vectors_agree() {
        for s in Selection::directions() {
            let (dx, dy) = s.step();
            assert_eq!(select([dx as f64, dy as f64], 1e-6).unwrap(), s);
            assert_eq!(Selection::from_step(dx, dy), s);
            let v = s.unit_vector();
            assert!((v[0] * v[0] + v[1] * v[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adjacency_of_single_node() {
        let g = PositionalGraph::from_pairs(vec![[0.0, 0.0]], &[], None).unwrap();
        let adj = build_adjacency(&g);
        assert_eq!(adj.mat(Selection::SELF), &SparseMatrix::identity(1));
        assert!(Selection::directions().all(|s| adj.mat(s).nnz() == 0));
    }

    #[test]
    fn adjacency_of_horizontal_pair() {
        let g = PositionalGraph::from_pairs(vec![[0.0, 0.0], [1.0, 0.0]], &[(0, 1), (1, 0)], None).unwrap();
        let adj = build_adjacency(&g);
        assert_eq!(adj.mat(Selection::RIGHT).triplets().collect::<Vec<_>>(), vec![(0, 1, 1.0)]);
        assert_eq!(adj.mat(Selection::LEFT).triplets().collect::<Vec<_>>(), vec![(1, 0, 1.0)]);
    }

    #[test]
    fn grid_partition_matches_enumeration() {
        let (pos, pairs) = grid_pairs(3, 3);
        assert_eq!(pairs.len(), 40);
        let g = PositionalGraph::from_pairs(pos, &pairs, None).unwrap();
        let adj = build_adjacency(&g);
        assert_eq!(adj.total_nnz(), 49);
        // Brute force: count neighbours per king-move direction.
        for s in Selection::directions() {
            let (dx, dy) = s.step();
            let expected = (0..3i32)
                .flat_map(|r| (0..3i32).map(move |c| (r, c)))
                .filter(|&(r, c)| (0..3).contains(&(r + dy)) && (0..3).contains(&(c + dx)))
                .count();
            assert_eq!(adj.mat(s).nnz(), expected, "selection {s}");
        }
        assert_eq!(adj.mat(Selection::SELF).nnz(), 9);
    }

    #[test]
    fn normalize_cases() {
        let (pos, pairs) = grid_pairs(4, 5);
        let g = PositionalGraph::from_pairs(pos, &pairs, None).unwrap();
        let adj = build_adjacency(&g);
        let n = normalize(&adj).unwrap();
        assert_eq!(n.mats(), adj.mats());
        assert!(normalize(&n).is_err());

        // Node 0 has two neighbours straight above it.
        let g = PositionalGraph::from_pairs(
            vec![[0.0, 0.0], [-0.1, -1.0], [0.1, -1.0]],
            &[(0, 1), (0, 2)],
            None,
        )
        .unwrap();
        let n = normalized_adjacency(&g);
        assert_eq!(n.mat(Selection::UP).triplets().collect::<Vec<_>>(), vec![(0, 1, 0.5), (0, 2, 0.5)]);
    }

    #[test]
    fn normalized_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 40;
        let pos: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)]).collect();
        let mut pairs = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a != b && rng.gen_bool(0.2) {
                    pairs.push((a, b));
                }
            }
        }
        let adj = normalized_adjacency(&PositionalGraph::from_pairs(pos, &pairs, None).unwrap());
        for m in adj.mats() {
            for i in 0..n {
                let (_, vals) = m.row(i);
                if !vals.is_empty() {
                    assert!((vals.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn hop_composition() {
        let (h, w) = (5, 4);
        let (pos, pairs) = grid_pairs(h, w);
        let adj = normalized_adjacency(&PositionalGraph::from_pairs(pos, &pairs, None).unwrap());
        let single = HopPath::single(Selection::DOWN).unwrap();
        assert_eq!(&compose_hops(&adj, &single).unwrap(), adj.mat(Selection::DOWN));

        let two_down = compose_hops(&adj, &offset_to_path((0, 2)).unwrap()).unwrap();
        for (i, j, v) in two_down.triplets() {
            assert_eq!(j, i + 2 * w);
            assert_eq!(v, 1.0);
        }
        assert_eq!(two_down.nnz(), (h - 2) * w);

        // Explicit two-step walk: down-right then down.
        let path = HopPath::new(vec![Selection::DOWN_RIGHT, Selection::DOWN]).unwrap();
        assert_eq!(path.offset(), (1, 2));
        let m = compose_hops(&adj, &path).unwrap();
        let mut expected = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if c + 1 < w && r + 2 < h {
                    expected.push((r * w + c, (r + 2) * w + c + 1, 1.0));
                }
            }
        }
        assert_eq!(m.triplets().collect::<Vec<_>>(), expected);
        assert!(compose_hops(&build_adjacency(&PositionalGraph::from_pairs(vec![[0.0, 0.0]], &[], None).unwrap()), &single).is_err());
    }

    #[test]
    fn offset_paths() {
        let p = |o| offset_to_path(o).unwrap().steps().iter().map(|s| s.value()).collect::<Vec<_>>();
        assert_eq!(p((0, 2)), vec![7, 7]);
        assert_eq!(p((1, 0)), vec![1]);
        assert_eq!(p((2, 1)), vec![8, 1]);
        assert!(offset_to_path((0, 0)).is_err());
        for dx in -6..=6 {
            for dy in -6..=6 {
                if (dx, dy) == (0, 0) {
                    continue;
                }
                let path = offset_to_path((dx, dy)).unwrap();
                assert_eq!(path.offset(), (dx, dy));
                assert_eq!(path.len() as i32, dx.abs().max(dy.abs()));
            }
        }
    }

    #[test]
    fn hop_path_rejects_bad_steps() {
        assert!(HopPath::new(vec![]).is_err());
        assert!(HopPath::new(vec![Selection::SELF]).is_err());
    }

    #[test]
    fn graph_rejects_invariant_violations() {
        let pos = vec![[0.0, 0.0], [1.0, 0.0]];
        let selfs = vec![Edge::new(0, 0, Selection::SELF), Edge::new(1, 1, Selection::SELF)];
        let mut dup = selfs.clone();
        dup.push(Edge::new(0, 1, Selection::RIGHT));
        dup.push(Edge::new(0, 1, Selection::RIGHT));
        assert!(PositionalGraph::new(pos.clone(), dup, 0.0).is_err());
        assert!(PositionalGraph::new(pos.clone(), selfs[..1].to_vec(), 0.0).is_err());
        let mut bad = selfs.clone();
        bad.push(Edge::new(0, 2, Selection::RIGHT));
        assert!(PositionalGraph::new(pos.clone(), bad, 0.0).is_err());
        assert!(PositionalGraph::new(pos, selfs, 0.0).is_ok());
    }

    fn permutation_matrix(perm: &[usize]) -> Tensor {
        let n = perm.len();
        let mut p = Tensor::zeros(vec![n, n]);
        for (old, &new) in perm.iter().enumerate() {
            p.data_mut()[new * n + old] = 1.0;
        }
        p
    }

    #[test]
    fn permutation_conjugates_adjacency() {
        let (pos, pairs) = grid_pairs(3, 4);
        let g = PositionalGraph::from_pairs(pos, &pairs, None).unwrap();
        let n = g.node_count();
        let ident: Vec<usize> = (0..n).collect();
        assert_eq!(g.permute_nodes(&ident).unwrap(), g);

        let mut swap = ident.clone();
        swap.swap(0, 5);
        let gs = g.permute_nodes(&swap).unwrap();
        assert_eq!(gs.edge_count(), g.edge_count());
        assert_eq!(gs.position(5), g.position(0));

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut perm = ident;
        perm.shuffle(&mut rng);
        let gp = g.permute_nodes(&perm).unwrap();
        let p = permutation_matrix(&perm);
        let pt = p.transpose2().unwrap();
        let a = build_adjacency(&g);
        let ap = build_adjacency(&gp);
        let an = normalize(&a).unwrap();
        let apn = normalize(&ap).unwrap();
        let x = Tensor::new(vec![n, 3], (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let px = matmul(&p, &x).unwrap();
        for s in 0..SELECTION_COUNT {
            let conj = matmul(&matmul(&p, &a.mats()[s].to_dense()).unwrap(), &pt).unwrap();
            assert_eq!(ap.mats()[s].to_dense(), conj);
            let lhs = spmm(&apn.mats()[s], &px).unwrap();
            let rhs = matmul(&p, &spmm(&an.mats()[s], &x).unwrap()).unwrap();
            assert!(lhs.max_abs_diff(&rhs) <= 1e-5);
        }
        assert!(g.permute_nodes(&[0; 12]).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let (pos, pairs) = grid_pairs(2, 3);
        let g = PositionalGraph::from_pairs(pos, &pairs, None).unwrap();
        let text = g.to_dump();
        assert!(text.starts_with("n 6\nv 0 0 0\n"));
        let back = PositionalGraph::from_dump(&text).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.positions(), g.positions());
        assert!(PositionalGraph::from_dump("v 0 1 2\n").is_err());
    }

    proptest::proptest! {
        #[test]
        fn partition_is_exact(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..15);
            let pos: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
            let mut pairs = Vec::new();
            for a in 0..n { for b in 0..n { if a != b && rng.gen_bool(0.3) { pairs.push((a, b)); } } }
            let g = PositionalGraph::from_pairs(pos, &pairs, None).unwrap();
            let adj = build_adjacency(&g);
            proptest::prop_assert_eq!(adj.total_nnz(), g.edge_count());
            for e in g.edges() {
                for s in 0..SELECTION_COUNT {
                    let present = adj.mats()[s].get(e.src, e.dst).is_some();
                    proptest::prop_assert_eq!(present, s == e.selection.index());
                }
            }
        }
    }
}
