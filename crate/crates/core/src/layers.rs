//! Network layers that run on positional graphs.
//!
//! A 2D kernel is transferred into a table of per-direction weight matrices
//! and evaluated as `bias + sum_k (G_k X) W_k`, where `G_k` gathers each
//! node's value at kernel position `k`. Gather matrices are built once per
//! graph and padding mode by walking the position's hop path over the
//! normalized adjacency, so padding, dilation and large kernels all reduce
//! to sparse products.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{default_epsilon, offset_to_path, Edge, HopPath, PositionalGraph, Selection, SelectionAdjacency};
use crate::numerics::{SparseMatrix, Tensor};

/// Ordinary 2D convolution kernel, weights laid out `[out, in, kh, kw]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2D {
    pub out_channels: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

impl Kernel2D {
    pub fn new(weights: Tensor, bias: Option<Tensor>) -> Result<Self> {
        let &[out_channels, in_channels, height, width] = weights.shape() else {
            return Err(Error::DimensionMismatch(format!("kernel weights must be 4-D, got {:?}", weights.shape())));
        };
        if height % 2 == 0 || width % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel {height}x{width} must have odd dimensions")));
        }
        if let Some(b) = &bias {
            if b.shape() != [out_channels] {
                return Err(Error::DimensionMismatch(format!(
                    "bias shape {:?} does not match {out_channels} outputs",
                    b.shape()
                )));
            }
        }
        Ok(Kernel2D { out_channels, in_channels, height, width, weights, bias })
    }

    /// Kernel that copies its input unchanged.
    pub fn identity(channels: usize, size: usize) -> Result<Self> {
        let mut w = Tensor::zeros(vec![channels, channels, size, size]);
        let mid = size / 2;
        for c in 0..channels {
            w.data_mut()[((c * channels + c) * size + mid) * size + mid] = 1.0;
        }
        Kernel2D::new(w, None)
    }

    pub fn weight(&self, out: usize, input: usize, row: usize, col: usize) -> f32 {
        self.weights.data()[((out * self.in_channels + input) * self.height + row) * self.width + col]
    }
}

/// What a node reads at a kernel position that falls off the graph.
#[derive(Clone, Debug, PartialEq)]
pub enum PaddingMode {
    Zero,
    /// One value per input channel.
    Constant(Vec<f32>),
    Replicate,
    Reflect,
}

impl PaddingMode {
    pub fn kind(&self) -> PaddingKind {
        match self {
            PaddingMode::Zero => PaddingKind::Zero,
            PaddingMode::Constant(_) => PaddingKind::Constant,
            PaddingMode::Replicate => PaddingKind::Replicate,
            PaddingMode::Reflect => PaddingKind::Reflect,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PaddingMode::Zero => "zero",
            PaddingMode::Constant(_) => "constant",
            PaddingMode::Replicate => "replicate",
            PaddingMode::Reflect => "reflect",
        }
    }
}

/// [`PaddingMode`] without the constant's values; gather plans depend only
/// on this.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PaddingKind {
    Zero,
    Constant,
    Replicate,
    Reflect,
}

/// Where a weight matrix reads from: a single selection (including self)
/// or a multi-hop path.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WeightKey {
    Selection(Selection),
    Path(HopPath),
}

impl WeightKey {
    /// Key for a grid offset: self, one king move, or a hop path.
    pub fn for_offset(offset: (i32, i32)) -> Result<Self> {
        match offset.0.abs().max(offset.1.abs()) {
            0 => Ok(WeightKey::Selection(Selection::SELF)),
            1 => Ok(WeightKey::Selection(Selection::from_step(offset.0, offset.1))),
            _ => offset_to_path(offset).map(WeightKey::Path),
        }
    }

    /// Directional steps walked to reach the position; empty for self.
    pub fn steps(&self) -> &[Selection] {
        match self {
            WeightKey::Selection(s) if s.is_self() => &[],
            WeightKey::Selection(s) => std::slice::from_ref(s),
            WeightKey::Path(p) => p.steps(),
        }
    }

    pub fn offset(&self) -> (i32, i32) {
        match self {
            WeightKey::Selection(s) => s.step(),
            WeightKey::Path(p) => p.offset(),
        }
    }
}

/// A convolution expressed as per-position `[in, out]` weight matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(height, width)` of the source kernel.
    pub kernel_size: (usize, usize),
    pub entries: Vec<(WeightKey, Tensor)>,
    pub bias: Option<Tensor>,
    pub dilation: usize,
    pub stride: usize,
    pub padding: PaddingMode,
}

/// Copies every kernel slice into the weight table under the key of its
/// (dilated) offset. Entries follow the kernel's raster order.
pub fn transfer_conv(k: &Kernel2D, dilation: usize, stride: usize, padding: PaddingMode) -> Result<SelectionConvLayer> {
    if k.height.is_multiple_of(2) || k.width.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("kernel {}x{} must have odd dimensions", k.height, k.width)));
    }
    if dilation == 0 || stride == 0 {
        return Err(Error::InvalidArgument("dilation and stride must be at least 1".into()));
    }
    if let PaddingMode::Constant(v) = &padding {
        if v.len() != k.in_channels {
            return Err(Error::DimensionMismatch(format!(
                "constant padding has {} values for {} channels",
                v.len(),
                k.in_channels
            )));
        }
    }
    let (hr, hc) = ((k.height / 2) as i32, (k.width / 2) as i32);
    let d = dilation as i32;
    let mut entries = Vec::with_capacity(k.height * k.width);
    for r in 0..k.height {
        for c in 0..k.width {
            let key = WeightKey::for_offset(((c as i32 - hc) * d, (r as i32 - hr) * d))?;
            let mut w = Tensor::zeros(vec![k.in_channels, k.out_channels]);
            for i in 0..k.in_channels {
                for o in 0..k.out_channels {
                    w.data_mut()[i * k.out_channels + o] = k.weight(o, i, r, c);
                }
            }
            entries.push((key, w));
        }
    }
    Ok(SelectionConvLayer {
        in_channels: k.in_channels,
        out_channels: k.out_channels,
        kernel_size: (k.height, k.width),
        entries,
        bias: k.bias.clone(),
        dilation,
        stride,
        padding,
    })
}

impl SelectionConvLayer {
    pub fn weight(&self, key: &WeightKey) -> Option<&Tensor> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, w)| w)
    }

    pub fn keys(&self) -> Vec<WeightKey> {
        self.entries.iter().map(|(k, _)| k.clone()).collect()
    }

    /// Rebuilds the source kernel from the weight table.
    pub fn to_kernel(&self) -> Result<Kernel2D> {
        let (h, w) = self.kernel_size;
        let (hr, hc) = ((h / 2) as i32, (w / 2) as i32);
        let d = self.dilation as i32;
        let mut weights = Tensor::zeros(vec![self.out_channels, self.in_channels, h, w]);
        for (key, m) in &self.entries {
            let (dx, dy) = key.offset();
            if dx % d != 0 || dy % d != 0 {
                return Err(Error::InvalidArgument(format!("offset {:?} is not a multiple of dilation {d}", (dx, dy))));
            }
            let (r, c) = (dy / d + hr, dx / d + hc);
            if r < 0 || c < 0 || r >= h as i32 || c >= w as i32 {
                return Err(Error::InvalidArgument(format!("offset {:?} lies outside the kernel", (dx, dy))));
            }
            for i in 0..self.in_channels {
                for o in 0..self.out_channels {
                    let idx = ((o * self.in_channels + i) * h + r as usize) * w + c as usize;
                    weights.data_mut()[idx] = m.data()[i * self.out_channels + o];
                }
            }
        }
        Kernel2D::new(weights, self.bias.clone())
    }
}

/// Gather matrices for one set of weight keys on one graph.
#[derive(Clone, Debug)]
pub struct ConvPlan {
    keys: Vec<WeightKey>,
    kind: PaddingKind,
    gathers: Vec<SparseMatrix>,
    /// Per key, the weight each node gives to the constant padding value;
    /// empty unless the plan was built for constant padding.
    constant: Vec<Vec<f32>>,
}

impl ConvPlan {
    pub fn new(adj: &SelectionAdjacency, keys: &[WeightKey], kind: PaddingKind) -> Result<Self> {
        if !adj.is_normalized() {
            return Err(Error::InvalidArgument("convolution needs a normalized adjacency".into()));
        }
        let n = adj.node_count();
        let built: Vec<(SparseMatrix, Vec<f32>)> = keys
            .par_iter()
            .map(|key| {
                let mut trip = Vec::new();
                let mut constant = vec![0.0f32; n];
                for node in 0..n {
                    constant[node] = walk(adj, key.steps(), kind, node, &mut trip);
                }
                let g = SparseMatrix::from_triplets_summed(n, n, trip)?;
                Ok((g, constant))
            })
            .collect::<Result<_>>()?;
        let (gathers, constant): (Vec<_>, Vec<_>) = built.into_iter().unzip();
        let constant = if kind == PaddingKind::Constant { constant } else { Vec::new() };
        Ok(ConvPlan { keys: keys.to_vec(), kind, gathers, constant })
    }

    pub fn for_layer(adj: &SelectionAdjacency, layer: &SelectionConvLayer) -> Result<Self> {
        ConvPlan::new(adj, &layer.keys(), layer.padding.kind())
    }

    pub fn keys(&self) -> &[WeightKey] {
        &self.keys
    }

    pub fn kind(&self) -> PaddingKind {
        self.kind
    }

    pub fn node_count(&self) -> usize {
        self.gathers.first().map_or(0, SparseMatrix::rows)
    }

    pub fn gather(&self, k: usize) -> &SparseMatrix {
        &self.gathers[k]
    }

    pub fn constant_mass(&self, k: usize) -> Option<&[f32]> {
        self.constant.get(k).map(Vec::as_slice)
    }

    /// `bias + sum_k (G_k X) W_k` at full resolution.
    pub fn apply(&self, layer: &SelectionConvLayer, x: &Tensor) -> Result<Tensor> {
        if layer.padding.kind() != self.kind || layer.entries.len() != self.keys.len() {
            return Err(Error::InvalidArgument("plan was built for a different layer shape".into()));
        }
        if layer.entries.iter().zip(&self.keys).any(|((a, _), b)| a != b) {
            return Err(Error::InvalidArgument("plan keys do not match the layer".into()));
        }
        let (n, c) = x.dims2()?;
        if n != self.node_count() && !self.gathers.is_empty() {
            return Err(Error::DimensionMismatch(format!("{n} feature rows for a {}-node plan", self.node_count())));
        }
        if c != layer.in_channels {
            return Err(Error::DimensionMismatch(format!("{c} input channels, layer expects {}", layer.in_channels)));
        }
        let o = layer.out_channels;
        let pad: &[f32] = match &layer.padding {
            PaddingMode::Constant(v) => v,
            _ => &[],
        };
        let xd = x.data();
        let mut out = vec![0.0f32; n * o];
        if o > 0 {
            out.par_chunks_mut(o).enumerate().for_each(|(i, row)| {
                let mut acc = vec![0.0f32; c];
                for (k, (_, w)) in layer.entries.iter().enumerate() {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    let (cols, vals) = self.gathers[k].row(i);
                    for (&j, &v) in cols.iter().zip(vals) {
                        for (a, &xv) in acc.iter_mut().zip(&xd[j * c..(j + 1) * c]) {
                            *a += v * xv;
                        }
                    }
                    if let Some(mass) = self.constant.get(k) {
                        let m = mass[i];
                        if m != 0.0 {
                            for (a, &p) in acc.iter_mut().zip(pad) {
                                *a += m * p;
                            }
                        }
                    }
                    let wd = w.data();
                    for (ci, &a) in acc.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        for (r, &wv) in row.iter_mut().zip(&wd[ci * o..(ci + 1) * o]) {
                            *r += a * wv;
                        }
                    }
                }
                if let Some(b) = &layer.bias {
                    for (r, &bv) in row.iter_mut().zip(b.data()) {
                        *r += bv;
                    }
                }
            });
        }
        Tensor::new(vec![n, o], out)
    }
}

/// Walks `steps` from `node`, pushing `(node, reached, weight)` triplets and
/// returning the mass that fell onto constant padding.
///
/// A missing step is resolved per axis. The horizontal part is blocked when
/// the node has no edge for the pure horizontal step, likewise vertically;
/// a missing diagonal whose two axis steps both exist counts as blocked on
/// both axes. Replicate drops the blocked components (staying put when
/// nothing is left); reflect reverses them for the rest of the walk, staying
/// put when the reversed step is missing too.
fn walk(adj: &SelectionAdjacency, steps: &[Selection], kind: PaddingKind, node: usize, out: &mut Vec<(usize, usize, f32)>) -> f32 {
    let mut states: BTreeMap<(usize, bool, bool), f32> = BTreeMap::new();
    states.insert((node, false, false), 1.0);
    let mut constant = 0.0f32;
    for s in steps {
        let (sx, sy) = s.step();
        let mut next: BTreeMap<(usize, bool, bool), f32> = BTreeMap::new();
        let spread = |from: usize, sel: Selection, flips: (bool, bool), w: f32, next: &mut BTreeMap<_, f32>| {
            let (cols, vals) = adj.mat(sel).row(from);
            for (&j, &v) in cols.iter().zip(vals) {
                *next.entry((j, flips.0, flips.1)).or_default() += w * v;
            }
        };
        for (&(n, fx, fy), &w) in &states {
            let ex = if fx { -sx } else { sx };
            let ey = if fy { -sy } else { sy };
            let sel = Selection::from_step(ex, ey);
            if adj.has(n, sel) {
                spread(n, sel, (fx, fy), w, &mut next);
                continue;
            }
            let mut hb = ex != 0 && !adj.has(n, Selection::from_step(ex, 0));
            let mut vb = ey != 0 && !adj.has(n, Selection::from_step(0, ey));
            if !hb && !vb {
                hb = ex != 0;
                vb = ey != 0;
            }
            let (nx, ny, flips) = match kind {
                PaddingKind::Zero => continue,
                PaddingKind::Constant => {
                    constant += w;
                    continue;
                }
                PaddingKind::Replicate => (if hb { 0 } else { ex }, if vb { 0 } else { ey }, (fx, fy)),
                PaddingKind::Reflect => (if hb { -ex } else { ex }, if vb { -ey } else { ey }, (fx ^ hb, fy ^ vb)),
            };
            let sel = Selection::from_step(nx, ny);
            if (nx, ny) != (0, 0) && adj.has(n, sel) {
                spread(n, sel, flips, w, &mut next);
            } else {
                *next.entry((n, flips.0, flips.1)).or_default() += w;
            }
        }
        states = next;
    }
    for ((n, _, _), w) in states {
        out.push((node, n, w));
    }
    constant
}

/// Stride-1 selection convolution. Strided layers need the graph to pick
/// their output nodes; see [`forward_conv_on_graph`].
pub fn forward_conv(layer: &SelectionConvLayer, adj: &SelectionAdjacency, x: &Tensor) -> Result<Tensor> {
    if layer.stride != 1 {
        return Err(Error::InvalidArgument(format!(
            "stride {} needs the graph; use forward_conv_on_graph",
            layer.stride
        )));
    }
    ConvPlan::for_layer(adj, layer)?.apply(layer, x)
}

/// Output of a convolution that may have changed the graph.
#[derive(Clone, Debug)]
pub struct ConvOutput {
    pub graph: PositionalGraph,
    pub features: Tensor,
    /// Present when the stride downsampled the graph.
    pub clusters: Option<ClusterMap>,
}

/// Convolution with stride: the stride-1 result is sampled at the central
/// node of each `stride x stride` cell (see [`stride_clusters`]).
pub fn forward_conv_on_graph(layer: &SelectionConvLayer, g: &PositionalGraph, x: &Tensor) -> Result<ConvOutput> {
    let adj = crate::graph::normalized_adjacency(g);
    let full = ConvPlan::for_layer(&adj, layer)?.apply(layer, x)?;
    if layer.stride == 1 {
        return Ok(ConvOutput { graph: g.clone(), features: full, clusters: None });
    }
    let clusters = stride_clusters(g, layer.stride)?;
    let (graph, features) = pool(g, &full, &clusters, PoolMode::Central)?;
    Ok(ConvOutput { graph, features, clusters: Some(clusters) })
}

/// Rectangular block of cells over part of the plane. Cell `(row, col)`
/// covers `origin + [col, col + 1) * cell[0]` by `origin + [row, row + 1) *
/// cell[1]`; nodes landing outside the `rows x cols` block stay unassigned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellRegion {
    pub origin: [f64; 2],
    pub cell: [f64; 2],
    pub rows: usize,
    pub cols: usize,
}

/// Grouping of a graph's nodes into clusters, plus what is needed to undo it.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterMap {
    assignment: Vec<Option<usize>>,
    members: Vec<Vec<usize>>,
    positions: Vec<[f64; 2]>,
    central: Vec<usize>,
    /// `(region, row, col)` of each cluster's cell.
    cells: Vec<(usize, usize, usize)>,
    regions: Vec<CellRegion>,
    saved_graph: PositionalGraph,
}

impl ClusterMap {
    /// Builds the map from an explicit assignment. Cluster ids must be dense
    /// and every cluster non-empty; `cells` gives each cluster's cell.
    pub fn from_assignment(
        g: &PositionalGraph,
        assignment: Vec<Option<usize>>,
        cells: Vec<(usize, usize, usize)>,
        regions: Vec<CellRegion>,
    ) -> Result<Self> {
        if assignment.len() != g.node_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} assignments for {} nodes",
                assignment.len(),
                g.node_count()
            )));
        }
        let k = cells.len();
        let mut members = vec![Vec::new(); k];
        for (i, a) in assignment.iter().enumerate() {
            if let Some(c) = *a {
                if c >= k {
                    return Err(Error::InvalidArgument(format!("cluster id {c} out of range {k}")));
                }
                members[c].push(i);
            }
        }
        if let Some(c) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidArgument(format!("cluster {c} is empty")));
        }
        let positions = members
            .iter()
            .map(|m| {
                let s = m.iter().fold([0.0, 0.0], |acc, &i| {
                    let p = g.position(i);
                    [acc[0] + p[0], acc[1] + p[1]]
                });
                [s[0] / m.len() as f64, s[1] / m.len() as f64]
            })
            .collect();
        let central = members
            .iter()
            .map(|m| {
                *m.iter()
                    .min_by(|&&a, &&b| {
                        let (pa, pb) = (g.position(a), g.position(b));
                        pa[1].round().total_cmp(&pb[1].round()).then(pa[0].round().total_cmp(&pb[0].round())).then(a.cmp(&b))
                    })
                    .expect("clusters are non-empty")
            })
            .collect();
        Ok(ClusterMap { assignment, members, positions, central, cells, regions, saved_graph: g.clone() })
    }

    pub fn cluster_count(&self) -> usize {
        self.members.len()
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    pub fn members(&self, cluster: usize) -> &[usize] {
        &self.members[cluster]
    }

    /// Mean position of each cluster's members.
    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    /// Representative node of each cluster: the member with the smallest
    /// rounded `(y, x)`, lowest id on ties.
    pub fn central_nodes(&self) -> &[usize] {
        &self.central
    }

    pub fn cells(&self) -> &[(usize, usize, usize)] {
        &self.cells
    }

    pub fn regions(&self) -> &[CellRegion] {
        &self.regions
    }

    pub fn saved_graph(&self) -> &PositionalGraph {
        &self.saved_graph
    }
}

/// Assigns every node to the cell of its region that contains it.
/// `node_region[i]` picks the region for node `i`. Cluster ids run over
/// regions in order, then cells in row-major order.
pub fn cluster_cells(g: &PositionalGraph, regions: &[CellRegion], node_region: &[usize]) -> Result<ClusterMap> {
    if node_region.len() != g.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} region labels for {} nodes",
            node_region.len(),
            g.node_count()
        )));
    }
    if regions.iter().any(|r| !(r.cell[0] > 0.0 && r.cell[1] > 0.0)) {
        return Err(Error::InvalidArgument("cell size must be positive".into()));
    }
    let mut slot: Vec<Option<(usize, usize, usize)>> = Vec::with_capacity(g.node_count());
    for (i, &ri) in node_region.iter().enumerate() {
        let r = regions
            .get(ri)
            .ok_or_else(|| Error::InvalidArgument(format!("node {i} names missing region {ri}")))?;
        let p = g.position(i);
        let col = ((p[0] - r.origin[0]) / r.cell[0]).floor();
        let row = ((p[1] - r.origin[1]) / r.cell[1]).floor();
        let inside = col >= 0.0 && row >= 0.0 && (col as usize) < r.cols && (row as usize) < r.rows;
        slot.push(inside.then_some((ri, row as usize, col as usize)));
    }
    let ids: BTreeMap<(usize, usize, usize), usize> = {
        let mut keys: Vec<_> = slot.iter().flatten().copied().collect();
        keys.sort_unstable();
        keys.dedup();
        keys.into_iter().enumerate().map(|(k, c)| (c, k)).collect()
    };
    let assignment = slot.iter().map(|s| s.map(|c| ids[&c])).collect();
    let cells = ids.keys().copied().collect();
    ClusterMap::from_assignment(g, assignment, cells, regions.to_vec())
}

/// Splits the box `bounds = [min, max]` into `out_rows x out_cols` equal
/// cells and assigns each node to the cell containing it. Nodes outside the
/// box are left out, so a box covering only whole cells drops trailing
/// rows and columns.
pub fn cluster_grid(g: &PositionalGraph, out_rows: usize, out_cols: usize, bounds: [[f64; 2]; 2]) -> Result<ClusterMap> {
    if out_rows == 0 || out_cols == 0 {
        return Err(Error::InvalidArgument("cluster grid needs at least one cell".into()));
    }
    let [lo, hi] = bounds;
    let region = CellRegion {
        origin: lo,
        cell: [(hi[0] - lo[0]) / out_cols as f64, (hi[1] - lo[1]) / out_rows as f64],
        rows: out_rows,
        cols: out_cols,
    };
    cluster_cells(g, &[region], &vec![0; g.node_count()])
}

/// Cells of `stride x stride` pixels starting half a pixel before the
/// top-left node, covering the whole graph. On a pixel grid the central
/// node of each cell is its top-left pixel, which is where a strided 2D
/// convolution samples.
pub fn stride_clusters(g: &PositionalGraph, stride: usize) -> Result<ClusterMap> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in g.positions() {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let origin = [lo[0].round() - 0.5, lo[1].round() - 0.5];
    let s = stride as f64;
    let cols = ((hi[0] - origin[0]) / s).floor() as usize + 1;
    let rows = ((hi[1] - origin[1]) / s).floor() as usize + 1;
    let region = CellRegion { origin, cell: [s, s], rows, cols };
    cluster_cells(g, &[region], &vec![0; g.node_count()])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Mean,
    /// Value of the cluster's central node.
    Central,
}

/// Direction average of edge selections on the 8-way compass.
///
/// Selection `k` sits at `(k - 1) * 45` degrees; the unit vectors are summed
/// and the angle of the sum rounded to the nearest selection, exact halves
/// going to the lower label (so `{8, 1}` gives `1`). Self selections are
/// ignored. A zero sum falls back to the smallest contributing selection.
pub fn circular_mean_selection(selections: &[Selection]) -> Option<Selection> {
    let dirs: Vec<Selection> = selections.iter().copied().filter(|s| !s.is_self()).collect();
    let smallest = *dirs.iter().min()?;
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for s in &dirs {
        let a = s.angle_degrees().to_radians();
        sx += a.cos();
        sy += a.sin();
    }
    if sx.hypot(sy) < 1e-9 {
        return Some(smallest);
    }
    let q = sy.atan2(sx).to_degrees().rem_euclid(360.0) / 45.0;
    let lower = q.floor();
    let label = |k: f64| Selection::new((k as i64).rem_euclid(8) as u8 + 1).expect("label in 1..=8");
    if (q - lower - 0.5).abs() < 1e-6 {
        let (a, b) = (label(lower), label(lower + 1.0));
        return Some(a.min(b));
    }
    Some(label(q.round()))
}

/// Graph of the clusters: one node per cluster at its mean position, a self
/// edge each, and one edge per linked cluster pair whose selection is the
/// circular mean of the original edges between them.
pub fn pooled_graph(clusters: &ClusterMap) -> Result<PositionalGraph> {
    let g = clusters.saved_graph();
    let mut links: BTreeMap<(usize, usize), Vec<Selection>> = BTreeMap::new();
    for e in g.edges() {
        if let (Some(a), Some(b)) = (clusters.assignment[e.src], clusters.assignment[e.dst]) {
            if a != b && !e.selection.is_self() {
                links.entry((a, b)).or_default().push(e.selection);
            }
        }
    }
    let k = clusters.cluster_count();
    let mut edges: Vec<Edge> = (0..k).map(|c| Edge::new(c, c, Selection::SELF)).collect();
    let mut pairs = Vec::with_capacity(links.len());
    for ((a, b), sels) in links {
        if let Some(s) = circular_mean_selection(&sels) {
            edges.push(Edge::new(a, b, s));
            pairs.push((a, b));
        }
    }
    let positions = clusters.positions.clone();
    let eps = default_epsilon(&positions, &pairs);
    PositionalGraph::new(positions, edges, eps)
}

/// Per-cluster reduction of node features.
pub fn pool_features(x: &Tensor, clusters: &ClusterMap, mode: PoolMode) -> Result<Tensor> {
    let (n, c) = x.dims2()?;
    if n != clusters.assignment.len() {
        return Err(Error::DimensionMismatch(format!("{n} feature rows for {} nodes", clusters.assignment.len())));
    }
    let mut out = Vec::with_capacity(clusters.cluster_count() * c);
    for (k, m) in clusters.members.iter().enumerate() {
        match mode {
            PoolMode::Central => out.extend_from_slice(x.row(clusters.central[k])),
            PoolMode::Max => {
                let mut acc = x.row(m[0]).to_vec();
                for &i in &m[1..] {
                    for (a, &v) in acc.iter_mut().zip(x.row(i)) {
                        *a = a.max(v);
                    }
                }
                out.extend(acc);
            }
            PoolMode::Mean => {
                let mut acc = vec![0.0f32; c];
                for &i in m {
                    for (a, &v) in acc.iter_mut().zip(x.row(i)) {
                        *a += v;
                    }
                }
                out.extend(acc.into_iter().map(|a| a / m.len() as f32));
            }
        }
    }
    Tensor::new(vec![clusters.cluster_count(), c], out)
}

/// Collapses each cluster to one node; see [`pooled_graph`] for the edges.
pub fn pool(g: &PositionalGraph, x: &Tensor, clusters: &ClusterMap, mode: PoolMode) -> Result<(PositionalGraph, Tensor)> {
    if g != clusters.saved_graph() {
        return Err(Error::InvalidArgument("cluster map was built for a different graph".into()));
    }
    Ok((pooled_graph(clusters)?, pool_features(x, clusters, mode)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnpoolMode {
    Copy,
    /// Copy, then average each node with its neighbours in the saved graph.
    Average,
}

/// Spreads cluster values back onto the graph the clusters were made from.
/// Nodes that belonged to no cluster receive zeros.
pub fn unpool(clusters: &ClusterMap, x_coarse: &Tensor, mode: UnpoolMode) -> Result<Tensor> {
    let (k, c) = x_coarse.dims2()?;
    if k != clusters.cluster_count() {
        return Err(Error::DimensionMismatch(format!("{k} coarse rows for {} clusters", clusters.cluster_count())));
    }
    let n = clusters.assignment.len();
    let mut fine = Tensor::zeros(vec![n, c]);
    for (i, a) in clusters.assignment.iter().enumerate() {
        if let Some(a) = *a {
            fine.row_mut(i).copy_from_slice(x_coarse.row(a));
        }
    }
    if mode == UnpoolMode::Copy {
        return Ok(fine);
    }
    let g = clusters.saved_graph();
    let mut out = Tensor::zeros(vec![n, c]);
    for i in 0..n {
        let mut acc = fine.row(i).to_vec();
        let mut count = 1usize;
        for j in g.neighbors(i) {
            for (a, &v) in acc.iter_mut().zip(fine.row(j)) {
                *a += v;
            }
            count += 1;
        }
        for (o, a) in out.row_mut(i).iter_mut().zip(acc) {
            *o = a / count as f32;
        }
    }
    Ok(out)
}

/// Flattens node features in channel-major order over a single-region
/// cluster grid: index `channel * rows * cols + row * cols + col`.
pub fn flatten(x: &Tensor, cells: &[(usize, usize)], rows: usize, cols: usize) -> Result<Vec<f32>> {
    let (n, c) = x.dims2()?;
    if n != cells.len() || n != rows * cols {
        return Err(Error::DimensionMismatch(format!("{n} nodes cannot fill a {rows}x{cols} grid")));
    }
    let mut out = vec![0.0f32; c * rows * cols];
    let mut seen = vec![false; rows * cols];
    for (i, &(r, col)) in cells.iter().enumerate() {
        if r >= rows || col >= cols || std::mem::replace(&mut seen[r * cols + col], true) {
            return Err(Error::InvalidArgument(format!("cell ({r}, {col}) is out of range or taken twice")));
        }
        for ch in 0..c {
            out[ch * rows * cols + r * cols + col] = x.row(i)[ch];
        }
    }
    Ok(out)
}

/// `weights · x + bias` with `weights` shaped `[out, in]`.
pub fn linear(weights: &Tensor, bias: Option<&Tensor>, x: &[f32]) -> Result<Vec<f32>> {
    let (o, i) = weights.dims2()?;
    if i != x.len() {
        return Err(Error::DimensionMismatch(format!("linear layer takes {i} inputs, got {}", x.len())));
    }
    if let Some(b) = bias {
        if b.len() != o {
            return Err(Error::DimensionMismatch(format!("bias has {} values for {o} outputs", b.len())));
        }
    }
    Ok((0..o)
        .map(|r| {
            let s: f32 = weights.row(r).iter().zip(x).fold(0.0, |acc, (&w, &v)| acc + w * v);
            s + bias.map_or(0.0, |b| b.data()[r])
        })
        .collect())
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Per-channel `x * scale + shift` on `[nodes, channels]` features.
pub fn affine_norm(x: &Tensor, scale: &[f32], shift: &[f32]) -> Result<Tensor> {
    let (_, c) = x.dims2()?;
    if scale.len() != c || shift.len() != c {
        return Err(Error::DimensionMismatch(format!(
            "affine norm has {}/{} values for {c} channels",
            scale.len(),
            shift.len()
        )));
    }
    let mut out = x.clone();
    for (k, v) in out.data_mut().iter_mut().enumerate() {
        let ch = k % c;
        *v = *v * scale[ch] + shift[ch];
    }
    Ok(out)
}
