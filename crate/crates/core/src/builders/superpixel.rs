use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::graph::{default_epsilon, select, Edge, PositionalGraph, Selection};
use crate::numerics::Tensor;

/// Colour/space trade-off for images with values in `[0, 1]`.
pub const DEFAULT_COMPACTNESS: f64 = 0.1;
pub const DEFAULT_KNN: usize = 8;
const SLIC_ITERATIONS: usize = 10;

/// Result of a superpixel segmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelSet {
    pub height: usize,
    pub width: usize,
    /// Per-pixel cluster id in `0..len()`, row-major.
    pub labels: Vec<usize>,
    /// Mean `(x, y)` of each cluster's pixels.
    pub centroids: Vec<[f64; 2]>,
    /// Mean channel vector of each cluster.
    pub mean_features: Vec<Vec<f32>>,
}

impl SuperpixelSet {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Builds the set from an existing label field, recomputing centroids
    /// and means. Labels must be contiguous from zero.
    pub fn from_labels(image: &Tensor, labels: Vec<usize>) -> Result<Self> {
        let (h, w, ch) = image_dims(image)?;
        if labels.len() != h * w {
            return Err(Error::DimensionMismatch("label field does not match image".into()));
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut count = vec![0usize; k];
        let mut sum_xy = vec![[0.0f64; 2]; k];
        let mut sum_c = vec![vec![0.0f64; ch]; k];
        for (p, &l) in labels.iter().enumerate() {
            count[l] += 1;
            sum_xy[l][0] += (p % w) as f64;
            sum_xy[l][1] += (p / w) as f64;
            for (acc, &v) in sum_c[l].iter_mut().zip(&image.data()[p * ch..(p + 1) * ch]) {
                *acc += v as f64;
            }
        }
        if let Some(l) = count.iter().position(|&c| c == 0) {
            return Err(Error::InvalidArgument(format!("label {l} has no pixels")));
        }
        let centroids = (0..k).map(|l| [sum_xy[l][0] / count[l] as f64, sum_xy[l][1] / count[l] as f64]).collect();
        let mean_features = (0..k).map(|l| sum_c[l].iter().map(|s| (s / count[l] as f64) as f32).collect()).collect();
        Ok(SuperpixelSet { height: h, width: w, labels, centroids, mean_features })
    }

    /// Expands per-cluster values back to a `height x width x channels` image.
    pub fn paint(&self, values: &Tensor) -> Result<Tensor> {
        let (k, c) = values.dims2()?;
        if k != self.len() {
            return Err(Error::DimensionMismatch(format!("{} cluster values for {} clusters", k, self.len())));
        }
        let mut data = Vec::with_capacity(self.labels.len() * c);
        for &l in &self.labels {
            data.extend_from_slice(values.row(l));
        }
        Tensor::new(vec![self.height, self.width, c], data)
    }
}

fn image_dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match image.shape() {
        [h, w, c] if *h > 0 && *w > 0 && *c > 0 => Ok((*h, *w, *c)),
        other => Err(Error::DimensionMismatch(format!("expected an HxWxC image, got {other:?}"))),
    }
}

/// SLIC superpixels: seeds on a regular grid nudged to the lowest gradient
/// in their 3x3 neighbourhood, ten rounds of local k-means with distance
/// `|colour| + compactness / S * |xy|`, then connectivity enforcement.
pub fn slic(image: &Tensor, k: usize, compactness: f64) -> Result<SuperpixelSet> {
    let (h, w, ch) = image_dims(image)?;
    if k == 0 || k > h * w {
        return Err(Error::InvalidArgument(format!("superpixel count {k} outside 1..={}", h * w)));
    }
    if !(compactness >= 0.0 && compactness.is_finite()) {
        return Err(Error::InvalidArgument(format!("compactness {compactness}")));
    }
    let px = |x: usize, y: usize| &image.data()[(y * w + x) * ch..(y * w + x + 1) * ch];
    let spacing = ((h * w) as f64 / k as f64).sqrt();

    let grid_rows = ((k as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h);
    let grid_cols = ((k as f64 / grid_rows as f64).round() as usize).clamp(1, w);
    let tile_h = h as f64 / grid_rows as f64;
    let tile_w = w as f64 / grid_cols as f64;
    let window = tile_h.max(tile_w).max(spacing).ceil() as i64;

    let gradient = |x: usize, y: usize| -> f64 {
        let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let d = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(p, q)| ((p - q) as f64).powi(2)).sum::<f64>();
        d(px(xr, y), px(xl, y)) + d(px(x, yd), px(x, yu))
    };

    // Cluster centre: x, y, then colour.
    let mut centers: Vec<(f64, f64, Vec<f64>)> = Vec::with_capacity(grid_rows * grid_cols);
    for gr in 0..grid_rows {
        for gc in 0..grid_cols {
            let cx = (((gc as f64 + 0.5) * tile_w) as usize).min(w - 1);
            let cy = (((gr as f64 + 0.5) * tile_h) as usize).min(h - 1);
            let (mut bx, mut by, mut bg) = (cx, cy, gradient(cx, cy));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (x, y) = (cx as i64 + dx, cy as i64 + dy);
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        continue;
                    }
                    let g = gradient(x as usize, y as usize);
                    if g < bg {
                        (bx, by, bg) = (x as usize, y as usize, g);
                    }
                }
            }
            centers.push((bx as f64, by as f64, px(bx, by).iter().map(|&v| v as f64).collect()));
        }
    }

    // Initial labels from the seed tiles so every pixel starts assigned.
    let mut labels: Vec<usize> = (0..h * w)
        .map(|p| {
            let gr = (((p / w) as f64 / tile_h) as usize).min(grid_rows - 1);
            let gc = (((p % w) as f64 / tile_w) as usize).min(grid_cols - 1);
            gr * grid_cols + gc
        })
        .collect();
    let spatial_weight = compactness / spacing;
    let mut dist = vec![f64::INFINITY; h * w];
    for _ in 0..SLIC_ITERATIONS {
        dist.fill(f64::INFINITY);
        for (ci, (cx, cy, color)) in centers.iter().enumerate() {
            let (x0, x1) = ((cx.round() as i64 - window).max(0), (cx.round() as i64 + window).min(w as i64 - 1));
            let (y0, y1) = ((cy.round() as i64 - window).max(0), (cy.round() as i64 + window).min(h as i64 - 1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y as usize * w + x as usize;
                    let dc = px(x as usize, y as usize)
                        .iter()
                        .zip(color)
                        .map(|(&v, c)| (v as f64 - c).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let ds = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    let d = dc + spatial_weight * ds;
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = ci;
                    }
                }
            }
        }
        let mut acc = vec![(0.0f64, 0.0f64, vec![0.0f64; ch], 0usize); centers.len()];
        for (p, &l) in labels.iter().enumerate() {
            let a = &mut acc[l];
            a.0 += (p % w) as f64;
            a.1 += (p / w) as f64;
            for (s, &v) in a.2.iter_mut().zip(px(p % w, p / w)) {
                *s += v as f64;
            }
            a.3 += 1;
        }
        for (c, a) in centers.iter_mut().zip(acc) {
            if a.3 > 0 {
                let n = a.3 as f64;
                *c = (a.0 / n, a.1 / n, a.2.iter().map(|s| s / n).collect());
            }
        }
    }
    let labels = enforce_connectivity(&labels, h, w);
    SuperpixelSet::from_labels(image, labels)
}

/// Keeps the largest 4-connected component of every label and merges the
/// other components into the largest adjacent kept segment. Output labels
/// are renumbered in scan order.
fn enforce_connectivity(labels: &[usize], h: usize, w: usize) -> Vec<usize> {
    let n = h * w;
    let neighbors = |p: usize| {
        let (x, y) = (p % w, p / w);
        let mut out = [usize::MAX; 4];
        if x > 0 {
            out[0] = p - 1;
        }
        if x + 1 < w {
            out[1] = p + 1;
        }
        if y > 0 {
            out[2] = p - w;
        }
        if y + 1 < h {
            out[3] = p + w;
        }
        out.into_iter().filter(|&q| q != usize::MAX)
    };
    let mut comp = vec![usize::MAX; n];
    let mut comp_size = Vec::new();
    let mut comp_label = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_size.len();
        let mut queue = VecDeque::from([start]);
        comp[start] = id;
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            for q in neighbors(p) {
                if comp[q] == usize::MAX && labels[q] == labels[start] {
                    comp[q] = id;
                    queue.push_back(q);
                }
            }
        }
        comp_size.push(size);
        comp_label.push(labels[start]);
    }
    let max_label = labels.iter().max().map_or(0, |m| m + 1);
    let mut best = vec![usize::MAX; max_label];
    for c in 0..comp_size.len() {
        let l = comp_label[c];
        if best[l] == usize::MAX || comp_size[c] > comp_size[best[l]] {
            best[l] = c;
        }
    }
    // owner[c] = kept component that component c belongs to.
    let mut owner: Vec<usize> = (0..comp_size.len()).map(|c| if best[comp_label[c]] == c { c } else { usize::MAX }).collect();
    let mut group_size: Vec<usize> = comp_size.clone();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); comp_size.len()];
    for p in 0..n {
        members[comp[p]].push(p);
    }
    loop {
        let mut changed = false;
        let mut pending = false;
        for c in 0..comp_size.len() {
            if owner[c] != usize::MAX {
                continue;
            }
            pending = true;
            let mut choice: Option<usize> = None;
            for &p in &members[c] {
                for q in neighbors(p) {
                    let o = owner[comp[q]];
                    if o == usize::MAX || comp[q] == c {
                        continue;
                    }
                    choice = match choice {
                        Some(cur) if (group_size[cur], std::cmp::Reverse(cur)) >= (group_size[o], std::cmp::Reverse(o)) => Some(cur),
                        _ => Some(o),
                    };
                }
            }
            if let Some(o) = choice {
                owner[c] = o;
                group_size[o] += comp_size[c];
                changed = true;
            }
        }
        if !pending || !changed {
            break;
        }
    }
    let mut remap = vec![usize::MAX; comp_size.len()];
    let mut next = 0;
    let mut out = vec![0; n];
    for p in 0..n {
        let o = owner[comp[p]];
        if remap[o] == usize::MAX {
            remap[o] = next;
            next += 1;
        }
        out[p] = remap[o];
    }
    out
}

/// One node per superpixel at its centroid. Each node proposes edges to its
/// `knn` nearest centroids, labels them with [`select`], and keeps only the
/// nearest candidate per selection.
pub fn build_superpixel_graph(sp: &SuperpixelSet, knn: usize) -> Result<PositionalGraph> {
    centroid_graph(&sp.centroids, knn)
}

pub(crate) fn centroid_graph(centroids: &[[f64; 2]], knn: usize) -> Result<PositionalGraph> {
    let n = centroids.len();
    if knn == 0 {
        return Err(Error::InvalidArgument("knn must be at least 1".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("{n} superpixels cannot form neighbour edges")));
    }
    let dist2 = |a: usize, b: usize| {
        let (p, q) = (centroids[a], centroids[b]);
        (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
    };
    let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| dist2(i, a).total_cmp(&dist2(i, b)).then(a.cmp(&b)));
        others.truncate(knn);
        candidates.push(others);
    }
    let pairs: Vec<(usize, usize)> = candidates.iter().enumerate().flat_map(|(i, c)| c.iter().map(move |&j| (i, j))).collect();
    let eps = default_epsilon(centroids, &pairs);
    let mut edges: Vec<Edge> = (0..n).map(|i| Edge::new(i, i, Selection::SELF)).collect();
    for (i, cands) in candidates.iter().enumerate() {
        let mut taken = [false; 9];
        // Candidates are already nearest-first.
        for &j in cands {
            let d = [centroids[j][0] - centroids[i][0], centroids[j][1] - centroids[i][1]];
            let s = select(d, eps)?;
            if s.is_self() || taken[s.index()] {
                continue;
            }
            taken[s.index()] = true;
            edges.push(Edge::new(i, j, s));
        }
    }
    PositionalGraph::new(centroids.to_vec(), edges, eps)
}
