//! Graph construction for every supported data layout: plain and masked
//! pixel grids, horizontally wrapping panoramas, cube-map spheres,
//! superpixel centroids and mesh texture atlases.

mod cubemap;
mod superpixel;
mod texture;

pub use cubemap::{build_cubemap, CubeFace, CubeMapLayout};
pub use superpixel::{build_superpixel_graph, slic, SuperpixelSet, DEFAULT_COMPACTNESS, DEFAULT_KNN};
pub use texture::{
    build_texture_graph, cube_chart_origin, cube_unwrap_obj, parse_obj, rasterize_mask, texture_graph,
    texture_pixel_center, uv_boundary_loops, uv_to_pixel, BoundaryEdge, BoundaryLoop, TextureGraph, UvMesh,
};

use crate::error::{Error, Result};
use crate::graph::{Edge, PositionalGraph, Selection};

/// Boolean raster in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} needs {} values, got {}",
                height,
                width,
                height * width,
                bits.len()
            )));
        }
        Ok(Mask { height, width, bits })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Mask { height, width, bits: vec![value; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    /// Out-of-range coordinates read as `false`.
    pub fn get_signed(&self, row: i64, col: i64) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.bits[row as usize * self.width + col as usize]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Pixel lattice restricted to `keep`, nodes in row-major order at `(col,
/// row)`, 8-neighbour edges labelled by their step direction. Returns the
/// graph and the `(row, col)` of every node.
fn lattice(height: usize, width: usize, keep: impl Fn(usize, usize) -> bool) -> (Vec<[f64; 2]>, Vec<Edge>, Vec<(usize, usize)>) {
    let mut ids = vec![usize::MAX; height * width];
    let mut cells = Vec::new();
    for r in 0..height {
        for c in 0..width {
            if keep(r, c) {
                ids[r * width + c] = cells.len();
                cells.push((r, c));
            }
        }
    }
    let positions = cells.iter().map(|&(r, c)| [c as f64, r as f64]).collect();
    let mut edges = Vec::with_capacity(cells.len() * 9);
    for (i, &(r, c)) in cells.iter().enumerate() {
        edges.push(Edge::new(i, i, Selection::SELF));
        for s in Selection::directions() {
            let (dx, dy) = s.step();
            let (rr, cc) = (r as i64 + dy as i64, c as i64 + dx as i64);
            if rr < 0 || cc < 0 || rr >= height as i64 || cc >= width as i64 {
                continue;
            }
            let j = ids[rr as usize * width + cc as usize];
            if j != usize::MAX {
                edges.push(Edge::new(i, j, s));
            }
        }
    }
    (positions, edges, cells)
}

/// Self threshold used by builders whose positions are integer pixel
/// coordinates (median edge length 1).
pub(crate) const PIXEL_EPSILON: f64 = 1e-6;

/// Every pixel of an `height x width` image, linked to its 8 neighbours
/// and itself.
pub fn build_grid(height: usize, width: usize) -> Result<PositionalGraph> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!("grid {height}x{width} has a zero dimension")));
    }
    let (positions, edges, _) = lattice(height, width, |_, _| true);
    PositionalGraph::new(positions, edges, PIXEL_EPSILON)
}

/// Grid whose left and right columns are joined, so each row forms a ring.
pub fn build_panorama(height: usize, width: usize) -> Result<PositionalGraph> {
    if height == 0 {
        return Err(Error::InvalidArgument("panorama height must be positive".into()));
    }
    if width < 3 {
        return Err(Error::InvalidArgument(format!("panorama width {width} is below 3")));
    }
    let (positions, mut edges, _) = lattice(height, width, |_, _| true);
    let id = |r: usize, c: usize| r * width + c;
    for r in 0..height {
        for dy in -1i64..=1 {
            let rr = r as i64 + dy;
            if rr < 0 || rr >= height as i64 {
                continue;
            }
            let rr = rr as usize;
            edges.push(Edge::new(id(r, width - 1), id(rr, 0), Selection::from_step(1, dy as i32)));
            edges.push(Edge::new(id(r, 0), id(rr, width - 1), Selection::from_step(-1, dy as i32)));
        }
    }
    PositionalGraph::new(positions, edges, PIXEL_EPSILON)
}

/// Grid restricted to the pixels set in `mask`; edges survive only when both
/// ends do.
pub fn build_masked_graph(mask: &Mask) -> Result<PositionalGraph> {
    masked_graph_with_cells(mask).map(|(g, _)| g)
}

pub(crate) fn masked_graph_with_cells(mask: &Mask) -> Result<(PositionalGraph, Vec<(usize, usize)>)> {
    if mask.count() == 0 {
        return Err(Error::InvalidArgument("mask selects no pixels".into()));
    }
    let (positions, edges, cells) = lattice(mask.height, mask.width, |r, c| mask.get(r, c));
    Ok((PositionalGraph::new(positions, edges, PIXEL_EPSILON)?, cells))
}
