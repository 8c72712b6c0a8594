use crate::error::{Error, Result};
use crate::graph::{Edge, PositionalGraph, Selection};

use super::PIXEL_EPSILON;

/// Cube faces in atlas order: the strip reads `+x, -x, +y, -y, +z, -z` from
/// left to right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CubeFace {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl CubeFace {
    pub const ALL: [CubeFace; 6] = [
        CubeFace::PosX,
        CubeFace::NegX,
        CubeFace::PosY,
        CubeFace::NegY,
        CubeFace::PosZ,
        CubeFace::NegZ,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// `(forward, right, down)` of the face as seen from the cube centre.
    ///
    /// `+y` is the top pole. Side faces look down `-y`; the top face's up
    /// points at the back (`-z`) face and the bottom face's up at the front
    /// (`+z`) face.
    pub fn frame(self) -> [[i64; 3]; 3] {
        match self {
            CubeFace::PosX => [[1, 0, 0], [0, 0, -1], [0, -1, 0]],
            CubeFace::NegX => [[-1, 0, 0], [0, 0, 1], [0, -1, 0]],
            CubeFace::PosY => [[0, 1, 0], [1, 0, 0], [0, 0, 1]],
            CubeFace::NegY => [[0, -1, 0], [1, 0, 0], [0, 0, -1]],
            CubeFace::PosZ => [[0, 0, 1], [1, 0, 0], [0, -1, 0]],
            CubeFace::NegZ => [[0, 0, -1], [-1, 0, 0], [0, -1, 0]],
        }
    }

    pub fn is_side(self) -> bool {
        !matches!(self, CubeFace::PosY | CubeFace::NegY)
    }

    fn from_forward(f: [i64; 3]) -> CubeFace {
        *CubeFace::ALL.iter().find(|face| face.frame()[0] == f).expect("axis-aligned forward vector")
    }
}

/// Pixel bookkeeping for a cube map of `face_size x face_size` faces laid
/// out in a horizontal strip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CubeMapLayout {
    pub face_size: usize,
}

impl CubeMapLayout {
    pub fn new(face_size: usize) -> Self {
        CubeMapLayout { face_size }
    }

    pub fn node_count(&self) -> usize {
        6 * self.face_size * self.face_size
    }

    pub fn atlas_width(&self) -> usize {
        6 * self.face_size
    }

    pub fn node_id(&self, face: CubeFace, row: usize, col: usize) -> usize {
        let n = self.face_size;
        face.index() * n * n + row * n + col
    }

    pub fn node_cell(&self, id: usize) -> (CubeFace, usize, usize) {
        let n = self.face_size;
        (CubeFace::ALL[id / (n * n)], (id % (n * n)) / n, id % n)
    }

    /// Column and row of the node in the atlas strip.
    pub fn atlas_position(&self, id: usize) -> (usize, usize) {
        let (face, r, c) = self.node_cell(id);
        (face.index() * self.face_size + c, r)
    }

    /// Pixel centre on the surface of the cube `[-1, 1]^3`.
    pub fn pixel_center(&self, id: usize) -> [f64; 3] {
        let (face, r, c) = self.node_cell(id);
        let p = self.scaled_point(face, r as i64, c as i64);
        let n = self.face_size as f64;
        [p[0] as f64 / n, p[1] as f64 / n, p[2] as f64 / n]
    }

    /// Pixel centre scaled so the cube spans `[-n, n]^3`; centres land on
    /// odd integers and every coordinate stays exact.
    fn scaled_point(&self, face: CubeFace, row: i64, col: i64) -> [i64; 3] {
        let n = self.face_size as i64;
        let [f, r, d] = face.frame();
        let (u, v) = (2 * col + 1 - n, 2 * row + 1 - n);
        [0, 1, 2].map(|k| n * f[k] + u * r[k] + v * d[k])
    }

    /// Neighbour of `(face, row, col)` one king move away in the face's own
    /// frame, folding across a cube edge when the step leaves the face.
    /// Steps leaving through a face corner have no neighbour.
    fn step(&self, face: CubeFace, row: usize, col: usize, dx: i32, dy: i32) -> Option<usize> {
        let n = self.face_size as i64;
        let (rr, cc) = (row as i64 + dy as i64, col as i64 + dx as i64);
        let row_out = rr < 0 || rr >= n;
        let col_out = cc < 0 || cc >= n;
        match (row_out, col_out) {
            (false, false) => Some(self.node_id(face, rr as usize, cc as usize)),
            (true, true) => None,
            _ => {
                let mut p = self.scaled_point(face, rr, cc);
                let axis = (0..3).find(|&k| p[k].abs() > n).expect("one coordinate leaves the face");
                let sign = p[axis].signum();
                p[axis] = sign * n;
                let fwd = face.frame()[0];
                let f_axis = (0..3).find(|&k| fwd[k] != 0).expect("unit forward");
                p[f_axis] -= fwd[f_axis];
                let mut normal = [0i64; 3];
                normal[axis] = sign;
                let next = CubeFace::from_forward(normal);
                let [_, r2, d2] = next.frame();
                let u: i64 = (0..3).map(|k| p[k] * r2[k]).sum();
                let v: i64 = (0..3).map(|k| p[k] * d2[k]).sum();
                let (c2, row2) = ((u + n - 1) / 2, (v + n - 1) / 2);
                Some(self.node_id(next, row2 as usize, c2 as usize))
            }
        }
    }
}

/// Cube-map sphere: six `face_size x face_size` faces whose pixels connect
/// across all twelve cube edges. Selections are taken in each node's own
/// face frame, so on the side faces selection 3 always heads for the top
/// pole. Pixels touching a cube corner lack exactly one diagonal.
pub fn build_cubemap(face_size: usize) -> Result<PositionalGraph> {
    if face_size < 2 {
        return Err(Error::InvalidArgument(format!("cube face size {face_size} is below 2")));
    }
    let layout = CubeMapLayout::new(face_size);
    let n = layout.node_count();
    let positions = (0..n)
        .map(|id| {
            let (x, y) = layout.atlas_position(id);
            [x as f64, y as f64]
        })
        .collect();
    let mut edges = Vec::with_capacity(n * 9);
    for id in 0..n {
        let (face, r, c) = layout.node_cell(id);
        edges.push(Edge::new(id, id, Selection::SELF));
        for s in Selection::directions() {
            let (dx, dy) = s.step();
            if let Some(j) = layout.step(face, r, c, dx, dy) {
                edges.push(Edge::new(id, j, s));
            }
        }
    }
    PositionalGraph::new(positions, edges, PIXEL_EPSILON)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    /// Brute-force surface adjacency: two pixels touch when their closed
    /// squares on the cube share a lattice corner.
    fn corner_sets(layout: &CubeMapLayout) -> Vec<BTreeSet<[i64; 3]>> {
        let n = layout.face_size as i64;
        (0..layout.node_count())
            .map(|id| {
                let (face, r, c) = layout.node_cell(id);
                let [f, rt, d] = face.frame();
                let mut set = BTreeSet::new();
                for (du, dv) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let u = 2 * (c as i64 + du) - n;
                    let v = 2 * (r as i64 + dv) - n;
                    set.insert([0, 1, 2].map(|k| n * f[k] + u * rt[k] + v * d[k]));
                }
                set
            })
            .collect()
    }

    fn brute_adjacency(layout: &CubeMapLayout) -> BTreeSet<(usize, usize)> {
        let corners = corner_sets(layout);
        let mut out = BTreeSet::new();
        for a in 0..corners.len() {
            for b in 0..corners.len() {
                if a != b && !corners[a].is_disjoint(&corners[b]) {
                    out.insert((a, b));
                }
            }
        }
        out
    }

    #[test]
    fn matches_surface_adjacency() {
        for f in [2, 3, 4] {
            let layout = CubeMapLayout::new(f);
            let g = build_cubemap(f).unwrap();
            assert_eq!(g.node_count(), 6 * f * f);
            let got: BTreeSet<(usize, usize)> =
                g.edges().iter().filter(|e| e.src != e.dst).map(|e| (e.src, e.dst)).collect();
            assert_eq!(got, brute_adjacency(&layout), "face size {f}");
            let sevens = (0..g.node_count()).filter(|&i| g.neighbors(i).count() == 7).count();
            assert_eq!(sevens, 24);
            assert!((0..g.node_count()).all(|i| matches!(g.neighbors(i).count(), 7 | 8)));
        }
        assert!(build_cubemap(1).is_err());
    }

    #[test]
    fn edges_are_symmetric_and_selections_unique() {
        let g = build_cubemap(4).unwrap();
        for e in g.edges() {
            assert!(g.find_edge(e.dst, e.src).is_some());
        }
        for i in 0..g.node_count() {
            let sels: BTreeSet<u8> = g.out_edges(i).iter().map(|e| e.selection.value()).collect();
            assert_eq!(sels.len(), g.out_edges(i).len());
        }
    }

    #[test]
    fn side_face_up_points_to_top_pole() {
        let layout = CubeMapLayout::new(4);
        let g = build_cubemap(4).unwrap();
        for id in 0..g.node_count() {
            let (face, _, _) = layout.node_cell(id);
            if !face.is_side() {
                continue;
            }
            let up = g.out_edges(id).iter().find(|e| e.selection == Selection::UP).unwrap();
            assert!(layout.pixel_center(up.dst)[1] > layout.pixel_center(id)[1]);
        }
    }

    #[test]
    fn pole_frames_follow_convention() {
        let layout = CubeMapLayout::new(4);
        let g = build_cubemap(4).unwrap();
        // Up on the top face heads for the back face, on the bottom face for the front.
        let top_up = g.out_edges(layout.node_id(CubeFace::PosY, 0, 1)).iter().find(|e| e.selection == Selection::UP).unwrap();
        assert_eq!(layout.node_cell(top_up.dst).0, CubeFace::NegZ);
        let bottom_up =
            g.out_edges(layout.node_id(CubeFace::NegY, 0, 1)).iter().find(|e| e.selection == Selection::UP).unwrap();
        assert_eq!(layout.node_cell(bottom_up.dst).0, CubeFace::PosZ);
    }

    #[test]
    fn yaw_relabeling_is_automorphism_on_side_rows() {
        let f = 4;
        let layout = CubeMapLayout::new(f);
        let g = build_cubemap(f).unwrap();
        let index: BTreeMap<[i64; 3], usize> = (0..g.node_count())
            .map(|id| (layout.pixel_center(id).map(|v| (v * f as f64).round() as i64), id))
            .collect();
        // Yaw by 90 degrees: +z -> +x -> -z -> -x.
        let perm: Vec<usize> = (0..g.node_count())
            .map(|id| {
                let p = layout.pixel_center(id).map(|v| (v * f as f64).round() as i64);
                index[&[p[2], p[1], -p[0]]]
            })
            .collect();
        let gp = g.permute_nodes(&perm).unwrap();
        for id in 0..g.node_count() {
            if !layout.node_cell(id).0.is_side() {
                continue;
            }
            let a: BTreeSet<(usize, u8)> = gp.out_edges(perm[id]).iter().map(|e| (e.dst, e.selection.value())).collect();
            let b: BTreeSet<(usize, u8)> = g.out_edges(perm[id]).iter().map(|e| (e.dst, e.selection.value())).collect();
            assert_eq!(a, b);
        }
    }
}
