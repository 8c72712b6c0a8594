use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Edge, PositionalGraph, Selection};

use super::{masked_graph_with_cells, CubeFace, Mask, PIXEL_EPSILON};

/// Triangle mesh with per-corner texture coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UvMesh {
    pub vertices: Vec<[f64; 3]>,
    pub uvs: Vec<[f64; 2]>,
    /// Each corner is `(vertex index, uv index)`.
    pub faces: Vec<[(usize, usize); 3]>,
}

impl UvMesh {
    pub fn validate(&self) -> Result<()> {
        for (fi, f) in self.faces.iter().enumerate() {
            for &(v, t) in f {
                if v >= self.vertices.len() || t >= self.uvs.len() {
                    return Err(Error::Mesh(format!("face {fi} references a missing vertex or uv")));
                }
            }
            let [a, b, c] = f.map(|(_, t)| self.uvs[t]);
            let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            if area.abs() < 1e-15 {
                return Err(Error::Mesh(format!("face {fi} is degenerate in uv space")));
            }
        }
        Ok(())
    }

    pub fn from_obj_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_obj(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path, message),
            other => other,
        })
    }
}

fn resolve_index(raw: &str, count: usize, line: usize) -> Result<usize> {
    let bad = || Error::parse("<obj>", format!("line {line}: bad index {raw:?}"));
    let i: i64 = raw.parse().map_err(|_| bad())?;
    let idx = match i {
        0 => return Err(bad()),
        i if i > 0 => i - 1,
        i => count as i64 + i,
    };
    if idx < 0 || idx as usize >= count {
        return Err(bad());
    }
    Ok(idx as usize)
}

/// Reads the `v`, `vt` and `f` records of a Wavefront OBJ. Polygons are
/// fan-triangulated from their first corner; normal indices are ignored;
/// every face corner needs a texture coordinate.
pub fn parse_obj(text: &str) -> Result<UvMesh> {
    let mut mesh = UvMesh::default();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut it = content.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let nums = |it: std::str::SplitWhitespace<'_>, n: usize| -> Result<Vec<f64>> {
            let vals: Vec<f64> = it
                .take(n)
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse("<obj>", format!("line {line}: bad number")))?;
            if vals.len() < n {
                return Err(Error::parse("<obj>", format!("line {line}: expected {n} numbers")));
            }
            Ok(vals)
        };
        match tag {
            "v" => {
                let v = nums(it, 3)?;
                mesh.vertices.push([v[0], v[1], v[2]]);
            }
            "vt" => {
                let v = nums(it, 2)?;
                mesh.uvs.push([v[0], v[1]]);
            }
            "f" => {
                let mut corners = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let v = resolve_index(parts.next().unwrap_or(""), mesh.vertices.len(), line)?;
                    let t = match parts.next() {
                        Some(t) if !t.is_empty() => resolve_index(t, mesh.uvs.len(), line)?,
                        _ => return Err(Error::parse("<obj>", format!("line {line}: face corner without uv"))),
                    };
                    corners.push((v, t));
                }
                if corners.len() < 3 {
                    return Err(Error::parse("<obj>", format!("line {line}: face with fewer than 3 corners")));
                }
                for k in 1..corners.len() - 1 {
                    mesh.faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    mesh.validate()?;
    Ok(mesh)
}

/// A uv edge referenced by exactly one face.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    /// uv indices in the owning face's winding order.
    pub uv: (usize, usize),
    /// Mesh vertex indices matching `uv`.
    pub verts: (usize, usize),
    pub face: usize,
    /// `(loop, edge)` of the counterpart on the other side of the seam.
    pub twin: Option<(usize, usize)>,
}

/// Closed chain of boundary edges; `points[k]` is where `edges[k]` starts.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryLoop {
    pub points: Vec<[f64; 2]>,
    pub edges: Vec<BoundaryEdge>,
}

/// Chains every once-referenced uv edge into closed loops and pairs each
/// with the edge on another chart that shares its mesh edge.
pub fn uv_boundary_loops(mesh: &UvMesh) -> Result<Vec<BoundaryLoop>> {
    mesh.validate()?;
    let mut refs: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut directed = Vec::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *refs.entry((a.1.min(b.1), a.1.max(b.1))).or_default() += 1;
            directed.push(BoundaryEdge { uv: (a.1, b.1), verts: (a.0, b.0), face: fi, twin: None });
        }
    }
    for (&(a, b), &count) in &refs {
        if count > 2 {
            return Err(Error::Mesh(format!("uv edge {a}-{b} is referenced by {count} faces")));
        }
    }
    let boundary: Vec<BoundaryEdge> =
        directed.into_iter().filter(|e| refs[&(e.uv.0.min(e.uv.1), e.uv.0.max(e.uv.1))] == 1).collect();

    let mut by_start: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, e) in boundary.iter().enumerate() {
        by_start.entry(e.uv.0).or_default().push(k);
    }
    let mut used = vec![false; boundary.len()];
    let mut loops: Vec<Vec<usize>> = Vec::new();
    for start in 0..boundary.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut chain = vec![start];
        let origin = boundary[start].uv.0;
        let mut end = boundary[start].uv.1;
        while end != origin {
            let next = by_start.get(&end).and_then(|c| c.iter().copied().find(|&k| !used[k]));
            let Some(k) = next else {
                let last = boundary[*chain.last().expect("chain is non-empty")];
                return Err(Error::Mesh(format!(
                    "open boundary chain: no edge continues from uv edge {}-{} (face {})",
                    last.uv.0, last.uv.1, last.face
                )));
            };
            used[k] = true;
            chain.push(k);
            end = boundary[k].uv.1;
        }
        loops.push(chain);
    }

    let mut location = vec![(0, 0); boundary.len()];
    for (li, chain) in loops.iter().enumerate() {
        for (ei, &k) in chain.iter().enumerate() {
            location[k] = (li, ei);
        }
    }
    let mut by_mesh_edge: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, e) in boundary.iter().enumerate() {
        by_mesh_edge.entry((e.verts.0.min(e.verts.1), e.verts.0.max(e.verts.1))).or_default().push(k);
    }
    let mut twins = vec![None; boundary.len()];
    for group in by_mesh_edge.values() {
        for &k in group {
            let key = |e: &BoundaryEdge| (e.uv.0.min(e.uv.1), e.uv.0.max(e.uv.1));
            twins[k] = group.iter().copied().find(|&j| j != k && key(&boundary[j]) != key(&boundary[k])).map(|j| location[j]);
        }
    }

    Ok(loops
        .into_iter()
        .map(|chain| BoundaryLoop {
            points: chain.iter().map(|&k| mesh.uvs[boundary[k].uv.0]).collect(),
            edges: chain.iter().map(|&k| BoundaryEdge { twin: twins[k], ..boundary[k] }).collect(),
        })
        .collect())
}

/// Maps a uv coordinate to continuous texture-pixel space (`x` right, `y`
/// down, `v = 1` on the top row). Pixel `(row, col)` has its centre at
/// `(col + 0.5, row + 0.5)`.
pub fn uv_to_pixel(uv: [f64; 2], tex_size: usize) -> [f64; 2] {
    [uv[0] * tex_size as f64, (1.0 - uv[1]) * tex_size as f64]
}

/// uv coordinate of the centre of pixel `(row, col)`.
pub fn texture_pixel_center(row: usize, col: usize, tex_size: usize) -> [f64; 2] {
    let t = tex_size as f64;
    [(col as f64 + 0.5) / t, 1.0 - (row as f64 + 0.5) / t]
}

/// Marks the pixels whose centres fall inside the loops under the even-odd
/// rule. Centres lying exactly on a loop edge count as inside.
pub fn rasterize_mask(loops: &[BoundaryLoop], tex_size: usize) -> Result<Mask> {
    if tex_size == 0 {
        return Err(Error::InvalidArgument("texture size must be positive".into()));
    }
    if let Some(l) = loops.iter().find(|l| l.points.len() < 3) {
        return Err(Error::InvalidArgument(format!("degenerate loop with {} points", l.points.len())));
    }
    let segments: Vec<([f64; 2], [f64; 2])> = loops
        .iter()
        .flat_map(|l| {
            let n = l.points.len();
            (0..n).map(move |k| (uv_to_pixel(l.points[k], tex_size), uv_to_pixel(l.points[(k + 1) % n], tex_size)))
        })
        .collect();
    Ok(scanline_fill(&segments, tex_size, tex_size))
}

pub(crate) fn scanline_fill(segments: &[([f64; 2], [f64; 2])], height: usize, width: usize) -> Mask {
    let mut mask = Mask::filled(height, width, false);
    let mut crossings = Vec::new();
    let mark_center = |mask: &mut Mask, row: usize, x: f64| {
        let c = x - 0.5;
        if c.fract() == 0.0 && c >= 0.0 && (c as usize) < width {
            mask.set(row, c as usize, true);
        }
    };
    for row in 0..height {
        let y = row as f64 + 0.5;
        crossings.clear();
        for &(p, q) in segments {
            if p[1] == q[1] {
                if p[1] == y {
                    let (lo, hi) = (p[0].min(q[0]), p[0].max(q[0]));
                    let first = (lo - 0.5).ceil().max(0.0) as usize;
                    for c in first..width {
                        if c as f64 + 0.5 > hi {
                            break;
                        }
                        mask.set(row, c, true);
                    }
                }
                continue;
            }
            let (lo, hi) = if p[1] < q[1] { (p, q) } else { (q, p) };
            if y < lo[1] || y > hi[1] {
                continue;
            }
            let x = lo[0] + (y - lo[1]) * (hi[0] - lo[0]) / (hi[1] - lo[1]);
            mark_center(&mut mask, row, x);
            if y < hi[1] {
                crossings.push(x);
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            let first = (span[0] - 0.5).ceil().max(0.0) as usize;
            for c in first..width {
                if c as f64 + 0.5 > span[1] {
                    break;
                }
                mask.set(row, c, true);
            }
        }
    }
    mask
}

/// Texture-atlas graph together with the pixel of every node and the mask.
#[derive(Clone, Debug)]
pub struct TextureGraph {
    pub graph: PositionalGraph,
    pub cells: Vec<(usize, usize)>,
    pub mask: Mask,
}

struct SeamEdge {
    start: [f64; 2],
    end: [f64; 2],
    /// Unit normal pointing out of the chart.
    outward: [f64; 2],
    twin_start: [f64; 2],
    twin_end: [f64; 2],
    twin_outward: [f64; 2],
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn outward_normal(start: [f64; 2], end: [f64; 2], loop_area: f64) -> [f64; 2] {
    let d = sub(end, start);
    let len = dot(d, d).sqrt();
    // A loop with positive area has its interior on the left of each edge.
    let right = [d[1] / len, -d[0] / len];
    if loop_area > 0.0 {
        right
    } else {
        [-right[0], -right[1]]
    }
}

fn signed_area(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    (0..n).map(|k| cross(points[k], points[(k + 1) % n])).sum::<f64>() / 2.0
}

/// Masked pixel graph of the texture atlas with the charts stitched along
/// their seams.
///
/// A boundary pixel whose neighbour in some direction is missing projects
/// that neighbour's centre across the nearest seam edge: the offset along
/// the edge is carried over by arc-length fraction and the distance past the
/// edge becomes the distance into the twin chart. The pixel nearest the
/// mapped point is linked with the selection of the original direction, i.e.
/// the direction the step would have inside a single continuous chart.
pub fn build_texture_graph(mesh: &UvMesh, tex_size: usize) -> Result<PositionalGraph> {
    texture_graph(mesh, tex_size).map(|t| t.graph)
}

pub fn texture_graph(mesh: &UvMesh, tex_size: usize) -> Result<TextureGraph> {
    let loops = uv_boundary_loops(mesh)?;
    let mask = rasterize_mask(&loops, tex_size)?;
    let (base, cells) = masked_graph_with_cells(&mask)?;
    let px = |p: [f64; 2]| uv_to_pixel(p, tex_size);

    let areas: Vec<f64> = loops.iter().map(|l| signed_area(&l.points.iter().map(|&p| px(p)).collect::<Vec<_>>())).collect();
    let endpoint = |li: usize, ei: usize| {
        let l = &loops[li];
        (px(l.points[ei]), px(l.points[(ei + 1) % l.points.len()]))
    };
    let mut seams = Vec::new();
    for (li, l) in loops.iter().enumerate() {
        for (ei, e) in l.edges.iter().enumerate() {
            let Some((tl, te)) = e.twin else { continue };
            let (start, end) = endpoint(li, ei);
            let (mut ts, mut tend) = endpoint(tl, te);
            let twin = loops[tl].edges[te];
            // Orient the twin so that both run from the same mesh vertex.
            if twin.verts.0 != e.verts.0 {
                std::mem::swap(&mut ts, &mut tend);
            }
            seams.push(SeamEdge {
                start,
                end,
                outward: outward_normal(start, end, areas[li]),
                twin_start: ts,
                twin_end: tend,
                twin_outward: outward_normal(endpoint(tl, te).0, endpoint(tl, te).1, areas[tl]),
            });
        }
    }

    let mut node_at = vec![usize::MAX; tex_size * tex_size];
    for (i, &(r, c)) in cells.iter().enumerate() {
        node_at[r * tex_size + c] = i;
    }
    let mut edges: Vec<Edge> = base.edges().to_vec();
    let mut present: BTreeSet<(usize, usize)> = edges.iter().map(|e| (e.src, e.dst)).collect();
    for (i, &(r, c)) in cells.iter().enumerate() {
        let center = [c as f64 + 0.5, r as f64 + 0.5];
        for s in Selection::directions() {
            let (dx, dy) = s.step();
            if mask.get_signed(r as i64 + dy as i64, c as i64 + dx as i64) {
                continue;
            }
            let probe = [center[0] + dx as f64, center[1] + dy as f64];
            let mut best: Option<(f64, &SeamEdge, f64)> = None;
            for seam in &seams {
                let d = sub(seam.end, seam.start);
                let len2 = dot(d, d);
                let t = dot(sub(probe, seam.start), d) / len2;
                if t <= 1e-9 || t >= 1.0 - 1e-9 {
                    continue;
                }
                let h = dot(sub(probe, seam.start), seam.outward);
                if h <= 1e-9 || h > 1.5 {
                    continue;
                }
                // The pixel itself must sit just inside this edge, which keeps
                // probes from latching onto a neighbouring chart's border.
                let h_center = dot(sub(center, seam.start), seam.outward);
                if !(-1.5..0.0).contains(&h_center) {
                    continue;
                }
                if best.is_none_or(|(bh, _, _)| h < bh) {
                    best = Some((h, seam, t));
                }
            }
            let Some((h, seam, t)) = best else { continue };
            let td = sub(seam.twin_end, seam.twin_start);
            let target = [
                seam.twin_start[0] + t * td[0] - h * seam.twin_outward[0],
                seam.twin_start[1] + t * td[1] - h * seam.twin_outward[1],
            ];
            let (tc, tr) = (target[0].floor(), target[1].floor());
            if tc < 0.0 || tr < 0.0 || tc >= tex_size as f64 || tr >= tex_size as f64 {
                continue;
            }
            let j = node_at[tr as usize * tex_size + tc as usize];
            if j == usize::MAX || j == i || !present.insert((i, j)) {
                continue;
            }
            edges.push(Edge::new(i, j, s));
        }
    }
    let graph = PositionalGraph::new(base.positions().to_vec(), edges, PIXEL_EPSILON)?;
    Ok(TextureGraph { graph, cells, mask })
}

/// Wavefront OBJ of the cube `[-1, 1]^3` unwrapped into six square charts of
/// `face_px` pixels, laid out three by two with `gap` empty pixels around
/// each. Chart `k` carries face [`CubeFace::ALL`]`[k]` in the same
/// orientation as the cube-map builder, so pixel `(r, c)` of a face sits at
/// texture pixel `(oy + r, ox + c)` with the origin from [`cube_chart_origin`].
pub fn cube_unwrap_obj(face_px: usize, gap: usize) -> (String, usize) {
    let tex_size = 3 * face_px + 4 * gap;
    let mut out = String::from("# cube unwrapped into six charts\n");
    let mut corners: Vec<[i64; 3]> = Vec::new();
    for x in [-1i64, 1] {
        for y in [-1i64, 1] {
            for z in [-1i64, 1] {
                corners.push([x, y, z]);
                out += &format!("v {x} {y} {z}\n");
            }
        }
    }
    let t = tex_size as f64;
    let mut faces = String::new();
    for (k, face) in CubeFace::ALL.iter().enumerate() {
        let (ox, oy) = cube_chart_origin(k, face_px, gap);
        let [f, r, d] = face.frame();
        let mut ids = [0usize; 4];
        for (q, (u, v)) in [(0i64, 0i64), (1, 0), (1, 1), (0, 1)].into_iter().enumerate() {
            let p = [0, 1, 2].map(|a| f[a] + (2 * u - 1) * r[a] + (2 * v - 1) * d[a]);
            let vi = corners.iter().position(|&c| c == p).expect("cube corner");
            let px = ox as f64 + (u as usize * face_px) as f64;
            let py = oy as f64 + (v as usize * face_px) as f64;
            out += &format!("vt {} {}\n", px / t, 1.0 - py / t);
            ids[q] = vi + 1;
        }
        let base = 4 * k + 1;
        faces += &format!(
            "f {}/{} {}/{} {}/{} {}/{}\n",
            ids[0],
            base,
            ids[1],
            base + 1,
            ids[2],
            base + 2,
            ids[3],
            base + 3
        );
    }
    out += &faces;
    (out, tex_size)
}

/// Top-left texture pixel `(x, y)` of chart `k` in [`cube_unwrap_obj`].
pub fn cube_chart_origin(k: usize, face_px: usize, gap: usize) -> (usize, usize) {
    (gap + (k % 3) * (face_px + gap), gap + (k / 3) * (face_px + gap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::build_masked_graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeMap, BTreeSet};

    const SQUARE: &str = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf 1/1 2/2 3/3\nf 1/1 3/3 4/4\n";

    /// pnpoly even-odd test with an explicit on-segment check.
    fn oracle_inside(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
        let n = poly.len();
        for k in 0..n {
            let (a, b) = (poly[k], poly[(k + 1) % n]);
            let cr = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            let within = p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1]);
            if cr == 0.0 && within {
                return true;
            }
        }
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (poly[i], poly[j]);
            if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    fn loop_of(points: Vec<[f64; 2]>) -> BoundaryLoop {
        let edges = (0..points.len())
            .map(|k| BoundaryEdge { uv: (k, (k + 1) % points.len()), verts: (k, k + 1), face: 0, twin: None })
            .collect();
        BoundaryLoop { points, edges }
    }

    #[test]
    fn parses_obj_subset() {
        let m = parse_obj(SQUARE).unwrap();
        assert_eq!((m.vertices.len(), m.uvs.len(), m.faces.len()), (4, 4, 2));
        let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nvn 0 0 1\nf -4/-4/1 -3/-3/1 -2/-2/1 -1/-1/1\n";
        let q = parse_obj(quad).unwrap();
        assert_eq!(q.faces, m.faces);
        assert!(parse_obj("v 0 0 0\nf 1 1 1\n").is_err());
        assert!(parse_obj("v 0 0 0\nvt 0 0\nf 1/1 1/1 1/1\n").is_err());
        assert!(parse_obj("v 0 0 0\nvt 0 0\nf 2/1 1/1 1/1\n").is_err());
    }

    #[test]
    fn single_square_has_one_untwinned_loop() {
        let loops = uv_boundary_loops(&parse_obj(SQUARE).unwrap()).unwrap();
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].edges.len(), 4);
        assert!(loops[0].edges.iter().all(|e| e.twin.is_none()));
    }

    #[test]
    fn open_chain_is_reported() {
        // A bow-tie: two triangles sharing only one uv vertex is still closed,
        // so build an open chain by dropping a face reference.
        let mesh = UvMesh {
            vertices: vec![[0.0; 3]; 4],
            uvs: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            faces: vec![[(0, 0), (1, 1), (2, 2)], [(0, 0), (2, 2), (3, 3)], [(0, 0), (3, 3), (2, 2)]],
        };
        // Edge 0-2 and 2-3 are referenced twice, 3-0 twice: leaves 0-1, 1-2 open.
        let err = uv_boundary_loops(&mesh).unwrap_err();
        assert!(matches!(err, Error::Mesh(_)), "{err}");
    }

    #[test]
    fn tube_seam_twins_itself() {
        // Four quads around a square tube, unwrapped into one strip with one seam.
        let mut obj = String::new();
        for ring in 0..2 {
            for k in 0..4 {
                let a = k as f64 * std::f64::consts::FRAC_PI_2;
                obj += &format!("v {} {} {}\n", a.cos(), a.sin(), ring);
            }
        }
        for ring in 0..2 {
            for k in 0..5 {
                obj += &format!("vt {} {}\n", k as f64 / 4.0, 0.25 + 0.5 * ring as f64);
            }
        }
        for k in 0..4 {
            let (v0, v1) = (k + 1, (k + 1) % 4 + 1);
            let (t0, t1) = (k + 1, k + 2);
            obj += &format!("f {}/{} {}/{} {}/{} {}/{}\n", v0, t0, v1, t1, v1 + 4, t1 + 5, v0 + 4, t0 + 5);
        }
        let loops = uv_boundary_loops(&parse_obj(&obj).unwrap()).unwrap();
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].edges.len(), 10);
        assert_eq!(loops[0].edges.iter().filter(|e| e.twin.is_some()).count(), 2);
    }

    #[test]
    fn rasterize_examples() {
        let unit = loop_of(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        assert!(rasterize_mask(&[unit.clone()], 4).unwrap().bits().iter().all(|&b| b));

        // Lower-left triangle in uv is below the anti-diagonal u + v <= 1.
        let tri = loop_of(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let m = rasterize_mask(&[tri], 8).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let uv = texture_pixel_center(r, c, 8);
                assert_eq!(m.get(r, c), uv[0] + uv[1] <= 1.0 + 1e-12, "pixel {r},{c}");
            }
        }

        let a = loop_of(vec![[0.05, 0.05], [0.4, 0.05], [0.4, 0.4], [0.05, 0.4]]);
        let b = loop_of(vec![[0.6, 0.5], [0.95, 0.6], [0.7, 0.95]]);
        let ma = rasterize_mask(&[a.clone()], 16).unwrap();
        let mb = rasterize_mask(&[b.clone()], 16).unwrap();
        let both = rasterize_mask(&[a, b], 16).unwrap();
        for k in 0..256 {
            assert_eq!(both.bits()[k], ma.bits()[k] || mb.bits()[k]);
        }
        assert!(rasterize_mask(&[loop_of(vec![[0.0, 0.0], [1.0, 1.0]])], 4).is_err());
    }

    #[test]
    fn rasterize_matches_ray_casting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t = 24;
        for _ in 0..200 {
            let n = rng.gen_range(3..9);
            let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
            let mask = rasterize_mask(&[loop_of(pts.clone())], t).unwrap();
            let poly: Vec<[f64; 2]> = pts.iter().map(|&p| uv_to_pixel(p, t)).collect();
            for r in 0..t {
                for c in 0..t {
                    let p = [c as f64 + 0.5, r as f64 + 0.5];
                    assert_eq!(mask.get(r, c), oracle_inside(&poly, p));
                }
            }
        }
    }

    #[test]
    fn cube_unwrap_matches_cubemap() {
        use crate::builders::{build_cubemap, CubeMapLayout};
        for f in [2, 4, 8] {
            let (obj, t) = cube_unwrap_obj(f, 2);
            let mesh = parse_obj(&obj).unwrap();
            let loops = uv_boundary_loops(&mesh).unwrap();
            assert_eq!(loops.len(), 6);
            assert!(loops.iter().all(|l| l.edges.len() == 4 && l.edges.iter().all(|e| e.twin.is_some())));
            let tg = texture_graph(&mesh, t).unwrap();
            assert_eq!(tg.mask.count(), 6 * f * f);
            let cube = build_cubemap(f).unwrap();
            let layout = CubeMapLayout::new(f);
            let index: BTreeMap<(usize, usize), usize> = tg.cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
            let map: Vec<usize> = (0..cube.node_count())
                .map(|id| {
                    let (face, r, c) = layout.node_cell(id);
                    let (ox, oy) = cube_chart_origin(face.index(), f, 2);
                    index[&(oy + r, ox + c)]
                })
                .collect();
            for id in 0..cube.node_count() {
                let want: BTreeSet<(usize, u8)> =
                    cube.out_edges(id).iter().map(|e| (map[e.dst], e.selection.value())).collect();
                let got: BTreeSet<(usize, u8)> =
                    tg.graph.out_edges(map[id]).iter().map(|e| (e.dst, e.selection.value())).collect();
                assert_eq!(got, want, "F={f} node {id}");
            }
        }
    }

    #[test]
    fn two_quads_stitch_along_shared_edge() {
        // Two unit squares sharing the 3D edge (1,0,0)-(1,1,0), placed apart in uv.
        let obj = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 2 0 0\nv 2 1 0\n\
                   vt 0 0\nvt 0.25 0\nvt 0.25 0.25\nvt 0 0.25\n\
                   vt 0.5 0\nvt 0.75 0\nvt 0.75 0.25\nvt 0.5 0.25\n\
                   f 1/1 2/2 3/3 4/4\nf 2/5 5/6 6/7 3/8\n";
        let mesh = parse_obj(obj).unwrap();
        let loops = uv_boundary_loops(&mesh).unwrap();
        assert_eq!(loops.len(), 2);
        assert_eq!(loops.iter().flat_map(|l| &l.edges).filter(|e| e.twin.is_some()).count(), 2);
        let tg = texture_graph(&mesh, 16).unwrap();
        let base = build_masked_graph(&tg.mask).unwrap();
        let seam: Vec<&Edge> = tg.graph.edges().iter().filter(|e| base.find_edge(e.src, e.dst).is_none()).collect();
        // Column 3 of the left chart meets column 8 of the right chart.
        for e in &seam {
            let (a, b) = (tg.cells[e.src], tg.cells[e.dst]);
            assert!((a.1 == 3 && b.1 == 8) || (a.1 == 8 && b.1 == 3));
            assert_eq!(e.selection.step().1, b.0 as i32 - a.0 as i32);
            let back = tg.graph.find_edge(e.dst, e.src).unwrap();
            assert_eq!(back.selection, e.selection.opposite());
        }
        // 4 straight links and 3 + 3 diagonal links per side.
        assert_eq!(seam.len(), 2 * (4 + 6));
    }

    #[test]
    fn single_chart_texture_graph_is_masked_graph() {
        let mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0.1 0.1\nvt 0.9 0.2\nvt 0.3 0.8\nf 1/1 2/2 3/3\n").unwrap();
        let tg = texture_graph(&mesh, 16).unwrap();
        assert_eq!(tg.graph, build_masked_graph(&tg.mask).unwrap());
    }
}
