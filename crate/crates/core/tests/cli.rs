use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use selconv::builders::{cube_unwrap_obj, CubeMapLayout};
use selconv::graph::PositionalGraph;
use selconv::layers::{Kernel2D, PaddingMode};
use selconv::model_io::{read_image, save_model, write_image, ImageBuffer, InputSpec, Model};
use selconv::numerics::Tensor;
use selconv::oracle::{RefLayer, RefNet};

fn selconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selconv")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn conv_model(dir: &Path, kernel: Kernel2D, padding: PaddingMode) -> PathBuf {
    let c = kernel.in_channels;
    let net = RefNet { layers: vec![RefLayer::Conv { kernel, stride: 1, dilation: 1, padding }] };
    let path = dir.join("model");
    save_model(&Model::from_ref_net(&net, InputSpec::plain(c)).unwrap(), &path).unwrap();
    path
}

fn blur_kernel() -> Kernel2D {
    Kernel2D::new(Tensor::filled(vec![1, 1, 3, 3], 1.0 / 9.0), None).unwrap()
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageBuffer {
    // Values on the 8-bit lattice so files round-trip exactly.
    ImageBuffer::new(h, w, c, (0..h * w * c).map(|_| rng.gen_range(0..=255u8) as f32 / 255.0).collect()).unwrap()
}

fn dump(path: &Path) -> PositionalGraph {
    PositionalGraph::from_dump(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn graph_dumps() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("g.txt");
    assert!(selconv(&["graph", "--kind", "grid", "--h", "3", "--w", "3", "--out", s(&out)]).status.success());
    let g = dump(&out);
    assert_eq!((g.node_count(), g.edge_count()), (9, 49));

    assert!(selconv(&["graph", "--kind", "cubemap", "--face", "2", "--out", s(&out)]).status.success());
    assert_eq!(dump(&out).node_count(), 24);

    let (obj, _) = cube_unwrap_obj(4, 1);
    let obj_path = dir.path().join("cube.obj");
    fs::write(&obj_path, obj).unwrap();
    assert!(selconv(&["graph", "--kind", "texture", "--obj", s(&obj_path), "--tex", "16", "--out", s(&out)]).status.success());
    let g = dump(&out);
    assert_eq!(g.node_count(), 6 * 16);
    for i in 0..g.node_count() {
        assert_eq!(g.out_edges(i).len(), 9 - usize::from(g.out_edges(i).len() == 8));
    }
}

#[test]
fn usage_and_asset_errors_have_distinct_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("g.txt");
    assert_eq!(selconv(&["graph", "--kind", "grid", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(selconv(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(selconv(&["graph", "--kind", "cubemap", "--face", "1", "--out", s(&out)]).status.code(), Some(2));
    let missing = dir.path().join("missing.obj");
    assert_eq!(selconv(&["graph", "--kind", "texture", "--obj", s(&missing), "--tex", "8", "--out", s(&out)]).status.code(), Some(3));
    let bad = dir.path().join("bad.pgm");
    fs::write(&bad, b"P2\n1 1\n255\n0\n").unwrap();
    let model = conv_model(dir.path(), blur_kernel(), PaddingMode::Zero);
    let code = selconv(&["run", "--model", s(&model), "--kind", "grid", "--input", s(&bad), "--out", s(&out)]).status.code();
    assert_eq!(code, Some(3));
}

#[test]
fn identity_model_returns_the_input() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = conv_model(dir.path(), Kernel2D::identity(3, 3).unwrap(), PaddingMode::Reflect);
    let img = random_image(&mut rng, 9, 11, 3);
    let input = dir.path().join("in.ppm");
    write_image(&img, &input).unwrap();
    for kind in ["grid", "panorama"] {
        let out = dir.path().join(format!("{kind}.ppm"));
        let res = selconv(&["run", "--model", s(&model), "--kind", kind, "--input", s(&input), "--out", s(&out)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        assert_eq!(read_image(&out).unwrap(), img);
    }
}

#[test]
fn cubemap_blur_differs_from_flat_only_near_seams() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let face = 6;
    let model = conv_model(dir.path(), blur_kernel(), PaddingMode::Zero);
    let input = dir.path().join("atlas.pgm");
    write_image(&random_image(&mut rng, face, 6 * face, 1), &input).unwrap();
    let (flat_out, cube_out) = (dir.path().join("flat.txt"), dir.path().join("cube.txt"));
    assert!(selconv(&["run", "--model", s(&model), "--kind", "grid", "--input", s(&input), "--out", s(&flat_out)]).status.success());
    assert!(selconv(&["run", "--model", s(&model), "--kind", "cubemap", "--input", s(&input), "--out", s(&cube_out)]).status.success());
    let values = |p: &Path| -> Vec<f32> {
        fs::read_to_string(p).unwrap().lines().map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap()).collect()
    };
    let (flat, cube) = (values(&flat_out), values(&cube_out));
    let layout = CubeMapLayout::new(face);
    let mut seam_differs = 0;
    for id in 0..layout.node_count() {
        let (f, r, c) = layout.node_cell(id);
        let (x, y) = layout.atlas_position(id);
        let flat_v = flat[y * 6 * face + x];
        let interior = r > 0 && c > 0 && r + 1 < face && c + 1 < face;
        if interior && f.is_side() {
            assert_eq!(flat_v, cube[id]);
        } else if !interior && (flat_v - cube[id]).abs() > 1e-6 {
            seam_differs += 1;
        }
    }
    assert!(seam_differs > 0);
}

#[test]
fn panorama_blur_wraps_columns() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w) = (5, 8);
    let img = random_image(&mut rng, h, w, 1);
    let input = dir.path().join("pano.pgm");
    write_image(&img, &input).unwrap();
    let model = conv_model(dir.path(), blur_kernel(), PaddingMode::Zero);
    let out = dir.path().join("pano.txt");
    assert!(selconv(&["run", "--model", s(&model), "--kind", "panorama", "--input", s(&input), "--out", s(&out)]).status.success());
    let got: Vec<f32> = fs::read_to_string(&out).unwrap().lines().map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap()).collect();
    for r in 0..h {
        for c in [0, w - 1] {
            let mut want = 0.0f32;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let rr = r as i64 + dr;
                    if (0..h as i64).contains(&rr) {
                        let cc = (c as i64 + dc).rem_euclid(w as i64) as usize;
                        want += img.data[rr as usize * w + cc] / 9.0;
                    }
                }
            }
            assert!((got[r * w + c] - want).abs() < 1e-6, "row {r} col {c}");
        }
    }
}

#[test]
fn superpixel_and_mask_runs_write_images() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = random_image(&mut rng, 20, 24, 3);
    let input = dir.path().join("in.ppm");
    write_image(&img, &input).unwrap();
    let model = conv_model(dir.path(), Kernel2D::identity(3, 3).unwrap(), PaddingMode::Replicate);

    let out = dir.path().join("sp.ppm");
    let res = selconv(&["run", "--model", s(&model), "--kind", "superpixel", "--input", s(&input), "--superpixels", "12", "--out", s(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let sp = read_image(&out).unwrap();
    // Every pixel carries its cluster's mean colour: few distinct colours.
    let mut colours: Vec<Vec<u32>> = sp.data.chunks(3).map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
    colours.sort();
    colours.dedup();
    assert!(colours.len() <= 40 && colours.len() >= 2);

    let mask = ImageBuffer::new(20, 24, 1, (0..480).map(|p| if (p / 24 + p % 24) % 5 == 0 { 0.0 } else { 1.0 }).collect()).unwrap();
    let mask_path = dir.path().join("mask.pgm");
    write_image(&mask, &mask_path).unwrap();
    let out = dir.path().join("masked.ppm");
    let res = selconv(&["run", "--model", s(&model), "--kind", "mask", "--mask", s(&mask_path), "--input", s(&input), "--out", s(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let masked = read_image(&out).unwrap();
    for p in 0..480 {
        let want: &[f32] = if mask.data[p] > 0.0 { &img.data[p * 3..p * 3 + 3] } else { &[0.0; 3] };
        assert_eq!(&masked.data[p * 3..p * 3 + 3], want);
    }
}

#[test]
fn bench_writes_csv() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bench.csv");
    assert!(selconv(&["bench", "--sizes", "4,8", "--repeats", "2", "--out", s(&out)]).status.success());
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "size,nodes,edges,nnz,graph_ms,adjacency_ms,conv_ms_mean,conv_ms_std");
    assert_eq!(lines.next().unwrap().split(',').take(3).collect::<Vec<_>>(), ["4", "16", "100"]);
    assert_eq!(lines.count(), 1);
}

#[test]
fn verify_exit_codes() {
    assert_eq!(selconv(&["verify", "--trials", "1", "--inputs", "1"]).status.code(), Some(0));
    assert_eq!(selconv(&["verify", "--trials", "1", "--inputs", "1", "--inject-fault"]).status.code(), Some(1));
}
