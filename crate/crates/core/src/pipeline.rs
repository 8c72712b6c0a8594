//! Whole networks on graphs.
//!
//! A [`Domain`] pairs a graph with the cell layout used to pool it. A
//! [`PreparedNetwork`] walks a [`Network`] over a domain once, caching the
//! graph of every resolution level, the conv gather plans and the cluster
//! maps, and can then run any number of inputs.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::builders::{self, CubeFace, Mask, SuperpixelSet, TextureGraph, UvMesh};
use crate::error::{Error, Result};
use crate::graph::{normalized_adjacency, PositionalGraph};
use crate::layers::{
    affine_norm, cluster_cells, flatten, linear, pool_features, pooled_graph, relu, transfer_conv, unpool, CellRegion, Kernel2D,
    ClusterMap, ConvPlan, PaddingKind, PoolMode, SelectionConvLayer, UnpoolMode, WeightKey,
};
use crate::model_io::{InputSpec, LayerSpec, Model, UpsampleSpec};
use crate::numerics::Tensor;

/// A graph plus the rectangular cell layout its nodes live on.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    graph: PositionalGraph,
    regions: Vec<CellRegion>,
    node_region: Vec<usize>,
    /// `(row, col)` of each node in [`Domain::image_size`], when nodes are pixels.
    pixels: Option<Vec<(usize, usize)>>,
    image_size: (usize, usize),
}

fn unit_region(rows: usize, cols: usize) -> CellRegion {
    CellRegion { origin: [-0.5, -0.5], cell: [1.0, 1.0], rows, cols }
}

impl Domain {
    pub fn new(graph: PositionalGraph, regions: Vec<CellRegion>, node_region: Vec<usize>) -> Result<Self> {
        if node_region.len() != graph.node_count() || node_region.iter().any(|&r| r >= regions.len()) {
            return Err(Error::InvalidArgument("every node needs a valid region".into()));
        }
        let image_size = (0, 0);
        Ok(Domain { graph, regions, node_region, pixels: None, image_size })
    }

    fn with_pixels(mut self, pixels: Vec<(usize, usize)>, size: (usize, usize)) -> Self {
        self.pixels = Some(pixels);
        self.image_size = size;
        self
    }

    fn raster(graph: PositionalGraph, h: usize, w: usize) -> Self {
        let n = graph.node_count();
        let pixels = (0..n).map(|i| (i / w, i % w)).collect();
        Domain { graph, regions: vec![unit_region(h, w)], node_region: vec![0; n], pixels: None, image_size: (0, 0) }
            .with_pixels(pixels, (h, w))
    }

    pub fn grid(height: usize, width: usize) -> Result<Self> {
        Ok(Domain::raster(builders::build_grid(height, width)?, height, width))
    }

    pub fn panorama(height: usize, width: usize) -> Result<Self> {
        Ok(Domain::raster(builders::build_panorama(height, width)?, height, width))
    }

    /// Cube map whose atlas is the `face x 6 face` strip; pooling stays
    /// within each face.
    pub fn cubemap(face: usize) -> Result<Self> {
        let graph = builders::build_cubemap(face)?;
        let layout = builders::CubeMapLayout::new(face);
        let regions = CubeFace::ALL
            .iter()
            .map(|f| CellRegion { origin: [(f.index() * face) as f64 - 0.5, -0.5], cell: [1.0, 1.0], rows: face, cols: face })
            .collect();
        let node_region = (0..graph.node_count()).map(|i| layout.node_cell(i).0.index()).collect();
        let pixels = (0..graph.node_count())
            .map(|i| {
                let (x, y) = layout.atlas_position(i);
                (y, x)
            })
            .collect();
        Ok(Domain { graph, regions, node_region, pixels: None, image_size: (0, 0) }.with_pixels(pixels, (face, 6 * face)))
    }

    pub fn masked(mask: &Mask) -> Result<Self> {
        let graph = builders::build_masked_graph(mask)?;
        let pixels = (0..mask.height())
            .flat_map(|r| (0..mask.width()).map(move |c| (r, c)))
            .filter(|&(r, c)| mask.get(r, c))
            .collect();
        let n = graph.node_count();
        Ok(Domain {
            graph,
            regions: vec![unit_region(mask.height(), mask.width())],
            node_region: vec![0; n],
            pixels: None,
            image_size: (0, 0),
        }
        .with_pixels(pixels, (mask.height(), mask.width())))
    }

    pub fn texture(mesh: &UvMesh, tex_size: usize) -> Result<Self> {
        let TextureGraph { graph, cells, .. } = builders::texture_graph(mesh, tex_size)?;
        let n = graph.node_count();
        Ok(Domain {
            graph,
            regions: vec![unit_region(tex_size, tex_size)],
            node_region: vec![0; n],
            pixels: None,
            image_size: (0, 0),
        }
        .with_pixels(cells, (tex_size, tex_size)))
    }

    /// Superpixel centroids; pooling cells are the mean superpixel spacing.
    pub fn superpixels(sp: &SuperpixelSet, knn: usize) -> Result<Self> {
        let graph = builders::build_superpixel_graph(sp, knn)?;
        let spacing = ((sp.height * sp.width) as f64 / sp.len() as f64).sqrt();
        let region = CellRegion {
            origin: [-0.5, -0.5],
            cell: [spacing, spacing],
            rows: (sp.height as f64 / spacing).ceil() as usize,
            cols: (sp.width as f64 / spacing).ceil() as usize,
        };
        let n = graph.node_count();
        Domain::new(graph, vec![region], vec![0; n])
    }

    /// Any graph, with unit cells over the bounding box of its positions.
    pub fn from_graph(graph: PositionalGraph) -> Result<Self> {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in graph.positions() {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let origin = [lo[0].round() - 0.5, lo[1].round() - 0.5];
        let region = CellRegion {
            origin,
            cell: [1.0, 1.0],
            rows: (hi[1] - origin[1]).floor() as usize + 1,
            cols: (hi[0] - origin[0]).floor() as usize + 1,
        };
        let n = graph.node_count();
        Domain::new(graph, vec![region], vec![0; n])
    }

    pub fn graph(&self) -> &PositionalGraph {
        &self.graph
    }

    pub fn regions(&self) -> &[CellRegion] {
        &self.regions
    }

    pub fn node_regions(&self) -> &[usize] {
        &self.node_region
    }

    pub fn pixels(&self) -> Option<&[(usize, usize)]> {
        self.pixels.as_deref()
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    /// Same neighbour pairs at new positions, with every selection
    /// recomputed from the geometry.
    pub fn with_positions(&self, positions: Vec<[f64; 2]>) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = self.graph.edges().iter().filter(|e| e.src != e.dst).map(|e| (e.src, e.dst)).collect();
        let graph = PositionalGraph::from_pairs(positions, &pairs, None)?;
        Ok(Domain { graph, ..self.clone() })
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let graph = self.graph.permute_nodes(perm)?;
        let mut node_region = vec![0; perm.len()];
        let mut pixels = self.pixels.as_ref().map(|p| vec![(0, 0); p.len()]);
        for (old, &new) in perm.iter().enumerate() {
            node_region[new] = self.node_region[old];
            if let (Some(dst), Some(src)) = (pixels.as_mut(), self.pixels.as_ref()) {
                dst[new] = src[old];
            }
        }
        Ok(Domain { graph, node_region, pixels, ..self.clone() })
    }

    /// `[nodes, channels]` features sampled from a `[C, H, W]` image at each
    /// node's pixel.
    pub fn sample_image(&self, image: &Tensor) -> Result<Tensor> {
        let pixels = self.pixels.as_ref().ok_or_else(|| Error::InvalidArgument("domain nodes are not pixels".into()))?;
        let &[c, h, w] = image.shape() else {
            return Err(Error::DimensionMismatch(format!("expected [C, H, W], got {:?}", image.shape())));
        };
        if (h, w) != self.image_size {
            return Err(Error::DimensionMismatch(format!("image {h}x{w}, domain expects {:?}", self.image_size)));
        }
        let mut out = Tensor::zeros(vec![pixels.len(), c]);
        for (i, &(r, col)) in pixels.iter().enumerate() {
            for ch in 0..c {
                out.data_mut()[i * c + ch] = image.data()[(ch * h + r) * w + col];
            }
        }
        Ok(out)
    }

    /// Writes node features back into a `[C, H, W]` image; pixels without a
    /// node are zero.
    pub fn paint_image(&self, x: &Tensor) -> Result<Tensor> {
        let pixels = self.pixels.as_ref().ok_or_else(|| Error::InvalidArgument("domain nodes are not pixels".into()))?;
        let (n, c) = x.dims2()?;
        if n != pixels.len() {
            return Err(Error::DimensionMismatch(format!("{n} rows for {} nodes", pixels.len())));
        }
        let (h, w) = self.image_size;
        let mut out = Tensor::zeros(vec![c, h, w]);
        for (i, &(r, col)) in pixels.iter().enumerate() {
            for ch in 0..c {
                out.data_mut()[(ch * h + r) * w + col] = x.data()[i * c + ch];
            }
        }
        Ok(out)
    }
}

/// Executable layer on graphs.
#[derive(Clone, Debug, PartialEq)]
pub enum NetLayer {
    Conv(SelectionConvLayer),
    Relu,
    AffineNorm { scale: Vec<f32>, shift: Vec<f32> },
    Pool { mode: PoolMode, size: usize },
    Upsample { factor: usize, mode: UnpoolMode },
    Flatten,
    Linear { weights: Tensor, bias: Option<Tensor> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub input: InputSpec,
    pub layers: Vec<NetLayer>,
}

impl Network {
    /// Transfers every conv kernel of the model onto selections.
    pub fn from_model(model: &Model) -> Result<Self> {
        model.validate()?;
        let mut layers = Vec::with_capacity(model.layers.len());
        for spec in &model.layers {
            layers.push(match spec {
                LayerSpec::Conv { weight, bias, stride, dilation, padding, .. } => {
                    let bias = bias.as_ref().map(|b| model.tensor(b).cloned()).transpose()?;
                    let kernel = Kernel2D::new(model.tensor(weight)?.clone(), bias)?;
                    NetLayer::Conv(transfer_conv(&kernel, *dilation, *stride, padding.into())?)
                }
                LayerSpec::Relu => NetLayer::Relu,
                LayerSpec::AffineNorm { scale, shift } => NetLayer::AffineNorm {
                    scale: model.tensor(scale)?.data().to_vec(),
                    shift: model.tensor(shift)?.data().to_vec(),
                },
                LayerSpec::Maxpool { size } => NetLayer::Pool { mode: PoolMode::Max, size: *size },
                LayerSpec::Avgpool { size } => NetLayer::Pool { mode: PoolMode::Mean, size: *size },
                LayerSpec::Upsample { factor, mode } => NetLayer::Upsample {
                    factor: *factor,
                    mode: match mode {
                        UpsampleSpec::Nearest => UnpoolMode::Copy,
                        UpsampleSpec::Average => UnpoolMode::Average,
                    },
                },
                LayerSpec::Flatten { .. } => NetLayer::Flatten,
                LayerSpec::Linear { weight, bias } => NetLayer::Linear {
                    weights: model.tensor(weight)?.clone(),
                    bias: bias.as_ref().map(|b| model.tensor(b).cloned()).transpose()?,
                },
            });
        }
        Ok(Network { input: model.input.clone(), layers })
    }
}

#[derive(Clone, Debug)]
enum Step {
    Conv { layer: usize, plan: usize, downsample: Option<usize> },
    Relu,
    Affine { layer: usize },
    Pool { clusters: usize, mode: PoolMode },
    Unpool { clusters: usize, mode: UnpoolMode },
    Flatten { cells: Vec<(usize, usize)>, rows: usize, cols: usize },
    Linear { layer: usize },
}

#[derive(Clone)]
struct Level {
    graph: usize,
    regions: Vec<CellRegion>,
    node_region: Vec<usize>,
}

/// Result of running a network.
#[derive(Clone, Debug, PartialEq)]
pub enum NetOutput {
    /// Features on the nodes of [`PreparedNetwork::output_graph`].
    Nodes(Tensor),
    /// Output of a flatten/linear head.
    Vector(Vec<f32>),
}

impl NetOutput {
    pub fn as_vector(&self) -> Option<&[f32]> {
        match self {
            NetOutput::Vector(v) => Some(v),
            NetOutput::Nodes(_) => None,
        }
    }

    pub fn as_nodes(&self) -> Option<&Tensor> {
        match self {
            NetOutput::Nodes(t) => Some(t),
            NetOutput::Vector(_) => None,
        }
    }
}

/// A network bound to a domain, with all graph-dependent work done.
pub struct PreparedNetwork {
    network: Network,
    graphs: Vec<PositionalGraph>,
    plans: Vec<ConvPlan>,
    clusters: Vec<ClusterMap>,
    steps: Vec<Step>,
    output_graph: Option<usize>,
    /// Cluster maps still open at the end, innermost last.
    open_clusters: Vec<usize>,
}

fn scaled(regions: &[CellRegion], factor: usize, ceil: bool) -> Vec<CellRegion> {
    let f = factor as f64;
    regions
        .iter()
        .map(|r| {
            let div = |n: usize| if ceil { n.div_ceil(factor) } else { n / factor };
            CellRegion { origin: r.origin, cell: [r.cell[0] * f, r.cell[1] * f], rows: div(r.rows), cols: div(r.cols) }
        })
        .collect()
}

impl PreparedNetwork {
    pub fn new(network: Network, domain: &Domain) -> Result<Self> {
        let mut graphs = vec![domain.graph.clone()];
        let mut adjs = vec![None];
        let mut plans = Vec::new();
        let mut plan_index: HashMap<(usize, Vec<WeightKey>, PaddingKind), usize> = HashMap::new();
        let mut clusters: Vec<ClusterMap> = Vec::new();
        let mut steps = Vec::new();
        let mut level = Level { graph: 0, regions: domain.regions.clone(), node_region: domain.node_region.clone() };
        // (cluster map, factor, level before it)
        let mut stack: Vec<(usize, usize, Level)> = Vec::new();
        let mut flat = false;

        let coarsen = |level: &Level, regions: Vec<CellRegion>, graphs: &mut Vec<PositionalGraph>, adjs: &mut Vec<_>, clusters: &mut Vec<ClusterMap>| -> Result<(usize, Level)> {
            let cm = cluster_cells(&graphs[level.graph], &regions, &level.node_region)?;
            let node_region = cm.cells().iter().map(|c| c.0).collect();
            graphs.push(pooled_graph(&cm)?);
            adjs.push(None);
            clusters.push(cm);
            Ok((clusters.len() - 1, Level { graph: graphs.len() - 1, regions, node_region }))
        };

        for (idx, layer) in network.layers.iter().enumerate() {
            let needs_nodes = !matches!(layer, NetLayer::Relu | NetLayer::AffineNorm { .. } | NetLayer::Linear { .. });
            if flat && needs_nodes {
                return Err(Error::Model(format!("layer {idx} needs node features after flatten")));
            }
            match layer {
                NetLayer::Conv(l) => {
                    let key = (level.graph, l.keys(), l.padding.kind());
                    let plan = match plan_index.get(&key) {
                        Some(&p) => p,
                        None => {
                            let adj = adjs[level.graph].get_or_insert_with(|| normalized_adjacency(&graphs[level.graph]));
                            plans.push(ConvPlan::new(adj, &key.1, key.2)?);
                            plan_index.insert(key, plans.len() - 1);
                            plans.len() - 1
                        }
                    };
                    let downsample = if l.stride > 1 {
                        let regions = scaled(&level.regions, l.stride, true);
                        let (cm, next) = coarsen(&level, regions, &mut graphs, &mut adjs, &mut clusters)?;
                        stack.push((cm, l.stride, std::mem::replace(&mut level, next)));
                        Some(cm)
                    } else {
                        None
                    };
                    steps.push(Step::Conv { layer: idx, plan, downsample });
                }
                NetLayer::Relu => steps.push(Step::Relu),
                NetLayer::AffineNorm { .. } => steps.push(Step::Affine { layer: idx }),
                NetLayer::Pool { mode, size } => {
                    let regions = scaled(&level.regions, *size, false);
                    let (cm, next) = coarsen(&level, regions, &mut graphs, &mut adjs, &mut clusters)?;
                    stack.push((cm, *size, std::mem::replace(&mut level, next)));
                    steps.push(Step::Pool { clusters: cm, mode: *mode });
                }
                NetLayer::Upsample { factor, mode } => {
                    let mut remaining = *factor;
                    while remaining > 1 {
                        let (cm, f, prev) = stack
                            .pop()
                            .ok_or_else(|| Error::Model(format!("layer {idx}: upsampling past the input resolution")))?;
                        if remaining % f != 0 {
                            return Err(Error::Model(format!("layer {idx}: factor {factor} does not undo earlier pooling")));
                        }
                        remaining /= f;
                        level = prev;
                        steps.push(Step::Unpool { clusters: cm, mode: *mode });
                    }
                }
                NetLayer::Flatten => {
                    if level.regions.len() != 1 {
                        return Err(Error::Model("flatten needs a single-region domain".into()));
                    }
                    let r = level.regions[0];
                    let cm = cluster_cells(&graphs[level.graph], &level.regions, &level.node_region)?;
                    let n = graphs[level.graph].node_count();
                    if cm.cluster_count() != n || cm.assignment().iter().any(Option::is_none) || n != r.rows * r.cols {
                        return Err(Error::Model(format!(
                            "flatten needs exactly one node per cell of the {}x{} grid",
                            r.rows, r.cols
                        )));
                    }
                    let cells =
                        cm.assignment().iter().map(|a| cm.cells()[a.expect("checked above")]).map(|c| (c.1, c.2)).collect();
                    steps.push(Step::Flatten { cells, rows: r.rows, cols: r.cols });
                    flat = true;
                }
                NetLayer::Linear { .. } => {
                    if !flat {
                        return Err(Error::Model(format!("layer {idx}: linear layer before flatten")));
                    }
                    steps.push(Step::Linear { layer: idx });
                }
            }
        }
        let output_graph = (!flat).then_some(level.graph);
        let open_clusters = stack.iter().map(|s| s.0).collect();
        Ok(PreparedNetwork { network, graphs, plans, clusters, steps, output_graph, open_clusters })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn input_graph(&self) -> &PositionalGraph {
        &self.graphs[0]
    }

    /// Graph the output features live on; `None` for vector outputs.
    pub fn output_graph(&self) -> Option<&PositionalGraph> {
        self.output_graph.map(|g| &self.graphs[g])
    }

    /// Every graph the network passes through, input first.
    pub fn level_graphs(&self) -> &[PositionalGraph] {
        &self.graphs
    }

    /// Runs one input given as raw `[nodes, channels]` features; the input
    /// normalization is applied first.
    pub fn run(&self, x: &Tensor) -> Result<NetOutput> {
        if x.rows() != self.graphs[0].node_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} input rows for {} nodes",
                x.rows(),
                self.graphs[0].node_count()
            )));
        }
        let mut nodes = self.network.input.apply(x)?;
        let mut vector: Option<Vec<f32>> = None;
        for step in &self.steps {
            match step {
                Step::Conv { layer, plan, downsample } => {
                    let NetLayer::Conv(l) = &self.network.layers[*layer] else { unreachable!("conv step") };
                    nodes = self.plans[*plan].apply(l, &nodes)?;
                    if let Some(cm) = downsample {
                        nodes = pool_features(&nodes, &self.clusters[*cm], PoolMode::Central)?;
                    }
                }
                Step::Relu => match vector.as_mut() {
                    Some(v) => v.iter_mut().for_each(|a| *a = a.max(0.0)),
                    None => nodes = relu(&nodes),
                },
                Step::Affine { layer } => {
                    let NetLayer::AffineNorm { scale, shift } = &self.network.layers[*layer] else { unreachable!("affine step") };
                    match vector.as_mut() {
                        Some(v) => v.iter_mut().enumerate().for_each(|(k, a)| *a = *a * scale[k] + shift[k]),
                        None => nodes = affine_norm(&nodes, scale, shift)?,
                    }
                }
                Step::Pool { clusters, mode } => nodes = pool_features(&nodes, &self.clusters[*clusters], *mode)?,
                Step::Unpool { clusters, mode } => nodes = unpool(&self.clusters[*clusters], &nodes, *mode)?,
                Step::Flatten { cells, rows, cols } => vector = Some(flatten(&nodes, cells, *rows, *cols)?),
                Step::Linear { layer } => {
                    let NetLayer::Linear { weights, bias } = &self.network.layers[*layer] else { unreachable!("linear step") };
                    let v = vector.as_ref().expect("linear follows flatten");
                    vector = Some(linear(weights, bias.as_ref(), v)?);
                }
            }
        }
        Ok(match vector {
            Some(v) => NetOutput::Vector(v),
            None => NetOutput::Nodes(nodes),
        })
    }

    /// Runs many inputs in parallel.
    pub fn run_batch(&self, inputs: &[Tensor]) -> Result<Vec<NetOutput>> {
        inputs.par_iter().map(|x| self.run(x)).collect()
    }

    /// Copies node outputs back down to the input graph through every pooling
    /// still open at the end of the network.
    pub fn to_input_nodes(&self, out: &Tensor) -> Result<Tensor> {
        let mut x = out.clone();
        for &cm in self.open_clusters.iter().rev() {
            x = unpool(&self.clusters[cm], &x, UnpoolMode::Copy)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::PaddingMode;
    use crate::oracle::{run_ref, RefLayer, RefNet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
    }

    fn conv(rng: &mut ChaCha8Rng, o: usize, i: usize, k: usize, stride: usize, padding: PaddingMode) -> RefLayer {
        let kernel = Kernel2D::new(random_tensor(rng, vec![o, i, k, k]), Some(random_tensor(rng, vec![o]))).unwrap();
        RefLayer::Conv { kernel, stride, dilation: 1, padding }
    }

    #[test]
    fn small_cnn_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = RefNet {
            layers: vec![
                conv(&mut rng, 4, 3, 3, 1, PaddingMode::Reflect),
                RefLayer::AffineNorm { scale: vec![0.5, 1.5, 1.0, 2.0], shift: vec![0.1, 0.0, -0.2, 0.3] },
                RefLayer::Relu,
                RefLayer::MaxPool(2),
                conv(&mut rng, 5, 4, 5, 2, PaddingMode::Replicate),
                RefLayer::Relu,
                RefLayer::AvgPool(2),
                RefLayer::Flatten,
                RefLayer::Linear { weights: random_tensor(&mut rng, vec![6, 5 * 2 * 2]), bias: Some(random_tensor(&mut rng, vec![6])) },
                RefLayer::Relu,
                RefLayer::Linear { weights: random_tensor(&mut rng, vec![3, 6]), bias: None },
            ],
        };
        let model = Model::from_ref_net(&net, InputSpec::plain(3)).unwrap();
        let domain = Domain::grid(16, 16).unwrap();
        let prepared = PreparedNetwork::new(Network::from_model(&model).unwrap(), &domain).unwrap();
        for _ in 0..8 {
            let img = random_tensor(&mut rng, vec![3, 16, 16]);
            let want = run_ref(&net, &img).unwrap();
            let got = prepared.run(&domain.sample_image(&img).unwrap()).unwrap();
            let got = Tensor::new(vec![3], got.as_vector().unwrap().to_vec()).unwrap();
            let scale = want.data().iter().fold(1f32, |m, v| m.max(v.abs()));
            assert!(got.max_abs_diff(&want) <= 1e-6 * scale, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn encoder_decoder_round_trips_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = RefNet {
            layers: vec![
                conv(&mut rng, 3, 2, 3, 1, PaddingMode::Zero),
                RefLayer::MaxPool(2),
                conv(&mut rng, 3, 3, 3, 2, PaddingMode::Zero),
                RefLayer::Upsample(4),
                conv(&mut rng, 2, 3, 3, 1, PaddingMode::Zero),
            ],
        };
        let model = Model::from_ref_net(&net, InputSpec::plain(2)).unwrap();
        let domain = Domain::grid(8, 8).unwrap();
        let prepared = PreparedNetwork::new(Network::from_model(&model).unwrap(), &domain).unwrap();
        let img = random_tensor(&mut rng, vec![2, 8, 8]);
        let got = prepared.run(&domain.sample_image(&img).unwrap()).unwrap();
        let got = domain.paint_image(got.as_nodes().unwrap()).unwrap();
        assert!(got.max_abs_diff(&run_ref(&net, &img).unwrap()) <= 1e-5);
        assert_eq!(prepared.output_graph().unwrap(), domain.graph());
    }

    #[test]
    fn rejects_unbalanced_upsampling() {
        let model = Model::from_ref_net(&RefNet { layers: vec![RefLayer::Upsample(2)] }, InputSpec::plain(1)).unwrap();
        let err = PreparedNetwork::new(Network::from_model(&model).unwrap(), &Domain::grid(4, 4).unwrap());
        assert!(err.is_err());
    }

    #[test]
    fn cubemap_pooling_stays_on_faces() {
        let domain = Domain::cubemap(4).unwrap();
        let model = Model::from_ref_net(&RefNet { layers: vec![RefLayer::MaxPool(2)] }, InputSpec::plain(1)).unwrap();
        let prepared = PreparedNetwork::new(Network::from_model(&model).unwrap(), &domain).unwrap();
        let out = prepared.output_graph().unwrap();
        assert_eq!(out.node_count(), 6 * 4);
        // The pooled cube map is the 2-pixel cube map up to relabeling of edges' selections on side faces.
        let small = builders::build_cubemap(2).unwrap();
        assert_eq!(out.edge_count(), small.edge_count());
    }
}
