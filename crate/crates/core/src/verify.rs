//! Self-checks comparing graph convolution against the image-space oracle.
//!
//! Shared by `selconv verify` and the acceptance tests. Everything is
//! deterministic in the seed.

use std::fmt;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{normalized_adjacency, Selection};
use crate::layers::{
    pool_features, stride_clusters, transfer_conv, ConvPlan, Kernel2D, PaddingMode, PoolMode, SelectionConvLayer, WeightKey,
};
use crate::model_io::{InputSpec, Model};
use crate::numerics::Tensor;
use crate::oracle::{conv2d_ref, run_ref, RefLayer, RefNet};
use crate::pipeline::{Domain, Network, NetLayer, PreparedNetwork};

/// Deliberate bugs for negative controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Swaps the weights read through selections 1 (right) and 5 (left).
    MirroredWeights,
}

impl Fault {
    fn apply(self, layer: &mut SelectionConvLayer) {
        match self {
            Fault::MirroredWeights => {
                let find = |l: &SelectionConvLayer, s: u8| {
                    l.entries.iter().position(|(k, _)| *k == WeightKey::Selection(Selection::new(s).expect("valid")))
                };
                if let (Some(a), Some(b)) = (find(layer, 1), find(layer, 5)) {
                    let wa = layer.entries[a].1.clone();
                    layer.entries[a].1 = std::mem::replace(&mut layer.entries[b].1, wa);
                }
            }
        }
    }
}

/// Kernel transfer with an optional fault applied afterwards.
pub fn transfer_with_fault(
    k: &Kernel2D,
    dilation: usize,
    stride: usize,
    padding: PaddingMode,
    fault: Option<Fault>,
) -> Result<SelectionConvLayer> {
    let mut layer = transfer_conv(k, dilation, stride, padding)?;
    if let Some(f) = fault {
        f.apply(&mut layer);
    }
    Ok(layer)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Largest deviation seen, when the check is numeric.
    pub max_deviation: Option<f32>,
    pub tolerance: Option<f32>,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", if self.passed { "PASS" } else { "FAIL" }, self.name)?;
        if let (Some(d), Some(t)) = (self.max_deviation, self.tolerance) {
            write!(f, " max_dev={d:.3e} tol={t:.0e}")?;
        }
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        write!(f, " ({:.2}s)", self.elapsed.as_secs_f64())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>, range: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-range..range)).collect()).expect("shape matches data")
}

/// Uniform weights with variance `2 / fan_in`, so activations keep their
/// scale through ReLU layers.
pub fn random_kernel(rng: &mut impl Rng, out: usize, input: usize, size: usize) -> Kernel2D {
    let bound = (6.0 / (input * size * size) as f32).sqrt();
    let w = random_tensor(rng, vec![out, input, size, size], bound);
    let b = random_tensor(rng, vec![out], 0.1);
    Kernel2D::new(w, Some(b)).expect("consistent kernel")
}

/// Every padding mode; constant values are drawn per call.
pub fn padding_modes(rng: &mut impl Rng, channels: usize) -> Vec<PaddingMode> {
    vec![
        PaddingMode::Zero,
        PaddingMode::Constant((0..channels).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        PaddingMode::Replicate,
        PaddingMode::Reflect,
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub kernel: usize,
    pub padding: PaddingMode,
    pub dilation: usize,
    pub stride: usize,
}

impl fmt::Display for GridConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{} {} d{} s{}", self.kernel, self.padding.name(), self.dilation, self.stride)
    }
}

/// All kernel size, padding, dilation and stride combinations of the suite.
pub fn grid_configs(rng: &mut impl Rng, channels: usize) -> Vec<GridConfig> {
    let mut out = Vec::new();
    for kernel in [3, 5, 7] {
        for padding in padding_modes(rng, channels) {
            for dilation in [1, 2] {
                for stride in [1, 2] {
                    out.push(GridConfig { kernel, padding: padding.clone(), dilation, stride });
                }
            }
        }
    }
    out
}

/// Largest deviation between graph and oracle convolution over `trials`
/// random kernel/input pairs on an `h x w x channels` grid.
pub fn grid_config_deviation(
    cfg: &GridConfig,
    h: usize,
    w: usize,
    channels: usize,
    trials: usize,
    rng: &mut impl Rng,
    fault: Option<Fault>,
) -> Result<f32> {
    let domain = Domain::grid(h, w)?;
    let adj = normalized_adjacency(domain.graph());
    let probe = transfer_conv(&Kernel2D::identity(channels, cfg.kernel)?, cfg.dilation, 1, cfg.padding.clone())?;
    let plan = ConvPlan::new(&adj, &probe.keys(), cfg.padding.kind())?;
    let clusters = if cfg.stride > 1 { Some(stride_clusters(domain.graph(), cfg.stride)?) } else { None };
    let out_channels = 4;
    let mut worst = 0f32;
    for _ in 0..trials {
        let kernel = random_kernel(rng, out_channels, channels, cfg.kernel);
        let image = random_tensor(rng, vec![channels, h, w], 1.0);
        let want = conv2d_ref(&image, &kernel, cfg.stride, cfg.dilation, &cfg.padding)?;
        let layer = transfer_with_fault(&kernel, cfg.dilation, 1, cfg.padding.clone(), fault)?;
        let mut got = plan.apply(&layer, &domain.sample_image(&image)?)?;
        if let Some(cm) = &clusters {
            got = pool_features(&got, cm, PoolMode::Central)?;
        }
        // Node order is raster order at both resolutions.
        let (n, o) = got.dims2()?;
        let mut chw = Tensor::zeros(want.shape().to_vec());
        for i in 0..n {
            for c in 0..o {
                chw.data_mut()[c * n + i] = got.data()[i * o + c];
            }
        }
        worst = worst.max(chw.max_abs_diff(&want));
    }
    Ok(worst)
}

/// VGG-11 layer structure (8 convs, 5 max pools, 3 linear layers) with
/// configurable widths, for 32x32 inputs.
pub fn vgg11_like(rng: &mut impl Rng, in_channels: usize, widths: [usize; 8], hidden: usize, classes: usize) -> RefNet {
    let pool_after = [true, true, false, true, false, true, false, true];
    let mut layers = Vec::new();
    let mut c = in_channels;
    for (w, pool) in widths.into_iter().zip(pool_after) {
        layers.push(RefLayer::Conv { kernel: random_kernel(rng, w, c, 3), stride: 1, dilation: 1, padding: PaddingMode::Zero });
        layers.push(RefLayer::Relu);
        if pool {
            layers.push(RefLayer::MaxPool(2));
        }
        c = w;
    }
    layers.push(RefLayer::Flatten);
    let mut fan_in = c;
    for (k, out) in [hidden, hidden, classes].into_iter().enumerate() {
        let bound = (6.0 / fan_in as f32).sqrt();
        layers.push(RefLayer::Linear {
            weights: random_tensor(rng, vec![out, fan_in], bound),
            bias: Some(random_tensor(rng, vec![out], 0.1)),
        });
        if k < 2 {
            layers.push(RefLayer::Relu);
        }
        fan_in = out;
    }
    RefNet { layers }
}

/// Default reduced widths for [`vgg11_like`].
pub const VGG_WIDTHS: [usize; 8] = [16, 32, 64, 64, 128, 128, 128, 128];

/// Moves every position by a uniform random point of the disk of radius
/// `radius`.
pub fn jitter_positions(positions: &[[f64; 2]], radius: f64, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    positions
        .iter()
        .map(|p| loop {
            let d = [rng.gen_range(-radius..radius), rng.gen_range(-radius..radius)];
            if d[0] * d[0] + d[1] * d[1] <= radius * radius {
                break [p[0] + d[0], p[1] + d[1]];
            }
        })
        .collect()
}

fn argmax(v: &[f32]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

/// Outcome of running a network on a domain against the oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkComparison {
    pub inputs: usize,
    pub argmax_mismatches: usize,
    pub max_deviation: f32,
}

/// Runs `net` on the graph pipeline over `domain` (a 32x32-style grid,
/// possibly jittered) and through the oracle for each input image.
pub fn compare_network(net: &RefNet, domain: &Domain, images: &[Tensor], fault: Option<Fault>) -> Result<NetworkComparison> {
    let channels = images.first().map_or(1, |t| t.shape()[0]);
    let model = Model::from_ref_net(net, InputSpec::plain(channels))?;
    let mut network = Network::from_model(&model)?;
    if let Some(f) = fault {
        for l in &mut network.layers {
            if let NetLayer::Conv(c) = l {
                f.apply(c);
            }
        }
    }
    let prepared = PreparedNetwork::new(network, domain)?;
    let mut cmp = NetworkComparison { inputs: images.len(), argmax_mismatches: 0, max_deviation: 0.0 };
    for image in images {
        let want = run_ref(net, image)?;
        let got = prepared.run(&domain.sample_image(image)?)?;
        let got = match got.as_vector() {
            Some(v) => Tensor::new(vec![v.len()], v.to_vec())?,
            None => domain.paint_image(got.as_nodes().expect("node output"))?,
        };
        if got.shape().len() == 1 && argmax(got.data()) != argmax(want.data()) {
            cmp.argmax_mismatches += 1;
        }
        cmp.max_deviation = cmp.max_deviation.max(got.max_abs_diff(&want));
    }
    Ok(cmp)
}

/// Number of edges whose selection differs between two graphs on the same
/// neighbour pairs.
pub fn selection_changes(a: &Domain, b: &Domain) -> usize {
    a.graph()
        .edges()
        .iter()
        .filter(|e| b.graph().find_edge(e.src, e.dst).is_none_or(|f| f.selection != e.selection))
        .count()
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random kernel/input pairs per grid configuration.
    pub trials: usize,
    /// Inputs for the end-to-end network checks.
    pub network_inputs: usize,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 0, trials: 20, network_inputs: 8, fault: None }
    }
}

pub const CONV_TOLERANCE: f32 = 1e-5;
pub const NETWORK_TOLERANCE: f32 = 1e-4;
pub const JITTER_RADIUS: f64 = 0.2;

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, Duration)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed()))
}

/// Runs the grid suite, the weight round trip, permutation equivariance and
/// the end-to-end network on exact and jittered grids.
pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let channels = 3;

    for (idx, cfg) in grid_configs(&mut rng, channels).into_iter().enumerate() {
        let mut cfg_rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1 + idx as u64));
        let (dev, elapsed) = timed(|| grid_config_deviation(&cfg, 16, 16, channels, opts.trials, &mut cfg_rng, opts.fault))?;
        report.checks.push(CheckResult {
            name: format!("grid conv {cfg}"),
            passed: dev <= CONV_TOLERANCE,
            max_deviation: Some(dev),
            tolerance: Some(CONV_TOLERANCE),
            detail: String::new(),
            elapsed,
        });
    }

    let ((exact, mismatched), elapsed) = timed(|| {
        let mut exact = 0;
        let mut mismatched = 0;
        for _ in 0..opts.trials.max(1) {
            let size = [3, 5, 7][rng.gen_range(0..3)];
            let (o, i) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let k = random_kernel(&mut rng, o, i, size);
            let back = transfer_with_fault(&k, 1, 1, PaddingMode::Zero, opts.fault)?.to_kernel()?;
            let same = back.weights.data().iter().zip(k.weights.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            if same {
                exact += 1;
            } else {
                mismatched += 1;
            }
        }
        Ok((exact, mismatched))
    })?;
    report.checks.push(CheckResult {
        name: "weight transfer round trip".into(),
        passed: mismatched == 0,
        max_deviation: None,
        tolerance: None,
        detail: format!("{exact} bit-exact, {mismatched} differ"),
        elapsed,
    });

    let (dev, elapsed) = timed(|| permutation_deviation(&mut rng, opts.trials.max(1), opts.fault))?;
    report.checks.push(CheckResult {
        name: "permutation equivariance".into(),
        passed: dev <= CONV_TOLERANCE,
        max_deviation: Some(dev),
        tolerance: Some(CONV_TOLERANCE),
        detail: String::new(),
        elapsed,
    });

    let net = vgg11_like(&mut rng, channels, VGG_WIDTHS, 64, 10);
    let images: Vec<Tensor> = (0..opts.network_inputs).map(|_| random_tensor(&mut rng, vec![channels, 32, 32], 1.0)).collect();
    let grid = Domain::grid(32, 32)?;
    let jittered = grid.with_positions(jitter_positions(grid.graph().positions(), JITTER_RADIUS, &mut rng))?;
    for (name, domain) in [("end-to-end network", &grid), ("end-to-end network, jittered positions", &jittered)] {
        let (cmp, elapsed) = timed(|| compare_network(&net, domain, &images, opts.fault))?;
        let changed = selection_changes(&grid, domain);
        report.checks.push(CheckResult {
            name: name.into(),
            passed: cmp.argmax_mismatches == 0 && cmp.max_deviation <= NETWORK_TOLERANCE,
            max_deviation: Some(cmp.max_deviation),
            tolerance: Some(NETWORK_TOLERANCE),
            detail: format!("{} inputs, {} argmax mismatches, {changed} selections changed", cmp.inputs, cmp.argmax_mismatches),
            elapsed,
        });
    }
    Ok(report)
}

/// Largest deviation between `conv(permuted graph, permuted x)` and the
/// permuted output of `conv(graph, x)`, over random grids and kernels.
pub fn permutation_deviation(rng: &mut impl Rng, trials: usize, fault: Option<Fault>) -> Result<f32> {
    let mut worst = 0f32;
    for _ in 0..trials {
        let (h, w) = (rng.gen_range(3..12), rng.gen_range(3..12));
        let domain = Domain::grid(h, w)?;
        let mut perm: Vec<usize> = (0..h * w).collect();
        perm.shuffle(rng);
        let permuted = domain.permuted(&perm)?;
        let c = rng.gen_range(1..4);
        let padding = padding_modes(rng, c).swap_remove(rng.gen_range(0..4));
        let layer = transfer_with_fault(&random_kernel(rng, 3, c, 3), 1, 1, padding, fault)?;
        let x = random_tensor(rng, vec![h * w, c], 1.0);
        let run = |d: &Domain, x: &Tensor| ConvPlan::for_layer(&normalized_adjacency(d.graph()), &layer)?.apply(&layer, x);
        let base = run(&domain, &x)?;
        let mut px = Tensor::zeros(x.shape().to_vec());
        for (old, &new) in perm.iter().enumerate() {
            px.row_mut(new).copy_from_slice(x.row(old));
        }
        let got = run(&permuted, &px)?;
        for (old, &new) in perm.iter().enumerate() {
            for (a, b) in got.row(new).iter().zip(base.row(old)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_verify_passes() {
        let report = run_verify(&VerifyOptions { seed: 3, trials: 2, network_inputs: 2, fault: None }).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn mirrored_weights_are_caught() {
        let report =
            run_verify(&VerifyOptions { seed: 3, trials: 2, network_inputs: 2, fault: Some(Fault::MirroredWeights) }).unwrap();
        assert!(!report.passed());
        assert!(report.checks.iter().filter(|c| c.name.starts_with("grid conv") && c.name.contains(" d1 ")).all(|c| !c.passed));
    }

    #[test]
    fn jitter_stays_in_disk() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = vec![[3.0, 4.0]; 500];
        for q in jitter_positions(&p, 0.2, &mut rng) {
            assert!(((q[0] - 3.0).powi(2) + (q[1] - 4.0).powi(2)).sqrt() <= 0.2);
        }
    }
}
