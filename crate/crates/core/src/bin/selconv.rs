use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use selconv::builders::{self, Mask, SuperpixelSet, UvMesh, DEFAULT_COMPACTNESS, DEFAULT_KNN};
use selconv::graph::normalized_adjacency;
use selconv::layers::{ConvPlan, PaddingMode};
use selconv::model_io::{load_model, read_image, write_image, ImageBuffer};
use selconv::numerics::Tensor;
use selconv::pipeline::{Domain, NetOutput, Network, PreparedNetwork};
use selconv::verify::{random_kernel, random_tensor, run_verify, Fault, VerifyOptions};
use selconv::{Error, Result};

#[derive(Parser)]
#[command(name = "selconv", version, about = "Selection-based convolution on graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare graph convolution against the image-space reference.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random kernel/input pairs per grid configuration.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Inputs for the end-to-end network checks.
        #[arg(long, default_value_t = 8)]
        inputs: usize,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Build a graph and write its text dump.
    Graph {
        #[command(flatten)]
        domain: DomainArgs,
        /// Image for superpixel graphs.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a saved model on an image, mask or texture domain.
    Run {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        domain: DomainArgs,
        #[arg(long)]
        input: PathBuf,
        /// `.pgm`/`.ppm` writes an image; anything else writes one text row per node or the output vector.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time graph building, adjacency building and convolution on square grids.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    Grid,
    Panorama,
    Cubemap,
    Mask,
    Texture,
    Superpixel,
}

#[derive(clap::Args)]
struct DomainArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    w: Option<usize>,
    /// Cube face size in pixels.
    #[arg(long)]
    face: Option<usize>,
    /// Mask image; non-zero pixels are nodes.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    obj: Option<PathBuf>,
    /// Texture side length in pixels.
    #[arg(long)]
    tex: Option<usize>,
    #[arg(long)]
    superpixels: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_COMPACTNESS)]
    compactness: f64,
    #[arg(long, default_value_t = DEFAULT_KNN)]
    knn: usize,
}

enum CliError {
    Usage(String),
    Failed(Error),
    Verification,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => CliError::Usage(m),
            e => CliError::Failed(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn required<T: Copy>(v: Option<T>, flag: &str, kind: Kind) -> CliResult<T> {
    v.ok_or_else(|| CliError::Usage(format!("--{flag} is required for --kind {kind:?}").to_lowercase()))
}

fn required_path<'a>(v: &'a Option<PathBuf>, flag: &str, kind: Kind) -> CliResult<&'a Path> {
    v.as_deref().ok_or_else(|| CliError::Usage(format!("--{flag} is required for --kind {kind:?}").to_lowercase()))
}

fn read_mask(path: &Path) -> Result<Mask> {
    let img = read_image(path)?;
    let bits = img.data.chunks(img.channels).map(|px| px.iter().any(|&v| v > 0.0)).collect();
    Mask::new(img.height, img.width, bits)
}

/// The domain plus how node values map back to pixels.
struct Built {
    domain: Domain,
    superpixels: Option<SuperpixelSet>,
}

/// `image` is `[H, W, C]`; required only for superpixel domains.
fn build_domain(args: &DomainArgs, image: Option<&Tensor>) -> CliResult<Built> {
    let kind = args.kind;
    let domain = match kind {
        Kind::Grid | Kind::Panorama => {
            let (h, w) = match (args.h, args.w, image) {
                (Some(h), Some(w), _) => (h, w),
                (_, _, Some(img)) => (img.shape()[0], img.shape()[1]),
                _ => (required(args.h, "h", kind)?, required(args.w, "w", kind)?),
            };
            if kind == Kind::Grid {
                Domain::grid(h, w)?
            } else {
                Domain::panorama(h, w)?
            }
        }
        Kind::Cubemap => {
            let face = match (args.face, image) {
                (Some(f), _) => f,
                (None, Some(img)) => img.shape()[0],
                _ => required(args.face, "face", kind)?,
            };
            Domain::cubemap(face)?
        }
        Kind::Mask => Domain::masked(&read_mask(required_path(&args.mask, "mask", kind)?)?)?,
        Kind::Texture => {
            let mesh = UvMesh::from_obj_file(required_path(&args.obj, "obj", kind)?)?;
            let tex = match (args.tex, image) {
                (Some(t), _) => t,
                (None, Some(img)) => img.shape()[0],
                _ => required(args.tex, "tex", kind)?,
            };
            Domain::texture(&mesh, tex)?
        }
        Kind::Superpixel => {
            let image = image.ok_or_else(|| CliError::Usage("superpixel graphs need an image".into()))?;
            let k = required(args.superpixels, "superpixels", kind)?;
            let sp = builders::slic(image, k, args.compactness)?;
            let domain = Domain::superpixels(&sp, args.knn)?;
            return Ok(Built { domain, superpixels: Some(sp) });
        }
    };
    Ok(Built { domain, superpixels: None })
}

fn hwc(img: &ImageBuffer) -> Tensor {
    Tensor::new(vec![img.height, img.width, img.channels], img.data.clone()).expect("consistent size")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn is_image_path(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm"))
}

fn cmd_verify(seed: u64, trials: usize, inputs: usize, inject_fault: bool) -> CliResult<()> {
    let fault = inject_fault.then_some(Fault::MirroredWeights);
    let report = run_verify(&VerifyOptions { seed, trials, network_inputs: inputs, fault })?;
    for check in &report.checks {
        println!("{check}");
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", report.checks.len());
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Verification)
    }
}

fn cmd_graph(args: &DomainArgs, image: Option<&Path>, out: &Path) -> CliResult<()> {
    let image = image.map(read_image).transpose()?.map(|i| hwc(&i));
    let built = build_domain(args, image.as_ref())?;
    let g = built.domain.graph();
    write_text(out, &g.to_dump())?;
    println!("{} nodes, {} edges", g.node_count(), g.edge_count());
    Ok(())
}

fn cmd_run(model: &Path, args: &DomainArgs, input: &Path, out: &Path) -> CliResult<()> {
    let model = load_model(model)?;
    let img = read_image(input)?;
    if img.channels != model.input.channels {
        return Err(Error::DimensionMismatch(format!(
            "model takes {} channels, image has {}",
            model.input.channels, img.channels
        ))
        .into());
    }
    let image = hwc(&img);
    let built = build_domain(args, Some(&image))?;
    let domain = &built.domain;
    let features = match &built.superpixels {
        Some(sp) => Tensor::from_rows(&sp.mean_features)?,
        None => domain.sample_image(&img.to_chw())?,
    };
    let prepared = PreparedNetwork::new(Network::from_model(&model)?, domain)?;
    let nodes = match prepared.run(&features)? {
        NetOutput::Vector(v) => {
            let text = v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join("\n");
            write_text(out, &(text + "\n"))?;
            println!("wrote {} outputs", v.len());
            return Ok(());
        }
        NetOutput::Nodes(t) => prepared.to_input_nodes(&t)?,
    };
    if is_image_path(out) {
        let buf = match &built.superpixels {
            Some(sp) => {
                let painted = sp.paint(&nodes)?;
                let &[h, w, c] = painted.shape() else { unreachable!("paint returns HxWxC") };
                ImageBuffer::new(h, w, c, painted.into_data())?
            }
            None => ImageBuffer::from_chw(&domain.paint_image(&nodes)?)?,
        };
        write_image(&buf, out)?;
        println!("wrote {}x{}x{} image", buf.height, buf.width, buf.channels);
    } else {
        let mut text = String::new();
        for i in 0..nodes.rows() {
            let row: Vec<String> = nodes.row(i).iter().map(|x| format!("{x}")).collect();
            let _ = writeln!(text, "{i} {}", row.join(" "));
        }
        write_text(out, &text)?;
        println!("wrote {} node rows", nodes.rows());
    }
    Ok(())
}

fn cmd_bench(sizes: &[usize], repeats: usize, seed: u64, out: &Path) -> CliResult<()> {
    if sizes.is_empty() || sizes.contains(&0) || repeats == 0 {
        return Err(CliError::Usage("sizes and repeats must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = 16;
    let mut csv = String::from("size,nodes,edges,nnz,graph_ms,adjacency_ms,conv_ms_mean,conv_ms_std\n");
    for &n in sizes {
        let t = Instant::now();
        let domain = Domain::grid(n, n)?;
        let graph_ms = t.elapsed().as_secs_f64() * 1e3;
        let t = Instant::now();
        let adj = normalized_adjacency(domain.graph());
        let adjacency_ms = t.elapsed().as_secs_f64() * 1e3;
        let layer = selconv::layers::transfer_conv(&random_kernel(&mut rng, channels, channels, 3), 1, 1, PaddingMode::Zero)?;
        let plan = ConvPlan::for_layer(&adj, &layer)?;
        let x = random_tensor(&mut rng, vec![n * n, channels], 1.0);
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t = Instant::now();
            plan.apply(&layer, &x)?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let mean = times.iter().sum::<f64>() / repeats as f64;
        let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / repeats as f64).sqrt();
        let nnz = (0..plan.keys().len()).map(|k| plan.gather(k).nnz()).sum::<usize>();
        let _ = writeln!(
            csv,
            "{n},{},{},{nnz},{graph_ms:.3},{adjacency_ms:.3},{mean:.3},{std:.3}",
            domain.graph().node_count(),
            domain.graph().edge_count()
        );
    }
    write_text(out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn configure_threads() {
    if let Some(n) = std::env::var("SELCONV_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let result = match &cli.command {
        Command::Verify { seed, trials, inputs, inject_fault } => cmd_verify(*seed, *trials, *inputs, *inject_fault),
        Command::Graph { domain, image, out } => cmd_graph(domain, image.as_deref(), out),
        Command::Run { model, domain, input, out } => cmd_run(model, domain, input, out),
        Command::Bench { sizes, repeats, seed, out } => cmd_bench(sizes, *repeats, *seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Verification) => ExitCode::from(1),
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
