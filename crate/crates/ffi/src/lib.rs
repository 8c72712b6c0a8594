//! C interface to `selconv`.
//!
//! Objects are opaque handles created by `selconv_*_new`/`_load` functions
//! and released with the matching `_free`. Every fallible call returns a
//! [`SelconvStatus`]; on failure [`selconv_last_error`] describes what went
//! wrong on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use selconv::builders::{self, Mask, UvMesh};
use selconv::model_io::{load_model, Model};
use selconv::numerics::Tensor;
use selconv::pipeline::{Domain, NetOutput, Network, PreparedNetwork};
use selconv::verify::{run_verify, VerifyOptions};
use selconv::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelconvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    InvalidGraph = 4,
    NonFinite = 5,
    Mesh = 6,
    Model = 7,
    Parse = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

impl From<&Error> for SelconvStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DimensionMismatch(_) => SelconvStatus::DimensionMismatch,
            Error::InvalidArgument(_) => SelconvStatus::InvalidArgument,
            Error::InvalidGraph(_) => SelconvStatus::InvalidGraph,
            Error::NonFinite(_) => SelconvStatus::NonFinite,
            Error::Mesh(_) => SelconvStatus::Mesh,
            Error::Model(_) => SelconvStatus::Model,
            Error::Parse { .. } => SelconvStatus::Parse,
            Error::Io { .. } => SelconvStatus::Io,
        }
    }
}

/// A graph together with its pooling layout.
pub struct SelconvDomain(Domain);

/// A loaded model.
pub struct SelconvModel(Model);

/// A model bound to a domain, ready to run.
pub struct SelconvNetwork(PreparedNetwork);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

/// Runs `f`, recording errors and panics.
fn guard(f: impl FnOnce() -> Result<(), SelconvStatus>) -> SelconvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SelconvStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            SelconvStatus::Panic
        }
    }
}

fn fail(e: Error) -> SelconvStatus {
    set_error(e.to_string());
    SelconvStatus::from(&e)
}

fn null(what: &str) -> SelconvStatus {
    set_error(format!("{what} is null"));
    SelconvStatus::NullPointer
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, SelconvStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, SelconvStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        SelconvStatus::InvalidArgument
    })?;
    Ok(PathBuf::from(s))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), SelconvStatus> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn new_domain(out: *mut *mut SelconvDomain, build: impl FnOnce() -> selconv::Result<Domain>) -> SelconvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output handle"));
        }
        let d = build().map_err(fail)?;
        store(out, SelconvDomain(d))
    })
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn selconv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn selconv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn selconv_domain_grid(height: usize, width: usize, out: *mut *mut SelconvDomain) -> SelconvStatus {
    new_domain(out, || Domain::grid(height, width))
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn selconv_domain_panorama(height: usize, width: usize, out: *mut *mut SelconvDomain) -> SelconvStatus {
    new_domain(out, || Domain::panorama(height, width))
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn selconv_domain_cubemap(face_size: usize, out: *mut *mut SelconvDomain) -> SelconvStatus {
    new_domain(out, || Domain::cubemap(face_size))
}

/// Graph over the non-zero entries of a row-major `height x width` mask.
///
/// # Safety
/// `mask` must point to `height * width` readable bytes and `out` to a
/// handle slot.
#[no_mangle]
pub unsafe extern "C" fn selconv_domain_masked(
    mask: *const u8,
    height: usize,
    width: usize,
    out: *mut *mut SelconvDomain,
) -> SelconvStatus {
    if mask.is_null() {
        return null("mask");
    }
    let Some(len) = height.checked_mul(width) else {
        set_error("mask size overflows");
        return SelconvStatus::InvalidArgument;
    };
    let bits: Vec<bool> = slice::from_raw_parts(mask, len).iter().map(|&b| b != 0).collect();
    new_domain(out, || Domain::masked(&Mask::new(height, width, bits)?))
}

/// Texture-atlas graph of a Wavefront OBJ with uv coordinates.
///
/// # Safety
/// `obj_path` must be a NUL-terminated string and `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn selconv_domain_texture(
    obj_path: *const c_char,
    tex_size: usize,
    out: *mut *mut SelconvDomain,
) -> SelconvStatus {
    let path = match path_arg(obj_path, "obj_path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    new_domain(out, || Domain::texture(&UvMesh::from_obj_file(&path)?, tex_size))
}

/// SLIC superpixel graph of an interleaved `height x width x channels` image.
///
/// # Safety
/// `image` must point to `height * width * channels` floats and `out` to a
/// handle slot.
#[no_mangle]
pub unsafe extern "C" fn selconv_domain_superpixels(
    image: *const f32,
    height: usize,
    width: usize,
    channels: usize,
    count: usize,
    compactness: f64,
    knn: usize,
    out: *mut *mut SelconvDomain,
) -> SelconvStatus {
    if image.is_null() {
        return null("image");
    }
    let Some(len) = height.checked_mul(width).and_then(|n| n.checked_mul(channels)) else {
        set_error("image size overflows");
        return SelconvStatus::InvalidArgument;
    };
    let data = slice::from_raw_parts(image, len).to_vec();
    new_domain(out, || {
        let sp = builders::slic(&Tensor::new(vec![height, width, channels], data)?, count, compactness)?;
        Domain::superpixels(&sp, knn)
    })
}

/// # Safety
/// `domain` must be null or a handle from a `selconv_domain_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn selconv_domain_free(domain: *mut SelconvDomain) {
    if !domain.is_null() {
        drop(Box::from_raw(domain));
    }
}

/// # Safety
/// `domain` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn selconv_domain_node_count(domain: *const SelconvDomain) -> usize {
    domain.as_ref().map_or(0, |d| d.0.graph().node_count())
}

/// # Safety
/// `domain` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn selconv_domain_edge_count(domain: *const SelconvDomain) -> usize {
    domain.as_ref().map_or(0, |d| d.0.graph().edge_count())
}

/// Copies the edges, sorted by source then destination, into three arrays
/// of `capacity` entries. Selections are 0 (self) to 8.
///
/// # Safety
/// `domain` must be a valid handle and each array must hold `capacity`
/// elements.
#[no_mangle]
pub unsafe extern "C" fn selconv_domain_edges(
    domain: *const SelconvDomain,
    src: *mut usize,
    dst: *mut usize,
    selection: *mut u8,
    capacity: usize,
) -> SelconvStatus {
    guard(|| {
        let d = deref(domain, "domain")?;
        if src.is_null() || dst.is_null() || selection.is_null() {
            return Err(null("edge buffer"));
        }
        let edges = d.0.graph().edges();
        if capacity < edges.len() {
            set_error(format!("{} edges do not fit in {capacity}", edges.len()));
            return Err(SelconvStatus::BufferTooSmall);
        }
        let (s, t, k) = (
            slice::from_raw_parts_mut(src, edges.len()),
            slice::from_raw_parts_mut(dst, edges.len()),
            slice::from_raw_parts_mut(selection, edges.len()),
        );
        for (i, e) in edges.iter().enumerate() {
            s[i] = e.src;
            t[i] = e.dst;
            k[i] = e.selection.value();
        }
        Ok(())
    })
}

/// Loads a model directory holding `manifest.json` and `weights.bin`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn selconv_model_load(dir: *const c_char, out: *mut *mut SelconvModel) -> SelconvStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        if out.is_null() {
            return Err(null("output handle"));
        }
        store(out, SelconvModel(load_model(dir).map_err(fail)?))
    })
}

/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn selconv_model_input_channels(model: *const SelconvModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input.channels)
}

/// # Safety
/// `model` must be null or a handle from [`selconv_model_load`].
#[no_mangle]
pub unsafe extern "C" fn selconv_model_free(model: *mut SelconvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Transfers the model's kernels onto the domain's graph. The handles may
/// be freed afterwards.
///
/// # Safety
/// `model` and `domain` must be valid handles and `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn selconv_network_new(
    model: *const SelconvModel,
    domain: *const SelconvDomain,
    out: *mut *mut SelconvNetwork,
) -> SelconvStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let d = deref(domain, "domain")?;
        if out.is_null() {
            return Err(null("output handle"));
        }
        let net = Network::from_model(&m.0).and_then(|n| PreparedNetwork::new(n, &d.0)).map_err(fail)?;
        store(out, SelconvNetwork(net))
    })
}

/// # Safety
/// `network` must be null or a handle from [`selconv_network_new`].
#[no_mangle]
pub unsafe extern "C" fn selconv_network_free(network: *mut SelconvNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

/// Runs one input of `rows x cols` row-major node features. Node outputs
/// come back as `out_rows x out_cols`; vector outputs as `1 x len`. When
/// `capacity` is too small, the required shape is still reported and
/// `BufferTooSmall` returned.
///
/// # Safety
/// `network` must be a valid handle, `input` must hold `rows * cols`
/// floats, `output` must hold `capacity` floats and the shape pointers must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn selconv_network_run(
    network: *const SelconvNetwork,
    input: *const f32,
    rows: usize,
    cols: usize,
    output: *mut f32,
    capacity: usize,
    out_rows: *mut usize,
    out_cols: *mut usize,
) -> SelconvStatus {
    guard(|| {
        let net = deref(network, "network")?;
        if input.is_null() || output.is_null() || out_rows.is_null() || out_cols.is_null() {
            return Err(null("buffer"));
        }
        let len = rows.checked_mul(cols).ok_or_else(|| {
            set_error("input size overflows");
            SelconvStatus::InvalidArgument
        })?;
        let x = Tensor::new(vec![rows, cols], slice::from_raw_parts(input, len).to_vec()).map_err(fail)?;
        let (shape, data) = match net.0.run(&x).map_err(fail)? {
            NetOutput::Vector(v) => ((1, v.len()), v),
            NetOutput::Nodes(t) => ((t.rows(), t.cols()), t.into_data()),
        };
        *out_rows = shape.0;
        *out_cols = shape.1;
        if capacity < data.len() {
            set_error(format!("output needs {} floats, buffer holds {capacity}", data.len()));
            return Err(SelconvStatus::BufferTooSmall);
        }
        ptr::copy_nonoverlapping(data.as_ptr(), output, data.len());
        Ok(())
    })
}

/// Runs the built-in comparison against the reference convolution and
/// writes 1 to `passed` when every check is within tolerance.
///
/// # Safety
/// `passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn selconv_verify(seed: u64, trials: usize, passed: *mut i32) -> SelconvStatus {
    guard(|| {
        if passed.is_null() {
            return Err(null("passed"));
        }
        let opts = VerifyOptions { seed, trials, ..VerifyOptions::default() };
        *passed = i32::from(run_verify(&opts).map_err(fail)?.passed());
        Ok(())
    })
}
