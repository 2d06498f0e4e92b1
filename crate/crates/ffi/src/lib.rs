//! C interface to `hnlq`.
//!
//! Every function returns an [`HnlqStatus`]. On failure the message is kept
//! per thread and can be read with [`hnlq_last_error_message`]. Objects are
//! opaque handles created by `*_new` / `*_build` / `*_load` functions and
//! released with the matching `*_free`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nalgebra::DMatrix;

use hnlq::{
    DitherMode, Error, HierarchicalCodec, HierarchicalEncoding, InnerProductLut, Lattice, LatticeKind, Pipeline,
    PipelineConfig, QuantizedMatrix, ScaledEncoding, ScalingConfig,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HnlqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    DigitOutOfRange = 4,
    /// Overload persisted through every retry.
    Unencodable = 5,
    TooLarge = 6,
    Mismatch = 7,
    Format = 8,
    Io = 9,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 10,
    Panic = 11,
}

/// Lattice ids accepted by [`hnlq_codec_new`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HnlqLattice {
    Integer = 0,
    Checkerboard = 1,
    Hexagonal = 2,
}

/// Dither selection for [`hnlq_pipeline_new`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HnlqDither {
    None = 0,
    /// The same `dither_ids` for every chunk.
    Fixed = 1,
    /// Ids drawn per column and chunk from `dither_seed`.
    PerChunk = 2,
}

pub struct HnlqCodec(HierarchicalCodec);
pub struct HnlqLut(InnerProductLut);
pub struct HnlqPipeline(Pipeline);
pub struct HnlqMatrix(QuantizedMatrix);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> HnlqStatus {
    match err {
        Error::DimensionMismatch { .. } => HnlqStatus::DimensionMismatch,
        Error::DigitOutOfRange { .. } => HnlqStatus::DigitOutOfRange,
        Error::InvalidParameter(_) | Error::Empty(_) | Error::NotALatticePoint { .. } => HnlqStatus::InvalidArgument,
        Error::EnumerationTooLarge { .. } => HnlqStatus::TooLarge,
        Error::Unencodable { .. } => HnlqStatus::Unencodable,
        Error::Mismatch(_) => HnlqStatus::Mismatch,
        Error::Format(_) => HnlqStatus::Format,
        Error::Io(_) => HnlqStatus::Io,
    }
}

/// Failure inside a call: a status plus message.
struct Fail(HnlqStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: HnlqStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> HnlqStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(String::new());
            HnlqStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            HnlqStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .map_or_else(|| fail(HnlqStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(HnlqStatus::NullPointer, format!("{what} is null"));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(HnlqStatus::NullPointer, format!("{what} is null"));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return fail(HnlqStatus::NullPointer, "output handle pointer is null");
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(HnlqStatus::NullPointer, "path is null");
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(HnlqStatus::InvalidArgument, "path is not UTF-8"))
}

fn check_len(got: usize, expected: usize) -> Result<(), Fail> {
    if got != expected {
        return Err(Error::DimensionMismatch { expected, got }.into());
    }
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL terminated,
/// truncated to `len`) and returns the untruncated byte length.
#[no_mangle]
pub unsafe extern "C" fn hnlq_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Codec over `lattice` of dimension `dim` with nesting ratio `q` and `depth` layers.
#[no_mangle]
pub unsafe extern "C" fn hnlq_codec_new(
    lattice: HnlqLattice,
    dim: usize,
    q: u32,
    depth: usize,
    out: *mut *mut HnlqCodec,
) -> HnlqStatus {
    guard(|| {
        let kind = match lattice {
            HnlqLattice::Integer => LatticeKind::Integer,
            HnlqLattice::Checkerboard => LatticeKind::Checkerboard,
            HnlqLattice::Hexagonal => LatticeKind::Hexagonal,
        };
        let codec = HierarchicalCodec::new(Lattice::new(kind, dim)?, q, depth)?;
        put(out, HnlqCodec(codec))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hnlq_codec_free(codec: *mut HnlqCodec) {
    if !codec.is_null() {
        drop(Box::from_raw(codec));
    }
}

#[no_mangle]
pub unsafe extern "C" fn hnlq_codec_dim(codec: *const HnlqCodec) -> usize {
    codec.as_ref().map_or(0, |c| c.0.dim())
}

#[no_mangle]
pub unsafe extern "C" fn hnlq_codec_depth(codec: *const HnlqCodec) -> usize {
    codec.as_ref().map_or(0, |c| c.0.depth())
}

/// Encodes `x` (length `dim`) into `digits` (length `dim * depth`, layer
/// major) and sets `overload`.
#[no_mangle]
pub unsafe extern "C" fn hnlq_codec_encode(
    codec: *const HnlqCodec,
    x: *const f64,
    x_len: usize,
    digits: *mut u32,
    digits_len: usize,
    overload: *mut bool,
) -> HnlqStatus {
    guard(|| {
        let c = &obj(codec, "codec")?.0;
        check_len(digits_len, c.dim() * c.depth())?;
        let enc = c.encode(input(x, x_len, "x")?)?;
        output(digits, digits_len, "digits")?.copy_from_slice(enc.digits());
        if !overload.is_null() {
            *overload = enc.overload;
        }
        Ok(())
    })
}

/// Writes the lattice point for `digits` into `out` (length `dim`).
#[no_mangle]
pub unsafe extern "C" fn hnlq_codec_decode(
    codec: *const HnlqCodec,
    digits: *const u32,
    digits_len: usize,
    out: *mut f64,
    out_len: usize,
) -> HnlqStatus {
    guard(|| {
        let c = &obj(codec, "codec")?.0;
        check_len(out_len, c.dim())?;
        let enc = HierarchicalEncoding::from_digits(c.q(), c.dim(), input(digits, digits_len, "digits")?.to_vec())?;
        check_len(enc.depth(), c.depth())?;
        output(out, out_len, "out")?.copy_from_slice(&c.decode(&enc)?.point);
        Ok(())
    })
}

/// Encoding with overload avoidance: scale `beta0 * 2^(alpha T)` for the
/// smallest retry count `T`. `dither` may be null or point to `dim` ids.
#[no_mangle]
pub unsafe extern "C" fn hnlq_codec_encode_scaled(
    codec: *const HnlqCodec,
    beta0: f64,
    alpha: f64,
    x: *const f64,
    x_len: usize,
    dither: *const u32,
    digits: *mut u32,
    digits_len: usize,
    retries: *mut u32,
) -> HnlqStatus {
    guard(|| {
        let c = &obj(codec, "codec")?.0;
        check_len(digits_len, c.dim() * c.depth())?;
        let scaling = ScalingConfig::new(beta0, alpha)?;
        let z = if dither.is_null() {
            None
        } else {
            Some(input(dither, c.dim(), "dither")?)
        };
        let enc = c.encode_scaled(&scaling, input(x, x_len, "x")?, z)?;
        output(digits, digits_len, "digits")?.copy_from_slice(enc.encoding.digits());
        if !retries.is_null() {
            *retries = enc.retries;
        }
        Ok(())
    })
}

/// Inverse of [`hnlq_codec_encode_scaled`].
#[no_mangle]
pub unsafe extern "C" fn hnlq_codec_decode_scaled(
    codec: *const HnlqCodec,
    beta0: f64,
    alpha: f64,
    digits: *const u32,
    digits_len: usize,
    retries: u32,
    dither: *const u32,
    out: *mut f64,
    out_len: usize,
) -> HnlqStatus {
    guard(|| {
        let c = &obj(codec, "codec")?.0;
        check_len(out_len, c.dim())?;
        let scaling = ScalingConfig::new(beta0, alpha)?;
        let encoding =
            HierarchicalEncoding::from_digits(c.q(), c.dim(), input(digits, digits_len, "digits")?.to_vec())?;
        check_len(encoding.depth(), c.depth())?;
        let dither = if dither.is_null() {
            None
        } else {
            Some(input(dither, c.dim(), "dither")?.to_vec())
        };
        let rec = c.decode_scaled(
            &scaling,
            &ScaledEncoding {
                encoding,
                retries,
                dither,
            },
        )?;
        output(out, out_len, "out")?.copy_from_slice(&rec);
        Ok(())
    })
}

/// Table of all `q^(2d)` layer inner products for `codec`.
#[no_mangle]
pub unsafe extern "C" fn hnlq_lut_build(codec: *const HnlqCodec, out: *mut *mut HnlqLut) -> HnlqStatus {
    guard(|| {
        let lut = InnerProductLut::build(&obj(codec, "codec")?.0)?;
        put(out, HnlqLut(lut))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hnlq_lut_free(lut: *mut HnlqLut) {
    if !lut.is_null() {
        drop(Box::from_raw(lut));
    }
}

#[no_mangle]
pub unsafe extern "C" fn hnlq_lut_len(lut: *const HnlqLut) -> usize {
    lut.as_ref().map_or(0, |l| l.0.len())
}

/// Number of table reads since the last reset.
#[no_mangle]
pub unsafe extern "C" fn hnlq_lut_query_count(lut: *const HnlqLut) -> u64 {
    lut.as_ref().map_or(0, |l| l.0.query_count())
}

#[no_mangle]
pub unsafe extern "C" fn hnlq_lut_reset_query_count(lut: *const HnlqLut) {
    if let Some(l) = lut.as_ref() {
        l.0.reset_query_count();
    }
}

/// Inner product of two encodings of `len` digits each. `zx` and `zy` are
/// either both null (no dither) or both point to `d` dither ids.
#[no_mangle]
pub unsafe extern "C" fn hnlq_lut_inner_product(
    lut: *const HnlqLut,
    x: *const u32,
    y: *const u32,
    len: usize,
    zx: *const u32,
    zy: *const u32,
    out: *mut f64,
) -> HnlqStatus {
    guard(|| {
        let l = &obj(lut, "lut")?.0;
        let (q, d) = (l.q(), l.dim());
        let ex = HierarchicalEncoding::from_digits(q, d, input(x, len, "x")?.to_vec())?;
        let ey = HierarchicalEncoding::from_digits(q, d, input(y, len, "y")?.to_vec())?;
        let v = match (zx.is_null(), zy.is_null()) {
            (true, true) => l.inner_product(&ex, &ey)?,
            (false, false) => l.inner_product_dithered(&ex, &ey, input(zx, d, "zx")?, input(zy, d, "zy")?)?,
            _ => {
                return fail(
                    HnlqStatus::InvalidArgument,
                    "zx and zy must both be null or both be set",
                )
            }
        };
        if out.is_null() {
            return fail(HnlqStatus::NullPointer, "out is null");
        }
        *out = v;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hnlq_lut_save(lut: *const HnlqLut, file: *const c_char) -> HnlqStatus {
    guard(|| {
        let l = &obj(lut, "lut")?.0;
        let f = File::create(path(file)?).map_err(Error::from)?;
        l.write_to(BufWriter::new(f))?;
        Ok(())
    })
}

/// Loads a table saved by [`hnlq_lut_save`]; it must match `codec`.
#[no_mangle]
pub unsafe extern "C" fn hnlq_lut_load(
    file: *const c_char,
    codec: *const HnlqCodec,
    out: *mut *mut HnlqLut,
) -> HnlqStatus {
    guard(|| {
        let c = &obj(codec, "codec")?.0;
        let f = File::open(path(file)?).map_err(Error::from)?;
        let lut = InnerProductLut::read_from(BufReader::new(f), c)?;
        put(out, HnlqLut(lut))
    })
}

/// Product-code pipeline for vectors of length `n` (a multiple of the
/// codec dimension). `dither_ids` is read only for [`HnlqDither::Fixed`].
#[no_mangle]
pub unsafe extern "C" fn hnlq_pipeline_new(
    codec: *const HnlqCodec,
    beta0: f64,
    alpha: f64,
    n: usize,
    rotate: bool,
    rotation_seed: u64,
    dither: HnlqDither,
    dither_ids: *const u32,
    dither_seed: u64,
    out: *mut *mut HnlqPipeline,
) -> HnlqStatus {
    guard(|| {
        let c = &obj(codec, "codec")?.0;
        let mode = match dither {
            HnlqDither::None => DitherMode::None,
            HnlqDither::Fixed => DitherMode::Fixed(input(dither_ids, c.dim(), "dither_ids")?.to_vec()),
            HnlqDither::PerChunk => DitherMode::PerChunk { seed: dither_seed },
        };
        let mut cfg = PipelineConfig::new(c.clone(), ScalingConfig::new(beta0, alpha)?, n)?.with_dither(mode)?;
        if rotate {
            cfg = cfg.with_rotation(rotation_seed);
        }
        put(out, HnlqPipeline(Pipeline::new(cfg)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hnlq_pipeline_free(pipeline: *mut HnlqPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Quantizes an `n x cols` column-major matrix.
#[no_mangle]
pub unsafe extern "C" fn hnlq_pipeline_quantize(
    pipeline: *const HnlqPipeline,
    data: *const f64,
    cols: usize,
    out: *mut *mut HnlqMatrix,
) -> HnlqStatus {
    guard(|| {
        let p = &obj(pipeline, "pipeline")?.0;
        let n = p.config().n;
        let values = input(data, n * cols, "data")?;
        let m = p.quantize_matrix(&DMatrix::from_column_slice(n, cols, values))?;
        put(out, HnlqMatrix(m))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hnlq_matrix_free(matrix: *mut HnlqMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

#[no_mangle]
pub unsafe extern "C" fn hnlq_matrix_rows(matrix: *const HnlqMatrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.0.rows())
}

#[no_mangle]
pub unsafe extern "C" fn hnlq_matrix_cols(matrix: *const HnlqMatrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.0.cols())
}

/// Writes the approximate `A^T B` into `out` (`a_cols x b_cols`, row major).
#[no_mangle]
pub unsafe extern "C" fn hnlq_pipeline_matmul(
    pipeline: *const HnlqPipeline,
    lut: *const HnlqLut,
    a: *const HnlqMatrix,
    b: *const HnlqMatrix,
    out: *mut f64,
    out_len: usize,
) -> HnlqStatus {
    guard(|| {
        let p = &obj(pipeline, "pipeline")?.0;
        let (a, b) = (&obj(a, "a")?.0, &obj(b, "b")?.0);
        check_len(out_len, a.cols() * b.cols())?;
        let prod = p.matmul_approx(&obj(lut, "lut")?.0, a, b)?;
        let dst = output(out, out_len, "out")?;
        for i in 0..a.cols() {
            for j in 0..b.cols() {
                dst[i * b.cols() + j] = prod[(i, j)];
            }
        }
        Ok(())
    })
}

/// Approximate inner product of column `i` of `a` and column `j` of `b`.
#[no_mangle]
pub unsafe extern "C" fn hnlq_pipeline_ip(
    pipeline: *const HnlqPipeline,
    lut: *const HnlqLut,
    a: *const HnlqMatrix,
    i: usize,
    b: *const HnlqMatrix,
    j: usize,
    out: *mut f64,
) -> HnlqStatus {
    guard(|| {
        let p = &obj(pipeline, "pipeline")?.0;
        let (a, b) = (&obj(a, "a")?.0, &obj(b, "b")?.0);
        let (Some(x), Some(y)) = (a.columns.get(i), b.columns.get(j)) else {
            return fail(HnlqStatus::InvalidArgument, "column index out of range");
        };
        if !p.config().compatible(&a.config) || !p.config().compatible(&b.config) {
            return fail(
                HnlqStatus::Mismatch,
                "matrix was quantized with a different configuration",
            );
        }
        let v = p.ip_approx(&obj(lut, "lut")?.0, x, y)?;
        if out.is_null() {
            return fail(HnlqStatus::NullPointer, "out is null");
        }
        *out = v;
        Ok(())
    })
}

/// Serializes `matrix` into `buf`. `written` receives the encoded length;
/// if `buf` is null or shorter, nothing is copied and `BufferTooSmall` is
/// returned.
#[no_mangle]
pub unsafe extern "C" fn hnlq_matrix_serialize(
    matrix: *const HnlqMatrix,
    buf: *mut u8,
    buf_len: usize,
    written: *mut usize,
) -> HnlqStatus {
    guard(|| {
        let bytes = obj(matrix, "matrix")?.0.to_bytes();
        if written.is_null() {
            return fail(HnlqStatus::NullPointer, "written is null");
        }
        *written = bytes.len();
        if buf.is_null() || buf_len < bytes.len() {
            return fail(HnlqStatus::BufferTooSmall, format!("need {} bytes", bytes.len()));
        }
        output(buf, bytes.len(), "buf")?.copy_from_slice(&bytes);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hnlq_matrix_deserialize(buf: *const u8, len: usize, out: *mut *mut HnlqMatrix) -> HnlqStatus {
    guard(|| {
        let m = QuantizedMatrix::from_bytes(input(buf, len, "buf")?)?;
        put(out, HnlqMatrix(m))
    })
}
