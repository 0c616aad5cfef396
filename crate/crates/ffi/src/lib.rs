//! C ABI over the sketch retrieval engine.
//!
//! Fallible functions return an `i32` status (`AFM_OK` on success) and write
//! results through out-pointers. Handles are opaque and owned by the caller,
//! who releases them with the matching `*_free` function. On failure the
//! message of the most recent error on the calling thread is available from
//! [`afm_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use afm::alignment::map_box;
use afm::descriptor::{prepare_query, ContourPoint, PointList};
use afm::feature_maps::SpectraSet;
use afm::retrieval::{run_pipeline, AuxVectors, GridFamily, Index, PipelineConfig, RankMethod, RerankMethod};
use afm::AfmError;

pub const AFM_OK: i32 = 0;
pub const AFM_ERR_NULL: i32 = 1;
pub const AFM_ERR_INVALID_ARGUMENT: i32 = 2;
pub const AFM_ERR_IO: i32 = 3;
pub const AFM_ERR_PARSE: i32 = 4;
pub const AFM_ERR_EMPTY_SKETCH: i32 = 5;
pub const AFM_ERR_UNKNOWN_METHOD: i32 = 6;
pub const AFM_ERR_OUT_OF_RANGE: i32 = 7;
pub const AFM_ERR_INTERNAL: i32 = 8;
pub const AFM_ERR_PANIC: i32 = 9;
pub const AFM_ERR_EMPTY_INDEX: i32 = 10;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(i32, String);

impl From<AfmError> for Failure {
    fn from(e: AfmError) -> Self {
        let code = match &e {
            AfmError::InvalidParameter(_) | AfmError::QeUnavailable(_) | AfmError::LayoutMismatch(_) => {
                AFM_ERR_INVALID_ARGUMENT
            }
            AfmError::File { .. } | AfmError::Io(_) => AFM_ERR_IO,
            AfmError::Parse { .. } | AfmError::Format(_) => AFM_ERR_PARSE,
            AfmError::EmptySketch => AFM_ERR_EMPTY_SKETCH,
            AfmError::EmptyIndex => AFM_ERR_EMPTY_INDEX,
            AfmError::UnknownMethod(_) => AFM_ERR_UNKNOWN_METHOD,
            _ => AFM_ERR_INTERNAL,
        };
        Failure(code, e.to_string())
    }
}

fn fail(code: i32, msg: impl Into<String>) -> Failure {
    Failure(code, msg.into())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            AFM_OK
        }
        Ok(Err(Failure(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic");
            AFM_ERR_PANIC
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    str_arg(p, what).map(PathBuf::from)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(AFM_ERR_NULL, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AFM_ERR_INVALID_ARGUMENT, format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(AFM_ERR_NULL, format!("{what} is null")))
}

/// Kernel spectra used to embed sketches.
pub struct AfmSpectra(SpectraSet);

/// A loaded index together with its translation grids.
pub struct AfmIndex {
    index: Index,
    grids: GridFamily,
}

/// Ranked hits of one query.
pub struct AfmResults {
    hits: Vec<AfmHit>,
    ids: Vec<CString>,
}

/// One sketch point in canvas pixels.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct AfmPoint {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub w: f64,
}

/// Pipeline settings. Null method strings and zero counts take defaults.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct AfmQueryOptions {
    /// `"full"`, `"proj"` or `"proj-disc"`.
    pub rank: *const c_char,
    /// `"xy"`, `"xy-star"`, `"x-over-y"` or `"none"`.
    pub rerank: *const c_char,
    pub shortlist: usize,
    pub nbhd: usize,
    pub pre_factor: usize,
    /// Average query expansion over this many top hits; zero disables it.
    pub qe_top_n: usize,
    /// Hits to return.
    pub k: usize,
}

/// One hit. `box_*` is the query's bounding box on the 400 px reference
/// canvas of the matched image.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AfmHit {
    pub score: f64,
    pub scale: f64,
    pub mirror: i32,
    pub dx: i32,
    pub dy: i32,
    pub box_x: f64,
    pub box_y: f64,
    pub box_w: f64,
    pub box_h: f64,
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn afm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn afm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn afm_spectra_default(out: *mut *mut AfmSpectra) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(AfmSpectra(SpectraSet::default_set())));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn afm_spectra_load(path: *const c_char, out: *mut *mut AfmSpectra) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        let set = SpectraSet::load(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(AfmSpectra(set)));
        Ok(())
    })
}

/// # Safety
/// `spectra` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn afm_spectra_free(spectra: *mut AfmSpectra) {
    if !spectra.is_null() {
        drop(Box::from_raw(spectra));
    }
}

/// Loads an index. `spectra` may be null for the bundled default; it must
/// match the spectra the index was built with. `aux_path` may be null; when
/// given, its vectors enable query expansion.
///
/// # Safety
/// Strings must be NUL-terminated, `spectra` null or a live handle, and `out`
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn afm_index_load(
    path: *const c_char,
    spectra: *const AfmSpectra,
    aux_path: *const c_char,
    out: *mut *mut AfmIndex,
) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        let default;
        let set = match spectra.as_ref() {
            Some(s) => &s.0,
            None => {
                default = SpectraSet::default_set();
                &default
            }
        };
        let mut index = Index::load(&path_arg(path, "path")?, set)?;
        if !aux_path.is_null() {
            index.set_aux(&AuxVectors::load(&path_arg(aux_path, "aux_path")?)?)?;
        }
        let grids = GridFamily::new(&index.layout);
        *out = Box::into_raw(Box::new(AfmIndex { index, grids }));
        Ok(())
    })
}

/// # Safety
/// `index` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn afm_index_len(index: *const AfmIndex, out: *mut usize) -> i32 {
    guard(|| {
        let index = index.as_ref().ok_or_else(|| fail(AFM_ERR_NULL, "index is null"))?;
        *out_arg(out, "out")? = index.index.len();
        Ok(())
    })
}

/// # Safety
/// `index` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn afm_index_free(index: *mut AfmIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Writes the default pipeline (projections, then xy-star over the top 100,
/// 10 hits) into `out`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn afm_query_options_default(out: *mut AfmQueryOptions) -> i32 {
    guard(|| {
        let d = PipelineConfig::default();
        *out_arg(out, "out")? = AfmQueryOptions {
            rank: ptr::null(),
            rerank: ptr::null(),
            shortlist: d.shortlist,
            nbhd: d.nbhd,
            pre_factor: d.pre_factor,
            qe_top_n: 0,
            k: 10,
        };
        Ok(())
    })
}

unsafe fn pipeline(opts: Option<&AfmQueryOptions>) -> Result<(PipelineConfig, usize), Failure> {
    let mut cfg = PipelineConfig::default();
    let Some(o) = opts else {
        return Ok((cfg, 10));
    };
    if !o.rank.is_null() {
        cfg.rank = str_arg(o.rank, "rank")?.parse::<RankMethod>()?;
    }
    if !o.rerank.is_null() {
        cfg.rerank = match str_arg(o.rerank, "rerank")? {
            "none" => None,
            s => Some(s.parse::<RerankMethod>()?),
        };
    }
    if o.shortlist > 0 {
        cfg.shortlist = o.shortlist;
    }
    if o.nbhd > 0 {
        cfg.nbhd = o.nbhd;
    }
    if o.pre_factor > 0 {
        cfg.pre_factor = o.pre_factor;
    }
    cfg.qe_top_n = (o.qe_top_n > 0).then_some(o.qe_top_n);
    cfg.validate()?;
    Ok((cfg, if o.k > 0 { o.k } else { 10 }))
}

/// Ranks the index against a sketch given as points on a `width × height`
/// canvas. `options` may be null for the defaults.
///
/// # Safety
/// `index` must be a live handle, `points` must hold `n_points` elements,
/// `options` must be null or valid, and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn afm_query_points(
    index: *const AfmIndex,
    points: *const AfmPoint,
    n_points: usize,
    width: u32,
    height: u32,
    options: *const AfmQueryOptions,
    out: *mut *mut AfmResults,
) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        let h = index.as_ref().ok_or_else(|| fail(AFM_ERR_NULL, "index is null"))?;
        if points.is_null() && n_points > 0 {
            return Err(fail(AFM_ERR_NULL, "points is null"));
        }
        let raw = if n_points == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(points, n_points)
        };
        if raw.iter().any(|p| ![p.x, p.y, p.phi, p.w].iter().all(|v| v.is_finite())) {
            return Err(fail(AFM_ERR_INVALID_ARGUMENT, "non-finite point coordinate"));
        }
        let (cfg, k) = pipeline(options.as_ref())?;
        let list = PointList {
            width,
            height,
            points: raw.iter().map(|p| ContourPoint::new(p.x, p.y, p.phi, p.w)).collect(),
        };
        let pts = list.normalized()?;
        let bundle = prepare_query(&pts, &h.index.layout, &h.index.spectra)?;
        let ranked = run_pipeline(&h.index, &bundle, &h.grids, &cfg)?;
        let top = &ranked[..k.min(ranked.len())];
        let hits = top
            .iter()
            .map(|r| {
                let b = map_box(&bundle.crop, r.scale, r.dx, r.dy);
                AfmHit {
                    score: r.score,
                    scale: r.scale,
                    mirror: r.mirror as i32,
                    dx: r.dx,
                    dy: r.dy,
                    box_x: b.x,
                    box_y: b.y,
                    box_w: b.w,
                    box_h: b.h,
                }
            })
            .collect();
        let ids = top
            .iter()
            .map(|r| CString::new(r.id.as_str()).map_err(|_| fail(AFM_ERR_INTERNAL, "id contains NUL")))
            .collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(AfmResults { hits, ids }));
        Ok(())
    })
}

/// # Safety
/// `results` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn afm_results_len(results: *const AfmResults, out: *mut usize) -> i32 {
    guard(|| {
        let r = results.as_ref().ok_or_else(|| fail(AFM_ERR_NULL, "results is null"))?;
        *out_arg(out, "out")? = r.hits.len();
        Ok(())
    })
}

/// Copies hit `i` into `hit` and points `id` at its NUL-terminated id, which
/// lives as long as `results`. Either out-pointer may be null.
///
/// # Safety
/// `results` must be a live handle; non-null out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn afm_results_get(
    results: *const AfmResults,
    i: usize,
    hit: *mut AfmHit,
    id: *mut *const c_char,
) -> i32 {
    guard(|| {
        let r = results.as_ref().ok_or_else(|| fail(AFM_ERR_NULL, "results is null"))?;
        let Some(h) = r.hits.get(i) else {
            return Err(fail(
                AFM_ERR_OUT_OF_RANGE,
                format!("hit {i} out of range (len {})", r.hits.len()),
            ));
        };
        if let Some(out) = hit.as_mut() {
            *out = *h;
        }
        if let Some(out) = id.as_mut() {
            *out = r.ids[i].as_ptr();
        }
        Ok(())
    })
}

/// # Safety
/// `results` must come from this library and not be used afterwards. Null
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn afm_results_free(results: *mut AfmResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}
