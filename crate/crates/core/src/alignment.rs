//! Scores as trigonometric polynomials of a global translation.
//!
//! The query is the side that moves: a shift `Δ` adds `Δ` to every query
//! coordinate. Per spatial axis the polynomial basis is
//! `u(Δ) = [1, cos ω₁Δ, sin ω₁Δ, …]`, in the same slot order as the
//! embeddings. A 1D polynomial is `cᵀu(Δ)`; a 2D one is `u(Δx)ᵀ M u(Δy)`,
//! whose `D_x²` entries are the `N2` nonzero coefficients.

use std::f64::consts::PI;

use crate::descriptor::{CropInfo, NormBlock, SketchDescriptor};
use crate::error::{AfmError, Result};
use crate::feature_maps::EmbeddingLayout;

/// Longer image side, in pixels, that shift grids are expressed in.
pub const REFERENCE_SIDE: f64 = 400.0;

pub fn px_to_norm(px: f64) -> f64 {
    px * PI / REFERENCE_SIDE
}

pub fn norm_to_px(v: f64) -> f64 {
    v * REFERENCE_SIDE / PI
}

/// Offsets `{−max, …, 0, …, max}` spaced by `step` pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslationGrid {
    pub max_shift: i32,
    pub step: i32,
    pub offsets: Vec<i32>,
    pub scale: f64,
}

impl TranslationGrid {
    pub fn new(max_shift: i32, step: i32, scale: f64) -> Result<Self> {
        if step <= 0 || max_shift < 0 {
            return Err(AfmError::InvalidParameter(format!(
                "grid needs step > 0 and max ≥ 0, got {step} / {max_shift}"
            )));
        }
        let k = max_shift / step;
        let offsets = (-k..=k).map(|i| i * step).collect();
        Ok(Self {
            max_shift,
            step,
            offsets,
            scale,
        })
    }

    /// Grid for a relative query scale: the range grows and the step
    /// shrinks linearly with `1/s` and `s`, from 80 px / 20 px at `s = 1`.
    pub fn for_scale(scale: f64) -> Self {
        Self::with_base(80.0, 20.0, scale)
    }

    pub fn with_base(max_shift: f64, step: f64, scale: f64) -> Self {
        let max = (max_shift / scale).round() as i32;
        let step = ((step * scale).round() as i32).max(1);
        Self::new(max, step, scale).expect("positive grid")
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Index of offset 0.
    pub fn center(&self) -> usize {
        self.offsets.len() / 2
    }
}

/// Tie order: smaller `|Δ|` first, then the negative offset.
fn tie_key(d: i32) -> (i32, bool) {
    (d.abs(), d > 0)
}

pub fn axis_basis_into(omega: &[f64], delta: f64, out: &mut [f64]) {
    out[0] = 1.0;
    for (j, w) in omega.iter().enumerate().skip(1) {
        let (s, c) = (w * delta).sin_cos();
        out[2 * j - 1] = c;
        out[2 * j] = s;
    }
}

pub fn axis_basis(omega: &[f64], delta: f64) -> Vec<f64> {
    let mut out = vec![0.0; 2 * omega.len() - 1];
    axis_basis_into(omega, delta, &mut out);
    out
}

/// Basis values of every grid offset, computed once per (grid, layout) and
/// shared by all database items.
#[derive(Clone, Debug)]
pub struct GridBasis {
    pub grid: TranslationGrid,
    dim: usize,
    values: Vec<f64>,
    order: Vec<usize>,
}

impl GridBasis {
    pub fn new(layout: &EmbeddingLayout, grid: TranslationGrid) -> Self {
        let dim = layout.dim_x;
        let mut values = vec![0.0; grid.len() * dim];
        for (i, &d) in grid.offsets.iter().enumerate() {
            axis_basis_into(
                &layout.omega_x,
                px_to_norm(d as f64),
                &mut values[i * dim..(i + 1) * dim],
            );
        }
        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.sort_by_key(|&i| tie_key(grid.offsets[i]));
        Self {
            grid,
            dim,
            values,
            order,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Offset indices in tie-break order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(query slot, database slot, sign)` terms of basis function `a` on one
/// axis. Under `x ↦ x + Δ`, the query's `(c, s)` pair at `ω` rotates by `ωΔ`,
/// which gives `β = PcQc + PsQs` on `cos ωΔ` and `γ = PcQs − PsQc` on
/// `sin ωΔ` (`P` query, `Q` database).
fn axis_terms(a: usize) -> &'static [(isize, isize, f64)] {
    const DC: [(isize, isize, f64); 1] = [(0, 0, 1.0)];
    const COS: [(isize, isize, f64); 2] = [(0, 0, 1.0), (1, 1, 1.0)];
    const SIN: [(isize, isize, f64); 2] = [(0, 1, 1.0), (1, 0, -1.0)];
    if a == 0 {
        &DC
    } else if a % 2 == 1 {
        &COS
    } else {
        &SIN
    }
}

/// Slot of the cos (`0`) or sin (`1`) part belonging to basis index `a`.
fn slot(a: usize, part: isize) -> usize {
    if a == 0 {
        0
    } else {
        let c = if a % 2 == 1 { a } else { a - 1 };
        c + part as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrigPoly1D {
    /// `[β₀, β₁, γ₁, β₂, γ₂, …]`
    pub coeffs: Vec<f64>,
    pub norm_product: f64,
}

impl TrigPoly1D {
    pub fn betas(&self) -> Vec<f64> {
        std::iter::once(self.coeffs[0])
            .chain(self.coeffs[1..].iter().step_by(2).copied())
            .collect()
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.coeffs[2..].iter().step_by(2).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

pub(crate) fn poly1d_into(query: &[f64], db: &[f64], dim_x: usize, dim_phi: usize, out: &mut [f64]) {
    let sub = |s: usize| s * dim_phi..(s + 1) * dim_phi;
    for (a, o) in out.iter_mut().enumerate().take(dim_x) {
        *o = axis_terms(a)
            .iter()
            .map(|&(p, q, sgn)| {
                sgn * dot(&query[sub(slot(a, p))], &db[sub(slot(a, q))])
            })
            .sum();
    }
}

/// 1D polynomial from a query-mode projection and a database projection.
pub fn poly1d(
    query_proj: &[f64],
    db_proj: &[f64],
    layout: &EmbeddingLayout,
    norm_product: f64,
) -> Result<TrigPoly1D> {
    if query_proj.len() != layout.proj_dim() || db_proj.len() != layout.proj_dim() {
        return Err(AfmError::LayoutMismatch(format!(
            "projection lengths {} / {} vs {}",
            query_proj.len(),
            db_proj.len(),
            layout.proj_dim()
        )));
    }
    let mut coeffs = vec![0.0; layout.dim_x];
    poly1d_into(query_proj, db_proj, layout.dim_x, layout.dim_phi, &mut coeffs);
    Ok(TrigPoly1D {
        coeffs,
        norm_product,
    })
}

/// Raw (unnormalized) score at a normalized shift.
pub fn eval_poly1d(poly: &TrigPoly1D, layout: &EmbeddingLayout, delta: f64) -> f64 {
    dot(&poly.coeffs, &axis_basis(&layout.omega_x, delta))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Max1D {
    /// Normalized score.
    pub score: f64,
    pub index: usize,
    /// Pixels.
    pub shift: i32,
}

pub(crate) fn max_coeffs_1d(coeffs: &[f64], basis: &GridBasis) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, basis.grid.center());
    for &i in basis.order() {
        let v = dot(coeffs, basis.row(i));
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

pub fn max_poly1d(poly: &TrigPoly1D, basis: &GridBasis) -> Max1D {
    let (raw, index) = max_coeffs_1d(&poly.coeffs, basis);
    Max1D {
        score: normalize(raw, poly.norm_product),
        index,
        shift: basis.grid.offsets[index],
    }
}

fn normalize(raw: f64, norm_product: f64) -> f64 {
    if norm_product > 0.0 {
        raw / norm_product
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrigPoly2D {
    /// `M[bx·D_x + by]`; entry `(bx, by)` multiplies `u_bx(Δx)·u_by(Δy)`.
    pub coeffs: Vec<f64>,
    pub dim_x: usize,
    pub norm_product: f64,
}

impl TrigPoly2D {
    pub fn n2(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeff(&self, bx: usize, by: usize) -> f64 {
        self.coeffs[bx * self.dim_x + by]
    }
}

pub(crate) fn poly2d_into(
    query: &[f64],
    db: &[f64],
    dim_x: usize,
    dim_phi: usize,
    out: &mut [f64],
) {
    let block = |ix: usize, iy: usize| {
        let s = (ix * dim_x + iy) * dim_phi;
        s..s + dim_phi
    };
    for bx in 0..dim_x {
        let tx = axis_terms(bx);
        for by in 0..dim_x {
            let ty = axis_terms(by);
            let mut acc = 0.0;
            for &(px, qx, sx) in tx {
                for &(py, qy, sy) in ty {
                    let qb = block(slot(bx, px), slot(by, py));
                    let db_b = block(slot(bx, qx), slot(by, qy));
                    acc += sx * sy * dot(&query[qb], &db[db_b]);
                }
            }
            out[bx * dim_x + by] = acc;
        }
    }
}

/// 2D polynomial from a query-mode full vector and a database full vector.
pub fn poly2d(
    query_full: &[f64],
    db_full: &[f64],
    layout: &EmbeddingLayout,
    norm_product: f64,
) -> Result<TrigPoly2D> {
    if query_full.len() != layout.full_dim() || db_full.len() != layout.full_dim() {
        return Err(AfmError::LayoutMismatch(format!(
            "descriptor lengths {} / {} vs {}",
            query_full.len(),
            db_full.len(),
            layout.full_dim()
        )));
    }
    let mut coeffs = vec![0.0; layout.dim_x * layout.dim_x];
    poly2d_into(query_full, db_full, layout.dim_x, layout.dim_phi, &mut coeffs);
    Ok(TrigPoly2D {
        coeffs,
        dim_x: layout.dim_x,
        norm_product,
    })
}

fn bilinear(m: &[f64], ux: &[f64], uy: &[f64]) -> f64 {
    let d = ux.len();
    ux.iter()
        .enumerate()
        .map(|(bx, &u)| u * dot(&m[bx * d..(bx + 1) * d], uy))
        .sum()
}

/// Raw score at normalized shifts.
pub fn eval_poly2d(poly: &TrigPoly2D, layout: &EmbeddingLayout, dx: f64, dy: f64) -> f64 {
    bilinear(
        &poly.coeffs,
        &axis_basis(&layout.omega_x, dx),
        &axis_basis(&layout.omega_x, dy),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Max2D {
    /// Normalized score.
    pub score: f64,
    pub ix: usize,
    pub iy: usize,
    /// Pixels.
    pub dx: i32,
    pub dy: i32,
}

/// Raw-score argmax over the full grid; `scratch` holds `M·U_yᵀ`.
pub(crate) fn max_coeffs_2d(m: &[f64], basis: &GridBasis, scratch: &mut Vec<f64>) -> (f64, usize, usize) {
    let (d, g) = (basis.dim(), basis.grid.len());
    scratch.clear();
    scratch.resize(d * g, 0.0);
    for j in 0..g {
        let uy = basis.row(j);
        for bx in 0..d {
            scratch[bx * g + j] = dot(&m[bx * d..(bx + 1) * d], uy);
        }
    }
    let c = basis.grid.center();
    let mut best = (f64::NEG_INFINITY, c, c);
    for &i in basis.order() {
        let ux = basis.row(i);
        for &j in basis.order() {
            let mut v = 0.0;
            for (bx, &u) in ux.iter().enumerate() {
                v += u * scratch[bx * g + j];
            }
            if v > best.0 {
                best = (v, i, j);
            }
        }
    }
    best
}

fn max2d_result(raw: f64, ix: usize, iy: usize, norm_product: f64, basis: &GridBasis) -> Max2D {
    Max2D {
        score: normalize(raw, norm_product),
        ix,
        iy,
        dx: basis.grid.offsets[ix],
        dy: basis.grid.offsets[iy],
    }
}

pub fn max_poly2d(poly: &TrigPoly2D, basis: &GridBasis) -> Max2D {
    let (raw, ix, iy) = max_coeffs_2d(&poly.coeffs, basis, &mut Vec::new());
    max2d_result(raw, ix, iy, poly.norm_product, basis)
}

pub(crate) fn refine_coeffs(
    m: &[f64],
    basis: &GridBasis,
    center: (usize, usize),
    n: usize,
) -> (f64, usize, usize) {
    let h = n / 2;
    let g = basis.grid.len();
    let range = |c: usize| c.saturating_sub(h)..(c + h + 1).min(g);
    let mut cells: Vec<(usize, usize)> = range(center.0)
        .flat_map(|i| range(center.1).map(move |j| (i, j)))
        .collect();
    let offs = &basis.grid.offsets;
    cells.sort_by(|a, b| {
        (tie_key(offs[a.0]), tie_key(offs[a.1])).cmp(&(tie_key(offs[b.0]), tie_key(offs[b.1])))
    });
    let mut best = (f64::NEG_INFINITY, center.0, center.1);
    for (i, j) in cells {
        let v = bilinear(m, basis.row(i), basis.row(j));
        if v > best.0 {
            best = (v, i, j);
        }
    }
    best
}

/// Best real score on the `n × n` grid cells around `center` (grid
/// indices), clipped to the grid.
pub fn refine_local(
    poly: &TrigPoly2D,
    basis: &GridBasis,
    center: (usize, usize),
    n: usize,
) -> Result<Max2D> {
    if n.is_multiple_of(2) {
        return Err(AfmError::InvalidParameter(format!(
            "neighborhood size must be odd, got {n}"
        )));
    }
    let g = basis.grid.len();
    if center.0 >= g || center.1 >= g {
        return Err(AfmError::InvalidParameter("refinement center off grid".into()));
    }
    let (raw, ix, iy) = refine_coeffs(&poly.coeffs, basis, center, n);
    Ok(max2d_result(raw, ix, iy, poly.norm_product, basis))
}

/// Sign bits (`1` = negative) of the polynomial coefficients.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryPoly2D {
    pub bits: Vec<u64>,
    pub n2: usize,
}

fn pack_signs(vals: impl Iterator<Item = f64>, words: usize) -> Vec<u64> {
    let mut bits = vec![0u64; words];
    for (k, v) in vals.enumerate() {
        if v < 0.0 {
            bits[k / 64] |= 1 << (k % 64);
        }
    }
    bits
}

pub(crate) fn binarize_coeffs(m: &[f64]) -> Vec<u64> {
    pack_signs(m.iter().copied(), m.len().div_ceil(64))
}

pub fn binarize(poly: &TrigPoly2D, basis: &BinaryGridBasis) -> Result<BinaryPoly2D> {
    if poly.n2() != basis.n2 {
        return Err(AfmError::LayoutMismatch(format!(
            "polynomial has {} coefficients, grid basis {}",
            poly.n2(),
            basis.n2
        )));
    }
    Ok(BinaryPoly2D {
        bits: binarize_coeffs(&poly.coeffs),
        n2: poly.n2(),
    })
}

/// Sign bits of `u_bx(Δx)·u_by(Δy)` for every grid translation.
#[derive(Clone, Debug)]
pub struct BinaryGridBasis {
    pub n2: usize,
    words: usize,
    g: usize,
    bits: Vec<u64>,
    order: Vec<usize>,
}

impl BinaryGridBasis {
    pub fn new(basis: &GridBasis) -> Self {
        let (d, g) = (basis.dim(), basis.grid.len());
        let n2 = d * d;
        let words = n2.div_ceil(64);
        let mut bits = Vec::with_capacity(g * g * words);
        for i in 0..g {
            let ux = basis.row(i);
            for j in 0..g {
                let uy = basis.row(j);
                let vals = ux.iter().flat_map(|&a| uy.iter().map(move |&b| a * b));
                bits.extend(pack_signs(vals, words));
            }
        }
        Self {
            n2,
            words,
            g,
            bits,
            order: basis.order().to_vec(),
        }
    }

    pub fn translation_bits(&self, ix: usize, iy: usize) -> &[u64] {
        let k = (ix * self.g + iy) * self.words;
        &self.bits[k..k + self.words]
    }
}

/// `N2 − 2·Hamming(coefficient signs, basis signs)` maximized over the
/// grid; returns `(surrogate, ix, iy)`.
pub(crate) fn max_binary_bits(coeff_bits: &[u64], basis: &BinaryGridBasis) -> (i64, usize, usize) {
    let c = basis.g / 2;
    let mut best = (i64::MIN, c, c);
    for &i in &basis.order {
        for &j in &basis.order {
            let ham: u32 = basis
                .translation_bits(i, j)
                .iter()
                .zip(coeff_bits)
                .map(|(a, b)| (a ^ b).count_ones())
                .sum();
            let s = basis.n2 as i64 - 2 * ham as i64;
            if s > best.0 {
                best = (s, i, j);
            }
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinaryMax {
    pub surrogate: i64,
    pub ix: usize,
    pub iy: usize,
}

pub fn max_binary(bpoly: &BinaryPoly2D, basis: &BinaryGridBasis) -> BinaryMax {
    let (surrogate, ix, iy) = max_binary_bits(&bpoly.bits, basis);
    BinaryMax { surrogate, ix, iy }
}

/// Product of the kernel-`i` query and database norms.
pub fn norm_product(query_norms: &NormBlock, db_norms: &NormBlock, kernel: usize) -> f64 {
    query_norms.full(kernel) * db_norms.full(kernel)
}

/// Convenience: 2D polynomial of a query-mode and a database descriptor,
/// normalized with the given query norm for `kernel`.
pub fn pair_poly2d(
    query: &SketchDescriptor,
    query_norm: f64,
    db: &SketchDescriptor,
    layout: &EmbeddingLayout,
    kernel: usize,
) -> Result<TrigPoly2D> {
    let db_norm = db
        .norms
        .ok_or_else(|| AfmError::InvalidParameter("database descriptor without norms".into()))?
        .full(kernel);
    poly2d(&query.full, &db.full, layout, query_norm * db_norm)
}


/// Rectangle in pixels of the 400 px reference canvas of a database image.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "server", derive(serde::Serialize))]
pub struct BoxPx {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Where the query's bounding box lands in a database image. The crop puts
/// the box center on the canvas center with its longer side spanning the
/// canvas; the box is then scaled by `scale` about the center (mirroring
/// maps the centered box onto itself) and moved by the shift.
pub fn map_box(crop: &CropInfo, scale: f64, dx: i32, dy: i32) -> BoxPx {
    let side = crop.width.max(crop.height);
    let (w, h) = if side > 0.0 {
        (
            scale * REFERENCE_SIDE * crop.width / side,
            scale * REFERENCE_SIDE * crop.height / side,
        )
    } else {
        (0.0, 0.0)
    };
    let c = REFERENCE_SIDE / 2.0;
    BoxPx {
        x: c + dx as f64 - w / 2.0,
        y: c + dy as f64 - h / 2.0,
        w,
        h,
    }
}
