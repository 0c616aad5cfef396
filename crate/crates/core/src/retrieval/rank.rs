use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;

use crate::alignment::{
    binarize_coeffs, max_binary_bits, max_coeffs_1d, max_coeffs_2d, poly1d_into, poly2d_into,
    refine_coeffs, BinaryGridBasis, GridBasis, TranslationGrid,
};
use crate::descriptor::{QueryBundle, QueryVariant, QUERY_SCALES};
use crate::error::{AfmError, Result};
use crate::feature_maps::{Axis, EmbeddingLayout};

use super::index::{Index, IndexEntry};

/// Real and binary grid bases for one query scale.
#[derive(Clone, Debug)]
pub struct ScaleGrids {
    pub scale: f64,
    pub real: GridBasis,
    pub binary: BinaryGridBasis,
}

/// Translation grids of every query scale, built once per layout.
#[derive(Clone, Debug)]
pub struct GridFamily {
    pub grids: Vec<ScaleGrids>,
}

impl GridFamily {
    pub fn new(layout: &EmbeddingLayout) -> Self {
        Self::with_base(layout, 80.0, 20.0)
    }

    /// Grids from a base range and step at scale 1.
    pub fn with_base(layout: &EmbeddingLayout, max_shift: f64, step: f64) -> Self {
        let grids = QUERY_SCALES
            .iter()
            .map(|&s| {
                let real = GridBasis::new(layout, TranslationGrid::with_base(max_shift, step, s));
                let binary = BinaryGridBasis::new(&real);
                ScaleGrids {
                    scale: s,
                    real,
                    binary,
                }
            })
            .collect();
        Self { grids }
    }

    pub fn for_scale(&self, scale: f64) -> &ScaleGrids {
        self.grids
            .iter()
            .min_by(|a, b| {
                (a.scale - scale)
                    .abs()
                    .partial_cmp(&(b.scale - scale).abs())
                    .unwrap()
            })
            .expect("non-empty grid family")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Projection,
    Full,
    BinaryRefined,
    QueryExpansion,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedResult {
    pub id: String,
    /// Position in the index.
    pub entry: usize,
    pub score: f64,
    pub scale: f64,
    pub mirror: bool,
    /// Pixels on the reference grid. For projection-stage results these are
    /// the independent 1D argmaxes.
    pub dx: i32,
    pub dy: i32,
    pub stage: Stage,
}

pub(crate) fn sort_results(v: &mut [RankedResult]) {
    v.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
}

fn norm_product(a: f64, b: f64) -> f64 {
    a * b
}

fn normalized(raw: f64, np: f64) -> f64 {
    if np > 0.0 {
        raw / np
    } else {
        0.0
    }
}

/// Per-thread buffers.
#[derive(Default)]
struct Scratch {
    coeffs: Vec<f64>,
    grid: Vec<f64>,
}

impl Scratch {
    fn poly2d(&mut self, layout: &EmbeddingLayout, v: &QueryVariant, e: &IndexEntry) {
        self.coeffs.resize(layout.dim_x * layout.dim_x, 0.0);
        poly2d_into(&v.desc.full, &e.full, layout.dim_x, layout.dim_phi, &mut self.coeffs);
    }
}

fn check(index: &Index, bundle: &QueryBundle) -> Result<()> {
    if index.is_empty() {
        return Err(AfmError::EmptyIndex);
    }
    if bundle
        .variants
        .iter()
        .any(|v| v.desc.full.len() != index.layout.full_dim())
    {
        return Err(AfmError::LayoutMismatch(
            "query bundle does not match the index layout".into(),
        ));
    }
    Ok(())
}

/// Best full-grid 2D score of one entry over all variants.
fn best_full(
    index: &Index,
    bundle: &QueryBundle,
    grids: &GridFamily,
    entry: usize,
    scratch: &mut Scratch,
) -> RankedResult {
    let e = &index.entries[entry];
    let mut best: Option<RankedResult> = None;
    for v in &bundle.variants {
        let g = &grids.for_scale(v.scale).real;
        scratch.poly2d(&index.layout, v, e);
        let (raw, ix, iy) = max_coeffs_2d(&scratch.coeffs, g, &mut scratch.grid);
        let score = normalized(raw, norm_product(v.norms[0], e.norms.full(v.kernel)));
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(RankedResult {
                id: e.id.clone(),
                entry,
                score,
                scale: v.scale,
                mirror: v.mirror,
                dx: g.grid.offsets[ix],
                dy: g.grid.offsets[iy],
                stage: Stage::Full,
            });
        }
    }
    best.expect("bundle has variants")
}

/// Exhaustive 2D scoring: every entry, every variant, the full grid.
pub fn rank_full(index: &Index, bundle: &QueryBundle, grids: &GridFamily) -> Result<Vec<RankedResult>> {
    check(index, bundle)?;
    let mut out: Vec<RankedResult> = (0..index.len())
        .into_par_iter()
        .map_init(Scratch::default, |s, i| best_full(index, bundle, grids, i, s))
        .collect();
    sort_results(&mut out);
    Ok(out)
}

/// Normalized 1D maximum of one variant on one axis: `(score, grid index)`.
fn axis_max(
    layout: &EmbeddingLayout,
    v: &QueryVariant,
    e: &IndexEntry,
    axis: Axis,
    g: &GridBasis,
    coeffs: &mut Vec<f64>,
) -> (f64, usize) {
    let (q, d, qn) = match axis {
        Axis::X => (&v.desc.proj_x, &e.proj_x, v.norms[1]),
        Axis::Y => (&v.desc.proj_y, &e.proj_y, v.norms[2]),
    };
    coeffs.resize(layout.dim_x, 0.0);
    poly1d_into(q, d, layout.dim_x, layout.dim_phi, coeffs);
    let (raw, i) = max_coeffs_1d(coeffs, g);
    (normalized(raw, norm_product(qn, e.norms.proj(v.kernel, axis))), i)
}

/// Per-variant 1D results of one entry on one axis.
fn axis_scores(
    index: &Index,
    bundle: &QueryBundle,
    grids: &GridFamily,
    entry: usize,
    axis: Axis,
    coeffs: &mut Vec<f64>,
) -> Vec<(f64, usize)> {
    let e = &index.entries[entry];
    bundle
        .variants
        .iter()
        .map(|v| axis_max(&index.layout, v, e, axis, &grids.for_scale(v.scale).real, coeffs))
        .collect()
}

fn combine(
    index: &Index,
    bundle: &QueryBundle,
    grids: &GridFamily,
    entry: usize,
    xs: &[(f64, usize)],
    ys: &[(f64, usize)],
) -> RankedResult {
    let mut best = 0;
    for k in 1..xs.len() {
        if xs[k].0 + ys[k].0 > xs[best].0 + ys[best].0 {
            best = k;
        }
    }
    let v = &bundle.variants[best];
    let g = &grids.for_scale(v.scale).real.grid;
    RankedResult {
        id: index.entries[entry].id.clone(),
        entry,
        score: xs[best].0 + ys[best].0,
        scale: v.scale,
        mirror: v.mirror,
        dx: g.offsets[xs[best].1],
        dy: g.offsets[ys[best].1],
        stage: Stage::Projection,
    }
}

/// `S̄_x + S̄_y` per entry, maximized over variants.
pub fn rank_projections(
    index: &Index,
    bundle: &QueryBundle,
    grids: &GridFamily,
) -> Result<Vec<RankedResult>> {
    check(index, bundle)?;
    let mut out: Vec<RankedResult> = (0..index.len())
        .into_par_iter()
        .map_init(Vec::new, |c, i| {
            let xs = axis_scores(index, bundle, grids, i, Axis::X, c);
            let ys = axis_scores(index, bundle, grids, i, Axis::Y, c);
            combine(index, bundle, grids, i, &xs, &ys)
        })
        .collect();
    sort_results(&mut out);
    Ok(out)
}

/// The axis along which the query spreads more.
pub fn discriminative_axis(bundle: &QueryBundle) -> Axis {
    if bundle.var_x >= bundle.var_y {
        Axis::X
    } else {
        Axis::Y
    }
}

/// Full ordering produced by the discriminative-first strategy: the top
/// `shortlist` by summed score, the rest of the pre-shortlist by summed
/// score, then everything else by the first-axis score.
pub(crate) fn discriminative_first_ordering(
    index: &Index,
    bundle: &QueryBundle,
    grids: &GridFamily,
    shortlist: usize,
    pre_factor: usize,
) -> Result<Vec<RankedResult>> {
    check(index, bundle)?;
    if shortlist == 0 {
        return Err(AfmError::InvalidParameter("shortlist size must be ≥ 1".into()));
    }
    let first = discriminative_axis(bundle);
    let second = match first {
        Axis::X => Axis::Y,
        Axis::Y => Axis::X,
    };
    let firsts: Vec<Vec<(f64, usize)>> = (0..index.len())
        .into_par_iter()
        .map_init(Vec::new, |c, i| axis_scores(index, bundle, grids, i, first, c))
        .collect();
    let first_best = |i: usize| firsts[i].iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..index.len()).collect();
    order.sort_by(|&a, &b| {
        first_best(b)
            .partial_cmp(&first_best(a))
            .unwrap_or(Ordering::Equal)
            .then_with(|| index.entries[a].id.cmp(&index.entries[b].id))
    });
    let pre = (pre_factor.max(1) * shortlist).min(index.len());
    let mut head: Vec<RankedResult> = order[..pre]
        .par_iter()
        .map_init(Vec::new, |c, &i| {
            let seconds = axis_scores(index, bundle, grids, i, second, c);
            match first {
                Axis::X => combine(index, bundle, grids, i, &firsts[i], &seconds),
                Axis::Y => combine(index, bundle, grids, i, &seconds, &firsts[i]),
            }
        })
        .collect();
    sort_results(&mut head);
    let tail = order[pre..].iter().map(|&i| {
        let (k, &(score, gi)) = firsts[i]
            .iter()
            .enumerate()
            .fold((0, &firsts[i][0]), |b, (k, p)| if p.0 > b.1 .0 { (k, p) } else { b });
        let v = &bundle.variants[k];
        let off = grids.for_scale(v.scale).real.grid.offsets[gi];
        let (dx, dy) = match first {
            Axis::X => (off, 0),
            Axis::Y => (0, off),
        };
        RankedResult {
            id: index.entries[i].id.clone(),
            entry: i,
            score,
            scale: v.scale,
            mirror: v.mirror,
            dx,
            dy,
            stage: Stage::Projection,
        }
    });
    head.extend(tail);
    Ok(head)
}

/// Ranks everything by the query's higher-variance axis, scores the second
/// axis on the top `pre_factor·S` only and returns the best `S`.
pub fn rank_discriminative_first(
    index: &Index,
    bundle: &QueryBundle,
    grids: &GridFamily,
    shortlist: usize,
    pre_factor: usize,
) -> Result<Vec<RankedResult>> {
    let mut all = discriminative_first_ordering(index, bundle, grids, shortlist, pre_factor)?;
    all.truncate(shortlist.min(index.len()));
    Ok(all)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RerankMethod {
    /// Full-grid 2D polynomial over all variants.
    Xy,
    /// Binary surrogate argmax per variant, refined with the real
    /// polynomial on an `n × n` neighborhood.
    XyStar,
    /// Real polynomial on an `n × n` neighborhood of the ranking-stage 1D
    /// argmaxes, ranking-stage variant only.
    XOverY,
}

impl RerankMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            RerankMethod::Xy => "xy",
            RerankMethod::XyStar => "xy-star",
            RerankMethod::XOverY => "x-over-y",
        }
    }
}

impl std::str::FromStr for RerankMethod {
    type Err = AfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xy" | "S_xy" => Ok(RerankMethod::Xy),
            "xy-star" | "xy*" | "S_xy*" => Ok(RerankMethod::XyStar),
            "x-over-y" | "x/y" | "S_x/y" => Ok(RerankMethod::XOverY),
            _ => Err(AfmError::UnknownMethod(format!("re-ranking method `{s}`"))),
        }
    }
}

fn rerank_one(
    index: &Index,
    bundle: &QueryBundle,
    grids: &GridFamily,
    item: &RankedResult,
    method: RerankMethod,
    n: usize,
    scratch: &mut Scratch,
) -> RankedResult {
    let e = &index.entries[item.entry];
    match method {
        RerankMethod::Xy => best_full(index, bundle, grids, item.entry, scratch),
        RerankMethod::XyStar => {
            let mut best: Option<RankedResult> = None;
            for v in &bundle.variants {
                let g = grids.for_scale(v.scale);
                scratch.poly2d(&index.layout, v, e);
                let bits = binarize_coeffs(&scratch.coeffs);
                let (_, bx, by) = max_binary_bits(&bits, &g.binary);
                let (raw, ix, iy) = refine_coeffs(&scratch.coeffs, &g.real, (bx, by), n);
                let score = normalized(raw, norm_product(v.norms[0], e.norms.full(v.kernel)));
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(RankedResult {
                        id: e.id.clone(),
                        entry: item.entry,
                        score,
                        scale: v.scale,
                        mirror: v.mirror,
                        dx: g.real.grid.offsets[ix],
                        dy: g.real.grid.offsets[iy],
                        stage: Stage::BinaryRefined,
                    });
                }
            }
            best.expect("bundle has variants")
        }
        RerankMethod::XOverY => {
            let v = bundle
                .variants
                .iter()
                .find(|v| v.scale == item.scale && v.mirror == item.mirror)
                .unwrap_or(&bundle.variants[0]);
            let g = &grids.for_scale(v.scale).real;
            let locate = |d: i32| {
                g.grid
                    .offsets
                    .iter()
                    .position(|&o| o == d)
                    .unwrap_or(g.grid.center())
            };
            scratch.poly2d(&index.layout, v, e);
            let (raw, ix, iy) =
                refine_coeffs(&scratch.coeffs, g, (locate(item.dx), locate(item.dy)), n);
            RankedResult {
                id: e.id.clone(),
                entry: item.entry,
                score: normalized(raw, norm_product(v.norms[0], e.norms.full(v.kernel))),
                scale: v.scale,
                mirror: v.mirror,
                dx: g.grid.offsets[ix],
                dy: g.grid.offsets[iy],
                stage: Stage::Full,
            }
        }
    }
}

/// Re-scores a shortlist with the chosen 2D method.
pub fn rerank(
    index: &Index,
    bundle: &QueryBundle,
    grids: &GridFamily,
    shortlist: &[RankedResult],
    method: RerankMethod,
    n: usize,
) -> Result<Vec<RankedResult>> {
    check(index, bundle)?;
    if n.is_multiple_of(2) {
        return Err(AfmError::InvalidParameter(format!(
            "neighborhood size must be odd, got {n}"
        )));
    }
    let mut out: Vec<RankedResult> = shortlist
        .par_iter()
        .map_init(Scratch::default, |s, item| {
            rerank_one(index, bundle, grids, item, method, n, s)
        })
        .collect();
    sort_results(&mut out);
    Ok(out)
}

/// Average query expansion: the whole index is re-ranked by the inner
/// product of its aux vectors with the unit-normalized mean aux vector of
/// the top `top_n` results. Localization fields carry over from `ranked`;
/// equal scores keep their prior relative order.
pub fn average_qe(index: &Index, ranked: &[RankedResult], top_n: usize) -> Result<Vec<RankedResult>> {
    let aux = index
        .aux
        .as_ref()
        .ok_or_else(|| AfmError::QeUnavailable("index has no aux vectors".into()))?;
    if top_n == 0 {
        return Err(AfmError::InvalidParameter("top_n must be ≥ 1".into()));
    }
    if ranked.is_empty() {
        return Err(AfmError::EmptyIndex);
    }
    let dim = aux[0].len();
    let mut mean = vec![0.0; dim];
    let used = top_n.min(ranked.len());
    for r in &ranked[..used] {
        for (m, v) in mean.iter_mut().zip(&aux[r.entry]) {
            *m += v / used as f64;
        }
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        mean.iter_mut().for_each(|v| *v /= norm);
    }
    let prior: HashMap<usize, (usize, &RankedResult)> =
        ranked.iter().enumerate().map(|(k, r)| (r.entry, (k, r))).collect();
    let mut out: Vec<(usize, RankedResult)> = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let score: f64 = aux[i].iter().zip(&mean).map(|(a, b)| a * b).sum();
            let (pos, scale, mirror, dx, dy) = match prior.get(&i) {
                Some(&(k, r)) => (k, r.scale, r.mirror, r.dx, r.dy),
                None => (usize::MAX, 1.0, false, 0, 0),
            };
            (
                pos,
                RankedResult {
                    id: e.id.clone(),
                    entry: i,
                    score,
                    scale,
                    mirror,
                    dx,
                    dy,
                    stage: Stage::QueryExpansion,
                },
            )
        })
        .collect();
    out.sort_by(|(pa, a), (pb, b)| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(pa.cmp(pb))
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(out.into_iter().map(|(_, r)| r).collect())
}
