//! Contour points, raster/point-list ingestion and sketch descriptors.
//!
//! Coordinates are normalized so the longer image side spans `[0, π]`.
//! Orientation is kept on the full circle `[0, 2π)`.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{AfmError, Result};
use crate::feature_maps::{
    add_kron2, add_kron3, embed_1d_into, projection_subvector, Axis, EmbeddingLayout, MapMode,
    SpectraSet,
};

/// Points weaker than this are discarded.
pub const STRENGTH_THRESHOLD: f64 = 0.2;

/// Query scales, paired with spatial kernels narrowest-last.
pub const QUERY_SCALES: [f64; 3] = [1.0, 0.8, 0.6];

/// Spatial kernel used for a relative query scale: smaller scales use
/// narrower kernels.
pub fn kernel_for_scale(scale: f64) -> usize {
    if scale >= 0.9 {
        2
    } else if scale >= 0.7 {
        1
    } else {
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContourPoint {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub w: f64,
}

impl ContourPoint {
    pub fn new(x: f64, y: f64, phi: f64, w: f64) -> Self {
        Self { x, y, phi, w }
    }

    /// `x ↦ Λ − x`, `φ ↦ (π − φ) mod 2π`.
    pub fn mirrored(&self, lambda: f64) -> Self {
        Self {
            x: lambda - self.x,
            phi: wrap_angle(PI - self.phi),
            ..*self
        }
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Points in pixel units together with the canvas they were drawn on.
#[derive(Clone, Debug, PartialEq)]
pub struct PointList {
    pub width: u32,
    pub height: u32,
    pub points: Vec<ContourPoint>,
}

impl PointList {
    /// Strength-filtered points with the longer canvas side mapped to `π`.
    pub fn normalized(&self) -> Result<Vec<ContourPoint>> {
        let side = self.width.max(self.height).max(1) as f64;
        let f = PI / side;
        let pts: Vec<ContourPoint> = self
            .points
            .iter()
            .filter(|p| p.w >= STRENGTH_THRESHOLD)
            .map(|p| ContourPoint::new(p.x * f, p.y * f, wrap_angle(p.phi), p.w.min(1.0)))
            .collect();
        if pts.is_empty() {
            return Err(AfmError::EmptySketch);
        }
        Ok(pts)
    }
}

const POINTS_MAGIC: &str = "AFM-POINTS";

pub fn read_pointlist<R: BufRead>(r: R) -> Result<PointList> {
    let mut lines = r.lines().enumerate();
    let (width, height) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(AfmError::EmptySketch);
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        break parse_points_header(&line, i + 1)?;
    };
    let mut points = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = t
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| AfmError::parse(i + 1, format!("{e}")))?;
        if vals.len() != 4 || vals.iter().any(|v| !v.is_finite()) {
            return Err(AfmError::parse(i + 1, "expected `x y phi w`"));
        }
        points.push(ContourPoint::new(vals[0], vals[1], vals[2], vals[3]));
    }
    Ok(PointList {
        width,
        height,
        points,
    })
}

fn parse_points_header(line: &str, lineno: usize) -> Result<(u32, u32)> {
    let mut toks = line.split_whitespace();
    if toks.next() != Some(POINTS_MAGIC) || toks.next() != Some("v1") {
        return Err(AfmError::parse(lineno, "expected `AFM-POINTS v1` header"));
    }
    let (mut w, mut h) = (None, None);
    for t in toks {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| AfmError::parse(lineno, format!("bad header field `{t}`")))?;
        let v: u32 = v
            .parse()
            .map_err(|_| AfmError::parse(lineno, format!("bad value in `{t}`")))?;
        match k {
            "width" => w = Some(v),
            "height" => h = Some(v),
            _ => return Err(AfmError::parse(lineno, format!("unknown field `{k}`"))),
        }
    }
    match (w, h) {
        (Some(w), Some(h)) if w > 0 && h > 0 => Ok((w, h)),
        _ => Err(AfmError::parse(lineno, "header needs positive width and height")),
    }
}

pub fn write_pointlist<W: Write>(mut w: W, list: &PointList) -> Result<()> {
    writeln!(
        w,
        "{POINTS_MAGIC} v1 width={} height={}",
        list.width, list.height
    )?;
    for p in &list.points {
        writeln!(w, "{} {} {} {}", p.x, p.y, p.phi, p.w)?;
    }
    Ok(())
}

/// Reads a point-list file and normalizes it.
pub fn ingest_pointlist<R: BufRead>(r: R) -> Result<Vec<ContourPoint>> {
    read_pointlist(r)?.normalized()
}

/// Per-pixel edge strength in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct StrengthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl StrengthMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Parses PBM (`P1`/`P4`, 1 = ink = strength 1) and PGM (`P2`/`P5`,
/// strength = value / maxval).
pub fn read_pnm(bytes: &[u8]) -> Result<StrengthMap> {
    let mut cur = PnmCursor { bytes, pos: 0 };
    let magic = cur.token()?;
    let binary_bitmap = matches!(magic.as_str(), "P1" | "P4");
    if !matches!(magic.as_str(), "P1" | "P2" | "P4" | "P5") {
        return Err(AfmError::Format(format!("unsupported image magic `{magic}`")));
    }
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval = if binary_bitmap { 1 } else { cur.number()? };
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(AfmError::Format("bad image dimensions".into()));
    }
    let n = width * height;
    let mut data = Vec::with_capacity(n);
    match magic.as_str() {
        "P1" => {
            while data.len() < n {
                cur.skip_ws_and_comments();
                let b = cur.next_byte()?;
                match b {
                    b'0' => data.push(0.0),
                    b'1' => data.push(1.0),
                    _ => return Err(AfmError::Format("bad P1 pixel".into())),
                }
            }
        }
        "P2" => {
            for _ in 0..n {
                data.push((cur.number()?.min(maxval)) as f64 / maxval as f64);
            }
        }
        "P4" => {
            cur.pos += 1; // single whitespace after header
            let stride = width.div_ceil(8);
            let raw = cur.take(stride * height)?;
            for y in 0..height {
                for x in 0..width {
                    let byte = raw[y * stride + x / 8];
                    let bit = (byte >> (7 - (x % 8))) & 1;
                    data.push(bit as f64);
                }
            }
        }
        "P5" => {
            cur.pos += 1;
            if maxval < 256 {
                for &b in cur.take(n)? {
                    data.push((b as usize).min(maxval) as f64 / maxval as f64);
                }
            } else {
                for c in cur.take(2 * n)?.chunks_exact(2) {
                    let v = u16::from_be_bytes([c[0], c[1]]) as usize;
                    data.push(v.min(maxval) as f64 / maxval as f64);
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(StrengthMap {
        width,
        height,
        data,
    })
}

struct PnmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PnmCursor<'_> {
    fn skip_ws_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<String> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace())
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(AfmError::Format("truncated image header".into()));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<usize> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| AfmError::Format(format!("bad number `{t}` in image")))
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| AfmError::Format("truncated image data".into()))?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(AfmError::Format("truncated image data".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

fn gaussian_blur(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let (w, h) = (width as isize, height as isize);
    let clamp = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[(y * w + x) as usize] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * data[(y * w) as usize + clamp(x + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            out[(y * w + x) as usize] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[clamp(y + k as isize - r, h) * w as usize + x as usize])
                .sum();
        }
    }
    out
}

/// Contour points of a strength map, in pixel units.
///
/// Orientation comes from central-difference gradients of the σ = 1 px
/// smoothed map. On the ridge of a thin stroke the gradient vanishes, so the
/// axis is taken from the smoothed structure tensor and only its polarity
/// from the gradient itself.
pub fn rasterize(map: &StrengthMap) -> Result<PointList> {
    let (w, h) = (map.width, map.height);
    let smooth = gaussian_blur(&map.data, w, h, 1.0);
    let at = |x: usize, y: usize| smooth[y * w + x];
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            gx[y * w + x] = (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y)) * 0.5;
            gy[y * w + x] = (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1))) * 0.5;
        }
    }
    let prod = |f: &dyn Fn(usize) -> f64| (0..w * h).map(f).collect::<Vec<f64>>();
    let jxx = gaussian_blur(&prod(&|i| gx[i] * gx[i]), w, h, 1.0);
    let jxy = gaussian_blur(&prod(&|i| gx[i] * gy[i]), w, h, 1.0);
    let jyy = gaussian_blur(&prod(&|i| gy[i] * gy[i]), w, h, 1.0);
    let mut points = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let s = map.data[i];
            if s < STRENGTH_THRESHOLD {
                continue;
            }
            let mut theta = 0.5 * (2.0 * jxy[i]).atan2(jxx[i] - jyy[i]);
            let g = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
            if g > 1e-9 && gx[i] * theta.cos() + gy[i] * theta.sin() < 0.0 {
                theta += PI;
            }
            points.push(ContourPoint::new(x as f64, y as f64, wrap_angle(theta), s.min(1.0)));
        }
    }
    if points.is_empty() {
        return Err(AfmError::EmptySketch);
    }
    Ok(PointList {
        width: w as u32,
        height: h as u32,
        points,
    })
}

/// Normalized contour points of a PBM/PGM image.
pub fn rasterize_pbm(bytes: &[u8]) -> Result<Vec<ContourPoint>> {
    rasterize(&read_pnm(bytes)?)?.normalized()
}

/// Loads a point list (`AFM-POINTS`) or a PBM/PGM raster, in pixel units.
pub fn load_sketch_file(path: &Path) -> Result<PointList> {
    let bytes = std::fs::read(path).map_err(|e| AfmError::file(path, e))?;
    if bytes.starts_with(POINTS_MAGIC.as_bytes()) {
        read_pointlist(bytes.as_slice())
    } else if bytes.first() == Some(&b'P') {
        rasterize(&read_pnm(&bytes)?)
    } else {
        Err(AfmError::Format(format!(
            "{}: neither a point list nor a PBM/PGM image",
            path.display()
        )))
    }
}

/// Norms of the √α-weighted descriptors, `(full, x, y)` per kernel,
/// narrowest kernel first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormBlock(pub [f64; 9]);

impl NormBlock {
    pub fn full(&self, kernel: usize) -> f64 {
        self.0[3 * kernel]
    }

    pub fn proj(&self, kernel: usize, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.0[3 * kernel + 1],
            Axis::Y => self.0[3 * kernel + 2],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DescriptorMeta {
    pub id: String,
    pub scale: f64,
    pub mirror: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SketchDescriptor {
    pub full: Vec<f64>,
    pub proj_x: Vec<f64>,
    pub proj_y: Vec<f64>,
    pub mode: MapMode,
    /// Present for database-mode descriptors.
    pub norms: Option<NormBlock>,
    pub meta: DescriptorMeta,
}

/// `Σ_p w_p · embedding(p)` for the full vector and both projections.
pub fn build_descriptor(
    points: &[ContourPoint],
    layout: &EmbeddingLayout,
    spectra: &SpectraSet,
    mode: MapMode,
) -> Result<SketchDescriptor> {
    if points.is_empty() {
        return Err(AfmError::EmptySketch);
    }
    let (dx, dp) = (layout.dim_x, layout.dim_phi);
    if spectra.spatial.dim() != dx || spectra.orientation.dim() != dp {
        return Err(AfmError::LayoutMismatch(
            "spectra do not match the embedding layout".into(),
        ));
    }
    let mut full = vec![0.0; layout.full_dim()];
    let mut proj_x = vec![0.0; layout.proj_dim()];
    let mut proj_y = vec![0.0; layout.proj_dim()];
    let (mut ex, mut ey, mut ep) = (vec![0.0; dx], vec![0.0; dx], vec![0.0; dp]);
    for p in points {
        embed_1d_into(p.x, &spectra.spatial, mode, &mut ex);
        embed_1d_into(p.y, &spectra.spatial, mode, &mut ey);
        embed_1d_into(p.phi, &spectra.orientation, mode, &mut ep);
        add_kron3(&mut full, p.w, &ex, &ey, &ep);
        if mode != MapMode::Database {
            add_kron2(&mut proj_x, p.w, &ex, &ep);
            add_kron2(&mut proj_y, p.w, &ey, &ep);
        }
    }
    let mut norms = None;
    if mode == MapMode::Database {
        proj_x = projection_subvector(&full, Axis::X, layout);
        proj_y = projection_subvector(&full, Axis::Y, layout);
        norms = Some(compute_norms(&full, layout, spectra));
    }
    Ok(SketchDescriptor {
        full,
        proj_x,
        proj_y,
        mode,
        norms,
        meta: DescriptorMeta {
            scale: 1.0,
            ..Default::default()
        },
    })
}

/// Per-component `α_x·α_y·α_φ` of kernel `i` over the full layout.
pub fn full_weights(layout: &EmbeddingLayout, spectra: &SpectraSet, kernel: usize) -> Vec<f64> {
    let (ax, ap) = (spectra.spatial_alpha(kernel), spectra.orientation_alpha(kernel));
    let mut out = vec![0.0; layout.full_dim()];
    add_kron3(&mut out, 1.0, &ax, &ax, &ap);
    out
}

/// Per-component `α_x·α_φ` of kernel `i` over the projection layout.
pub fn proj_weights(layout: &EmbeddingLayout, spectra: &SpectraSet, kernel: usize) -> Vec<f64> {
    let (ax, ap) = (spectra.spatial_alpha(kernel), spectra.orientation_alpha(kernel));
    let mut out = vec![0.0; layout.proj_dim()];
    add_kron2(&mut out, 1.0, &ax, &ap);
    out
}

fn weighted_norm(v: &[f64], alpha: &[f64]) -> f64 {
    v.iter()
        .zip(alpha)
        .map(|(x, a)| a * x * x)
        .sum::<f64>()
        .sqrt()
}

/// Norms of the symmetric-map descriptors, recovered from an unweighted
/// (database-mode) full vector.
pub fn compute_norms(full: &[f64], layout: &EmbeddingLayout, spectra: &SpectraSet) -> NormBlock {
    let px = projection_subvector(full, Axis::X, layout);
    let py = projection_subvector(full, Axis::Y, layout);
    let mut out = [0.0; 9];
    for k in 0..3.min(spectra.nkernels()) {
        let fw = full_weights(layout, spectra, k);
        let pw = proj_weights(layout, spectra, k);
        out[3 * k] = weighted_norm(full, &fw);
        out[3 * k + 1] = weighted_norm(&px, &pw);
        out[3 * k + 2] = weighted_norm(&py, &pw);
    }
    NormBlock(out)
}

/// Where the query crop came from, for mapping boxes back.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropInfo {
    /// Bounding box of the input points in input units.
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryVariant {
    pub scale: f64,
    pub mirror: bool,
    pub kernel: usize,
    /// Query-mode descriptor with explicit projections.
    pub desc: SketchDescriptor,
    /// `(full, x, y)` norms of the symmetric-map query for `kernel`.
    pub norms: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryBundle {
    pub variants: Vec<QueryVariant>,
    /// Coordinate variances of the unmirrored scale-1 points.
    pub var_x: f64,
    pub var_y: f64,
    pub crop: CropInfo,
}

/// Tight crop: the bounding box is centered at `(π/2, π/2)` with its longer
/// side spanning `π`.
pub fn tight_crop(points: &[ContourPoint]) -> Result<(Vec<ContourPoint>, CropInfo)> {
    if points.is_empty() {
        return Err(AfmError::EmptySketch);
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let side = (x1 - x0).max(y1 - y0);
    let f = if side > 0.0 { PI / side } else { 1.0 };
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let out = points
        .iter()
        .map(|p| ContourPoint::new((p.x - cx) * f + PI / 2.0, (p.y - cy) * f + PI / 2.0, p.phi, p.w))
        .collect();
    Ok((
        out,
        CropInfo {
            x0,
            y0,
            width: x1 - x0,
            height: y1 - y0,
        },
    ))
}

/// Scales cropped points about the frame center `(π/2, π/2)`.
pub fn scale_about_center(points: &[ContourPoint], s: f64) -> Vec<ContourPoint> {
    let c = PI / 2.0;
    points
        .iter()
        .map(|p| ContourPoint::new(c + s * (p.x - c), c + s * (p.y - c), p.phi, p.w))
        .collect()
}

pub fn mirror_points(points: &[ContourPoint]) -> Vec<ContourPoint> {
    points.iter().map(|p| p.mirrored(PI)).collect()
}

fn variance(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = vals.clone().count() as f64;
    let mean = vals.clone().sum::<f64>() / n;
    vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Query-mode descriptor for `kernel` derived from a database-mode one:
/// query weighting is a per-component product with `α`.
pub fn to_query_mode(
    db: &SketchDescriptor,
    layout: &EmbeddingLayout,
    spectra: &SpectraSet,
    kernel: usize,
) -> SketchDescriptor {
    let fw = full_weights(layout, spectra, kernel);
    let pw = proj_weights(layout, spectra, kernel);
    let mul = |v: &[f64], w: &[f64]| v.iter().zip(w).map(|(a, b)| a * b).collect::<Vec<_>>();
    SketchDescriptor {
        full: mul(&db.full, &fw),
        proj_x: mul(&db.proj_x, &pw),
        proj_y: mul(&db.proj_y, &pw),
        mode: MapMode::Query(kernel),
        norms: None,
        meta: db.meta.clone(),
    }
}

/// Six query variants: scales `{1.0, 0.8, 0.6}` × mirror `{no, yes}`.
pub fn prepare_query(
    points: &[ContourPoint],
    layout: &EmbeddingLayout,
    spectra: &SpectraSet,
) -> Result<QueryBundle> {
    let (cropped, crop) = tight_crop(points)?;
    let var_x = variance(cropped.iter().map(|p| p.x));
    let var_y = variance(cropped.iter().map(|p| p.y));
    let mut variants = Vec::with_capacity(6);
    for &scale in &QUERY_SCALES {
        let kernel = kernel_for_scale(scale).min(spectra.nkernels() - 1);
        let scaled = scale_about_center(&cropped, scale);
        for mirror in [false, true] {
            let pts = if mirror {
                mirror_points(&scaled)
            } else {
                scaled.clone()
            };
            let db = build_descriptor(&pts, layout, spectra, MapMode::Database)?;
            let nb = db.norms.expect("database descriptors carry norms");
            let mut desc = to_query_mode(&db, layout, spectra, kernel);
            desc.meta = DescriptorMeta {
                id: String::new(),
                scale,
                mirror,
            };
            variants.push(QueryVariant {
                scale,
                mirror,
                kernel,
                desc,
                norms: [nb.full(kernel), nb.proj(kernel, Axis::X), nb.proj(kernel, Axis::Y)],
            });
        }
    }
    Ok(QueryBundle {
        variants,
        var_x,
        var_y,
        crop,
    })
}

/// One-byte codes of a full descriptor over `[−m, m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedDescriptor {
    pub codes: Vec<u8>,
    pub scale: f32,
    /// Norms of the dequantized vector.
    pub norms: NormBlock,
}

/// Zero maps to this code when `m = 0`.
pub const QUANT_MIDPOINT: u8 = 128;

pub fn quantize_values(v: &[f64]) -> (Vec<u8>, f32) {
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs())) as f32;
    if m == 0.0 {
        return (vec![QUANT_MIDPOINT; v.len()], 0.0);
    }
    let m64 = m as f64;
    let codes = v
        .iter()
        .map(|x| (((x + m64) / (2.0 * m64)) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    (codes, m)
}

pub fn dequantize_values(codes: &[u8], m: f32) -> Vec<f64> {
    if m == 0.0 {
        return vec![0.0; codes.len()];
    }
    let m = m as f64;
    codes
        .iter()
        .map(|&c| c as f64 / 255.0 * 2.0 * m - m)
        .collect()
}

pub fn quantize_u8(
    desc: &SketchDescriptor,
    layout: &EmbeddingLayout,
    spectra: &SpectraSet,
) -> Result<QuantizedDescriptor> {
    if desc.mode != MapMode::Database {
        return Err(AfmError::InvalidParameter(
            "only database descriptors are quantized".into(),
        ));
    }
    let (codes, scale) = quantize_values(&desc.full);
    let norms = compute_norms(&dequantize_values(&codes, scale), layout, spectra);
    Ok(QuantizedDescriptor {
        codes,
        scale,
        norms,
    })
}

pub fn dequantize_u8(q: &QuantizedDescriptor, layout: &EmbeddingLayout) -> SketchDescriptor {
    let full = dequantize_values(&q.codes, q.scale);
    SketchDescriptor {
        proj_x: projection_subvector(&full, Axis::X, layout),
        proj_y: projection_subvector(&full, Axis::Y, layout),
        full,
        mode: MapMode::Database,
        norms: Some(q.norms),
        meta: DescriptorMeta {
            scale: 1.0,
            ..Default::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointlist_normalization_example() {
        let text = "AFM-POINTS v1 width=400 height=300\n10 20 1.25 0.9\n5 5 0 0.1\n";
        let pts = ingest_pointlist(text.as_bytes()).unwrap();
        assert_eq!(pts.len(), 1);
        let p = pts[0];
        assert!((p.x - 10.0 * PI / 400.0).abs() < 1e-15);
        assert!((p.y - 20.0 * PI / 400.0).abs() < 1e-15);
        assert_eq!(p.phi, 1.25);
        assert_eq!(p.w, 0.9);
    }

    #[test]
    fn pointlist_errors() {
        assert!(matches!(
            ingest_pointlist("".as_bytes()),
            Err(AfmError::EmptySketch)
        ));
        assert!(matches!(
            ingest_pointlist("AFM-POINTS v1 width=4 height=4\n".as_bytes()),
            Err(AfmError::EmptySketch)
        ));
        let bad = "AFM-POINTS v1 width=4 height=4\n1 2 3 1\n1 2 x 1\n";
        match ingest_pointlist(bad.as_bytes()) {
            Err(AfmError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ingest_pointlist("HELLO\n".as_bytes()),
            Err(AfmError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn pointlist_round_trip() {
        let list = PointList {
            width: 40,
            height: 30,
            points: vec![
                ContourPoint::new(1.5, 2.25, 0.1, 1.0),
                ContourPoint::new(3.0, 4.0, 6.0, 0.5),
            ],
        };
        let mut a = Vec::new();
        write_pointlist(&mut a, &list).unwrap();
        let back = read_pointlist(a.as_slice()).unwrap();
        assert_eq!(back, list);
        let mut b = Vec::new();
        write_pointlist(&mut b, &back).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pnm_variants_agree() {
        let p1 = b"P1\n# c\n3 2\n0 1 0\n1 1 1\n";
        let p4 = [b"P4\n3 2\n".as_slice(), &[0b0100_0000, 0b1110_0000]].concat();
        let p2 = b"P2\n3 2\n255\n0 255 0\n255 255 255\n";
        let p5 = [b"P5\n3 2\n255\n".as_slice(), &[0, 255, 0, 255, 255, 255]].concat();
        let want = vec![0.0, 1.0, 0.0, 1.0, 1.0, 1.0];
        for bytes in [p1.as_slice(), &p4, p2, &p5] {
            let m = read_pnm(bytes).unwrap();
            assert_eq!((m.width, m.height), (3, 2));
            assert_eq!(m.data, want);
        }
        assert!(matches!(read_pnm(b"P6\n1 1\n255\n"), Err(AfmError::Format(_))));
        assert!(matches!(read_pnm(b"P5\n4 4\n255\n"), Err(AfmError::Format(_))));
    }

    fn pbm(w: usize, h: usize, on: impl Fn(usize, usize) -> bool) -> Vec<u8> {
        let mut s = format!("P1\n{w} {h}\n");
        for y in 0..h {
            for x in 0..w {
                s.push(if on(x, y) { '1' } else { '0' });
                s.push(' ');
            }
            s.push('\n');
        }
        s.into_bytes()
    }

    #[test]
    fn vertical_line_has_horizontal_gradients() {
        let img = pbm(21, 21, |x, y| x == 10 && (3..18).contains(&y));
        let pts = rasterize_pbm(&img).unwrap();
        assert_eq!(pts.len(), 15);
        for p in pts {
            let d0 = p.phi.min(TAU - p.phi);
            let dpi = (p.phi - PI).abs();
            assert!(d0.min(dpi) < 0.3, "phi {}", p.phi);
        }
    }

    #[test]
    fn blank_image_is_empty_sketch() {
        let img = pbm(8, 8, |_, _| false);
        assert!(matches!(rasterize_pbm(&img), Err(AfmError::EmptySketch)));
    }

    #[test]
    fn disc_boundary_orientations_cover_the_circle() {
        let (c, r) = (40.0, 25.0);
        let img = pbm(81, 81, |x, y| {
            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
            (d - r).abs() < 1.0
        });
        let pts = rasterize_pbm(&img).unwrap();
        let mut hist = [0usize; 8];
        for p in &pts {
            hist[((p.phi / TAU * 8.0) as usize).min(7)] += 1;
        }
        let mean = pts.len() as f64 / 8.0;
        for h in hist {
            assert!((h as f64 - mean).abs() < 0.35 * mean, "{hist:?}");
        }
    }

    #[test]
    fn scale_kernel_pairing() {
        assert_eq!(kernel_for_scale(1.0), 2);
        assert_eq!(kernel_for_scale(0.8), 1);
        assert_eq!(kernel_for_scale(0.6), 0);
    }

    #[test]
    fn quantizer_bounds() {
        let (codes, m) = quantize_values(&[0.0; 5]);
        assert_eq!(codes, vec![QUANT_MIDPOINT; 5]);
        assert_eq!(dequantize_values(&codes, m), vec![0.0; 5]);
        let v = [0.3, -1.7, 0.0, 1.7, 0.912];
        let (codes, m) = quantize_values(&v);
        assert_eq!(codes[1], 0);
        assert_eq!(codes[3], 255);
        for (a, b) in v.iter().zip(dequantize_values(&codes, m)) {
            assert!((a - b).abs() <= m as f64 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn crop_centers_and_fills_frame() {
        let pts = vec![
            ContourPoint::new(10.0, 50.0, 0.0, 1.0),
            ContourPoint::new(30.0, 60.0, 1.0, 1.0),
        ];
        let (c, info) = tight_crop(&pts).unwrap();
        assert_eq!((info.width, info.height), (20.0, 10.0));
        assert!((c[0].x - 0.0).abs() < 1e-12 && (c[1].x - PI).abs() < 1e-12);
        assert!((c[0].y - PI / 4.0).abs() < 1e-12 && (c[1].y - 3.0 * PI / 4.0).abs() < 1e-12);
    }
}
