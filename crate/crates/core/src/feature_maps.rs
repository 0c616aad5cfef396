//! Explicit feature maps of scalars and their tensor products over contour
//! points.
//!
//! Every axis embedding lists, per frequency `ω` in ascending order, the
//! cosine and then the sine component, skipping the sine of `ω = 0`. A
//! point embedding is the Kronecker product `x ⊗ y ⊗ φ`, so the full index
//! of `(ix, iy, iφ)` is `(ix·D_x + iy)·D_φ + iφ`.

use crate::descriptor::ContourPoint;
use crate::error::{AfmError, Result};
use crate::kernel_lab::Spectrum;

/// Which side of an (a)symmetric map a vector belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MapMode {
    /// `√α` on both sides.
    Symmetric(usize),
    /// `α` on the query side, selecting kernel `i`.
    Query(usize),
    /// Weight-free database side, shared by every kernel.
    Database,
}

impl MapMode {
    pub fn kernel(&self) -> Option<usize> {
        match *self {
            MapMode::Symmetric(i) | MapMode::Query(i) => Some(i),
            MapMode::Database => None,
        }
    }
}

/// Spatial spectrum (one row per kernel) plus the orientation spectrum.
///
/// A single-row orientation spectrum serves every kernel index.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectraSet {
    pub spatial: Spectrum,
    pub orientation: Spectrum,
}

/// Spectra shipped with the crate: the joint fit of the three spatial
/// kernels at `|Ω_x| = 5` and two orientation harmonics.
pub const DEFAULT_SPECTRA: &str = include_str!("../data/default_spectra.txt");

impl SpectraSet {
    /// The bundled default, giving the 243-dimensional descriptor.
    pub fn default_set() -> Self {
        Self::parse(DEFAULT_SPECTRA.as_bytes()).expect("bundled spectra parse")
    }

    /// Reads a spectra file holding the spatial block followed by the
    /// orientation block.
    pub fn parse<R: std::io::BufRead>(r: R) -> Result<Self> {
        let mut blocks = crate::kernel_lab::read_spectra(r)?;
        if blocks.len() != 2 {
            return Err(AfmError::Format(format!(
                "expected a spatial and an orientation spectrum, found {} blocks",
                blocks.len()
            )));
        }
        let orientation = blocks.pop().unwrap();
        let spatial = blocks.pop().unwrap();
        Self::new(spatial, orientation)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| AfmError::file(path, e))?;
        Self::parse(std::io::BufReader::new(f))
    }

    pub fn write<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        crate::kernel_lab::write_spectrum(&mut w, &self.spatial)?;
        crate::kernel_lab::write_spectrum(&mut w, &self.orientation)
    }

    pub fn new(spatial: Spectrum, orientation: Spectrum) -> Result<Self> {
        if orientation.nkernels() != 1 && orientation.nkernels() != spatial.nkernels() {
            return Err(AfmError::InvalidParameter(format!(
                "orientation spectrum has {} kernels, expected 1 or {}",
                orientation.nkernels(),
                spatial.nkernels()
            )));
        }
        Ok(Self {
            spatial,
            orientation,
        })
    }

    pub fn nkernels(&self) -> usize {
        self.spatial.nkernels()
    }

    pub fn layout(&self) -> EmbeddingLayout {
        EmbeddingLayout::new(
            self.spatial.frequencies.clone(),
            self.orientation.frequencies.clone(),
        )
    }

    /// Per-component weights of the spatial axis for kernel `i` (`α`,
    /// expanded to cos/sin slots).
    pub fn spatial_alpha(&self, kernel: usize) -> Vec<f64> {
        slot_weights(&self.spatial, kernel)
    }

    pub fn orientation_alpha(&self, kernel: usize) -> Vec<f64> {
        slot_weights(&self.orientation, kernel)
    }
}

fn row_for(spec: &Spectrum, kernel: usize) -> &[f64] {
    if spec.nkernels() == 1 {
        &spec.weights[0]
    } else {
        &spec.weights[kernel]
    }
}

fn slot_weights(spec: &Spectrum, kernel: usize) -> Vec<f64> {
    let row = row_for(spec, kernel);
    let mut out = Vec::with_capacity(spec.dim());
    out.push(row[0]);
    for &a in &row[1..] {
        out.push(a);
        out.push(a);
    }
    out
}

/// Frequencies of both axes and the derived dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingLayout {
    pub omega_x: Vec<f64>,
    pub omega_phi: Vec<f64>,
    pub dim_x: usize,
    pub dim_phi: usize,
}

impl EmbeddingLayout {
    pub fn new(omega_x: Vec<f64>, omega_phi: Vec<f64>) -> Self {
        let dim_x = 2 * omega_x.len() - 1;
        let dim_phi = 2 * omega_phi.len() - 1;
        Self {
            omega_x,
            omega_phi,
            dim_x,
            dim_phi,
        }
    }

    /// Layout with the given frequency counts; only the counts matter for
    /// dimensions, so the frequencies are placeholders `0, 1, 2, …`.
    pub fn with_counts(nx: usize, nphi: usize) -> Self {
        Self::new(
            (0..nx).map(|k| k as f64).collect(),
            (0..nphi).map(|k| k as f64).collect(),
        )
    }

    pub fn counts(&self) -> (usize, usize) {
        (self.omega_x.len(), self.omega_phi.len())
    }

    pub fn full_dim(&self) -> usize {
        self.dim_x * self.dim_x * self.dim_phi
    }

    pub fn proj_dim(&self) -> usize {
        self.dim_x * self.dim_phi
    }

    /// Coefficients of the 1D translation polynomial.
    pub fn n1(&self) -> usize {
        self.dim_x
    }

    /// Nonzero coefficients of the 2D translation polynomial,
    /// `4(m−1)² + 4(m−1) + 1` for `m = |Ω_x|`.
    pub fn n2(&self) -> usize {
        let m = self.omega_x.len() - 1;
        4 * m * m + 4 * m + 1
    }

    pub fn full_index(&self, ix: usize, iy: usize, iphi: usize) -> usize {
        (ix * self.dim_x + iy) * self.dim_phi + iphi
    }

    /// Same frequency counts and values.
    pub fn check_compatible(&self, other: &EmbeddingLayout) -> Result<()> {
        if self != other {
            return Err(AfmError::LayoutMismatch(format!(
                "{:?} vs {:?}",
                self.counts(),
                other.counts()
            )));
        }
        Ok(())
    }
}

/// Axis slot of frequency index `j` and part (`false` = cos, `true` = sin).
pub fn axis_slot(j: usize, sine: bool) -> usize {
    match (j, sine) {
        (0, false) => 0,
        (0, true) => panic!("the zero frequency has no sine slot"),
        (j, false) => 2 * j - 1,
        (j, true) => 2 * j,
    }
}

fn mode_weight(a: f64, mode: MapMode) -> f64 {
    match mode {
        MapMode::Symmetric(_) => a.sqrt(),
        MapMode::Query(_) => a,
        MapMode::Database => 1.0,
    }
}

/// Writes the embedding of `value` into `out` (length `2|Ω| − 1`).
pub fn embed_1d_into(value: f64, spec: &Spectrum, mode: MapMode, out: &mut [f64]) {
    debug_assert_eq!(out.len(), spec.dim());
    let kernel = mode.kernel().unwrap_or(0);
    let row = row_for(spec, kernel);
    out[0] = mode_weight(row[0], mode);
    for (j, (&w, &a)) in spec.frequencies.iter().zip(row).enumerate().skip(1) {
        let k = mode_weight(a, mode);
        let (s, c) = (w * value).sin_cos();
        out[2 * j - 1] = k * c;
        out[2 * j] = k * s;
    }
}

pub fn embed_1d(value: f64, spec: &Spectrum, mode: MapMode) -> Vec<f64> {
    let mut out = vec![0.0; spec.dim()];
    embed_1d_into(value, spec, mode, &mut out);
    out
}

/// Adds `scale · a ⊗ b ⊗ c` to `out`.
pub(crate) fn add_kron3(out: &mut [f64], scale: f64, a: &[f64], b: &[f64], c: &[f64]) {
    let bc = b.len() * c.len();
    for (i, &ai) in a.iter().enumerate() {
        let sa = scale * ai;
        let block = &mut out[i * bc..(i + 1) * bc];
        for (j, &bj) in b.iter().enumerate() {
            let sab = sa * bj;
            for (o, &ck) in block[j * c.len()..(j + 1) * c.len()].iter_mut().zip(c) {
                *o += sab * ck;
            }
        }
    }
}

/// Adds `scale · a ⊗ c` to `out`.
pub(crate) fn add_kron2(out: &mut [f64], scale: f64, a: &[f64], c: &[f64]) {
    for (i, &ai) in a.iter().enumerate() {
        let sa = scale * ai;
        for (o, &ck) in out[i * c.len()..(i + 1) * c.len()].iter_mut().zip(c) {
            *o += sa * ck;
        }
    }
}

/// `x ⊗ y ⊗ φ` of one point (the point weight is applied by the caller).
pub fn embed_point_full(
    pt: &ContourPoint,
    layout: &EmbeddingLayout,
    spectra: &SpectraSet,
    mode: MapMode,
) -> Vec<f64> {
    let ex = embed_1d(pt.x, &spectra.spatial, mode);
    let ey = embed_1d(pt.y, &spectra.spatial, mode);
    let ep = embed_1d(pt.phi, &spectra.orientation, mode);
    let mut out = vec![0.0; layout.full_dim()];
    add_kron3(&mut out, 1.0, &ex, &ey, &ep);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

/// `coord ⊗ φ` for the chosen spatial axis.
pub fn embed_point_projection(
    pt: &ContourPoint,
    axis: Axis,
    layout: &EmbeddingLayout,
    spectra: &SpectraSet,
    mode: MapMode,
) -> Vec<f64> {
    let v = match axis {
        Axis::X => pt.x,
        Axis::Y => pt.y,
    };
    let ea = embed_1d(v, &spectra.spatial, mode);
    let ep = embed_1d(pt.phi, &spectra.orientation, mode);
    let mut out = vec![0.0; layout.proj_dim()];
    add_kron2(&mut out, 1.0, &ea, &ep);
    out
}

/// Database-side projection as a sub-vector of a full vector: the entries
/// where the other spatial axis sits on its `ω = 0` cosine slot.
pub fn projection_subvector(full: &[f64], axis: Axis, layout: &EmbeddingLayout) -> Vec<f64> {
    let (dx, dp) = (layout.dim_x, layout.dim_phi);
    match axis {
        // y at slot 0: blocks ix·D_x·D_φ .. +D_φ
        Axis::X => (0..dx)
            .flat_map(|ix| {
                let start = layout.full_index(ix, 0, 0);
                full[start..start + dp].iter().copied()
            })
            .collect(),
        // x at slot 0: the first D_x·D_φ entries
        Axis::Y => full[..dx * dp].to_vec(),
    }
}
