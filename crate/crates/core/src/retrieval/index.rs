use std::collections::HashMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::descriptor::{
    build_descriptor, compute_norms, dequantize_values, quantize_values, ContourPoint, NormBlock,
    SketchDescriptor,
};
use crate::error::{AfmError, Result};
use crate::feature_maps::{projection_subvector, Axis, EmbeddingLayout, MapMode, SpectraSet};

/// Storage precision of database descriptors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Quant {
    F32,
    U8,
}

impl Quant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Quant::F32 => "f32",
            Quant::U8 => "u8",
        }
    }
}

impl std::str::FromStr for Quant {
    type Err = AfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Quant::F32),
            "u8" => Ok(Quant::U8),
            _ => Err(AfmError::UnknownMethod(format!("quantization `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    /// Unweighted full vector at storage precision (dequantized for u8).
    pub full: Vec<f64>,
    pub proj_x: Vec<f64>,
    pub proj_y: Vec<f64>,
    pub norms: NormBlock,
    /// `(codes, m)` for u8 storage.
    pub quantized: Option<(Vec<u8>, f32)>,
}

impl IndexEntry {
    fn from_full(
        id: String,
        full: Vec<f64>,
        quant: Quant,
        layout: &EmbeddingLayout,
        spectra: &SpectraSet,
    ) -> Self {
        let (full, quantized) = match quant {
            Quant::F32 => (full.iter().map(|&v| v as f32 as f64).collect(), None),
            Quant::U8 => {
                let (codes, m) = quantize_values(&full);
                (dequantize_values(&codes, m), Some((codes, m)))
            }
        };
        let norms = compute_norms(&full, layout, spectra);
        Self {
            id,
            proj_x: projection_subvector(&full, Axis::X, layout),
            proj_y: projection_subvector(&full, Axis::Y, layout),
            full,
            norms,
            quantized,
        }
    }

    pub fn descriptor(&self) -> SketchDescriptor {
        SketchDescriptor {
            full: self.full.clone(),
            proj_x: self.proj_x.clone(),
            proj_y: self.proj_y.clone(),
            mode: MapMode::Database,
            norms: Some(self.norms),
            meta: crate::descriptor::DescriptorMeta {
                id: self.id.clone(),
                scale: 1.0,
                mirror: false,
            },
        }
    }
}

/// Auxiliary per-image vectors used by query expansion.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuxVectors {
    pub dim: usize,
    pub entries: Vec<(String, Vec<f64>)>,
}

impl AuxVectors {
    pub fn new(dim: usize, entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if entries.iter().any(|(_, v)| v.len() != dim) {
            return Err(AfmError::InvalidParameter(format!(
                "every aux vector must have dimension {dim}"
            )));
        }
        Ok(Self { dim, entries })
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (dim, count) = loop {
            let Some((i, line)) = lines.next() else {
                return Err(AfmError::Format("empty aux-vector file".into()));
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            if toks.next() != Some("AFM-AUX") || toks.next() != Some("v1") {
                return Err(AfmError::parse(i + 1, "expected `AFM-AUX v1` header"));
            }
            let (mut dim, mut count) = (None, None);
            for t in toks {
                match t.split_once('=') {
                    Some(("dim", v)) => dim = v.parse().ok(),
                    Some(("count", v)) => count = v.parse().ok(),
                    _ => return Err(AfmError::parse(i + 1, format!("bad field `{t}`"))),
                }
            }
            match (dim, count) {
                (Some(d), Some(c)) => break (d, c),
                _ => return Err(AfmError::parse(i + 1, "header needs dim and count")),
            }
        };
        let mut entries = Vec::with_capacity(count);
        for (i, line) in lines {
            let line = line?;
            let mut toks = line.split_whitespace();
            let Some(id) = toks.next() else { continue };
            let v: Vec<f64> = toks
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| AfmError::parse(i + 1, format!("{e}")))?;
            if v.len() != dim {
                return Err(AfmError::parse(
                    i + 1,
                    format!("expected {dim} values, got {}", v.len()),
                ));
            }
            entries.push((id.to_string(), v));
        }
        if entries.len() != count {
            return Err(AfmError::Format(format!(
                "aux header says {count} vectors, found {}",
                entries.len()
            )));
        }
        Ok(Self { dim, entries })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "AFM-AUX v1 dim={} count={}", self.dim, self.entries.len())?;
        for (id, v) in &self.entries {
            write!(w, "{id}")?;
            for x in v {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| AfmError::file(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }
}

/// Database descriptors of a corpus; immutable once built.
#[derive(Clone, Debug)]
pub struct Index {
    pub layout: EmbeddingLayout,
    pub spectra: SpectraSet,
    pub quant: Quant,
    pub entries: Vec<IndexEntry>,
    /// Aux vectors aligned with `entries`.
    pub aux: Option<Vec<Vec<f64>>>,
    by_id: HashMap<String, usize>,
}

const INDEX_MAGIC: &str = "AFM-INDEX";

impl Index {
    /// Describes every sketch in parallel; entry order follows `items`.
    pub fn build(
        items: &[(String, Vec<ContourPoint>)],
        spectra: &SpectraSet,
        quant: Quant,
    ) -> Result<Self> {
        let layout = spectra.layout();
        let entries = items
            .par_iter()
            .map(|(id, pts)| {
                let d = build_descriptor(pts, &layout, spectra, MapMode::Database)?;
                Ok(IndexEntry::from_full(id.clone(), d.full, quant, &layout, spectra))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(layout, spectra.clone(), quant, entries)
    }

    fn from_entries(
        layout: EmbeddingLayout,
        spectra: SpectraSet,
        quant: Quant,
        entries: Vec<IndexEntry>,
    ) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if by_id.insert(e.id.clone(), i).is_some() {
                return Err(AfmError::InvalidParameter(format!("duplicate id `{}`", e.id)));
            }
            if e.id.is_empty() || e.id.chars().any(char::is_whitespace) {
                return Err(AfmError::InvalidParameter(format!(
                    "ids must be non-empty without whitespace: `{}`",
                    e.id
                )));
            }
        }
        Ok(Self {
            layout,
            spectra,
            quant,
            entries,
            aux: None,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.position(id).map(|i| &self.entries[i])
    }

    /// Attaches aux vectors; every entry needs one.
    pub fn set_aux(&mut self, aux: &AuxVectors) -> Result<()> {
        let map: HashMap<&str, &Vec<f64>> =
            aux.entries.iter().map(|(id, v)| (id.as_str(), v)).collect();
        let vecs = self
            .entries
            .iter()
            .map(|e| {
                map.get(e.id.as_str())
                    .map(|v| (*v).clone())
                    .ok_or_else(|| AfmError::QeUnavailable(format!("no aux vector for `{}`", e.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        self.aux = Some(vecs);
        Ok(())
    }

    /// `AFM-INDEX v1` header line, then per entry: `u32` id length, id
    /// bytes, `f32` scale (u8 only), the full vector (`f32` or `u8`, canonical
    /// order) and nine `f64` norms, all little-endian.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let (nx, np) = self.layout.counts();
        writeln!(
            w,
            "{INDEX_MAGIC} v1 layout=({nx},{np}) count={} quant={}",
            self.len(),
            self.quant.as_str()
        )?;
        for e in &self.entries {
            w.write_all(&(e.id.len() as u32).to_le_bytes())?;
            w.write_all(e.id.as_bytes())?;
            match (&e.quantized, self.quant) {
                (Some((codes, m)), Quant::U8) => {
                    w.write_all(&m.to_le_bytes())?;
                    w.write_all(codes)?;
                }
                (None, Quant::F32) => {
                    for &v in &e.full {
                        w.write_all(&(v as f32).to_le_bytes())?;
                    }
                }
                _ => unreachable!("entry storage matches index quantization"),
            }
            for n in e.norms.0 {
                w.write_all(&n.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: BufRead>(mut r: R, spectra: &SpectraSet) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let (nx, np, count, quant) = parse_index_header(header.trim_end())?;
        let layout = spectra.layout();
        if layout.counts() != (nx, np) {
            return Err(AfmError::LayoutMismatch(format!(
                "index layout ({nx},{np}) vs spectra {:?}",
                layout.counts()
            )));
        }
        let dim = layout.full_dim();
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
            let mut id = vec![0u8; len];
            r.read_exact(&mut id)?;
            let id = String::from_utf8(id)
                .map_err(|_| AfmError::Format("index id is not UTF-8".into()))?;
            let (full, quantized) = match quant {
                Quant::U8 => {
                    let m = f32::from_le_bytes(read_array(&mut r)?);
                    let mut codes = vec![0u8; dim];
                    r.read_exact(&mut codes)?;
                    (dequantize_values(&codes, m), Some((codes, m)))
                }
                Quant::F32 => {
                    let mut full = Vec::with_capacity(dim);
                    for _ in 0..dim {
                        full.push(f32::from_le_bytes(read_array(&mut r)?) as f64);
                    }
                    (full, None)
                }
            };
            let mut norms = [0.0; 9];
            for n in norms.iter_mut() {
                *n = f64::from_le_bytes(read_array(&mut r)?);
            }
            entries.push(IndexEntry {
                id,
                proj_x: projection_subvector(&full, Axis::X, &layout),
                proj_y: projection_subvector(&full, Axis::Y, &layout),
                full,
                norms: NormBlock(norms),
                quantized,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(AfmError::Format("trailing bytes after index entries".into()));
        }
        Self::from_entries(layout, spectra.clone(), quant, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| AfmError::file(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush().map_err(|e| AfmError::file(path, e))
    }

    pub fn load(path: &Path, spectra: &SpectraSet) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| AfmError::file(path, e))?;
        Self::read(std::io::BufReader::new(f), spectra)
    }
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            AfmError::Format("truncated index file".into())
        } else {
            e.into()
        }
    })?;
    Ok(b)
}

fn parse_index_header(line: &str) -> Result<(usize, usize, usize, Quant)> {
    let mut toks = line.split_whitespace();
    if toks.next() != Some(INDEX_MAGIC) || toks.next() != Some("v1") {
        return Err(AfmError::parse(1, "expected `AFM-INDEX v1` header"));
    }
    let (mut layout, mut count, mut quant) = (None, None, None);
    for t in toks {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| AfmError::parse(1, format!("bad field `{t}`")))?;
        match k {
            "layout" => {
                let inner = v
                    .strip_prefix('(')
                    .and_then(|s| s.strip_suffix(')'))
                    .and_then(|s| s.split_once(','))
                    .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
                layout = Some(inner.ok_or_else(|| AfmError::parse(1, "bad layout"))?);
            }
            "count" => {
                count = Some(v.parse().map_err(|_| AfmError::parse(1, "bad count"))?)
            }
            "quant" => quant = Some(v.parse::<Quant>()?),
            _ => return Err(AfmError::parse(1, format!("unknown field `{k}`"))),
        }
    }
    match (layout, count, quant) {
        (Some((nx, np)), Some(c), Some(q)) => Ok((nx, np, c, q)),
        _ => Err(AfmError::parse(1, "incomplete index header")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn items() -> Vec<(String, Vec<ContourPoint>)> {
        (0..5)
            .map(|i| {
                let pts = (0..20)
                    .map(|k| {
                        let t = k as f64 * 0.3 + i as f64;
                        ContourPoint::new(1.5 + t.cos(), 1.5 + t.sin(), t % 6.0, 1.0)
                    })
                    .collect();
                (format!("img{i}"), pts)
            })
            .collect()
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let s = SpectraSet::default_set();
        for q in [Quant::F32, Quant::U8] {
            let idx = Index::build(&items(), &s, q).unwrap();
            let mut a = Vec::new();
            idx.write(&mut a).unwrap();
            let back = Index::read(a.as_slice(), &s).unwrap();
            assert_eq!(back.entries, idx.entries);
            let mut b = Vec::new();
            back.write(&mut b).unwrap();
            assert_eq!(a, b);
            let header = String::from_utf8_lossy(&a[..a.iter().position(|&c| c == b'\n').unwrap()])
                .into_owned();
            assert_eq!(header, format!("AFM-INDEX v1 layout=(5,2) count=5 quant={}", q.as_str()));
        }
    }

    #[test]
    fn stored_norms_match_stored_vectors() {
        let s = SpectraSet::default_set();
        let idx = Index::build(&items(), &s, Quant::U8).unwrap();
        for e in &idx.entries {
            let again = compute_norms(&e.full, &idx.layout, &s);
            for (a, b) in e.norms.0.iter().zip(&again.0) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn truncated_and_mismatched_files_fail() {
        let s = SpectraSet::default_set();
        let idx = Index::build(&items(), &s, Quant::F32).unwrap();
        let mut a = Vec::new();
        idx.write(&mut a).unwrap();
        assert!(matches!(
            Index::read(&a[..a.len() - 3], &s),
            Err(AfmError::Format(_))
        ));
        let other = SpectraSet::new(
            crate::kernel_lab::Spectrum::new(vec![0.0, 1.0], vec![vec![0.5, 0.5]; 3], PI).unwrap(),
            s.orientation.clone(),
        )
        .unwrap();
        assert!(matches!(
            Index::read(a.as_slice(), &other),
            Err(AfmError::LayoutMismatch(_))
        ));
    }

    #[test]
    fn aux_round_trip_and_attach() {
        let aux = AuxVectors::new(
            2,
            (0..5).map(|i| (format!("img{i}"), vec![i as f64, 0.5])).collect(),
        )
        .unwrap();
        let mut a = Vec::new();
        aux.write(&mut a).unwrap();
        let back = AuxVectors::read(a.as_slice()).unwrap();
        assert_eq!(back, aux);
        let mut b = Vec::new();
        back.write(&mut b).unwrap();
        assert_eq!(a, b);
        let s = SpectraSet::default_set();
        let mut idx = Index::build(&items(), &s, Quant::F32).unwrap();
        idx.set_aux(&aux).unwrap();
        let partial = AuxVectors::new(2, vec![("img0".into(), vec![1.0, 0.0])]).unwrap();
        assert!(matches!(idx.set_aux(&partial), Err(AfmError::QeUnavailable(_))));
    }
}
