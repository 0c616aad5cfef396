use serde::Serialize;

use crate::alignment::{map_box, BoxPx};
use crate::descriptor::{prepare_query, ContourPoint, CropInfo};
use crate::error::Result;
use crate::feature_maps::SpectraSet;
use crate::retrieval::{run_pipeline, AuxVectors, GridFamily, Index, PipelineConfig, RankedResult};

use super::config::ServiceConfig;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
    pub scale: f64,
    pub mirror: bool,
    pub dx: i32,
    pub dy: i32,
    #[serde(rename = "box")]
    pub bbox: BoxPx,
}

/// A loaded index with its grids and default pipeline.
pub struct Engine {
    pub index: Index,
    pub grids: GridFamily,
    pub pipeline: PipelineConfig,
}

impl Engine {
    pub fn new(index: Index, pipeline: PipelineConfig, max_shift: f64, step: f64) -> Self {
        let grids = GridFamily::with_base(&index.layout, max_shift, step);
        Self {
            index,
            grids,
            pipeline,
        }
    }

    /// Loads spectra, index and aux vectors named by `cfg`. `Ok(None)` when
    /// no index is configured.
    pub fn load(cfg: &ServiceConfig) -> Result<Option<Self>> {
        let Some(path) = &cfg.index else {
            return Ok(None);
        };
        let pipeline = cfg.pipeline()?;
        let spectra = match &cfg.spectra {
            Some(p) => SpectraSet::load(p)?,
            None => SpectraSet::default_set(),
        };
        let mut index = Index::load(path, &spectra)?;
        if let Some(aux) = &cfg.aux {
            index.set_aux(&AuxVectors::load(aux)?)?;
        }
        Ok(Some(Self::new(index, pipeline, cfg.max_shift, cfg.step)))
    }

    /// Top `k` hits for normalized sketch points.
    pub fn query(&self, points: &[ContourPoint], cfg: &PipelineConfig, k: usize) -> Result<Vec<Hit>> {
        let bundle = prepare_query(points, &self.index.layout, &self.index.spectra)?;
        let ranked = run_pipeline(&self.index, &bundle, &self.grids, cfg)?;
        Ok(ranked
            .iter()
            .take(k)
            .map(|r| hit(r, &bundle.crop))
            .collect())
    }
}

fn hit(r: &RankedResult, crop: &CropInfo) -> Hit {
    Hit {
        id: r.id.clone(),
        score: r.score,
        scale: r.scale,
        mirror: r.mirror,
        dx: r.dx,
        dy: r.dy,
        bbox: map_box(crop, r.scale, r.dx, r.dy),
    }
}
