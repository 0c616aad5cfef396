use crate::descriptor::QueryBundle;
use crate::error::{AfmError, Result};

use super::index::Index;
use super::rank::{
    average_qe, discriminative_first_ordering, rank_full, rank_projections, rerank, GridFamily,
    RankedResult, RerankMethod,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RankMethod {
    /// Exhaustive 2D scoring.
    Full,
    /// `S̄_x + S̄_y`.
    Projections,
    /// Discriminative projection first.
    DiscriminativeFirst,
}

impl RankMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            RankMethod::Full => "full",
            RankMethod::Projections => "proj",
            RankMethod::DiscriminativeFirst => "proj-disc",
        }
    }
}

impl std::str::FromStr for RankMethod {
    type Err = AfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "xy" => Ok(RankMethod::Full),
            "proj" | "x+y" => Ok(RankMethod::Projections),
            "proj-disc" | "disc" => Ok(RankMethod::DiscriminativeFirst),
            _ => Err(AfmError::UnknownMethod(format!("ranking method `{s}`"))),
        }
    }
}

/// A ranking method, an optional re-ranking of the top `shortlist`, and
/// optional average query expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub rank: RankMethod,
    pub rerank: Option<RerankMethod>,
    pub shortlist: usize,
    /// Odd neighborhood size for local refinement.
    pub nbhd: usize,
    /// Pre-shortlist multiplier of the discriminative-first strategy.
    pub pre_factor: usize,
    pub qe_top_n: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            rank: RankMethod::Projections,
            rerank: Some(RerankMethod::XyStar),
            shortlist: 100,
            nbhd: 3,
            pre_factor: 3,
            qe_top_n: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shortlist == 0 {
            return Err(AfmError::InvalidParameter("shortlist size must be ≥ 1".into()));
        }
        if self.nbhd.is_multiple_of(2) {
            return Err(AfmError::InvalidParameter(format!(
                "neighborhood size must be odd, got {}",
                self.nbhd
            )));
        }
        if self.qe_top_n == Some(0) {
            return Err(AfmError::InvalidParameter("QE top_n must be ≥ 1".into()));
        }
        Ok(())
    }

    /// `rank → rerank (S)` in the usual notation.
    pub fn describe(&self) -> String {
        let mut s = self.rank.as_str().to_string();
        if let Some(r) = self.rerank {
            s += &format!(" -> {} ({})", r.as_str(), self.shortlist);
        }
        if let Some(n) = self.qe_top_n {
            s += &format!(" + QE{n}");
        }
        s
    }
}

/// Full ranked list of the index: the re-ranked shortlist first, then the
/// remaining entries in ranking-stage order.
pub fn run_pipeline(
    index: &Index,
    bundle: &QueryBundle,
    grids: &GridFamily,
    cfg: &PipelineConfig,
) -> Result<Vec<RankedResult>> {
    cfg.validate()?;
    let ranked = match cfg.rank {
        RankMethod::Full => rank_full(index, bundle, grids)?,
        RankMethod::Projections => rank_projections(index, bundle, grids)?,
        RankMethod::DiscriminativeFirst => {
            discriminative_first_ordering(index, bundle, grids, cfg.shortlist, cfg.pre_factor)?
        }
    };
    let mut out = match cfg.rerank {
        // the exhaustive ranking is already a 2D score
        Some(m) if cfg.rank != RankMethod::Full || m != RerankMethod::Xy => {
            let s = cfg.shortlist.min(ranked.len());
            let mut head = rerank(index, bundle, grids, &ranked[..s], m, cfg.nbhd)?;
            head.extend_from_slice(&ranked[s..]);
            head
        }
        _ => ranked,
    };
    if let Some(n) = cfg.qe_top_n {
        out = average_qe(index, &out, n)?;
    }
    Ok(out)
}
