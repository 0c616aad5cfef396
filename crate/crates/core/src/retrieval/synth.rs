//! Planted-transform synthetic corpora.
//!
//! Items are random star polygons and ellipses drawn on a 400 × 400
//! canvas. A query is the outline of a source item redrawn on its own
//! canvas, possibly mirrored and jittered; the item itself is the outline at
//! relative scale `s` with its bounding-box center shifted by `(dx, dy)`
//! pixels from the canvas center. Queries therefore match their source at
//! exactly `(s, mirror, dx, dy)`.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::alignment::REFERENCE_SIDE;
use crate::descriptor::{wrap_angle, ContourPoint, PointList, QUERY_SCALES};

use super::index::AuxVectors;
use super::metrics::{GroundTruth, Relevance};

/// Spacing of outline samples, pixels.
pub const SAMPLE_SPACING: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_items: usize,
    pub n_queries: usize,
    /// Per-axis translation bound, pixels.
    pub max_translation: f64,
    pub scales: Vec<f64>,
    pub mirror_probability: f64,
    /// Standard deviation of query point jitter, pixels.
    pub jitter: f64,
    /// Longer side of the query drawing, pixels.
    pub query_size: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_items: 1000,
            n_queries: 50,
            max_translation: 80.0,
            scales: QUERY_SCALES.to_vec(),
            mirror_probability: 0.5,
            jitter: 1.0,
            query_size: 360.0,
        }
    }
}

/// Closed outline centered at the origin, counter-clockwise in image
/// coordinates is not assumed; normals are oriented away from the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub vertices: Vec<(f64, f64)>,
}

impl Shape {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        if rng.random_bool(0.3) {
            let a = rng.random_range(0.5..1.0);
            let b = rng.random_range(0.2..1.0);
            let rot = rng.random_range(0.0..PI);
            let n = 96;
            let vertices = (0..n)
                .map(|k| {
                    let t = TAU * k as f64 / n as f64;
                    let (x, y) = (a * t.cos(), b * t.sin());
                    (x * rot.cos() - y * rot.sin(), x * rot.sin() + y * rot.cos())
                })
                .collect();
            Shape { vertices }
        } else {
            let n = rng.random_range(3..=9);
            let mut angles: Vec<f64> = (0..n)
                .map(|k| (k as f64 + rng.random_range(-0.3..0.3)) * TAU / n as f64)
                .collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let vertices = angles
                .iter()
                .map(|&t| {
                    let r = rng.random_range(0.3..1.0);
                    (r * t.cos(), r * t.sin())
                })
                .collect();
            Shape { vertices }
        }
    }

    /// Radial perturbation of every vertex by a factor in `1 ± amount`.
    pub fn perturbed(&self, rng: &mut ChaCha8Rng, amount: f64) -> Self {
        Shape {
            vertices: self
                .vertices
                .iter()
                .map(|&(x, y)| {
                    let f = 1.0 + rng.random_range(-amount..=amount);
                    (x * f, y * f)
                })
                .collect(),
        }
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (f64::MAX, f64::MAX, f64::MIN, f64::MIN),
            |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
        )
    }

    /// Outline samples with the bounding box's longer side equal to `size`
    /// and its center at `(cx, cy)`; orientation is the outward normal.
    pub fn render(&self, size: f64, cx: f64, cy: f64, mirror: bool) -> Vec<ContourPoint> {
        let (x0, y0, x1, y1) = self.bbox();
        let f = size / (x1 - x0).max(y1 - y0);
        let (mx, my) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        let sx = if mirror { -f } else { f };
        let verts: Vec<(f64, f64)> = self
            .vertices
            .iter()
            .map(|&(x, y)| (cx + sx * (x - mx), cy + f * (y - my)))
            .collect();
        // interior reference for normal orientation: the mapped origin
        let (ox, oy) = (cx + sx * (0.0 - mx), cy + f * (0.0 - my));
        let mut out = Vec::new();
        let n = verts.len();
        let mut carry = 0.0;
        for k in 0..n {
            let (ax, ay) = verts[k];
            let (bx, by) = verts[(k + 1) % n];
            let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
            if len == 0.0 {
                continue;
            }
            let (tx, ty) = ((bx - ax) / len, (by - ay) / len);
            let (mut nx, mut ny) = (ty, -tx);
            let (midx, midy) = ((ax + bx) / 2.0, (ay + by) / 2.0);
            if nx * (midx - ox) + ny * (midy - oy) < 0.0 {
                nx = -nx;
                ny = -ny;
            }
            let phi = wrap_angle(ny.atan2(nx));
            let mut t = carry;
            while t < len {
                out.push(ContourPoint::new(ax + t * tx, ay + t * ty, phi, 1.0));
                t += SAMPLE_SPACING;
            }
            carry = t - len;
        }
        out
    }
}

/// Known transform relating a query to its source item.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedQuery {
    pub id: String,
    pub points: PointList,
    pub source: String,
    pub scale: f64,
    pub mirror: bool,
    pub dx: i32,
    pub dy: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub items: Vec<(String, PointList)>,
    pub queries: Vec<PlantedQuery>,
    pub ground_truth: GroundTruth,
}

impl SynthCorpus {
    /// Items as normalized point sets, ready for indexing.
    pub fn normalized_items(&self) -> Vec<(String, Vec<ContourPoint>)> {
        self.items
            .iter()
            .map(|(id, pl)| (id.clone(), pl.normalized().expect("synthetic items are nonempty")))
            .collect()
    }
}

fn canvas(points: Vec<ContourPoint>) -> PointList {
    PointList {
        width: REFERENCE_SIDE as u32,
        height: REFERENCE_SIDE as u32,
        points,
    }
}

/// Places `shape` at scale `s` with a random in-frame translation.
fn place(
    rng: &mut ChaCha8Rng,
    shape: &Shape,
    scale: f64,
    max_t: f64,
) -> (Vec<ContourPoint>, i32, i32) {
    let (x0, y0, x1, y1) = shape.bbox();
    let f = scale * REFERENCE_SIDE / (x1 - x0).max(y1 - y0);
    let (w, h) = ((x1 - x0) * f, (y1 - y0) * f);
    let half = REFERENCE_SIDE / 2.0;
    // keep the whole outline inside the canvas
    let lim_x = (half - w / 2.0).clamp(0.0, max_t).floor() as i32;
    let lim_y = (half - h / 2.0).clamp(0.0, max_t).floor() as i32;
    let dx = rng.random_range(-lim_x..=lim_x);
    let dy = rng.random_range(-lim_y..=lim_y);
    let pts = shape.render(scale * REFERENCE_SIDE, half + dx as f64, half + dy as f64, false);
    (pts, dx, dy)
}

fn query_points(
    rng: &mut ChaCha8Rng,
    shape: &Shape,
    mirror: bool,
    cfg: &SynthConfig,
) -> Vec<ContourPoint> {
    let half = REFERENCE_SIDE / 2.0;
    let mut pts = shape.render(cfg.query_size, half, half, mirror);
    if cfg.jitter > 0.0 {
        let n = Normal::new(0.0, cfg.jitter).expect("finite jitter");
        for p in &mut pts {
            p.x += n.sample(rng);
            p.y += n.sample(rng);
        }
    }
    pts
}

/// Planted-transform benchmark: `n_items` random shapes, the first
/// `n_queries` of which also serve as query sources.
pub fn synth_corpus(seed: u64, cfg: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(cfg.n_items);
    let mut shapes = Vec::with_capacity(cfg.n_items);
    let mut placements = Vec::with_capacity(cfg.n_items);
    for i in 0..cfg.n_items {
        let shape = Shape::random(&mut rng);
        let scale = cfg.scales[rng.random_range(0..cfg.scales.len())];
        let (pts, dx, dy) = place(&mut rng, &shape, scale, cfg.max_translation);
        items.push((format!("item{i:05}"), canvas(pts)));
        shapes.push(shape);
        placements.push((scale, dx, dy));
    }
    let mut queries = Vec::with_capacity(cfg.n_queries);
    let mut gt = GroundTruth::default();
    for q in 0..cfg.n_queries.min(cfg.n_items) {
        let mirror = rng.random_bool(cfg.mirror_probability);
        let pts = query_points(&mut rng, &shapes[q], mirror, cfg);
        let (scale, dx, dy) = placements[q];
        let id = format!("query{q:04}");
        let source = items[q].0.clone();
        gt.insert(
            id.clone(),
            Relevance {
                positives: [source.clone()].into(),
                similar: Default::default(),
            },
        );
        queries.push(PlantedQuery {
            id,
            points: canvas(pts),
            source,
            scale,
            mirror,
            dx,
            dy,
        });
    }
    SynthCorpus {
        items,
        queries,
        ground_truth: gt,
    }
}

/// A class-structured corpus: `per_class` perturbed, randomly placed copies
/// of each prototype, one-hot class aux vectors, and one query (the
/// unperturbed prototype) per class whose positives are the class members.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassCorpus {
    pub corpus: SynthCorpus,
    pub aux: AuxVectors,
}

pub fn synth_class_corpus(seed: u64, n_classes: usize, per_class: usize, perturbation: f64) -> ClassCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SynthConfig {
        jitter: 0.0,
        ..SynthConfig::default()
    };
    let protos: Vec<Shape> = (0..n_classes).map(|_| Shape::random(&mut rng)).collect();
    let mut items = Vec::new();
    let mut aux = Vec::new();
    let mut members = vec![Vec::new(); n_classes];
    for (c, proto) in protos.iter().enumerate() {
        for k in 0..per_class {
            let shape = proto.perturbed(&mut rng, perturbation);
            let scale = cfg.scales[rng.random_range(0..cfg.scales.len())];
            let (pts, _, _) = place(&mut rng, &shape, scale, cfg.max_translation);
            let id = format!("c{c:03}_{k:03}");
            let mut onehot = vec![0.0; n_classes];
            onehot[c] = 1.0;
            aux.push((id.clone(), onehot));
            members[c].push(id.clone());
            items.push((id, canvas(pts)));
        }
    }
    let mut queries = Vec::new();
    let mut gt = GroundTruth::default();
    for (c, proto) in protos.iter().enumerate() {
        let id = format!("class{c:03}");
        gt.insert(
            id.clone(),
            Relevance {
                positives: members[c].iter().cloned().collect(),
                similar: Default::default(),
            },
        );
        queries.push(PlantedQuery {
            id,
            points: canvas(query_points(&mut rng, proto, false, &cfg)),
            source: members[c][0].clone(),
            scale: 1.0,
            mirror: false,
            dx: 0,
            dy: 0,
        });
    }
    ClassCorpus {
        corpus: SynthCorpus {
            items,
            queries,
            ground_truth: gt,
        },
        aux: AuxVectors::new(n_classes, aux).expect("one-hot aux vectors"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig {
            n_items: 20,
            n_queries: 5,
            ..Default::default()
        };
        assert_eq!(synth_corpus(7, &cfg), synth_corpus(7, &cfg));
        assert_ne!(synth_corpus(7, &cfg), synth_corpus(8, &cfg));
    }

    #[test]
    fn items_stay_in_frame_and_fit_their_scale() {
        let cfg = SynthConfig {
            n_items: 200,
            n_queries: 0,
            ..Default::default()
        };
        let c = synth_corpus(3, &cfg);
        for (_, pl) in &c.items {
            let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for p in &pl.points {
                x0 = x0.min(p.x);
                x1 = x1.max(p.x);
                y0 = y0.min(p.y);
                y1 = y1.max(p.y);
                assert!((0.0..TAU).contains(&p.phi));
            }
            assert!(x0 >= -1e-9 && y0 >= -1e-9 && x1 <= 400.0 + 1e-9 && y1 <= 400.0 + 1e-9);
            let side = (x1 - x0).max(y1 - y0);
            assert!([240.0, 320.0, 400.0].iter().any(|s| (side - s).abs() < 2.5), "{side}");
        }
    }

    #[test]
    fn circle_normals_point_outward() {
        let n = 64;
        let circle = Shape {
            vertices: (0..n)
                .map(|k| {
                    let t = TAU * k as f64 / n as f64;
                    (t.cos(), t.sin())
                })
                .collect(),
        };
        for mirror in [false, true] {
            for p in circle.render(200.0, 200.0, 200.0, mirror) {
                let radial = (p.y - 200.0).atan2(p.x - 200.0);
                let d = wrap_angle(p.phi - radial);
                assert!(d.min(TAU - d) < 0.1, "phi {} radial {}", p.phi, radial);
            }
        }
    }

    #[test]
    fn mirrored_rendering_matches_point_mirror() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = Shape::random(&mut rng);
        let a = s.render(300.0, 200.0, 200.0, false);
        let b = s.render(300.0, 200.0, 200.0, true);
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            let m = p.mirrored(400.0);
            assert!((m.x - q.x).abs() < 1e-9 && (m.y - q.y).abs() < 1e-9);
            let d = wrap_angle(m.phi - q.phi);
            assert!(d.min(TAU - d) < 1e-9);
        }
    }
}
