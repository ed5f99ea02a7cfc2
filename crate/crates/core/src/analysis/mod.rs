//! Latent-cloud analysis: principal-axis rotation, cluster diagnostics,
//! and the Q-phi mode map.
//!
//! Every reduction over points runs in a canonical sorted order, and the
//! clustering restart seeds hash quantized shape-normalized coordinates,
//! so diagnostics are invariant under point permutation and stable under
//! global rotation and positive scaling of the cloud.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::model::{encode, LatentPoint};
use crate::pipeline::{make_windows, Checkpoint};
use crate::seed::{fnv1a64, fnv1a64_extend};
use crate::svg::{self, Marker, Series};
pub use crate::synth::ModeLabel;
use crate::synth::{OperatingPoint, PressureRecord};

/// Fewest points on which cluster diagnostics are meaningful.
pub const MIN_CLASSIFY_POINTS: usize = 8;

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCloud {
    pub points: Vec<LatentPoint>,
    pub case_id: String,
    pub operating_point: OperatingPoint,
}

impl LatentCloud {
    pub fn new(
        points: Vec<LatentPoint>,
        case_id: String,
        operating_point: OperatingPoint,
    ) -> Result<LatentCloud> {
        for (i, p) in points.iter().enumerate() {
            if !p.z1.is_finite() || !p.z2.is_finite() {
                return Err(Error::Data(format!(
                    "latent point {i} of {case_id} is not finite"
                )));
            }
        }
        Ok(LatentCloud {
            points,
            case_id,
            operating_point,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    /// Rows are the principal axes; proper rotation (det = +1).
    pub rotation: [[f64; 2]; 2],
    pub var1: f64,
    pub var2: f64,
    /// Spread at rounding-noise scale relative to the mean; rotation is
    /// identity and variances are zero.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeDiagnostics {
    pub rotation: [[f64; 2]; 2],
    pub var1: f64,
    pub var2: f64,
    pub variance_ratio: f64,
    pub cluster_centers: [[f64; 2]; 2],
    pub bimodality_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub tau_bimodal: f64,
    pub tau_ratio: f64,
}

impl Default for Thresholds {
    fn default() -> Thresholds {
        Thresholds {
            tau_bimodal: 3.0,
            tau_ratio: 0.1,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !self.tau_bimodal.is_finite() || self.tau_bimodal <= 0.0 {
            return Err(Error::Config(format!(
                "tau_bimodal must be finite and positive, got {}",
                self.tau_bimodal
            )));
        }
        if !self.tau_ratio.is_finite() || !(0.0..=1.0).contains(&self.tau_ratio) {
            return Err(Error::Config(format!(
                "tau_ratio must lie in [0, 1], got {}",
                self.tau_ratio
            )));
        }
        Ok(())
    }
}

pub fn encode_cloud(ckpt: &Checkpoint, rec: &PressureRecord) -> Result<LatentCloud> {
    if rec.samples.cols() != ckpt.dims.channels {
        return Err(Error::Input(format!(
            "record {} has {} channels, checkpoint expects {}",
            rec.case_id,
            rec.samples.cols(),
            ckpt.dims.channels
        )));
    }
    let mut windows = make_windows(rec, ckpt.window_len, ckpt.stride)?;
    let mut points = Vec::with_capacity(windows.len());
    for w in &mut windows {
        ckpt.normalizer.apply(w)?;
        let (mu, _) = encode(w, &ckpt.params)?;
        points.push(LatentPoint {
            z1: mu[0],
            z2: mu[1],
        });
    }
    LatentCloud::new(points, rec.case_id.clone(), rec.operating_point)
}

fn canonical_order(points: &[LatentPoint]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a]
            .z1
            .total_cmp(&points[b].z1)
            .then(points[a].z2.total_cmp(&points[b].z2))
    });
    idx
}

pub fn orthogonal_decompose(cloud: &LatentCloud) -> Result<(LatentCloud, Decomposition)> {
    let n = cloud.len();
    if n < 2 {
        return Err(Error::Input(format!(
            "decomposition needs at least 2 points, got {n}"
        )));
    }
    let order = canonical_order(&cloud.points);
    let mut sx = 0.0;
    let mut sy = 0.0;
    for &i in &order {
        sx += cloud.points[i].z1;
        sy += cloud.points[i].z2;
    }
    let mx = sx / n as f64;
    let my = sy / n as f64;
    let mut a = 0.0;
    let mut b = 0.0;
    let mut c = 0.0;
    for &i in &order {
        let dx = cloud.points[i].z1 - mx;
        let dy = cloud.points[i].z2 - my;
        a += dx * dx;
        b += dx * dy;
        c += dy * dy;
    }
    a /= n as f64;
    b /= n as f64;
    c /= n as f64;

    let trace = a + c;
    if trace <= 1e-24 * (1.0 + mx * mx + my * my) {
        let points = cloud
            .points
            .iter()
            .map(|p| LatentPoint {
                z1: p.z1 - mx,
                z2: p.z2 - my,
            })
            .collect();
        let rotated = LatentCloud::new(points, cloud.case_id.clone(), cloud.operating_point)?;
        return Ok((
            rotated,
            Decomposition {
                rotation: [[1.0, 0.0], [0.0, 1.0]],
                var1: 0.0,
                var2: 0.0,
                degenerate: true,
            },
        ));
    }

    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let var1 = 0.5 * trace + disc;
    let var2 = (0.5 * trace - disc).max(0.0);
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (sin_t, cos_t) = theta.sin_cos();
    let mut axis1 = [cos_t, sin_t];
    if axis1[0] < 0.0 || (axis1[0] == 0.0 && axis1[1] < 0.0) {
        axis1 = [-axis1[0], -axis1[1]];
    }
    let rotation = [[axis1[0], axis1[1]], [-axis1[1], axis1[0]]];
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let dx = p.z1 - mx;
            let dy = p.z2 - my;
            LatentPoint {
                z1: rotation[0][0] * dx + rotation[0][1] * dy,
                z2: rotation[1][0] * dx + rotation[1][1] * dy,
            }
        })
        .collect();
    let rotated = LatentCloud::new(points, cloud.case_id.clone(), cloud.operating_point)?;
    Ok((
        rotated,
        Decomposition {
            rotation,
            var1,
            var2,
            degenerate: false,
        },
    ))
}

/// Hash of the cloud's shape: quantized absolute coordinates normalized by
/// the dominant spread, combined commutatively. Stable under permutation,
/// rotation to the principal frame, axis sign flips, and uniform scaling.
fn shape_hash(points: &[LatentPoint], var1: f64) -> u64 {
    let scale = if var1 > 0.0 { var1.sqrt() } else { 1.0 };
    let quantize = |v: f64| ((v.abs() / scale) * 1e6).round() as i64;
    let mut combined = 0u64;
    for p in points {
        let mut h = fnv1a64(&quantize(p.z1).to_le_bytes());
        h = fnv1a64_extend(h, &quantize(p.z2).to_le_bytes());
        combined = combined.wrapping_add(h);
    }
    combined
}

fn dist_sq(p: &LatentPoint, c: [f64; 2]) -> f64 {
    let dx = p.z1 - c[0];
    let dy = p.z2 - c[1];
    dx * dx + dy * dy
}

struct Clustering {
    centers: [[f64; 2]; 2],
    assignment: Vec<u8>,
    sse: f64,
}

fn lloyd(points: &[LatentPoint], order: &[usize], mut centers: [[f64; 2]; 2]) -> Clustering {
    let n = points.len();
    let mut assignment = vec![0u8; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for &i in order {
            let side = u8::from(dist_sq(&points[i], centers[1]) < dist_sq(&points[i], centers[0]));
            if assignment[i] != side {
                assignment[i] = side;
                changed = true;
            }
        }
        let mut sums = [[0.0f64; 2]; 2];
        let mut counts = [0usize; 2];
        for &i in order {
            let k = assignment[i] as usize;
            sums[k][0] += points[i].z1;
            sums[k][1] += points[i].z2;
            counts[k] += 1;
        }
        for k in 0..2 {
            if counts[k] == 0 {
                let other = centers[1 - k];
                let far = order
                    .iter()
                    .copied()
                    .max_by(|&x, &y| {
                        dist_sq(&points[x], other).total_cmp(&dist_sq(&points[y], other))
                    })
                    .unwrap();
                centers[k] = [points[far].z1, points[far].z2];
                changed = true;
            } else {
                centers[k] = [
                    sums[k][0] / counts[k] as f64,
                    sums[k][1] / counts[k] as f64,
                ];
            }
        }
        if !changed {
            break;
        }
    }
    let mut sse = 0.0;
    for &i in order {
        sse += dist_sq(&points[i], centers[assignment[i] as usize]);
    }
    Clustering {
        centers,
        assignment,
        sse,
    }
}

fn two_means(points: &[LatentPoint], order: &[usize], var1: f64) -> Clustering {
    let n = points.len();
    let hash = shape_hash(points, var1);
    let init_pair = |lo: usize, hi: usize| {
        let a = &points[order[lo]];
        let b = &points[order[hi]];
        [[a.z1, a.z2], [b.z1, b.z2]]
    };
    let mut best: Option<Clustering> = None;
    for restart in 0..KMEANS_RESTARTS {
        let (lo, hi) = if restart == 0 {
            (0, n - 1)
        } else {
            let mut rng = ChaCha20Rng::seed_from_u64(fnv1a64_extend(
                hash,
                &(restart as u64).to_le_bytes(),
            ));
            let p = rng.random_range(0..n / 2);
            (p, n - 1 - p)
        };
        let run = lloyd(points, order, init_pair(lo, hi));
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    best.unwrap()
}

pub fn mode_diagnostics(rotated: &LatentCloud, decomp: &Decomposition) -> Result<ModeDiagnostics> {
    let n = rotated.len();
    if n < MIN_CLASSIFY_POINTS {
        return Err(Error::Input(format!(
            "classification needs at least {MIN_CLASSIFY_POINTS} points, got {n}"
        )));
    }
    let variance_ratio = if decomp.var1 > 0.0 {
        (decomp.var2 / decomp.var1).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let order = canonical_order(&rotated.points);
    let clustering = two_means(&rotated.points, &order, decomp.var1);

    let mut sq_sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for &i in &order {
        let k = clustering.assignment[i] as usize;
        sq_sums[k] += dist_sq(&rotated.points[i], clustering.centers[k]);
        counts[k] += 1;
    }
    let bimodality_score = if counts[0] == 0 || counts[1] == 0 {
        0.0
    } else {
        let rms0 = (sq_sums[0] / counts[0] as f64).sqrt();
        let rms1 = (sq_sums[1] / counts[1] as f64).sqrt();
        let spread = 0.5 * (rms0 + rms1);
        let dx = clustering.centers[0][0] - clustering.centers[1][0];
        let dy = clustering.centers[0][1] - clustering.centers[1][1];
        (dx * dx + dy * dy).sqrt() / (spread + 1e-12)
    };

    let mut centers = clustering.centers;
    if centers[1][0]
        .total_cmp(&centers[0][0])
        .then(centers[1][1].total_cmp(&centers[0][1]))
        .is_lt()
    {
        centers.swap(0, 1);
    }
    Ok(ModeDiagnostics {
        rotation: decomp.rotation,
        var1: decomp.var1,
        var2: decomp.var2,
        variance_ratio,
        cluster_centers: centers,
        bimodality_score,
    })
}

pub fn classify(diag: &ModeDiagnostics, thresholds: &Thresholds) -> ModeLabel {
    if diag.bimodality_score >= thresholds.tau_bimodal {
        ModeLabel::ModeIII
    } else if diag.variance_ratio <= thresholds.tau_ratio {
        ModeLabel::ModeI
    } else {
        ModeLabel::ModeII
    }
}

#[derive(Debug, Clone)]
pub struct CaseAnalysis {
    pub rotated: LatentCloud,
    pub diagnostics: ModeDiagnostics,
    pub degenerate: bool,
    pub label: ModeLabel,
}

pub fn analyze_cloud(cloud: &LatentCloud, thresholds: &Thresholds) -> Result<CaseAnalysis> {
    thresholds.validate()?;
    let (rotated, decomp) = orthogonal_decompose(cloud)?;
    let diagnostics = mode_diagnostics(&rotated, &decomp)?;
    let label = classify(&diagnostics, thresholds);
    Ok(CaseAnalysis {
        rotated,
        diagnostics,
        degenerate: decomp.degenerate,
        label,
    })
}

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub case_id: String,
    pub operating_point: OperatingPoint,
    pub diagnostics: ModeDiagnostics,
    pub label: ModeLabel,
    pub truth: Option<ModeLabel>,
}

#[derive(Debug, Clone)]
pub struct ModeMapReport {
    pub csv: String,
    pub svg: String,
    pub summary: String,
}

pub fn mode_map(cases: &[CaseReport]) -> Result<ModeMapReport> {
    if cases.is_empty() {
        return Err(Error::Input("mode map needs at least one case".into()));
    }
    let mut csv = String::from(
        "case_id,Q,phi,var1,var2,variance_ratio,bimodality_score,label,truth,agree\n",
    );
    for c in cases {
        let truth = c.truth.map(|t| t.to_string()).unwrap_or_default();
        let agree = c
            .truth
            .map(|t| if t == c.label { "1" } else { "0" })
            .unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{:.6e},{:.6e},{:.6},{:.6},{},{},{}",
            c.case_id,
            c.operating_point.q,
            c.operating_point.phi,
            c.diagnostics.var1,
            c.diagnostics.var2,
            c.diagnostics.variance_ratio,
            c.diagnostics.bimodality_score,
            c.label,
            truth,
            agree
        );
    }

    let with_truth = cases.iter().filter(|c| c.truth.is_some()).count();
    let summary = if with_truth > 0 {
        let agreed = cases
            .iter()
            .filter(|c| c.truth.is_some_and(|t| t == c.label))
            .count();
        format!(
            "{} cases; agreement {agreed}/{with_truth} ({:.1}%)",
            cases.len(),
            100.0 * agreed as f64 / with_truth as f64
        )
    } else {
        format!("{} cases; no ground truth attached", cases.len())
    };

    let mut series: Vec<Series> = Vec::new();
    for (label, marker) in [
        (ModeLabel::ModeI, Marker::Circle),
        (ModeLabel::ModeII, Marker::Square),
        (ModeLabel::ModeIII, Marker::Triangle),
    ] {
        let points: Vec<(f64, f64)> = cases
            .iter()
            .filter(|c| c.label == label)
            .map(|c| (c.operating_point.q, c.operating_point.phi))
            .collect();
        if !points.is_empty() {
            series.push(Series {
                label: format!("Mode {label}"),
                marker,
                points,
            });
        }
    }
    let disagreements: Vec<(f64, f64)> = cases
        .iter()
        .filter(|c| c.truth.is_some_and(|t| t != c.label))
        .map(|c| (c.operating_point.q, c.operating_point.phi))
        .collect();
    if !disagreements.is_empty() {
        series.push(Series {
            label: "mismatch".into(),
            marker: Marker::Cross,
            points: disagreements,
        });
    }
    let svg = svg::scatter("Mode map", "Q (SLM)", "equivalence ratio", &series);
    Ok(ModeMapReport { csv, svg, summary })
}
