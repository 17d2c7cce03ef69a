//! Admissibility audit: exact DistFlow checks over a box of flexible dispatch.
//!
//! The box holds one interval per node for the flexible injection `x`; the
//! net injection checked is `x - P_L` (reactive `-Q_L`). Samples are drawn
//! from a seeded ChaCha8 stream before evaluation, so parallel and sequential
//! runs see identical inputs and produce identical reports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::distflow::{check_admissible, ViolationReport, ADMISSIBILITY_TOL};
use crate::exec::{self, ExecMode};
use crate::model::{DemandProfile, Direction, FeederModel};

pub const MAX_CORNERS: usize = 64;

/// Per-node interval `[lower, upper]` of flexible injection (p.u.).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl AuditBox {
    pub fn point(n: usize) -> Self {
        AuditBox { lower: vec![0.0; n], upper: vec![0.0; n] }
    }

    /// Box of an allocation: `[0, alloc]` upward, `[-alloc, 0]` downward.
    /// `extra` widens the far end (worst-case demand deviation).
    pub fn from_allocation(direction: Direction, alloc: &[f64], extra: Option<&[f64]>) -> Self {
        let n = alloc.len();
        let mut far: Vec<f64> = alloc.to_vec();
        if let Some(e) = extra {
            for (f, d) in far.iter_mut().zip(e) {
                *f += d;
            }
        }
        match direction {
            Direction::Upper => AuditBox { lower: vec![0.0; n], upper: far },
            Direction::Lower => AuditBox { lower: far.iter().map(|x| -x).collect(), upper: vec![0.0; n] },
        }
    }

    /// Box scaled about the origin.
    pub fn scaled(&self, factor: f64) -> Self {
        AuditBox {
            lower: self.lower.iter().map(|x| x * factor).collect(),
            upper: self.upper.iter().map(|x| x * factor).collect(),
        }
    }

    /// Nodes (0-based) with a non-degenerate interval.
    pub fn free_dims(&self) -> Vec<usize> {
        (0..self.lower.len()).filter(|&k| self.upper[k] > self.lower[k]).collect()
    }

    /// Up to `cap` corners, extreme ones first: all-low, all-high, then
    /// single-coordinate flips of the all-high and all-low corners.
    pub fn corners(&self, cap: usize) -> Vec<Vec<f64>> {
        let dims = self.free_dims();
        let d = dims.len();
        let mut masks: Vec<Vec<bool>> = Vec::new();
        if d < usize::BITS as usize && (1usize << d) <= cap {
            // full enumeration, ordered by number of high coordinates (extremes first)
            let mut all: Vec<usize> = (0..1usize << d).collect();
            all.sort_by_key(|&m| {
                let ones = m.count_ones() as usize;
                (ones.min(d - ones), m)
            });
            masks.extend(all.into_iter().map(|m| (0..d).map(|i| m >> i & 1 == 1).collect()));
        } else {
            masks.push(vec![false; d]);
            masks.push(vec![true; d]);
            for i in 0..d {
                let mut m = vec![true; d];
                m[i] = false;
                masks.push(m);
                let mut m = vec![false; d];
                m[i] = true;
                masks.push(m);
            }
        }
        masks.dedup();
        masks.truncate(cap);
        masks
            .into_iter()
            .map(|mask| {
                let mut x = self.lower.clone();
                for (&k, &hi) in dims.iter().zip(&mask) {
                    if hi {
                        x[k] = self.upper[k];
                    }
                }
                x
            })
            .collect()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    pub samples: usize,
    pub seed: u64,
    pub max_corners: usize,
    pub tolerance: f64,
    pub mode: ExecMode,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            samples: 200,
            seed: 0,
            max_corners: MAX_CORNERS,
            tolerance: ADMISSIBILITY_TOL,
            mode: ExecMode::default(),
        }
    }
}

/// Where the worst point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    Corner,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstPoint {
    pub kind: PointKind,
    pub index: usize,
    pub dispatch: Vec<f64>,
    pub report: ViolationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub samples: usize,
    pub corners: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Points with at least one violation (non-converged flows count too).
    pub violating_points: usize,
    pub nonconverged_points: usize,
    /// Largest excursion beyond the tolerance-widened limits (`<= 0` when clean).
    pub worst_violation: f64,
    /// Largest excursion beyond the raw limits.
    pub worst_exceedance: f64,
    pub max_voltage: f64,
    pub min_voltage: f64,
    pub max_current_ratio: f64,
    pub worst: Option<WorstPoint>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violating_points == 0
    }
}

struct PointResult {
    report: Option<ViolationReport>,
    v_max: f64,
    v_min: f64,
    i_ratio: f64,
}

fn evaluate(feeder: &FeederModel, demand: &DemandProfile, x: &[f64], tol: f64) -> PointResult {
    let p: Vec<f64> = x.iter().zip(&demand.p_load).map(|(x, l)| x - l).collect();
    let q: Vec<f64> = demand.q_load.iter().map(|l| -l).collect();
    match crate::distflow::solve_distflow(feeder, &p, &q) {
        Ok(sol) => {
            let ratio = sol.l.iter().zip(&feeder.branches).map(|(l, b)| l / b.l_max).fold(0.0, f64::max);
            PointResult {
                v_max: sol.max_voltage(),
                v_min: sol.min_voltage(),
                i_ratio: ratio,
                report: Some(crate::distflow::violations(feeder, &sol, tol)),
            }
        }
        Err(_) => PointResult { report: None, v_max: f64::NAN, v_min: f64::NAN, i_ratio: f64::NAN },
    }
}

/// Checks `samples` uniform draws plus up to `max_corners` corners of `bx`.
pub fn sample_box_admissibility(
    feeder: &FeederModel,
    demand: &DemandProfile,
    bx: &AuditBox,
    cfg: &AuditConfig,
) -> AuditReport {
    let corners = bx.corners(cfg.max_corners);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<Vec<f64>> = (0..cfg.samples).map(|_| bx.sample(&mut rng)).collect();
    let points: Vec<(PointKind, usize, &Vec<f64>)> = corners
        .iter()
        .enumerate()
        .map(|(i, x)| (PointKind::Corner, i, x))
        .chain(samples.iter().enumerate().map(|(i, x)| (PointKind::Sample, i, x)))
        .collect();

    let results = exec::map(cfg.mode, &points, |(_, _, x)| evaluate(feeder, demand, x, cfg.tolerance));

    let mut out = AuditReport {
        samples: samples.len(),
        corners: corners.len(),
        seed: cfg.seed,
        tolerance: cfg.tolerance,
        violating_points: 0,
        nonconverged_points: 0,
        worst_violation: f64::NEG_INFINITY,
        worst_exceedance: f64::NEG_INFINITY,
        max_voltage: f64::NEG_INFINITY,
        min_voltage: f64::INFINITY,
        max_current_ratio: 0.0,
        worst: None,
    };
    for ((kind, index, x), r) in points.iter().zip(results) {
        let Some(report) = r.report else {
            out.nonconverged_points += 1;
            out.violating_points += 1;
            out.worst_violation = f64::INFINITY;
            out.worst_exceedance = f64::INFINITY;
            continue;
        };
        out.max_voltage = out.max_voltage.max(r.v_max);
        out.min_voltage = out.min_voltage.min(r.v_min);
        out.max_current_ratio = out.max_current_ratio.max(r.i_ratio);
        if !report.is_clean() {
            out.violating_points += 1;
        }
        out.worst_exceedance = out.worst_exceedance.max(report.worst_exceedance);
        out.worst_violation = out.worst_violation.max(report.worst_violation);
        let replace = out.worst.as_ref().is_none_or(|w| report.worst_violation > w.report.worst_violation);
        if replace {
            out.worst = Some(WorstPoint { kind: *kind, index: *index, dispatch: (*x).clone(), report });
        }
    }
    out
}

/// Exact check of a single dispatch; convenience for callers outside the audit.
pub fn check_dispatch(feeder: &FeederModel, demand: &DemandProfile, x: &[f64], tol: f64) -> Option<ViolationReport> {
    let p: Vec<f64> = x.iter().zip(&demand.p_load).map(|(x, l)| x - l).collect();
    let q: Vec<f64> = demand.q_load.iter().map(|l| -l).collect();
    check_admissible(feeder, &p, &q, tol).ok()
}
