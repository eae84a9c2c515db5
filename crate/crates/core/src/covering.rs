//! Iterated theta-coverings of a sampled invariant set and the resulting
//! fractal-dimension bound `-ln N(theta) / ln theta`.
//!
//! Everything is asserted on a finite sample. Level `k` covers the image
//! `S^k(sample)` by `n_H`-balls of radius `theta^k R` with greedy
//! farthest-point centers and `N(theta)` is the geometric mean growth
//! `|V_k|^(1/k)` at the finest level the sample resolves. Greedy covering
//! overcounts by a bounded factor `c`, which enters only as `c^(1/k)`.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use thiserror::Error;

use crate::dynamics::SteadyForcing;
use crate::energy::v_total_sq;
use crate::grid::Grid;
use crate::params::PhysParams;
use crate::state::{apply_boundary_conditions, State};
use crate::stepper::{run, StepConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoveringError {
    #[error("cloud needs at least {needed} distinct points, found {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("points must share one dimension d >= 1")]
    Dimension,
    #[error("theta must lie in (0, 1), got {0}")]
    Theta(f64),
    #[error("{duplicates} duplicate points (zero H distance) in the cloud")]
    DegeneratePair { duplicates: usize },
    #[error("level {level}: point at distance {distance:.3e} from every center, radius {radius:.3e}")]
    CoverageFailure { level: usize, distance: f64, radius: f64 },
    #[error("only {usable} usable dyadic scales, need 3")]
    InsufficientScales { usable: usize },
}

/// A norm evaluated on difference vectors.
pub type Norm = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// The map whose iterates are covered.
pub type Map<'a> = &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync);

#[derive(Clone)]
pub struct MetricCloud {
    pub points: Vec<Vec<f64>>,
    pub n_h: Norm,
    pub n_v: Norm,
}

impl std::fmt::Debug for MetricCloud {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricCloud")
            .field("points", &self.points.len())
            .field("dim", &self.dim())
            .finish()
    }
}

pub fn euclidean() -> Norm {
    Arc::new(|x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt())
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

impl MetricCloud {
    pub fn new(points: Vec<Vec<f64>>, n_h: Norm, n_v: Norm) -> Result<Self, CoveringError> {
        let d = points.first().map(|p| p.len()).unwrap_or(0);
        if points.is_empty() {
            return Err(CoveringError::TooFewPoints { needed: 1, found: 0 });
        }
        if d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(CoveringError::Dimension);
        }
        Ok(Self { points, n_h, n_v })
    }

    /// Both norms Euclidean.
    pub fn euclidean(points: Vec<Vec<f64>>) -> Result<Self, CoveringError> {
        Self::new(points, euclidean(), euclidean())
    }

    pub fn dim(&self) -> usize {
        self.points.first().map(|p| p.len()).unwrap_or(0)
    }

    pub fn dist_h(&self, a: &[f64], b: &[f64]) -> f64 {
        (self.n_h)(&sub(a, b))
    }

    pub fn dist_v(&self, a: &[f64], b: &[f64]) -> f64 {
        (self.n_v)(&sub(a, b))
    }

    /// Spot check of symmetry and the triangle inequality for both norms on
    /// `trials` random triples.
    pub fn check_metric_axioms(&self, trials: usize, seed: u64) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.points.len();
        (0..trials).all(|_| {
            let (a, b, c) = (
                &self.points[rng.gen_range(0..n)],
                &self.points[rng.gen_range(0..n)],
                &self.points[rng.gen_range(0..n)],
            );
            [&self.n_h, &self.n_v].iter().all(|norm| {
                let d = |x: &[f64], y: &[f64]| norm(&sub(x, y));
                let tol = 1e-12 * (d(a, b) + d(b, c) + d(a, c)).max(f64::MIN_POSITIVE);
                (d(a, b) - d(b, a)).abs() <= tol && d(a, c) <= d(a, b) + d(b, c) + tol && d(a, a) == 0.0
            })
        })
    }

    /// Removes points at zero `n_H` distance from an earlier one and returns
    /// the number of points left.
    pub fn dedup(&mut self) -> usize {
        let mut keep: Vec<Vec<f64>> = Vec::with_capacity(self.points.len());
        for p in self.points.drain(..) {
            if !keep.iter().any(|q| (self.n_h)(&sub(&p, q)) == 0.0) {
                keep.push(p);
            }
        }
        self.points = keep;
        self.points.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingConstant {
    /// `max n_V(Sx - Sy) / n_H(x - y)` over the sampled pairs.
    pub k: f64,
    pub pairs: usize,
    pub duplicates_removed: usize,
}

/// Empirical smoothing constant of `s` on the cloud, over all pairs.
/// Duplicate points are removed first and reported.
pub fn smoothing_map(s: Map<'_>, cloud: &MetricCloud) -> Result<SmoothingConstant, CoveringError> {
    let mut c = cloud.clone();
    let n0 = c.points.len();
    let n = c.dedup();
    if n < 2 {
        return Err(CoveringError::DegeneratePair { duplicates: n0 - n });
    }
    let images: Vec<Vec<f64>> = c.points.par_iter().map(|x| s(x)).collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let k = pairs
        .par_iter()
        .map(|&(i, j)| c.dist_v(&images[i], &images[j]) / c.dist_h(&c.points[i], &c.points[j]))
        .reduce(|| 0.0, f64::max);
    Ok(SmoothingConstant {
        k,
        pairs: pairs.len(),
        duplicates_removed: n0 - n,
    })
}

/// Greedy farthest-point covering of `points` by `norm`-balls of radius `r`.
/// Returns the center indices and the largest distance of any point to its
/// nearest center.
pub fn greedy_cover(points: &[Vec<f64>], norm: &Norm, r: f64) -> (Vec<usize>, f64) {
    if points.is_empty() {
        return (Vec::new(), 0.0);
    }
    let mut centers = vec![0];
    let mut dist: Vec<f64> = points.par_iter().map(|p| norm(&sub(p, &points[0]))).collect();
    loop {
        let (far, d) = dist.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &d)| if d > best.1 { (i, d) } else { best },
        );
        if d <= r {
            return (centers, d.max(0.0));
        }
        centers.push(far);
        let c = points[far].clone();
        dist.par_iter_mut().zip(points.par_iter()).for_each(|(d, p)| {
            let e = norm(&sub(p, &c));
            if e < *d {
                *d = e;
            }
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveringLevel {
    pub level: usize,
    pub radius: f64,
    /// `|V_k|`.
    pub centers: usize,
    /// `|E_k|`, the accumulated center set `S E_{k-1} u V_k`.
    pub accumulated: usize,
    /// Largest distance from an image point to its nearest center.
    pub max_miss: f64,
    /// Center count is limited by the sample rather than the set.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveringTree {
    pub theta: f64,
    /// Center `x0` and radius `R` of the initial ball.
    pub x0: Vec<f64>,
    pub r: f64,
    pub levels: Vec<CoveringLevel>,
    /// `|V_1|`.
    pub n_first: usize,
    /// `N(theta)` used by the bound, `|V_k|^(1/k)` at the finest
    /// unsaturated level.
    pub n_theta: f64,
    /// Growth rate from the slope of `ln |V_k|`, for comparison.
    pub n_theta_slope: Option<f64>,
    /// `|V_k| <= N(theta)^k` with `N(theta) = |V_1|` on every level.
    pub count_bound_holds: bool,
}

impl CoveringTree {
    /// Tree from known center counts per level (levels are `1..`). A single
    /// level gives `N(theta) = |V_1|` exactly.
    pub fn from_counts(theta: f64, counts: &[usize]) -> Result<Self, CoveringError> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(CoveringError::Theta(theta));
        }
        let levels: Vec<CoveringLevel> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| CoveringLevel {
                level: i + 1,
                radius: theta.powi(i as i32 + 1),
                centers: c,
                accumulated: c,
                max_miss: 0.0,
                saturated: false,
            })
            .collect();
        let n_first = counts.first().copied().unwrap_or(0);
        Ok(Self {
            theta,
            x0: Vec::new(),
            r: 1.0,
            n_theta: growth_rate(&levels),
            n_theta_slope: growth_slope(&levels),
            count_bound_holds: count_bound(&levels, n_first),
            levels,
            n_first,
        })
    }

    /// Plain-text manifest: one line per level with center count, radius
    /// and the largest observed miss distance.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "theta={:?}", self.theta);
        let _ = writeln!(out, "R={:?}", self.r);
        let _ = writeln!(out, "N_first={}", self.n_first);
        let _ = writeln!(out, "N_theta={:?}", self.n_theta);
        if let Some(v) = self.n_theta_slope {
            let _ = writeln!(out, "N_theta_slope={v:?}");
        }
        let b = fractal_dim_bound(self);
        let _ = writeln!(out, "dim_bound={:?}", b.value);
        let _ = writeln!(out, "degenerate={}", b.degenerate);
        let _ = writeln!(out, "count_bound_holds={}", self.count_bound_holds);
        for l in &self.levels {
            let _ = writeln!(
                out,
                "level.{}=centers {} accumulated {} radius {:?} max_miss {:?} saturated {}",
                l.level, l.centers, l.accumulated, l.radius, l.max_miss, l.saturated
            );
        }
        out
    }
}

fn count_bound(levels: &[CoveringLevel], n_first: usize) -> bool {
    levels
        .iter()
        .all(|l| (l.centers as f64).ln() <= l.level as f64 * (n_first.max(1) as f64).ln() + 1e-12)
}

/// `|V_k|^(1/k)` at the finest unsaturated level `k`. A single level gives
/// `N(theta) = |V_1|` exactly.
fn growth_rate(levels: &[CoveringLevel]) -> f64 {
    let last = levels.iter().rfind(|l| !l.saturated).or(levels.first());
    match last {
        Some(l) => (l.centers.max(1) as f64).powf(1.0 / l.level as f64),
        None => 1.0,
    }
}

/// `exp` of the least-squares slope of `ln |V_k|` against `k` over the
/// unsaturated levels; free of the constant overcount of greedy covering but
/// biased low while boundary effects matter.
fn growth_slope(levels: &[CoveringLevel]) -> Option<f64> {
    let usable: Vec<&CoveringLevel> = levels.iter().filter(|l| !l.saturated).collect();
    if usable.len() < 2 {
        return None;
    }
    let n = usable.len() as f64;
    let xs: Vec<f64> = usable.iter().map(|l| l.level as f64).collect();
    let ys: Vec<f64> = usable.iter().map(|l| (l.centers as f64).ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some((sxy / sxx).exp())
}

/// Builds the iterated covering of `S^k(sample)`, `k = 1..=k_max`, and
/// checks soundness on the sample. A level counts as saturated once its
/// center count exceeds a quarter of the sample.
pub fn build_covering(
    s: Map<'_>,
    cloud: &MetricCloud,
    theta: f64,
    k_max: usize,
) -> Result<CoveringTree, CoveringError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(CoveringError::Theta(theta));
    }
    let n = cloud.points.len();
    let d = cloud.dim();
    let mut x0 = vec![0.0; d];
    for p in &cloud.points {
        for (a, b) in x0.iter_mut().zip(p) {
            *a += b / n as f64;
        }
    }
    let r = cloud
        .points
        .par_iter()
        .map(|p| (cloud.n_h)(&sub(p, &x0)))
        .reduce(|| 0.0, f64::max);
    let mut images = cloud.points.clone();
    let mut levels = Vec::new();
    let mut accumulated = 0usize;
    for k in 1..=k_max {
        images = images.par_iter().map(|x| s(x)).collect();
        let radius = theta.powi(k as i32) * r;
        let (centers, _) = greedy_cover(&images, &cloud.n_h, radius);
        // soundness, recomputed independently of the greedy bookkeeping
        let miss = images
            .par_iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|&c| (cloud.n_h)(&sub(p, &images[c])))
                    .fold(f64::INFINITY, f64::min)
            })
            .reduce(|| 0.0, f64::max);
        if miss > radius {
            return Err(CoveringError::CoverageFailure {
                level: k,
                distance: miss,
                radius,
            });
        }
        accumulated += centers.len();
        levels.push(CoveringLevel {
            level: k,
            radius,
            centers: centers.len(),
            accumulated,
            max_miss: miss,
            saturated: 4 * centers.len() > n,
        });
    }
    let n_first = levels.first().map(|l| l.centers).unwrap_or(0);
    Ok(CoveringTree {
        theta,
        x0,
        r,
        n_theta: growth_rate(&levels),
        n_theta_slope: growth_slope(&levels),
        count_bound_holds: count_bound(&levels, n_first),
        levels,
        n_first,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimBound {
    pub value: f64,
    /// `N(theta) <= 1`: the bound is reported as 0.
    pub degenerate: bool,
}

/// `-ln N / ln theta`.
pub fn dim_bound(n: f64, theta: f64) -> DimBound {
    if n <= 1.0 {
        return DimBound {
            value: 0.0,
            degenerate: true,
        };
    }
    DimBound {
        value: -n.ln() / theta.ln(),
        degenerate: false,
    }
}

pub fn fractal_dim_bound(tree: &CoveringTree) -> DimBound {
    dim_bound(tree.n_theta, tree.theta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxCount {
    pub dimension: f64,
    /// `(ln(1/eps), ln N(eps))` of the scales used in the fit.
    pub scales: Vec<(f64, f64)>,
}

/// Box-counting dimension over dyadic boxes of the bounding box. Scales
/// with a single occupied box or with more than a fifth of the sample in
/// distinct boxes are unusable.
pub fn box_counting_dimension(points: &[Vec<f64>]) -> Result<BoxCount, CoveringError> {
    let d = points.first().map(|p| p.len()).unwrap_or(0);
    if d == 0 {
        return Err(CoveringError::Dimension);
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in points {
        for i in 0..d {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let side = (0..d).map(|i| hi[i] - lo[i]).fold(0.0, f64::max);
    if side <= 0.0 {
        return Err(CoveringError::InsufficientScales { usable: 0 });
    }
    let mut scales = Vec::new();
    for j in 1..=30 {
        let m = (1u64 << j) as f64;
        let mut boxes: Vec<Vec<i64>> = points
            .iter()
            .map(|p| {
                (0..d)
                    .map(|i| (((p[i] - lo[i]) / side * m).floor() as i64).min(m as i64 - 1))
                    .collect()
            })
            .collect();
        boxes.sort_unstable();
        boxes.dedup();
        let count = boxes.len();
        if 5 * count > points.len() {
            break;
        }
        if count > 1 {
            scales.push((m.ln(), (count as f64).ln()));
        }
    }
    if scales.len() < 3 {
        return Err(CoveringError::InsufficientScales { usable: scales.len() });
    }
    let n = scales.len() as f64;
    let (mx, my) = (
        scales.iter().map(|s| s.0).sum::<f64>() / n,
        scales.iter().map(|s| s.1).sum::<f64>() / n,
    );
    let sxy: f64 = scales.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
    let sxx: f64 = scales.iter().map(|s| (s.0 - mx).powi(2)).sum();
    Ok(BoxCount {
        dimension: sxy / sxx,
        scales,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderCheck {
    pub dim_a: f64,
    pub dim_image: f64,
    pub alpha: f64,
    pub passed: bool,
}

/// Slack allowed on top of `dim(A) / alpha`.
pub const HOLDER_SLACK: f64 = 0.15;

/// Box-counting check that an `alpha`-Holder map does not raise the
/// dimension beyond `dim(A) / alpha`.
pub fn holder_dim_property(f: Map<'_>, a: &[Vec<f64>], alpha: f64) -> Result<HolderCheck, CoveringError> {
    let image: Vec<Vec<f64>> = a.iter().map(|x| f(x)).collect();
    let da = box_counting_dimension(a)?.dimension;
    let di = box_counting_dimension(&image)?.dimension;
    Ok(HolderCheck {
        dim_a: da,
        dim_image: di,
        alpha,
        passed: di <= da / alpha + HOLDER_SLACK,
    })
}

/// Uniform random sample of the unit cube `[0,1]^d`.
pub fn unit_cube_sample(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect()
}

/// Random subset of `k` points, keeping the original order.
pub fn subsample(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(k);
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i].clone()).collect()
}

/// Discrete `H` and `V` norms on flattened states of grid `g`.
pub fn pe_norms(p: &PhysParams, g: &Grid) -> (Norm, Norm) {
    let mut w = Vec::with_capacity(4 * g.node_count());
    for _ in 0..4 {
        for k in 0..=g.nz {
            for j in 0..=g.ny {
                for i in 0..=g.nx {
                    w.push(g.weight3(i, j, k));
                }
            }
        }
    }
    let n_h: Norm = Arc::new(move |x: &[f64]| x.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>().sqrt());
    let (p, g) = (p.clone(), g.clone());
    let n_v: Norm = Arc::new(move |x: &[f64]| {
        let s = apply_boundary_conditions(State::unflatten(&g, x, 0.0), &p, &g);
        v_total_sq(&s, &p, &g).sqrt()
    });
    (n_h, n_v)
}

/// The time-`cfg.t_end` solution map on flattened states. Steps that fail
/// map to NaN so the failure shows up in every derived quantity.
pub fn pe_map(p: &PhysParams, g: &Grid, cfg: &StepConfig) -> impl Fn(&[f64]) -> Vec<f64> + Sync {
    let (p, g, cfg) = (p.clone(), g.clone(), cfg.clone());
    let forcing = SteadyForcing::from_params(&p, &g);
    move |x: &[f64]| {
        let s0 = apply_boundary_conditions(State::unflatten(&g, x, 0.0), &p, &g);
        match run(&s0, &p, &g, &cfg, &forcing, &mut |_, _| {}) {
            Ok(r) => r.state.flatten(),
            Err(_) => vec![f64::NAN; x.len()],
        }
    }
}

/// Flattened snapshots of the trajectory from `s0`, taken every
/// `cfg.snapshot_every` steps after `skip` time units.
pub fn trajectory_sample(s0: &State, p: &PhysParams, g: &Grid, cfg: &StepConfig, skip: f64) -> Vec<Vec<f64>> {
    let forcing = SteadyForcing::from_params(p, g);
    let mut out = Vec::new();
    let t0 = s0.time;
    let _ = run(s0, p, g, cfg, &forcing, &mut |_, s| {
        if s.time - t0 >= skip - 1e-12 {
            out.push(s.flatten());
        }
    });
    out
}
