//! Synthetic evaluation harness: perturbation generation, partial-view
//! synthesis, trial runners with per-trial RNG streams, and CSV/JSON
//! reporting. `results.csv` is byte-reproducible for a given config and
//! seed regardless of worker count; wall times live in `timings.csv` and the
//! JSON report so they never break that guarantee.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{normalize_to_unit_cube, PointCloud};
use crate::error::{Error, Result};
use crate::icp::{self, IcpOptions};
use crate::io;
use crate::registration::{register, FlsConfig};
use crate::scale::register_with_unknown_scale;
use crate::so3;
use crate::transform::{rotation_error_deg, translation_error, SimilarityTransform};

// ---------------------------------------------------------------------------
// Perturbation synthesis

#[derive(Debug, Clone)]
pub struct PerturbationSpec {
    /// Rotation angle range in radians.
    pub rotation_range: (f64, f64),
    /// Per-axis translation magnitude range.
    pub translation_range: (f64, f64),
    pub noise_sigma: f64,
    pub scale_range: Option<(f64, f64)>,
    pub shuffle: bool,
}

impl PerturbationSpec {
    fn validate(&self) -> Result<()> {
        let ordered = self.rotation_range.0 <= self.rotation_range.1
            && self.translation_range.0 <= self.translation_range.1
            && self.scale_range.map_or(true, |(a, b)| 0.0 < a && a <= b)
            && self.noise_sigma >= 0.0;
        if ordered {
            Ok(())
        } else {
            Err(Error::Config("perturbation ranges must be well-ordered".into()))
        }
    }
}

fn range_sample(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Rotation about a uniformly random axis with nonnegative components, by an
/// angle uniform in `range`.
pub fn random_rotation(range: (f64, f64), rng: &mut impl Rng) -> DMatrix<f64> {
    let axis = loop {
        let u = nalgebra::Vector3::new(
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
        );
        if u.norm() > 1e-9 {
            break u.normalize();
        }
    };
    let angle = range_sample(rng, range);
    so3::to_dmatrix(&so3::exp(&(axis * angle)))
}

/// Draws a ground-truth similarity transform from the spec's ranges.
pub fn random_transform(spec: &PerturbationSpec, rng: &mut impl Rng) -> SimilarityTransform {
    let rotation = random_rotation(spec.rotation_range, rng);
    let translation = DVector::from_fn(3, |_, _| range_sample(rng, spec.translation_range));
    let scale = spec.scale_range.map_or(1.0, |r| range_sample(rng, r));
    SimilarityTransform::new(scale, rotation, translation).unwrap()
}

pub fn add_gaussian_noise(cloud: &PointCloud, sigma: f64, rng: &mut impl Rng) -> PointCloud {
    if sigma == 0.0 {
        return cloud.clone();
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    let data: Vec<f64> = cloud.coords().iter().map(|c| c + normal.sample(rng)).collect();
    PointCloud::new(cloud.dim(), data).unwrap()
}

pub fn shuffle_cloud(cloud: &PointCloud, rng: &mut impl Rng) -> PointCloud {
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.shuffle(rng);
    let mut data = Vec::with_capacity(cloud.coords().len());
    for i in order {
        data.extend_from_slice(cloud.point(i));
    }
    PointCloud::new(cloud.dim(), data).unwrap()
}

/// Applies a random similarity transform, adds i.i.d. Gaussian noise, and
/// optionally shuffles point order. Fully determined by `seed`.
pub fn perturb(
    cloud: &PointCloud,
    spec: &PerturbationSpec,
    seed: u64,
) -> Result<(PointCloud, SimilarityTransform)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = random_transform(spec, &mut rng);
    let mut out = truth.apply(cloud)?;
    out = add_gaussian_noise(&out, spec.noise_sigma, &mut rng);
    if spec.shuffle {
        out = shuffle_cloud(&out, &mut rng);
    }
    Ok((out, truth))
}

// ---------------------------------------------------------------------------
// Partial-view synthesis (hidden-point removal)

#[derive(Debug, Clone)]
pub struct PartialView {
    pub cloud: PointCloud,
    /// Set when fewer visible points existed than requested.
    pub truncated: bool,
}

/// Indices of points visible from `viewpoint` by the spherical-flip
/// hidden-point-removal criterion: flip every point radially about a sphere
/// centered at the viewpoint, then keep the points on the convex hull of the
/// flipped set plus the viewpoint.
fn visible_indices(cloud: &PointCloud, viewpoint: &[f64; 3]) -> Result<Vec<usize>> {
    let n = cloud.len();
    let mut flipped: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut max_norm = 0.0f64;
    let mut rel: Vec<[f64; 3]> = Vec::with_capacity(n);
    for p in cloud.points() {
        let d = [
            p[0] - viewpoint[0],
            p[1] - viewpoint[1],
            p[2] - viewpoint[2],
        ];
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        max_norm = max_norm.max(norm);
        rel.push(d);
    }
    let radius = 2.0 * max_norm;
    for d in &rel {
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateCloud("point coincides with viewpoint".into()));
        }
        let factor = 1.0 + 2.0 * (radius - norm) / norm;
        flipped.push(vec![d[0] * factor, d[1] * factor, d[2] * factor]);
    }
    flipped.push(vec![0.0, 0.0, 0.0]);

    let hull = chull::ConvexHull::try_new(&flipped, 1e-9, None)
        .map_err(|e| Error::DegenerateCloud(format!("hull failure: {e}")))?;
    let (vertices, _) = hull.vertices_indices();
    let key = |v: &[f64]| (v[0].to_bits(), v[1].to_bits(), v[2].to_bits());
    let lookup: HashMap<_, usize> = flipped[..n]
        .iter()
        .enumerate()
        .map(|(i, v)| (key(v), i))
        .collect();
    let mut visible: Vec<usize> = vertices.iter().filter_map(|v| lookup.get(&key(v)).copied()).collect();
    visible.sort_unstable();
    visible.dedup();
    Ok(visible)
}

/// Approximates a sparse multi-view capture: union of hidden-point-removal
/// visibility from `n_views` random viewpoints at 3x the cloud radius,
/// subsampled to `keep_points` by round-robin draws across views so density
/// stays view-biased.
pub fn synthesize_partial_view(
    cloud: &PointCloud,
    n_views: usize,
    keep_points: usize,
    seed: u64,
) -> Result<PartialView> {
    if cloud.dim() != 3 {
        return Err(Error::UnsupportedDimension(cloud.dim()));
    }
    if n_views == 0 || keep_points == 0 {
        return Err(Error::Config("n_views and keep_points must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroid = cloud.centroid();
    let radius = cloud
        .points()
        .map(|p| {
            p.iter()
                .zip(&centroid)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let normal: Normal<f64> = Normal::new(0.0, 1.0).unwrap();

    let mut per_view: Vec<Vec<usize>> = Vec::with_capacity(n_views);
    for _ in 0..n_views {
        let dir = loop {
            let v = [
                normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            ];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm > 1e-9 {
                break [v[0] / norm, v[1] / norm, v[2] / norm];
            }
        };
        let viewpoint = [
            centroid[0] + 3.0 * radius * dir[0],
            centroid[1] + 3.0 * radius * dir[1],
            centroid[2] + 3.0 * radius * dir[2],
        ];
        let mut vis = visible_indices(cloud, &viewpoint)?;
        vis.shuffle(&mut rng);
        per_view.push(vis);
    }

    let mut chosen = Vec::with_capacity(keep_points);
    let mut used = HashSet::new();
    let mut cursors = vec![0usize; n_views];
    'fill: loop {
        let mut progressed = false;
        for (view, cursor) in per_view.iter().zip(cursors.iter_mut()) {
            while *cursor < view.len() {
                let idx = view[*cursor];
                *cursor += 1;
                if used.insert(idx) {
                    chosen.push(idx);
                    progressed = true;
                    if chosen.len() == keep_points {
                        break 'fill;
                    }
                    break;
                }
            }
        }
        if !progressed {
            break;
        }
    }

    let truncated = chosen.len() < keep_points;
    let mut data = Vec::with_capacity(chosen.len() * 3);
    for i in &chosen {
        data.extend_from_slice(cloud.point(*i));
    }
    Ok(PartialView {
        cloud: PointCloud::new(3, data)?,
        truncated,
    })
}

// ---------------------------------------------------------------------------
// Synthetic objects

/// Built-in asymmetric test shapes, all roughly unit-sized; callers normalize
/// to the unit cube before registration.
pub fn synthetic_object(name: &str, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * 3);
    match name {
        "cube" => {
            for _ in 0..n {
                for _ in 0..3 {
                    data.push(rng.random_range(-0.5..0.5));
                }
            }
        }
        "helix" => {
            for i in 0..n {
                let t = 4.0 * std::f64::consts::PI * i as f64 / n as f64;
                let jitter = 0.02;
                data.push(0.5 * t.cos() + rng.random_range(-jitter..jitter));
                data.push(0.5 * t.sin() + rng.random_range(-jitter..jitter));
                data.push(t / (4.0 * std::f64::consts::PI) - 0.5 + rng.random_range(-jitter..jitter));
            }
        }
        "lshape" => {
            // Two slabs along x and y; volumes 1 : 0.7 of each arm.
            for _ in 0..n {
                let arm_x = rng.random::<f64>() < 10.0 / 17.0;
                if arm_x {
                    data.push(rng.random_range(0.0..1.0));
                    data.push(rng.random_range(0.0..0.3));
                } else {
                    data.push(rng.random_range(0.0..0.3));
                    data.push(rng.random_range(0.3..1.0));
                }
                data.push(rng.random_range(0.0..0.3));
            }
        }
        "sphere" => {
            let normal: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
            for _ in 0..n {
                let v = [
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                ];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
                data.extend([v[0] / norm * 0.5, v[1] / norm * 0.5, v[2] / norm * 0.5]);
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown synthetic object {other:?}; choose cube, helix, lshape or sphere"
            )))
        }
    }
    PointCloud::new(3, data).map(|c| c.with_name(name))
}

// ---------------------------------------------------------------------------
// Config

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub version: u32,
    pub master_seed: u64,
    pub trials: usize,
    pub points: usize,
    pub methods: Vec<String>,
    pub objects: Vec<ObjectSpec>,
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub partial_view: Option<PartialViewConfig>,
    /// Optional iteration cap override, used e.g. for timing sweeps.
    #[serde(default)]
    pub solver_max_iterations: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    /// Path to a cloud (.xyz/.ply) or mesh (.obj); synthetic shape otherwise.
    #[serde(default)]
    pub path: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub rotation_range_deg: [f64; 2],
    pub translation_range: [f64; 2],
    pub sigmas: Vec<f64>,
    #[serde(default)]
    pub scale_range: Option<[f64; 2]>,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartialViewConfig {
    pub n_views: usize,
    pub keep_points: usize,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<BenchConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io::io_err(path, e))?;
    let config: BenchConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fls,
    FlsIcp,
    Icp,
    FlsScale,
    FlsIcpScale,
}

impl Method {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "fls" => Method::Fls,
            "fls-icp" => Method::FlsIcp,
            "icp" => Method::Icp,
            "fls-scale" => Method::FlsScale,
            "fls-icp-scale" => Method::FlsIcpScale,
            other => {
                return Err(Error::Config(format!(
                    "unknown method {other:?}; choose fls, fls-icp, icp, fls-scale, fls-icp-scale"
                )))
            }
        })
    }

    fn name(self) -> &'static str {
        match self {
            Method::Fls => "fls",
            Method::FlsIcp => "fls-icp",
            Method::Icp => "icp",
            Method::FlsScale => "fls-scale",
            Method::FlsIcpScale => "fls-icp-scale",
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Config(format!("unsupported config version {}", self.version)));
        }
        if self.trials == 0 || self.points == 0 || self.objects.is_empty() || self.methods.is_empty()
        {
            return Err(Error::Config(
                "trials, points, objects and methods must all be nonempty".into(),
            ));
        }
        for m in &self.methods {
            Method::parse(m)?;
        }
        if self.perturbation.sigmas.is_empty() {
            return Err(Error::Config("at least one sigma required".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Trial records and reports

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub object: String,
    pub method: String,
    pub sigma: f64,
    pub trial: usize,
    pub scale_gt: f64,
    pub scale_est: f64,
    pub rot_err_deg: f64,
    pub trans_err: f64,
    pub scale_err: f64,
    pub time_s: f64,
    pub iterations: usize,
    pub failed: bool,
    pub exact: bool,
    /// Row-major ground-truth rotation plus translation and scale.
    pub gt_transform: Vec<f64>,
    pub est_transform: Vec<f64>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub sigma: f64,
    pub trials: usize,
    pub failure_rate: f64,
    pub exact_rate: f64,
    /// Error statistics over non-failed trials only.
    pub mean_rot_err_deg: f64,
    pub std_rot_err_deg: f64,
    pub mean_trans_err: f64,
    pub std_trans_err: f64,
    pub mean_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
}

/// Failure and exact-recovery classification thresholds.
pub(crate) fn classify(rot_err_deg: f64, trans_err: f64) -> (bool, bool) {
    let failed = !(rot_err_deg.is_finite() && trans_err.is_finite())
        || rot_err_deg > 45.0
        || trans_err > 0.5;
    let exact = !failed && rot_err_deg < 5.0 && trans_err < 0.03;
    (failed, exact)
}

/// splitmix64-style mixing so each trial owns an independent RNG stream
/// derived from (master seed, grid indices), independent of scheduling.
fn trial_seed(master: u64, parts: &[u64]) -> u64 {
    let mut state = master;
    for &p in parts {
        state = state
            .wrapping_add(0x9e3779b97f4a7c15)
            .wrapping_add(p.wrapping_mul(0xbf58476d1ce4e5b9));
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        state = z ^ (z >> 31);
    }
    state
}

fn flatten_transform(t: &SimilarityTransform) -> Vec<f64> {
    let mut out = Vec::with_capacity(13);
    out.push(t.scale());
    for r in 0..t.dim() {
        for c in 0..t.dim() {
            out.push(t.rotation()[(r, c)]);
        }
    }
    out.extend(t.translation().iter());
    out
}

fn prepare_object(spec: &ObjectSpec, points: usize, seed: u64) -> Result<PointCloud> {
    let raw = match &spec.path {
        Some(path) => {
            if path.ends_with(".obj") {
                let mesh = io::load_mesh(path)?;
                io::sample_mesh(&mesh, points, seed)?
            } else {
                let cloud = io::load_cloud(path, None)?;
                if cloud.len() > points {
                    // Deterministic subsample without replacement.
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut order: Vec<usize> = (0..cloud.len()).collect();
                    order.shuffle(&mut rng);
                    let mut data = Vec::with_capacity(points * cloud.dim());
                    for &i in order.iter().take(points) {
                        data.extend_from_slice(cloud.point(i));
                    }
                    PointCloud::new(cloud.dim(), data)?
                } else {
                    cloud
                }
            }
        }
        None => synthetic_object(&spec.name, points, seed)?,
    };
    let (normalized, _) = normalize_to_unit_cube(&raw)?;
    Ok(normalized.with_name(spec.name.clone()))
}

struct TrialTask {
    object: String,
    method: Method,
    sigma: f64,
    trial: usize,
    seed: u64,
}

fn run_trial(source: &PointCloud, task: &TrialTask, config: &BenchConfig) -> TrialRecord {
    let spec = PerturbationSpec {
        rotation_range: (
            config.perturbation.rotation_range_deg[0].to_radians(),
            config.perturbation.rotation_range_deg[1].to_radians(),
        ),
        translation_range: (
            config.perturbation.translation_range[0],
            config.perturbation.translation_range[1],
        ),
        noise_sigma: task.sigma,
        scale_range: config.perturbation.scale_range.map(|r| (r[0], r[1])),
        shuffle: config.perturbation.shuffle,
    };

    let mut record = TrialRecord {
        object: task.object.clone(),
        method: task.method.name().to_string(),
        sigma: task.sigma,
        trial: task.trial,
        scale_gt: f64::NAN,
        scale_est: f64::NAN,
        rot_err_deg: f64::NAN,
        trans_err: f64::NAN,
        scale_err: f64::NAN,
        time_s: 0.0,
        iterations: 0,
        failed: true,
        exact: false,
        gt_transform: Vec::new(),
        est_transform: Vec::new(),
        error: None,
    };

    let outcome = (|| -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
        let truth = random_transform(&spec, &mut rng);
        let mut target = truth.apply(source)?;
        // Crop before adding noise: visibility is a property of the clean
        // geometry, sensor noise comes afterwards.
        if let Some(pv) = &config.partial_view {
            target =
                synthesize_partial_view(&target, pv.n_views, pv.keep_points, task.seed ^ 0x5eed)?
                    .cloud;
        }
        target = add_gaussian_noise(&target, spec.noise_sigma, &mut rng);
        if spec.shuffle {
            target = shuffle_cloud(&target, &mut rng);
        }

        let mut fls_config = FlsConfig::default();
        if let Some(cap) = config.solver_max_iterations {
            fls_config.solver.max_iterations = cap;
        }
        let identity = SimilarityTransform::identity(3);
        let start = std::time::Instant::now();
        let result = match task.method {
            Method::Fls => register(source, &target, &fls_config, truth.scale(), &identity)?,
            Method::FlsIcp => {
                let coarse = register(source, &target, &fls_config, truth.scale(), &identity)?;
                icp::refine(source, &target, &coarse.transform, &IcpOptions::default())?
            }
            Method::Icp => {
                let init = identity.with_scale(truth.scale())?;
                icp::refine(source, &target, &init, &IcpOptions::default())?
            }
            Method::FlsScale => register_with_unknown_scale(source, &target, &fls_config, &identity)?,
            Method::FlsIcpScale => {
                let coarse = register_with_unknown_scale(source, &target, &fls_config, &identity)?;
                icp::refine(source, &target, &coarse.transform, &IcpOptions::default())?
            }
        };
        record.time_s = start.elapsed().as_secs_f64();
        record.iterations = result.iterations;
        record.scale_gt = truth.scale();
        record.scale_est = result.transform.scale();
        record.scale_err = (record.scale_est - record.scale_gt).abs() / record.scale_gt;
        record.rot_err_deg = rotation_error_deg(result.transform.rotation(), truth.rotation())?;
        record.trans_err =
            translation_error(result.transform.translation(), truth.translation())?;
        record.gt_transform = flatten_transform(&truth);
        record.est_transform = flatten_transform(&result.transform);
        let (failed, exact) = classify(record.rot_err_deg, record.trans_err);
        record.failed = failed;
        record.exact = exact;
        Ok(())
    })();

    if let Err(e) = outcome {
        record.error = Some(e.to_string());
    }
    record
}

fn aggregate(records: &[TrialRecord]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, u64), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.method.clone(), r.sigma.to_bits()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((method, sigma_bits), rs)| {
            let n = rs.len();
            let ok: Vec<&&TrialRecord> = rs.iter().filter(|r| !r.failed).collect();
            let mean = |f: &dyn Fn(&TrialRecord) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            let std = |f: &dyn Fn(&TrialRecord) -> f64, m: f64| {
                if ok.len() < 2 {
                    f64::NAN
                } else {
                    (ok.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / (ok.len() - 1) as f64)
                        .sqrt()
                }
            };
            let mean_rot = mean(&|r| r.rot_err_deg);
            let mean_trans = mean(&|r| r.trans_err);
            Aggregate {
                method,
                sigma: f64::from_bits(sigma_bits),
                trials: n,
                failure_rate: rs.iter().filter(|r| r.failed).count() as f64 / n as f64,
                exact_rate: rs.iter().filter(|r| r.exact).count() as f64 / n as f64,
                mean_rot_err_deg: mean_rot,
                std_rot_err_deg: std(&|r| r.rot_err_deg, mean_rot),
                mean_trans_err: mean_trans,
                std_trans_err: std(&|r| r.trans_err, mean_trans),
                mean_time_s: rs.iter().map(|r| r.time_s).sum::<f64>() / n as f64,
            }
        })
        .collect()
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let workers = std::env::var("FLS_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Runs the full grid (objects x sigmas x trials x methods). Individual
/// trial errors become failed records; they never abort the run.
pub fn run_experiment(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let methods: Vec<Method> = config
        .methods
        .iter()
        .map(|m| Method::parse(m))
        .collect::<Result<_>>()?;

    let mut objects = Vec::with_capacity(config.objects.len());
    for (i, spec) in config.objects.iter().enumerate() {
        objects.push(prepare_object(
            spec,
            config.points,
            trial_seed(config.master_seed, &[0xb05e, i as u64]),
        )?);
    }

    let mut tasks = Vec::new();
    for (oi, object) in config.objects.iter().enumerate() {
        for (si, &sigma) in config.perturbation.sigmas.iter().enumerate() {
            for trial in 0..config.trials {
                for &method in &methods {
                    tasks.push((
                        oi,
                        TrialTask {
                            object: object.name.clone(),
                            method,
                            sigma,
                            trial,
                            // Same perturbation for every method in a cell so
                            // method comparisons are paired.
                            seed: trial_seed(
                                config.master_seed,
                                &[oi as u64, si as u64, trial as u64],
                            ),
                        },
                    ));
                }
            }
        }
    }

    let pool = worker_pool()?;
    let records: Vec<TrialRecord> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(oi, task)| run_trial(&objects[*oi], task, config))
            .collect()
    });

    let aggregates = aggregate(&records);
    Ok(BenchReport {
        records,
        aggregates,
    })
}

// ---------------------------------------------------------------------------
// Artifacts

fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Deterministic per-trial results; wall times deliberately excluded (see
/// `timings_csv`).
pub fn results_csv(report: &BenchReport) -> String {
    let mut out = String::from("object,method,sigma,scale_gt,scale_est,rot_err_deg,trans_err,failed,exact\n");
    for r in &report.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.object,
            r.method,
            fmt_float(r.sigma),
            fmt_float(r.scale_gt),
            fmt_float(r.scale_est),
            fmt_float(r.rot_err_deg),
            fmt_float(r.trans_err),
            r.failed,
            r.exact
        )
        .unwrap();
    }
    out
}

pub fn timings_csv(report: &BenchReport) -> String {
    let mut out = String::from("object,method,sigma,trial,time_s\n");
    for r in &report.records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.object,
            r.method,
            fmt_float(r.sigma),
            r.trial,
            fmt_float(r.time_s)
        )
        .unwrap();
    }
    out
}

/// Writes `results.csv`, `timings.csv` and `report.json` into `out_dir`.
pub fn write_artifacts(report: &BenchReport, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| io::io_err(dir, e))?;
    let write = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| io::io_err(&path, e))
    };
    write("results.csv", results_csv(report))?;
    write("timings.csv", timings_csv(report))?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
    write("report.json", json)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec() -> PerturbationSpec {
        PerturbationSpec {
            rotation_range: (0.0, std::f64::consts::FRAC_PI_2),
            translation_range: (1.0, 2.0),
            noise_sigma: 0.0,
            scale_range: None,
            shuffle: false,
        }
    }

    #[test]
    fn zero_angle_rotation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = random_rotation((0.0, 0.0), &mut rng);
        assert!((r - DMatrix::identity(3, 3)).amax() < 1e-15);
    }

    #[test]
    fn random_rotation_is_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let r = random_rotation((-1.5, 1.5), &mut rng);
            assert!((r.transpose() * &r - DMatrix::identity(3, 3)).amax() < 1e-12);
            assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_angle_matches_geodesic_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for theta in [0.1, 0.7, 1.3, 2.9] {
            let r = random_rotation((theta, theta), &mut rng);
            let err = rotation_error_deg(&DMatrix::identity(3, 3), &r).unwrap();
            assert_abs_diff_eq!(err, theta.to_degrees(), epsilon = 1e-9);
        }
    }

    #[test]
    fn perturb_without_noise_is_exact_transform() {
        let cloud = synthetic_object("cube", 100, 3).unwrap();
        let (out, truth) = perturb(&cloud, &spec(), 7).unwrap();
        let expected = truth.apply(&cloud).unwrap();
        assert_eq!(out.coords(), expected.coords());
    }

    #[test]
    fn perturb_is_deterministic() {
        let cloud = synthetic_object("cube", 100, 3).unwrap();
        let mut s = spec();
        s.noise_sigma = 0.02;
        s.shuffle = true;
        let (a, ta) = perturb(&cloud, &s, 11).unwrap();
        let (b, tb) = perturb(&cloud, &s, 11).unwrap();
        assert_eq!(a.coords(), b.coords());
        assert_eq!(ta.translation(), tb.translation());
    }

    #[test]
    fn noise_std_in_expected_band() {
        let cloud = synthetic_object("cube", 10_000, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noisy = add_gaussian_noise(&cloud, 0.02, &mut rng);
        for d in 0..3 {
            let diffs: Vec<f64> = (0..cloud.len())
                .map(|i| noisy.point(i)[d] - cloud.point(i)[d])
                .collect();
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let var = diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                / (diffs.len() - 1) as f64;
            let std = var.sqrt();
            assert!((0.019..=0.021).contains(&std), "std {std}");
        }
    }

    #[test]
    fn hidden_point_removal_drops_far_side_of_sphere() {
        let sphere = synthetic_object("sphere", 2000, 6).unwrap();
        let pv = synthesize_partial_view(&sphere, 1, 2000, 0).unwrap();
        assert!(pv.truncated, "one view of a sphere cannot keep every point");
        // View direction is seed-dependent; recover it as the direction the
        // retained hemisphere leans toward.
        let c = pv.cloud.centroid();
        let norm = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        assert!(norm > 0.05, "retained set should be one-sided, centroid {c:?}");
        let dir = [c[0] / norm, c[1] / norm, c[2] / norm];
        for p in pv.cloud.points() {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let inward_dot = -(p[0] * dir[0] + p[1] * dir[1] + p[2] * dir[2]) / r;
            assert!(
                inward_dot < 0.95,
                "far-side point retained: {p:?}, inward dot {inward_dot}"
            );
        }
    }

    #[test]
    fn partial_view_keeps_requested_count() {
        let cloud = synthetic_object("sphere", 4096, 7).unwrap();
        let pv = synthesize_partial_view(&cloud, 3, 512, 9).unwrap();
        assert_eq!(pv.cloud.len(), 512);
        assert!(!pv.truncated);
    }

    #[test]
    fn many_views_approach_full_cloud() {
        let cloud = synthetic_object("sphere", 800, 8).unwrap();
        let pv = synthesize_partial_view(&cloud, 16, 800, 1).unwrap();
        assert!(
            pv.cloud.len() as f64 >= 0.9 * 800.0,
            "kept {} of 800",
            pv.cloud.len()
        );
    }

    #[test]
    fn classification_thresholds() {
        assert_eq!(classify(4.9, 0.029), (false, true));
        assert_eq!(classify(5.1, 0.01), (false, false));
        assert_eq!(classify(46.0, 0.01), (true, false));
        assert_eq!(classify(1.0, 0.51), (true, false));
        assert_eq!(classify(f64::NAN, 0.0), (true, false));
    }

    #[test]
    fn config_round_trip() {
        let text = r#"
version = 1
master_seed = 42
trials = 2
points = 128
methods = ["fls"]

[[objects]]
name = "cube"

[perturbation]
rotation_range_deg = [0.0, 30.0]
translation_range = [0.0, 0.2]
sigmas = [0.0]
"#;
        let config: BenchConfig = toml::from_str(text).unwrap();
        config.validate().unwrap();
        assert_eq!(config.objects[0].name, "cube");
        assert!(config.perturbation.shuffle);
    }

    #[test]
    fn mini_experiment_runs_and_is_deterministic() {
        let config = BenchConfig {
            version: 1,
            master_seed: 99,
            trials: 2,
            points: 192,
            methods: vec!["fls".into()],
            objects: vec![ObjectSpec {
                name: "cube".into(),
                path: None,
            }],
            perturbation: PerturbationConfig {
                rotation_range_deg: [0.0, 20.0],
                translation_range: [0.0, 0.1],
                sigmas: vec![0.0],
                scale_range: None,
                shuffle: true,
            },
            partial_view: None,
            solver_max_iterations: None,
        };
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.records.len(), 2);
        assert_eq!(results_csv(&a), results_csv(&b));
        assert!(a.records.iter().all(|r| r.exact), "records: {:#?}", a.records);
        assert_eq!(a.aggregates.len(), 1);
        assert_eq!(a.aggregates[0].exact_rate, 1.0);
    }

    #[test]
    fn trial_errors_become_failed_records() {
        // Two identical points: TRIMs degenerate, scale estimation errors out.
        let config = BenchConfig {
            version: 1,
            master_seed: 1,
            trials: 1,
            points: 64,
            methods: vec!["fls-scale".into()],
            objects: vec![ObjectSpec {
                name: "nonexistent-shape".into(),
                path: None,
            }],
            perturbation: PerturbationConfig {
                rotation_range_deg: [0.0, 10.0],
                translation_range: [0.0, 0.1],
                sigmas: vec![0.0],
                scale_range: None,
                shuffle: false,
            },
            partial_view: None,
            solver_max_iterations: None,
        };
        // Unknown object fails at preparation, which is a config error.
        assert!(run_experiment(&config).is_err());
    }
}
