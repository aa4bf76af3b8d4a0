//! Seeded synthetic measure pairs.
//!
//! Every draw uses its own ChaCha stream of the spec's seed, so train and
//! test sets never share random numbers and adding test points does not
//! change the training set.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{gaussian_ot_map, psd_sqrt, AffineMap, GaussianMoments};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Toy2d {
    /// Upper half-moon onto the interleaved lower one.
    Moons,
    /// Three angular bumps on an annulus onto the same bumps rotated and pushed outward.
    Annulus,
    /// Two stacked clusters on the left onto two stacked clusters on the right.
    Crossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphereShape {
    /// Three bumps around the north pole onto three around the equator.
    Bumps,
    /// One bump near the north pole onto one near the south pole.
    Antipodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Line1d {
    /// `U[0, 1]` onto `U[2, 4]`; ground truth `x ↦ 2x + 2`.
    UniformAffine,
    /// `N(0, 1)` onto an equal mixture of `N(−2, 0.5²)` and `N(2, 0.5²)`.
    Bimodal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum DatasetKind {
    /// Random Gaussian pair in `R^dim`, or the given moments.
    GaussianPair {
        dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        moments: Option<ExplicitMoments>,
    },
    GaussianMixturePair {
        dim: usize,
        components: usize,
    },
    Toy2d {
        name: Toy2d,
    },
    SpherePair {
        name: SphereShape,
    },
    Line1d {
        name: Line1d,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitMoments {
    pub source_mean: Vec<f64>,
    pub source_cov: Vec<Vec<f64>>,
    pub target_mean: Vec<f64>,
    pub target_cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default)]
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Train and test draws from a source `μ` and a target `ν`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x_train: Array2<f64>,
    pub x_test: Array2<f64>,
    pub y_train: Array2<f64>,
    pub y_test: Array2<f64>,
    pub ground_truth: Option<AffineMap>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.x_train.ncols()
    }
}

/// Source and target moments together with the affine OT map between them.
#[derive(Debug, Clone)]
pub struct GaussianPair {
    pub source: GaussianMoments,
    pub target: GaussianMoments,
    pub ground_truth: AffineMap,
}

impl GaussianPair {
    pub fn new(source: GaussianMoments, target: GaussianMoments) -> Result<Self> {
        let (a, b) = gaussian_ot_map(&source, &target)?;
        Ok(Self { source, target, ground_truth: AffineMap::new(a, b)? })
    }

    /// Random pair: covariances `BᵀB/d + 0.1·I` with standard-normal `B`,
    /// source mean 0 and a standard-normal target mean.
    pub fn random(d: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let source = GaussianMoments::new(Array1::zeros(d), random_covariance(d, 1.0, rng))?;
        let mean = Array1::from_shape_simple_fn(d, || rng.sample(StandardNormal));
        let target = GaussianMoments::new(mean, random_covariance(d, 1.0, rng))?;
        Self::new(source, target)
    }
}

fn random_covariance(d: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let b = Array2::from_shape_simple_fn((d, d), || rng.sample::<f64, _>(StandardNormal));
    b.t().dot(&b) * (scale / d as f64) + Array2::<f64>::eye(d) * 0.1
}

fn gaussian_draw(m: &GaussianMoments, n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let root = psd_sqrt(&m.covariance)?;
    let z = Array2::from_shape_simple_fn((n, m.dim()), || rng.sample::<f64, _>(StandardNormal));
    Ok(z.dot(&root) + &m.mean)
}

/// Equal-weight Gaussian mixture.
struct Mixture {
    components: Vec<GaussianMoments>,
}

impl Mixture {
    fn random(d: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let components = (0..k)
            .map(|_| {
                let mean = Array1::from_shape_simple_fn(d, || rng.random_range(-4.0..4.0));
                GaussianMoments::new(mean, random_covariance(d, 0.25, rng))
            })
            .collect::<Result<_>>()?;
        Ok(Self { components })
    }

    fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let d = self.components[0].dim();
        let roots: Vec<Array2<f64>> = self.components.iter().map(|c| psd_sqrt(&c.covariance)).collect::<Result<_>>()?;
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            let k = rng.random_range(0..self.components.len());
            let z = Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal));
            row.assign(&(roots[k].dot(&z) + &self.components[k].mean));
        }
        Ok(out)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn toy_draw(name: Toy2d, target: bool, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut out = Array2::zeros((n, 2));
    for mut row in out.rows_mut() {
        let (x, y) = match name {
            Toy2d::Moons => {
                let t = rng.random_range(0.0..PI);
                let (x, y) = if target { (1.0 - t.cos(), 0.5 - t.sin()) } else { (t.cos(), t.sin()) };
                (x + 0.05 * normal(rng), y + 0.05 * normal(rng))
            }
            Toy2d::Annulus => {
                let bump = rng.random_range(0..3) as f64;
                let theta = bump * 2.0 * PI / 3.0 + 0.3 * normal(rng) + if target { PI / 3.0 } else { 0.0 };
                let r = if target { rng.random_range(2.0..2.5) } else { rng.random_range(1.0..1.5) };
                (r * theta.cos(), r * theta.sin())
            }
            Toy2d::Crossing => {
                let up = rng.random_bool(0.5);
                let cy = if up { 1.0 } else { -1.0 };
                let cx = if target { 2.0 } else { -2.0 };
                (cx + 0.15 * normal(rng), cy + 0.15 * normal(rng))
            }
        };
        row[0] = x;
        row[1] = y;
    }
    out
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn sphere_draw(name: SphereShape, target: bool, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let centers: Vec<[f64; 3]> = match (name, target) {
        (SphereShape::Bumps, false) => (0..3)
            .map(|k| {
                let a = k as f64 * 2.0 * PI / 3.0;
                unit([0.5 * a.cos(), 0.5 * a.sin(), 1.0])
            })
            .collect(),
        (SphereShape::Bumps, true) => (0..3)
            .map(|k| {
                let a = k as f64 * 2.0 * PI / 3.0 + PI / 3.0;
                [a.cos(), a.sin(), 0.0]
            })
            .collect(),
        (SphereShape::Antipodal, false) => vec![unit([0.3, 0.0, 1.0])],
        (SphereShape::Antipodal, true) => vec![unit([0.0, 0.3, -1.0])],
    };
    let mut out = Array2::zeros((n, 3));
    for mut row in out.rows_mut() {
        let c = centers[rng.random_range(0..centers.len())];
        let p = unit([c[0] + 0.15 * normal(rng), c[1] + 0.15 * normal(rng), c[2] + 0.15 * normal(rng)]);
        row.iter_mut().zip(p).for_each(|(r, v)| *r = v);
    }
    out
}

fn line_draw(name: Line1d, target: bool, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, 1), || match (name, target) {
        (Line1d::UniformAffine, false) => rng.random_range(0.0..1.0),
        (Line1d::UniformAffine, true) => rng.random_range(2.0..4.0),
        (Line1d::Bimodal, false) => normal(rng),
        (Line1d::Bimodal, true) => {
            let c = if rng.random_bool(0.5) { 2.0 } else { -2.0 };
            c + 0.5 * normal(rng)
        }
    })
}

fn to_matrix(rows: &[Vec<f64>], d: usize) -> Result<Array2<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: rows.len() });
    }
    Ok(Array2::from_shape_fn((d, d), |(i, j)| rows[i][j]))
}

// stream ids under the spec seed
const STREAM_SETUP: u64 = 0;
const STREAM_X_TRAIN: u64 = 1;
const STREAM_X_TEST: u64 = 2;
const STREAM_Y_TRAIN: u64 = 3;
const STREAM_Y_TEST: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl DatasetSpec {
    pub fn dim(&self) -> usize {
        match &self.kind {
            DatasetKind::GaussianPair { dim, .. } | DatasetKind::GaussianMixturePair { dim, .. } => *dim,
            DatasetKind::Toy2d { .. } => 2,
            DatasetKind::SpherePair { .. } => 3,
            DatasetKind::Line1d { .. } => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train < 2 || self.n_test < 2 {
            return Err(Error::Config("n_train and n_test must be at least 2".into()));
        }
        match &self.kind {
            DatasetKind::GaussianPair { dim: 0, .. } | DatasetKind::GaussianMixturePair { dim: 0, .. } => {
                Err(Error::Config("dim must be positive".into()))
            }
            DatasetKind::GaussianMixturePair { components: 0, .. } => Err(Error::Config("components must be positive".into())),
            _ => Ok(()),
        }
    }

    /// The Gaussian pair behind a `GaussianPair` spec.
    pub fn gaussian_pair(&self) -> Result<Option<GaussianPair>> {
        let DatasetKind::GaussianPair { dim, moments } = &self.kind else {
            return Ok(None);
        };
        let d = *dim;
        let pair = match moments {
            Some(m) => {
                let src = GaussianMoments::new(Array1::from(m.source_mean.clone()), to_matrix(&m.source_cov, d)?)?;
                let tgt = GaussianMoments::new(Array1::from(m.target_mean.clone()), to_matrix(&m.target_cov, d)?)?;
                if src.dim() != d || tgt.dim() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: src.dim().max(tgt.dim()) });
                }
                GaussianPair::new(src, tgt)?
            }
            None => GaussianPair::random(d, &mut stream(self.seed, STREAM_SETUP))?,
        };
        Ok(Some(pair))
    }
}

/// Draws train and test sets for `spec`.
pub fn sample(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n_tr, n_te) = (spec.n_train, spec.n_test);
    let mut rx_tr = stream(spec.seed, STREAM_X_TRAIN);
    let mut rx_te = stream(spec.seed, STREAM_X_TEST);
    let mut ry_tr = stream(spec.seed, STREAM_Y_TRAIN);
    let mut ry_te = stream(spec.seed, STREAM_Y_TEST);
    let mut ground_truth = None;
    let (x_train, x_test, y_train, y_test) = match &spec.kind {
        DatasetKind::GaussianPair { .. } => {
            let pair = spec.gaussian_pair()?.expect("gaussian kind");
            let out = (
                gaussian_draw(&pair.source, n_tr, &mut rx_tr)?,
                gaussian_draw(&pair.source, n_te, &mut rx_te)?,
                gaussian_draw(&pair.target, n_tr, &mut ry_tr)?,
                gaussian_draw(&pair.target, n_te, &mut ry_te)?,
            );
            ground_truth = Some(pair.ground_truth);
            out
        }
        DatasetKind::GaussianMixturePair { dim, components } => {
            let mut setup = stream(spec.seed, STREAM_SETUP);
            let src = Mixture::random(*dim, *components, &mut setup)?;
            let tgt = Mixture::random(*dim, *components, &mut setup)?;
            (src.draw(n_tr, &mut rx_tr)?, src.draw(n_te, &mut rx_te)?, tgt.draw(n_tr, &mut ry_tr)?, tgt.draw(n_te, &mut ry_te)?)
        }
        DatasetKind::Toy2d { name } => (
            toy_draw(*name, false, n_tr, &mut rx_tr),
            toy_draw(*name, false, n_te, &mut rx_te),
            toy_draw(*name, true, n_tr, &mut ry_tr),
            toy_draw(*name, true, n_te, &mut ry_te),
        ),
        DatasetKind::SpherePair { name } => (
            sphere_draw(*name, false, n_tr, &mut rx_tr),
            sphere_draw(*name, false, n_te, &mut rx_te),
            sphere_draw(*name, true, n_tr, &mut ry_tr),
            sphere_draw(*name, true, n_te, &mut ry_te),
        ),
        DatasetKind::Line1d { name } => {
            if *name == Line1d::UniformAffine {
                ground_truth = Some(AffineMap::new(Array2::from_elem((1, 1), 2.0), Array1::from_elem(1, 2.0))?);
            }
            (
                line_draw(*name, false, n_tr, &mut rx_tr),
                line_draw(*name, false, n_te, &mut rx_te),
                line_draw(*name, true, n_tr, &mut ry_tr),
                line_draw(*name, true, n_te, &mut ry_te),
            )
        }
    };
    Ok(Dataset { x_train, x_test, y_train, y_test, ground_truth })
}

/// The map pairing the `k`-th smallest of `xs` with the `k`-th smallest of
/// `ys`, returned as images in the order of `xs`. Ties keep input order.
pub fn monotone_rearrangement_1d(xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::SizeMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("1-d samples"));
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut sorted_y = ys.to_vec();
    sorted_y.sort_by(f64::total_cmp);
    let mut out = vec![0.0; xs.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = sorted_y[rank];
    }
    Ok(out)
}

/// Writes one point per row with a `x0,x1,…` header.
pub fn write_points_csv(mut w: impl Write, points: ArrayView2<'_, f64>) -> std::io::Result<()> {
    let header: Vec<String> = (0..points.ncols()).map(|k| format!("x{k}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in points.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Reads points written by [`write_points_csv`]; a non-numeric first line is a header.
pub fn read_points_csv(r: impl BufRead) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if k == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("line {}: {e}", k + 1))),
        }
    }
    let d = rows.first().map(Vec::len).ok_or(Error::Empty("csv points"))?;
    if let Some(bad) = rows.iter().position(|r| r.len() != d) {
        return Err(Error::Parse(format!("row {} has {} columns, expected {d}", bad + 1, rows[bad].len())));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((flat.len() / d, d), flat).map_err(|e| Error::Parse(e.to_string()))
}
