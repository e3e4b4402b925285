//! Point cloud values, text file formats, normalisation, augmentation and
//! the synthetic shape dataset.

mod dataset;
mod io;
mod store;

pub use dataset::{generate_dataset, split_train_test, DatasetSpec, ShapeClass, DEFAULT_CLASSES};
pub use io::{read_cloud, write_cloud, CloudFormat};
pub use store::{Dataset, Sample, Split, MANIFEST_HEADER};

use rand::Rng;

use crate::error::{Error, Result};

pub type Point = [f32; 3];

/// An ordered list of 3-D points. Order is meaningful: samplers return
/// indices into it, so nothing here reorders points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub label: Option<usize>,
    pub source_path: Option<String>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must hold at least one point"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite(format!("coordinate of point {i}")));
        }
        Ok(Self {
            points,
            label: None,
            source_path: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Rows at `indices`, in that order, copied bit-for-bit.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            label: self.label,
            source_path: self.source_path.clone(),
        }
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0f64; 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] += f64::from(p[d]);
            }
        }
        c.map(|v| v / self.points.len() as f64)
    }

    /// Flat `n×3` coordinate buffer.
    pub fn flat(&self) -> Vec<f32> {
        self.points.iter().flatten().copied().collect()
    }

    /// Largest pairwise distance (brute force).
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.max(dist2(a, b));
            }
        }
        best.sqrt()
    }
}

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = f64::from(a[0]) - f64::from(b[0]);
    let dy = f64::from(a[1]) - f64::from(b[1]);
    let dz = f64::from(a[2]) - f64::from(b[2]);
    dx * dx + dy * dy + dz * dz
}

/// Centres the cloud on its centroid and scales the farthest point onto the
/// unit sphere. A cloud whose points all coincide collapses to the origin.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> PointCloud {
    let c = cloud.centroid();
    let centred: Vec<[f64; 3]> = cloud
        .points
        .iter()
        .map(|p| [0, 1, 2].map(|d| f64::from(p[d]) - c[d]))
        .collect();
    let max_norm = centred
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0, f64::max);
    let scale = if max_norm > 0.0 { max_norm } else { 1.0 };
    PointCloud {
        points: centred
            .iter()
            .map(|p| p.map(|v| (v / scale) as f32))
            .collect(),
        label: cloud.label,
        source_path: cloud.source_path.clone(),
    }
}

/// Random rotation and isotropic scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub rotation: bool,
    /// Draw the rotation from all of SO(3) instead of about z only.
    pub full_rotation: bool,
    pub scale_range: (f64, f64),
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            rotation: true,
            full_rotation: false,
            scale_range: (0.8, 1.25),
        }
    }
}

pub fn augment<R: Rng + ?Sized>(cloud: &PointCloud, rng: &mut R, aug: &Augmentation) -> Result<PointCloud> {
    let (lo, hi) = aug.scale_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::invalid(format!(
            "scale range [{lo}, {hi}] must satisfy 0 < lo <= hi"
        )));
    }
    let rot = if !aug.rotation {
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    } else if aug.full_rotation {
        random_rotation(rng)
    } else {
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    };
    let scale = if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let v = p.map(f64::from);
            [0, 1, 2].map(|r| {
                (scale * (rot[r][0] * v[0] + rot[r][1] * v[1] + rot[r][2] * v[2])) as f32
            })
        })
        .collect();
    Ok(PointCloud {
        points,
        label: cloud.label,
        source_path: cloud.source_path.clone(),
    })
}

/// Uniform rotation from a random unit quaternion.
fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
        b * (tau * u3).cos(),
    );
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}
