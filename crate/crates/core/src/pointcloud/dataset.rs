use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{normalize_unit_sphere, PointCloud};
use crate::error::{Error, Result};

/// Analytic surfaces the synthetic dataset draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Torus,
    Cone,
    Pyramid,
    Ellipsoid,
    Helix,
}

pub const DEFAULT_CLASSES: [ShapeClass; 8] = [
    ShapeClass::Sphere,
    ShapeClass::Cube,
    ShapeClass::Cylinder,
    ShapeClass::Torus,
    ShapeClass::Cone,
    ShapeClass::Pyramid,
    ShapeClass::Ellipsoid,
    ShapeClass::Helix,
];

impl ShapeClass {
    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Torus => "torus",
            ShapeClass::Cone => "cone",
            ShapeClass::Pyramid => "pyramid",
            ShapeClass::Ellipsoid => "ellipsoid",
            ShapeClass::Helix => "helix",
        }
    }

    /// One point drawn uniformly (by area) from the surface.
    pub fn sample_surface<R: Rng + ?Sized>(self, rng: &mut R) -> [f64; 3] {
        match self {
            ShapeClass::Sphere => unit_sphere(rng),
            ShapeClass::Cube => {
                let face = rng.gen_range(0..6);
                let (u, v) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, u, v],
                    1 => [u, s, v],
                    _ => [u, v, s],
                }
            }
            ShapeClass::Cylinder => {
                // radius 1, height 2: lateral area 4π, each cap π
                let pick = rng.gen_range(0.0..6.0 * PI);
                let theta = rng.gen_range(0.0..TAU);
                if pick < 4.0 * PI {
                    [theta.cos(), theta.sin(), rng.gen_range(-1.0..1.0)]
                } else {
                    let r = rng.gen::<f64>().sqrt();
                    let z = if pick < 5.0 * PI { 1.0 } else { -1.0 };
                    [r * theta.cos(), r * theta.sin(), z]
                }
            }
            ShapeClass::Torus => {
                let (major, minor) = (1.0, 0.35);
                let v = loop {
                    let v = rng.gen_range(0.0..TAU);
                    if rng.gen::<f64>() * (major + minor) <= major + minor * v.cos() {
                        break v;
                    }
                };
                let u = rng.gen_range(0.0..TAU);
                let ring = major + minor * v.cos();
                [ring * u.cos(), ring * u.sin(), minor * v.sin()]
            }
            ShapeClass::Cone => {
                // base radius 1 at z=-1, apex at z=1
                let slant = 5f64.sqrt();
                let (lateral, base) = (PI * slant, PI);
                let theta = rng.gen_range(0.0..TAU);
                if rng.gen::<f64>() * (lateral + base) < lateral {
                    let t = rng.gen::<f64>().sqrt();
                    [t * theta.cos(), t * theta.sin(), 1.0 - 2.0 * t]
                } else {
                    let r = rng.gen::<f64>().sqrt();
                    [r * theta.cos(), r * theta.sin(), -1.0]
                }
            }
            ShapeClass::Pyramid => {
                let apex = [0.0, 0.0, 1.0];
                let corners = [[-1.0, -1.0, -1.0], [1.0, -1.0, -1.0], [1.0, 1.0, -1.0], [-1.0, 1.0, -1.0]];
                let side = 5f64.sqrt(); // 2·slant height / 2
                let (tri_area, base_area) = (side, 4.0);
                let pick = rng.gen::<f64>() * (4.0 * tri_area + base_area);
                if pick < 4.0 * tri_area {
                    let f = (pick / tri_area) as usize;
                    triangle(rng, corners[f], corners[(f + 1) % 4], apex)
                } else {
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), -1.0]
                }
            }
            ShapeClass::Ellipsoid => {
                let (a, b, c): (f64, f64, f64) = (1.0, 0.6, 0.35);
                let bound = (b * c).max(a * c).max(a * b);
                loop {
                    let u = unit_sphere(rng);
                    let w = ((b * c * u[0]).powi(2) + (a * c * u[1]).powi(2) + (a * b * u[2]).powi(2)).sqrt();
                    if rng.gen::<f64>() * bound <= w {
                        break [a * u[0], b * u[1], c * u[2]];
                    }
                }
            }
            ShapeClass::Helix => {
                // tube of radius 0.12 around two turns of a unit-radius helix
                let t = rng.gen_range(0.0..2.0 * TAU);
                let centre = [t.cos(), t.sin(), t / (2.0 * TAU) * 2.0 - 1.0];
                let phi = rng.gen_range(0.0..TAU);
                let radial = [t.cos(), t.sin(), 0.0];
                let r = 0.12;
                [
                    centre[0] + r * phi.cos() * radial[0],
                    centre[1] + r * phi.cos() * radial[1],
                    centre[2] + r * phi.sin(),
                ]
            }
        }
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DEFAULT_CLASSES
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape class '{s}'")))
    }
}

fn unit_sphere<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-12 {
            break v.map(|x| x / norm);
        }
    }
}

fn triangle<R: Rng + ?Sized>(rng: &mut R, a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    [0, 1, 2].map(|d| a[d] + u * (b[d] - a[d]) + v * (c[d] - a[d]))
}

/// Parameters of the synthetic labelled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub class_names: Vec<String>,
    pub per_class: usize,
    pub points_per_cloud: usize,
    pub seed: u64,
    pub noise_sigma: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            class_names: DEFAULT_CLASSES.iter().map(|c| c.name().to_string()).collect(),
            per_class: 150,
            points_per_cloud: 256,
            seed: 0,
            noise_sigma: 0.01,
        }
    }
}

impl DatasetSpec {
    pub fn classes(&self) -> Result<Vec<ShapeClass>> {
        self.class_names.iter().map(|n| n.parse()).collect()
    }
}

/// Clouds ordered class-major (`per_class` clouds of label 0, then label 1,
/// …), each jittered and normalised to the unit sphere. A pure function of
/// the spec.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<PointCloud>> {
    let classes = spec.classes()?;
    if classes.is_empty() {
        return Err(Error::invalid("dataset needs at least one class"));
    }
    if spec.per_class < 1 {
        return Err(Error::invalid("per_class must be at least 1"));
    }
    if spec.points_per_cloud < 8 {
        return Err(Error::invalid("points_per_cloud must be at least 8"));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::invalid("noise_sigma must be a non-negative number"));
    }
    let jitter = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(classes.len() * spec.per_class);
    for (label, class) in classes.iter().enumerate() {
        for _ in 0..spec.per_class {
            let points = (0..spec.points_per_cloud)
                .map(|_| {
                    let p = class.sample_surface(&mut rng);
                    if spec.noise_sigma > 0.0 {
                        p.map(|v| (v + jitter.sample(&mut rng)) as f32)
                    } else {
                        p.map(|v| v as f32)
                    }
                })
                .collect();
            let cloud = PointCloud::new(points)?.with_label(label);
            out.push(normalize_unit_sphere(&cloud));
        }
    }
    Ok(out)
}

/// Seeded 80/20 split within each class. Returns `(train, test)` index lists
/// into `clouds`; every cloud must carry a label.
pub fn split_train_test(clouds: &[PointCloud], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_label: Vec<Vec<usize>> = Vec::new();
    for (i, c) in clouds.iter().enumerate() {
        let label = c
            .label
            .ok_or_else(|| Error::invalid(format!("cloud {i} has no label")))?;
        if by_label.len() <= label {
            by_label.resize(label + 1, Vec::new());
        }
        by_label[label].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut members in by_label {
        members.shuffle(&mut rng);
        let n_test = members.len() / 5;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_sphere_points_lie_on_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = ShapeClass::Sphere.sample_surface(&mut rng);
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn surfaces_satisfy_their_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let c = ShapeClass::Cube.sample_surface(&mut rng);
            assert!(c.iter().any(|v| (v.abs() - 1.0).abs() < 1e-12));
            let t = ShapeClass::Torus.sample_surface(&mut rng);
            let ring = (t[0] * t[0] + t[1] * t[1]).sqrt() - 1.0;
            assert!((ring * ring + t[2] * t[2] - 0.35f64.powi(2)).abs() < 1e-9);
            let e = ShapeClass::Ellipsoid.sample_surface(&mut rng);
            let q = e[0].powi(2) + (e[1] / 0.6).powi(2) + (e[2] / 0.35).powi(2);
            assert!((q - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn counts_and_labels() {
        let spec = DatasetSpec {
            per_class: 2,
            points_per_cloud: 32,
            ..DatasetSpec::default()
        };
        let clouds = generate_dataset(&spec).unwrap();
        assert_eq!(clouds.len(), 16);
        let labels: Vec<usize> = clouds.iter().map(|c| c.label.unwrap()).collect();
        assert_eq!(labels, (0..8).flat_map(|l| [l, l]).collect::<Vec<_>>());
        assert!(clouds.iter().all(|c| c.len() == 32));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = DatasetSpec {
            per_class: 3,
            points_per_cloud: 64,
            seed: 17,
            ..DatasetSpec::default()
        };
        let a = generate_dataset(&spec).unwrap();
        let b = generate_dataset(&spec).unwrap();
        let bits = |cs: &[PointCloud]| -> Vec<u32> { cs.iter().flat_map(|c| c.flat()).map(f32::to_bits).collect() };
        assert_eq!(bits(&a), bits(&b));
        let other = generate_dataset(&DatasetSpec { seed: 18, ..spec }).unwrap();
        assert_ne!(bits(&a), bits(&other));
    }

    #[test]
    fn unknown_class_and_bad_spec() {
        let spec = DatasetSpec {
            class_names: vec!["sphere".into(), "dodecahedron".into()],
            ..DatasetSpec::default()
        };
        assert!(generate_dataset(&spec).unwrap_err().to_string().contains("dodecahedron"));
        assert!(generate_dataset(&DatasetSpec { per_class: 0, ..DatasetSpec::default() }).is_err());
        assert!(generate_dataset(&DatasetSpec { points_per_cloud: 7, ..DatasetSpec::default() }).is_err());
    }

    #[test]
    fn split_is_disjoint_and_stratified() {
        let spec = DatasetSpec {
            per_class: 10,
            points_per_cloud: 8,
            ..DatasetSpec::default()
        };
        let clouds = generate_dataset(&spec).unwrap();
        let (train, test) = split_train_test(&clouds, 5).unwrap();
        assert_eq!(train.len(), 64);
        assert_eq!(test.len(), 16);
        assert!(train.iter().all(|i| !test.contains(i)));
        for label in 0..8 {
            assert_eq!(test.iter().filter(|&&i| clouds[i].label == Some(label)).count(), 2);
        }
        assert_eq!(split_train_test(&clouds, 5).unwrap(), (train, test));
    }
}
