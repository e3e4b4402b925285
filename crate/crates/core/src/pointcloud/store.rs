//! On-disk dataset layout: `manifest.csv`, `spec.json` and one `.xyz` file
//! per cloud under `clouds/`.

use std::fs;
use std::path::Path;

use super::dataset::{generate_dataset, split_train_test, DatasetSpec};
use super::io::{read_cloud, write_cloud, CloudFormat};
use super::PointCloud;
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "id,file,label,class_name,split";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }
}

/// One cloud with its dataset identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    /// Generates the clouds and applies the seeded per-class split.
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        let clouds = generate_dataset(spec)?;
        let (train, test) = split_train_test(&clouds, spec.seed)?;
        let pick = |idx: Vec<usize>| -> Vec<Sample> {
            idx.into_iter()
                .map(|id| Sample {
                    id,
                    cloud: clouds[id].clone(),
                })
                .collect()
        };
        Ok(Self {
            class_names: spec.class_names.clone(),
            train: pick(train),
            test: pick(test),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn save(&self, dir: &Path, spec: Option<&DatasetSpec>) -> Result<()> {
        let clouds_dir = dir.join("clouds");
        fs::create_dir_all(&clouds_dir).map_err(|e| Error::io(clouds_dir.display().to_string(), e))?;
        let mut rows: Vec<(&Sample, Split)> = self
            .train
            .iter()
            .map(|s| (s, Split::Train))
            .chain(self.test.iter().map(|s| (s, Split::Test)))
            .collect();
        rows.sort_by_key(|(s, _)| s.id);
        let mut manifest = String::from(MANIFEST_HEADER);
        manifest.push('\n');
        for (sample, split) in rows {
            let label = sample
                .cloud
                .label
                .ok_or_else(|| Error::invalid(format!("cloud {} has no label", sample.id)))?;
            let file = format!("clouds/{:05}.xyz", sample.id);
            write_cloud(&sample.cloud, &dir.join(&file), CloudFormat::Xyz)?;
            manifest.push_str(&format!(
                "{},{},{},{},{}\n",
                sample.id,
                file,
                label,
                self.class_names[label],
                split.name()
            ));
        }
        let path = dir.join("manifest.csv");
        fs::write(&path, manifest).map_err(|e| Error::io(path.display().to_string(), e))?;
        if let Some(spec) = spec {
            let path = dir.join("spec.json");
            let json = serde_json::to_string_pretty(spec).map_err(|e| Error::invalid(e.to_string()))?;
            fs::write(&path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.csv");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: 1,
                    msg: format!("expected header '{MANIFEST_HEADER}'"),
                })
            }
        }
        let mut class_names: Vec<Option<String>> = Vec::new();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                path: path.clone(),
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [id, file, label, class_name, split] = fields[..] else {
                return Err(bad(format!("expected 5 fields, found {}", fields.len())));
            };
            let id: usize = id.parse().map_err(|_| bad(format!("bad id '{id}'")))?;
            let label: usize = label.parse().map_err(|_| bad(format!("bad label '{label}'")))?;
            if class_names.len() <= label {
                class_names.resize(label + 1, None);
            }
            match &class_names[label] {
                Some(known) if known != class_name => {
                    return Err(bad(format!("label {label} named both '{known}' and '{class_name}'")))
                }
                _ => class_names[label] = Some(class_name.to_string()),
            }
            let mut cloud = read_cloud(&dir.join(file), CloudFormat::Xyz)?.with_label(label);
            cloud.source_path = Some(file.to_string());
            let sample = Sample { id, cloud };
            match split {
                "train" => train.push(sample),
                "test" => test.push(sample),
                other => return Err(bad(format!("unknown split '{other}'"))),
            }
        }
        let class_names = class_names
            .into_iter()
            .enumerate()
            .map(|(i, n)| n.ok_or_else(|| Error::invalid(format!("no cloud carries label {i}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            class_names,
            train,
            test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let spec = DatasetSpec {
            per_class: 5,
            points_per_cloud: 16,
            seed: 3,
            ..DatasetSpec::default()
        };
        let ds = Dataset::generate(&spec).unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (32, 8));
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path(), Some(&spec)).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.class_names, ds.class_names);
        assert_eq!(back.train.len(), 32);
        for (a, b) in ds.train.iter().chain(&ds.test).zip(back.train.iter().chain(&back.test)) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.cloud.points, b.cloud.points);
            assert_eq!(a.cloud.label, b.cloud.label);
        }
    }

    #[test]
    fn malformed_manifest_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("manifest.csv"), format!("{MANIFEST_HEADER}\n0,a.xyz,zero,sphere,train\n")).unwrap();
        let err = Dataset::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("manifest.csv:2:"), "{err}");
    }
}
