//! Dataset manifests.
//!
//! A manifest is a UTF-8 text file of comma-separated records
//!
//! ```text
//! id, image_path, depth_path|-, semantics_path|-, domain
//! ```
//!
//! with `-` standing for "absent" and paths resolved relative to the
//! manifest's directory. Lines starting with `#` are either metadata
//! (`# split = train`, `# classes = sky,ground,...`) or comments. Loading
//! validates the whole file and reports the first offending entry.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::codec::read_label_png;
use crate::{Error, Result};

/// Which side of the adaptation problem a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Data(format!("unknown domain {other:?}"))),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One dataset entry. Paths are stored relative to the manifest root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub image: PathBuf,
    pub depth: Option<PathBuf>,
    pub semantics: Option<PathBuf>,
    pub domain: Domain,
}

/// A parsed, validated manifest.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    /// Directory all sample paths are relative to.
    pub root: PathBuf,
    pub samples: Vec<Sample>,
    pub split: Split,
    pub class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Absolute path of a sample-relative path.
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }
}

/// Class names of the synthetic benchmark, index order = label value.
pub const SYNTH_CLASS_NAMES: [&str; 5] = ["sky", "ground", "box", "disc", "pole"];

fn parse_path(field: &str) -> Option<PathBuf> {
    if field == "-" {
        None
    } else {
        Some(PathBuf::from(field))
    }
}

/// Parses and fully validates a manifest: syntax, unique ids, per-domain
/// field requirements, file existence, and label range. Errors name the
/// first offending line or sample.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| Error::io(manifest_path.to_path_buf(), e))?;
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut split = Split::Train;
    let mut class_names: Vec<String> = SYNTH_CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    let mut samples = Vec::new();
    let mut seen = HashSet::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((key, value)) = meta.split_once('=') {
                match key.trim() {
                    "split" => split = value.trim().parse()?,
                    "classes" => {
                        class_names =
                            value.split(',').map(|c| c.trim().to_string()).collect();
                        if class_names.len() < 2 {
                            return Err(Error::Data(format!(
                                "{}:{}: need at least 2 classes",
                                manifest_path.display(),
                                lineno + 1
                            )));
                        }
                    }
                    _ => {} // ordinary comment
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::Data(format!(
                "{}:{}: expected 5 comma-separated fields, got {}",
                manifest_path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let sample = Sample {
            id: fields[0].to_string(),
            image: PathBuf::from(fields[1]),
            depth: parse_path(fields[2]),
            semantics: parse_path(fields[3]),
            domain: fields[4].parse()?,
        };
        if sample.id.is_empty() {
            return Err(Error::Data(format!(
                "{}:{}: empty sample id",
                manifest_path.display(),
                lineno + 1
            )));
        }
        if !seen.insert(sample.id.clone()) {
            return Err(Error::Data(format!("duplicate sample id {:?}", sample.id)));
        }
        samples.push(sample);
    }

    let manifest = DatasetManifest { root, samples, split, class_names };
    validate_samples(&manifest)?;
    Ok(manifest)
}

fn validate_samples(manifest: &DatasetManifest) -> Result<()> {
    let k = manifest.num_classes() as u8;
    for sample in &manifest.samples {
        if sample.domain == Domain::Source && (sample.depth.is_none() || sample.semantics.is_none())
        {
            return Err(Error::Data(format!(
                "sample {:?}: source samples need both depth and semantics",
                sample.id
            )));
        }
        for rel in [Some(&sample.image), sample.depth.as_ref(), sample.semantics.as_ref()]
            .into_iter()
            .flatten()
        {
            let path = manifest.resolve(rel);
            if !path.is_file() {
                return Err(Error::Data(format!(
                    "sample {:?}: missing file {}",
                    sample.id,
                    path.display()
                )));
            }
        }
        if let Some(rel) = &sample.semantics {
            let labels = read_label_png(manifest.resolve(rel))?;
            if let Some(&bad) =
                labels.iter().find(|&&v| v >= k && v != crate::loss::IGNORE_LABEL)
            {
                return Err(Error::Data(format!(
                    "sample {:?}: label {bad} out of range for {k} classes",
                    sample.id
                )));
            }
        }
    }
    Ok(())
}

/// Writes a manifest in the canonical on-disk format.
pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    text.push_str(&format!("# split = {}\n", manifest.split));
    text.push_str(&format!("# classes = {}\n", manifest.class_names.join(",")));
    for s in &manifest.samples {
        let fmt_path = |p: &Option<PathBuf>| {
            p.as_ref().map_or("-".to_string(), |p| p.to_string_lossy().into_owned())
        };
        text.push_str(&format!(
            "{}, {}, {}, {}, {}\n",
            s.id,
            s.image.to_string_lossy(),
            fmt_path(&s.depth),
            fmt_path(&s.semantics),
            s.domain
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.to_path_buf(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};

    use crate::data::codec::{write_depth_png, write_label_png, write_rgb_png};

    fn write_triplet(dir: &Path, stem: &str, max_label: u8) {
        write_rgb_png(dir.join(format!("{stem}_rgb.png")), &Array3::zeros((3, 4, 4))).unwrap();
        write_depth_png(dir.join(format!("{stem}_d.png")), &Array2::from_elem((4, 4), 5.0))
            .unwrap();
        write_label_png(dir.join(format!("{stem}_s.png")), &Array2::from_elem((4, 4), max_label))
            .unwrap();
    }

    fn write_lines(dir: &Path, lines: &str) -> PathBuf {
        let path = dir.join("manifest.txt");
        std::fs::write(&path, lines).unwrap();
        path
    }

    #[test]
    fn valid_manifest_loads_with_metadata() {
        let dir = tempfile::tempdir().unwrap();
        write_triplet(dir.path(), "a", 1);
        write_triplet(dir.path(), "b", 0);
        let path = write_lines(
            dir.path(),
            "# split = val\n# classes = sky,ground\n\n\
             s0, a_rgb.png, a_d.png, a_s.png, source\n\
             t0, b_rgb.png, -, -, target\n",
        );
        let m = load_dataset(&path).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.split, Split::Val);
        assert_eq!(m.num_classes(), 2);
        assert_eq!(m.samples[0].domain, Domain::Source);
        assert_eq!(m.samples[1].depth, None);
    }

    #[test]
    fn missing_file_error_names_the_sample() {
        let dir = tempfile::tempdir().unwrap();
        write_triplet(dir.path(), "a", 1);
        let path = write_lines(
            dir.path(),
            "# classes = sky,ground\ns0, a_rgb.png, nonexistent.png, a_s.png, source\n",
        );
        let err = load_dataset(&path).unwrap_err().to_string();
        assert!(err.contains("s0") && err.contains("nonexistent.png"), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_triplet(dir.path(), "a", 1);
        let path = write_lines(
            dir.path(),
            "# classes = sky,ground\n\
             s0, a_rgb.png, a_d.png, a_s.png, source\n\
             s0, a_rgb.png, a_d.png, a_s.png, source\n",
        );
        let err = load_dataset(&path).unwrap_err().to_string();
        assert!(err.contains("duplicate") && err.contains("s0"), "{err}");
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_triplet(dir.path(), "a", 2);
        let path = write_lines(
            dir.path(),
            "# classes = sky,ground\ns0, a_rgb.png, a_d.png, a_s.png, source\n",
        );
        let err = load_dataset(&path).unwrap_err().to_string();
        assert!(err.contains("label 2") && err.contains("s0"), "{err}");
    }

    #[test]
    fn source_samples_require_depth_and_semantics() {
        let dir = tempfile::tempdir().unwrap();
        write_triplet(dir.path(), "a", 1);
        let path = write_lines(
            dir.path(),
            "# classes = sky,ground\ns0, a_rgb.png, a_d.png, -, source\n",
        );
        let err = load_dataset(&path).unwrap_err().to_string();
        assert!(err.contains("source"), "{err}");
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(dir.path(), "# classes = sky,ground\njust,two\n");
        let err = load_dataset(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn round_trip_through_write_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_triplet(dir.path(), "a", 1);
        let manifest = DatasetManifest {
            root: dir.path().to_path_buf(),
            samples: vec![
                Sample {
                    id: "s0".into(),
                    image: "a_rgb.png".into(),
                    depth: Some("a_d.png".into()),
                    semantics: Some("a_s.png".into()),
                    domain: Domain::Source,
                },
                Sample {
                    id: "t0".into(),
                    image: "a_rgb.png".into(),
                    depth: None,
                    semantics: None,
                    domain: Domain::Target,
                },
            ],
            split: Split::Test,
            class_names: vec!["sky".into(), "ground".into()],
        };
        let path = dir.path().join("m.txt");
        write_manifest(&path, &manifest).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.samples, manifest.samples);
        assert_eq!(back.split, manifest.split);
        assert_eq!(back.class_names, manifest.class_names);
    }
}
