//! Simulation manifests: one `record=scene` line followed by one
//! `record=utterance` line per file, paths relative to the manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use derevrb::io::{read_records, write_records, Record};

pub const FILE_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub clean: PathBuf,
    pub reverberant: PathBuf,
    pub early: PathBuf,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub scene: Record,
    pub entries: Vec<Entry>,
}

fn rel(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).display().to_string()
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut records = vec![self.scene.clone()];
        for e in &self.entries {
            records.push(
                Record::new()
                    .with("record", "utterance")
                    .with("name", &e.name)
                    .with("clean", rel(&e.clean, base))
                    .with("reverberant", rel(&e.reverberant, base))
                    .with("early", rel(&e.early, base))
                    .with("samples", e.samples),
            );
        }
        Ok(write_records(path, &records)?)
    }

    /// Accepts the manifest file or the directory containing it.
    pub fn read(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(FILE_NAME) } else { path.to_path_buf() };
        let base = file.parent().unwrap_or(Path::new("")).to_path_buf();
        let records = read_records(&file).with_context(|| format!("reading manifest {}", file.display()))?;
        let mut scene = None;
        let mut entries = Vec::new();
        for (i, r) in records.into_iter().enumerate() {
            match r.get("record") {
                Some("scene") => scene = Some(r),
                Some("utterance") => {
                    let field = |k: &str| {
                        r.get(k).map(str::to_string).with_context(|| {
                            format!("{}: record {} lacks `{k}`", file.display(), i + 1)
                        })
                    };
                    entries.push(Entry {
                        name: field("name")?,
                        clean: base.join(field("clean")?),
                        reverberant: base.join(field("reverberant")?),
                        early: base.join(field("early")?),
                        samples: r.parse_field("samples").unwrap_or(0),
                    });
                }
                _ => {}
            }
        }
        let Some(scene) = scene else {
            bail!("{} has no scene record", file.display());
        };
        if entries.is_empty() {
            bail!("{} lists no utterances", file.display());
        }
        Ok(Manifest { scene, entries })
    }
}
