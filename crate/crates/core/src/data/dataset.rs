use std::path::{Path, PathBuf};

use super::bag::{read_bag, FeatureBag};
use super::manifest::{read_manifest, MANIFEST_FILE};
use crate::error::{Error, Result};

/// A labelled slide loaded into memory.
#[derive(Debug, Clone)]
pub struct Slide {
    pub id: String,
    pub time: f64,
    pub event: bool,
    pub bag: FeatureBag,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub slides: Vec<Slide>,
}

impl Dataset {
    /// Reads `manifest.tsv` in `dir` and every bag it references.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let records = read_manifest(root.join(MANIFEST_FILE))?;
        let mut slides = Vec::with_capacity(records.len());
        let mut d_in = None;
        for r in records {
            let path = root.join(&r.bag_path);
            let bag = read_bag(&path)?;
            bag.validate().map_err(|e| Error::in_file(&path, e))?;
            if *d_in.get_or_insert(bag.d_in) != bag.d_in {
                return Err(Error::in_file(
                    &path,
                    Error::Input(format!("feature width {} differs from {}", bag.d_in, d_in.unwrap())),
                ));
            }
            slides.push(Slide { id: r.slide_id, time: r.time, event: r.event, bag });
        }
        Ok(Self { root, slides })
    }

    pub fn len(&self) -> usize {
        self.slides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slides.is_empty()
    }

    /// Feature width shared by all bags.
    pub fn d_in(&self) -> Option<usize> {
        self.slides.first().map(|s| s.bag.d_in)
    }

    pub fn find(&self, id: &str) -> Option<&Slide> {
        self.slides.iter().find(|s| s.id == id)
    }
}
