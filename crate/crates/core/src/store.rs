//! Decoded frames of a corpus, keyed by video id.

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;

use crate::manifest::CorpusManifest;

#[derive(Clone, Debug, Default)]
pub struct VideoStore {
    frames: BTreeMap<String, Vec<RgbImage>>,
    indices: BTreeMap<String, Vec<usize>>,
}

impl VideoStore {
    /// Adds a video whose frames are numbered 0, 1, 2, ...
    pub fn insert(&mut self, id: &str, frames: Vec<RgbImage>) {
        let idx = (0..frames.len()).collect();
        self.insert_with_indices(id, frames, idx);
    }

    /// Adds a video with explicit source-frame numbers (used as file names).
    pub fn insert_with_indices(&mut self, id: &str, frames: Vec<RgbImage>, indices: Vec<usize>) {
        assert_eq!(frames.len(), indices.len(), "one index per frame");
        self.frames.insert(id.to_string(), frames);
        self.indices.insert(id.to_string(), indices);
    }

    pub fn get(&self, id: &str) -> Option<&[RgbImage]> {
        self.frames.get(id).map(Vec::as_slice)
    }

    pub fn frame_indices(&self, id: &str) -> Option<&[usize]> {
        self.indices.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.frames.keys().map(String::as_str)
    }

    /// Writes `<root>/<frame_dir>/<frame_index>.png` for every record.
    pub fn write(&self, manifest: &CorpusManifest, root: &Path) -> Result<(), image::ImageError> {
        for r in &manifest.records {
            let (Some(frames), Some(idx)) = (self.frames.get(&r.id), self.indices.get(&r.id)) else {
                continue;
            };
            let dir = root.join(&r.frame_dir);
            std::fs::create_dir_all(&dir)?;
            for (f, i) in frames.iter().zip(idx) {
                f.save(dir.join(format!("{i}.png")))?;
            }
        }
        Ok(())
    }

    /// Loads every record's frame directory, ordering frames by their numeric file stem.
    pub fn load(manifest: &CorpusManifest, root: &Path) -> Result<Self, image::ImageError> {
        let mut store = Self::default();
        for r in &manifest.records {
            let mut files: Vec<(usize, std::path::PathBuf)> = std::fs::read_dir(root.join(&r.frame_dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
                .filter_map(|p| p.file_stem()?.to_str()?.parse().ok().map(|i| (i, p.clone())))
                .collect();
            files.sort();
            let mut frames = Vec::with_capacity(files.len());
            for (_, p) in &files {
                frames.push(image::open(p)?.to_rgb8());
            }
            store.insert_with_indices(&r.id, frames, files.into_iter().map(|(i, _)| i).collect());
        }
        Ok(store)
    }
}
