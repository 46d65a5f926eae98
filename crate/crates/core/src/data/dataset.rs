//! Dataset directories:
//!
//! ```text
//! manifest.json
//! clips/<id>/frame_<k>.ppm      k = 0..9  (t−3 ..= t+6)
//! clips/<id>/depth_<h>.pfm      h ∈ {0,1,3,5}
//! clips/<id>/poses.json         camera-to-world pose per frame
//! clips/<id>/intrinsics.json
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};

use super::clip::{generate_clip, ClipSample, CLIP_LEN, HORIZONS};
use super::formats::{read_json, read_pfm, read_ppm, write_json, write_pfm, write_ppm};
use super::scene::SceneOptions;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthEntry {
    pub horizon: usize,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub seed: u64,
    pub frames: Vec<String>,
    pub depths: Vec<DepthEntry>,
    pub poses: String,
    pub intrinsics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub moving_objects: bool,
    pub seed: u64,
    pub clips: Vec<ClipEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PosesFile {
    convention: String,
    poses: Vec<Pose>,
}

/// Per-clip seeds drawn from one stream so clip `i` never depends on how
/// many clips are generated.
pub fn clip_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

fn clip_entry(id: &str, seed: u64) -> ClipEntry {
    let base = format!("clips/{id}");
    ClipEntry {
        id: id.to_string(),
        seed,
        frames: (0..CLIP_LEN)
            .map(|k| format!("{base}/frame_{k}.ppm"))
            .collect(),
        depths: HORIZONS
            .iter()
            .map(|&h| DepthEntry {
                horizon: h,
                path: format!("{base}/depth_{h}.pfm"),
            })
            .collect(),
        poses: format!("{base}/poses.json"),
        intrinsics: format!("{base}/intrinsics.json"),
    }
}

pub fn write_clip(root: &Path, entry: &ClipEntry, clip: &ClipSample) -> Result<()> {
    for (path, img) in entry.frames.iter().zip(&clip.frames) {
        write_ppm(&root.join(path), img)?;
    }
    for (d, depth) in entry.depths.iter().zip(&clip.depths) {
        write_pfm(&root.join(&d.path), depth)?;
    }
    write_json(
        &root.join(&entry.poses),
        &PosesFile {
            convention: "camera_to_world".into(),
            poses: clip.poses.clone(),
        },
    )?;
    write_json(&root.join(&entry.intrinsics), &clip.intrinsics)
}

/// Generates `n` clips under `root` and writes the manifest last.
pub fn generate_dataset(root: &Path, n: usize, seed: u64, opts: &SceneOptions) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::Invalid("clip count must be positive".into()));
    }
    fs::create_dir_all(root).map_err(io_err(root))?;
    let mut clips = Vec::with_capacity(n);
    for (i, s) in clip_seeds(seed, n).into_iter().enumerate() {
        let entry = clip_entry(&format!("{i:05}"), s);
        let clip = generate_clip(s, opts)?;
        write_clip(root, &entry, &clip)?;
        clips.push(entry);
    }
    let manifest = Manifest {
        width: opts.width,
        height: opts.height,
        moving_objects: opts.moving_objects,
        seed,
        clips,
    };
    write_json(&root.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// A dataset directory opened through its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Dataset> {
        let manifest: Manifest = read_json(&root.join(MANIFEST))?;
        if manifest.clips.is_empty() {
            return Err(Error::Invalid(format!(
                "{} lists no clips",
                root.join(MANIFEST).display()
            )));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.clips.is_empty()
    }

    pub fn load(&self, index: usize) -> Result<ClipSample> {
        let entry = self.manifest.clips.get(index).ok_or_else(|| {
            Error::Invalid(format!(
                "clip index {index} out of range (len {})",
                self.len()
            ))
        })?;
        load_clip(&self.root, entry)
    }

    pub fn load_all(&self) -> Result<Vec<ClipSample>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }

    /// Fails if a listed file is missing or a file under `clips/` is not
    /// listed.
    pub fn verify_files(&self) -> Result<()> {
        let mut listed = BTreeSet::new();
        for c in &self.manifest.clips {
            listed.extend(c.frames.iter().cloned());
            listed.extend(c.depths.iter().map(|d| d.path.clone()));
            listed.insert(c.poses.clone());
            listed.insert(c.intrinsics.clone());
        }
        for p in &listed {
            if !self.root.join(p).is_file() {
                return Err(Error::Invalid(format!("manifest lists missing file {p}")));
            }
        }
        let mut found = BTreeSet::new();
        collect_files(&self.root, &self.root.join("clips"), &mut found)?;
        if let Some(orphan) = found.difference(&listed).next() {
            return Err(Error::Invalid(format!(
                "file {orphan} is not listed in the manifest"
            )));
        }
        Ok(())
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeSet<String>) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for e in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = e.map_err(io_err(dir))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.insert(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Loads a clip described by a manifest entry relative to `root`.
pub fn load_clip(root: &Path, entry: &ClipEntry) -> Result<ClipSample> {
    let frames = entry
        .frames
        .iter()
        .map(|p| read_ppm(&root.join(p)))
        .collect::<Result<Vec<_>>>()?;
    let mut depths = Vec::with_capacity(HORIZONS.len());
    for h in HORIZONS {
        let d = entry
            .depths
            .iter()
            .find(|d| d.horizon == h)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "clip {} has no ground-truth depth for horizon {h}",
                    entry.id
                ))
            })?;
        depths.push(read_pfm(&root.join(&d.path))?);
    }
    let poses: PosesFile = read_json(&root.join(&entry.poses))?;
    let intrinsics: CameraIntrinsics = read_json(&root.join(&entry.intrinsics))?;
    let clip = ClipSample {
        frames,
        depths,
        poses: poses.poses,
        intrinsics,
    };
    clip.validate()?;
    Ok(clip)
}

/// Loads a single clip directory laid out like `clips/<id>/`.
pub fn load_clip_dir(dir: &Path) -> Result<ClipSample> {
    let entry = ClipEntry {
        id: dir.display().to_string(),
        seed: 0,
        frames: (0..CLIP_LEN).map(|k| format!("frame_{k}.ppm")).collect(),
        depths: HORIZONS
            .iter()
            .map(|&h| DepthEntry {
                horizon: h,
                path: format!("depth_{h}.pfm"),
            })
            .collect(),
        poses: "poses.json".into(),
        intrinsics: "intrinsics.json".into(),
    };
    load_clip(dir, &entry)
}

/// Loads only the four context frames of a clip directory.
pub fn load_context_frames(dir: &Path) -> Result<(Vec<super::scene::Image>, CameraIntrinsics)> {
    let frames = (0..super::clip::CONTEXT)
        .map(|k| read_ppm(&dir.join(format!("frame_{k}.ppm"))))
        .collect::<Result<Vec<_>>>()?;
    let intrinsics: CameraIntrinsics = read_json(&dir.join("intrinsics.json"))?;
    let (w, h) = (frames[0].width, frames[0].height);
    if frames.iter().any(|f| f.width != w || f.height != h) {
        return Err(Error::Invalid(format!(
            "context frames in {} differ in size",
            dir.display()
        )));
    }
    intrinsics.validate(w, h)?;
    Ok((frames, intrinsics))
}
