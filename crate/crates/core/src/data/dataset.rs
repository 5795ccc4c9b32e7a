//! On-disk triplet sets: `{content,style,gt}/NNNNNN.png` plus `manifest.txt`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::KeyValues;
use crate::data::io::{load_gray_png, load_png, save_png};
use crate::data::synth::{synthesize, SynthConfig};
use crate::data::triplet::{make_triplet, Triplet, TripletConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.txt";
const KINDS: [&str; 3] = ["content", "style", "gt"];

/// Where source images come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    /// `n` procedurally generated images.
    Synthetic(usize),
    /// Every `.png` in a directory, sorted by name.
    Directory(PathBuf),
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("synthetic:") {
            Some(n) => {
                let n: usize = n
                    .parse()
                    .map_err(|_| Error::config(format!("bad synthetic source count in {s:?}")))?;
                if n == 0 {
                    return Err(Error::config("synthetic source needs at least one image"));
                }
                Ok(Source::Synthetic(n))
            }
            None => Ok(Source::Directory(PathBuf::from(s))),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Synthetic(n) => write!(f, "synthetic:{n}"),
            Source::Directory(p) => write!(f, "{}", p.display()),
        }
    }
}

/// Options for generating a triplet set.
#[derive(Clone, Debug, PartialEq)]
pub struct DatagenConfig {
    pub triplet: TripletConfig,
    /// Synthetic sources are this much wider than the crop, leaving room for a random window.
    pub synth_extra_width: usize,
    pub varying_background: bool,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            triplet: TripletConfig::default(),
            synth_extra_width: 128,
            varying_background: true,
        }
    }
}

impl DatagenConfig {
    /// Overrides fields from configuration keys, consuming those it knows.
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.take_into("height", &mut self.triplet.height)?;
        kv.take_into("width", &mut self.triplet.width)?;
        kv.take_into("patch", &mut self.triplet.patch)?;
        kv.take_into("window", &mut self.triplet.window)?;
        kv.take_into("offset", &mut self.triplet.offset)?;
        kv.take_into("rotate", &mut self.triplet.policy.rotate)?;
        kv.take_into("swap_prob", &mut self.triplet.policy.swap_prob)?;
        kv.take_into("synth_extra_width", &mut self.synth_extra_width)?;
        kv.take_into("varying_background", &mut self.varying_background)?;
        Ok(())
    }
}

/// One generated triplet and where it came from.
#[derive(Clone, Debug)]
pub struct GeneratedTriplet {
    pub index: usize,
    pub source: String,
    pub seed: u64,
    pub triplet: Triplet,
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Synthetic source image `j` for a run seeded with `seed`.
pub fn synthetic_source(cfg: &DatagenConfig, seed: u64, j: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(j as u64));
    rng.set_stream(1);
    let mut sc = SynthConfig::new(cfg.triplet.height, cfg.triplet.width + cfg.synth_extra_width);
    sc.varying_background = cfg.varying_background;
    synthesize(&sc, &mut rng)
}

/// Builds `count` triplets in memory. Triplet `i` uses source `i mod n` and
/// its own generator seeded with `seed + i`, so the result does not depend on
/// the number of worker threads.
pub fn generate(source: &Source, cfg: &DatagenConfig, seed: u64, count: usize) -> Result<Vec<GeneratedTriplet>> {
    let files = match source {
        Source::Directory(dir) => {
            let files = list_pngs(dir)?;
            if files.is_empty() {
                return Err(Error::config(format!("no PNG files in {}", dir.display())));
            }
            files
        }
        Source::Synthetic(_) => Vec::new(),
    };
    (0..count)
        .into_par_iter()
        .map(|i| {
            let (img, name) = match source {
                Source::Synthetic(n) => (synthetic_source(cfg, seed, i % n), format!("synthetic#{}", i % n)),
                Source::Directory(_) => {
                    let f = &files[i % files.len()];
                    let name = f.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
                    (load_png(f)?, name)
                }
            };
            let s = seed.wrapping_add(i as u64);
            let (triplet, _) = make_triplet(&img, &cfg.triplet, &mut ChaCha8Rng::seed_from_u64(s))?;
            Ok(GeneratedTriplet {
                index: i,
                source: name,
                seed: s,
                triplet,
            })
        })
        .collect()
}

fn file_name(i: usize) -> String {
    format!("{i:06}.png")
}

/// Writes triplets and the manifest under `out`.
pub fn write_dataset(out: &Path, triplets: &[GeneratedTriplet]) -> Result<()> {
    for kind in KINDS {
        let d = out.join(kind);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    triplets.par_iter().try_for_each(|g| {
        let name = file_name(g.index);
        save_png(&out.join("content").join(&name), &g.triplet.content)?;
        save_png(&out.join("style").join(&name), &g.triplet.style)?;
        save_png(&out.join("gt").join(&name), &g.triplet.ground_truth)
    })?;
    let manifest: String = triplets
        .iter()
        .map(|g| format!("{:06} {} {}\n", g.index, g.source, g.seed))
        .collect();
    let path = out.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// [`generate`] followed by [`write_dataset`].
pub fn datagen(source: &Source, out: &Path, cfg: &DatagenConfig, seed: u64, count: usize) -> Result<Vec<GeneratedTriplet>> {
    let triplets = generate(source, cfg, seed, count)?;
    write_dataset(out, &triplets)?;
    Ok(triplets)
}

/// Reads every triplet under `dir`, ordered by file name.
pub fn load_dataset(dir: &Path) -> Result<Vec<Triplet>> {
    let content_dir = dir.join("content");
    if !content_dir.is_dir() {
        return Err(Error::config(format!(
            "{} has no content/ directory",
            dir.display()
        )));
    }
    let files = list_pngs(&content_dir)?;
    if files.is_empty() {
        return Err(Error::config(format!("no triplets in {}", dir.display())));
    }
    files
        .par_iter()
        .map(|f| {
            let name = f.file_name().expect("listed files have names");
            let content = load_gray_png(f)?.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
            let style = load_png(&dir.join("style").join(name))?;
            let ground_truth = load_png(&dir.join("gt").join(name))?;
            if content.dims()[..2] != style.dims()[..2] || style.dims() != ground_truth.dims() {
                return Err(Error::shape(format!(
                    "triplet {} has mismatched image sizes",
                    name.to_string_lossy()
                )));
            }
            Ok(Triplet {
                content,
                style,
                ground_truth,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_parsing() {
        assert_eq!("synthetic:4".parse::<Source>().unwrap(), Source::Synthetic(4));
        assert_eq!("imgs".parse::<Source>().unwrap(), Source::Directory("imgs".into()));
        assert!("synthetic:x".parse::<Source>().is_err());
        assert!("synthetic:0".parse::<Source>().is_err());
    }

    #[test]
    fn empty_directory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).is_err());
        let src = Source::Directory(dir.path().to_path_buf());
        assert!(generate(&src, &DatagenConfig::default(), 0, 1).is_err());
    }
}
