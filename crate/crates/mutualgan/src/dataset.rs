//! On-disk toy dataset: PPM/PGM files plus train/val manifests.
//!
//! A manifest is UTF-8 text: a `size=<H>x<W>` header line, then one path per
//! line relative to the manifest's directory. The first path component names
//! the pool: `trainA/`, `trainB/` or `masks/`.

use std::fs;
use std::path::{Component, Path, PathBuf};

use mutualgan_core::synth::{synth_scene, SceneSample};
use mutualgan_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::pnm::{self, Image, ImageFileError};

pub const TRAIN_MANIFEST: &str = "train.txt";
pub const VAL_MANIFEST: &str = "val.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    A,
    B,
    Mask,
}

impl Pool {
    pub fn dir(self) -> &'static str {
        match self {
            Pool::A => "trainA",
            Pool::B => "trainB",
            Pool::Mask => "masks",
        }
    }

    fn extension(self) -> &'static str {
        if self == Pool::Mask { "pgm" } else { "ppm" }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Image(#[from] ImageFileError),
    #[error("{path}: {msg}")]
    Manifest { path: String, msg: String },
    #[error("{path}: image is {found_h}x{found_w}, manifest declares {h}x{w}")]
    Size { path: String, found_h: usize, found_w: usize, h: usize, w: usize },
    #[error("{path}: expected {expected} channels, found {found}")]
    Channels { path: String, expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("no {0:?} images listed in the manifest")]
    Empty(Pool),
    #[error("{0}: no counterpart in the manifest")]
    MissingPair(String),
    #[error("index {index} out of range for {len} images")]
    Index { index: usize, len: usize },
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub height: usize,
    pub width: usize,
    pub entries: Vec<PathBuf>,
}

impl Manifest {
    pub fn parse(root: &Path, text: &str, origin: &str) -> Result<Self, DataError> {
        let bad = |msg: String| DataError::Manifest { path: origin.to_owned(), msg };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty manifest".into()))?;
        let (height, width) = header
            .trim()
            .strip_prefix("size=")
            .and_then(|s| s.split_once('x'))
            .and_then(|(h, w)| Some((h.parse::<usize>().ok()?, w.parse::<usize>().ok()?)))
            .filter(|&(h, w)| h > 0 && w > 0)
            .ok_or_else(|| bad(format!("header must be size=<H>x<W>, got {header:?}")))?;
        let mut entries = Vec::new();
        for (no, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let p = PathBuf::from(line);
            if p.components().any(|c| !matches!(c, Component::Normal(_))) {
                return Err(bad(format!("line {}: path must be relative without '..': {line}", no + 2)));
            }
            entries.push(p);
        }
        Ok(Self { root: root.to_owned(), height, width, entries })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let root = path.parent().unwrap_or(Path::new("."));
        Self::parse(root, &text, &path.display().to_string())
    }

    pub fn render(&self) -> String {
        let mut s = format!("size={}x{}\n", self.height, self.width);
        for e in &self.entries {
            s.push_str(&e.to_string_lossy().replace('\\', "/"));
            s.push('\n');
        }
        s
    }

    /// Entries of one pool, relative to `root`.
    pub fn pool(&self, pool: Pool) -> Vec<&Path> {
        self.entries
            .iter()
            .filter(|p| p.components().next() == Some(Component::Normal(pool.dir().as_ref())))
            .map(PathBuf::as_path)
            .collect()
    }

    pub fn path(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// The `to` pool entry sharing `rel`'s file stem.
    pub fn counterpart(&self, rel: &Path, to: Pool) -> Result<PathBuf, DataError> {
        let stem = rel.file_stem().ok_or_else(|| DataError::MissingPair(rel.display().to_string()))?;
        self.pool(to)
            .into_iter()
            .find(|p| p.file_stem() == Some(stem))
            .map(Path::to_owned)
            .ok_or_else(|| DataError::MissingPair(rel.display().to_string()))
    }

    /// Reads and size-checks one listed image.
    pub fn read_image(&self, rel: &Path, channels: usize) -> Result<Image, DataError> {
        let path = self.path(rel);
        let img = pnm::read(&path)?;
        if img.channels != channels {
            return Err(DataError::Channels { path: path.display().to_string(), expected: channels, found: img.channels });
        }
        if (img.height, img.width) != (self.height, self.width) {
            return Err(DataError::Size {
                path: path.display().to_string(),
                found_h: img.height,
                found_w: img.width,
                h: self.height,
                w: self.width,
            });
        }
        Ok(img)
    }
}

/// `[0, 1]` file values to `[-1, 1]` network values.
pub fn to_network(v: f32) -> f32 {
    2.0 * v - 1.0
}

pub fn from_network(v: f32) -> f32 {
    (v + 1.0) / 2.0
}

/// Interleaved 8-bit RGB to planar `[-1, 1]`, optionally mirrored left-right.
pub fn image_to_planes(img: &Image, flip: bool, out: &mut Vec<f32>) {
    let (h, w) = (img.height, img.width);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let sx = if flip { w - 1 - x } else { x };
                out.push(to_network(img.data[3 * (y * w + sx) + c] as f32 / 255.0));
            }
        }
    }
}

/// Planar `[-1, 1]` sample `s` of an NCHW tensor to an 8-bit RGB image.
pub fn planes_to_image(t: &Tensor, s: usize) -> Image {
    let (_, _, h, w) = t.dims4().expect("image tensor");
    let plane = &t.data()[s * 3 * h * w..][..3 * h * w];
    let mut data = vec![0u8; 3 * h * w];
    for c in 0..3 {
        for i in 0..h * w {
            data[3 * i + c] = pnm::quantize(from_network(plane[c * h * w + i]));
        }
    }
    Image::new(w, h, 3, data)
}

/// Decoded images of one pool kept in memory.
#[derive(Debug, Clone)]
pub struct ImagePool {
    pub height: usize,
    pub width: usize,
    pub names: Vec<PathBuf>,
    pub images: Vec<Image>,
}

impl ImagePool {
    pub fn load(manifest: &Manifest, pool: Pool) -> Result<Self, DataError> {
        let names: Vec<PathBuf> = manifest.pool(pool).into_iter().map(Path::to_owned).collect();
        if names.is_empty() {
            return Err(DataError::Empty(pool));
        }
        let channels = if pool == Pool::Mask { 1 } else { 3 };
        let images = names.iter().map(|n| manifest.read_image(n, channels)).collect::<Result<_, _>>()?;
        Ok(Self { height: manifest.height, width: manifest.width, names, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// NCHW batch in `[-1, 1]`. With `flip_rng`, each image is mirrored with probability 1/2.
    pub fn batch(&self, indices: &[usize], mut flip_rng: Option<&mut dyn RngCore>) -> Result<Tensor, DataError> {
        let mut data = Vec::with_capacity(indices.len() * 3 * self.height * self.width);
        for &i in indices {
            let img = self.images.get(i).ok_or(DataError::Index { index: i, len: self.len() })?;
            let flip = flip_rng.as_deref_mut().is_some_and(|r| r.random_bool(0.5));
            image_to_planes(img, flip, &mut data);
        }
        Tensor::new(&[indices.len(), 3, self.height, self.width], data).map_err(|e| DataError::Usage(e.to_string()))
    }
}

/// Reads `indices` of a pool straight from disk.
pub fn load_batch(
    manifest: &Manifest,
    indices: &[usize],
    pool: Pool,
    flip_rng: Option<&mut dyn RngCore>,
) -> Result<Tensor, DataError> {
    if pool == Pool::Mask {
        return Err(DataError::Usage("masks are not network inputs".into()));
    }
    let names = manifest.pool(pool);
    let mut images = Vec::with_capacity(indices.len());
    for &i in indices {
        let rel = names.get(i).ok_or(DataError::Index { index: i, len: names.len() })?;
        images.push(manifest.read_image(rel, 3)?);
    }
    let sub = ImagePool { height: manifest.height, width: manifest.width, names: vec![], images };
    sub.batch(&(0..indices.len()).collect::<Vec<_>>(), flip_rng)
}

/// Files written by [`synth_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthOutput {
    pub train: Manifest,
    pub val: Manifest,
}

/// Number of validation scenes out of `n` (20%, rounded to nearest).
pub fn val_count(n: usize) -> usize {
    (n + 2) / 5
}

fn scene_seed(seed: u64, i: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    rng.next_u64()
}

pub fn scene_for(seed: u64, i: usize, height: usize, width: usize) -> SceneSample {
    synth_scene(scene_seed(seed, i), height, width)
}

/// Tracks created paths so a failed run can be rolled back.
struct Created(Vec<PathBuf>);

impl Created {
    fn rollback(&self) {
        for p in self.0.iter().rev() {
            if p.is_dir() {
                let _ = fs::remove_dir(p);
            } else {
                let _ = fs::remove_file(p);
            }
        }
    }
}

/// Writes `n` scenes under `out` as `trainA/`, `trainB/` and `masks/` plus a
/// seeded 80/20 split into `train.txt` and `val.txt`. On failure everything
/// written so far is removed.
pub fn synth_dataset(n: usize, seed: u64, out: &Path, height: usize, width: usize) -> Result<SynthOutput, DataError> {
    if n == 0 || height == 0 || width == 0 {
        return Err(DataError::Usage(format!("synth needs n >= 1 and a non-empty size, got n={n} size={height}x{width}")));
    }
    let mut created = Created(Vec::new());
    let result = write_dataset(n, seed, out, height, width, &mut created);
    if result.is_err() {
        created.rollback();
    }
    result
}

fn write_dataset(
    n: usize,
    seed: u64,
    out: &Path,
    height: usize,
    width: usize,
    created: &mut Created,
) -> Result<SynthOutput, DataError> {
    let mut dirs = vec![out.to_owned()];
    dirs.extend([Pool::A, Pool::B, Pool::Mask].map(|p| out.join(p.dir())));
    for d in dirs {
        if !d.exists() {
            fs::create_dir_all(&d).map_err(io_err(&d))?;
            created.0.push(d);
        }
    }
    let digits = n.to_string().len().max(4);
    let mut names = Vec::with_capacity(n);
    for i in 0..n {
        let s = scene_for(seed, i, height, width);
        let stem = format!("scene_{i:0digits$}");
        let files = [
            (Pool::A, Image::from_unit(width, height, 3, &s.image_a)),
            (Pool::B, Image::from_unit(width, height, 3, &s.image_b)),
            (Pool::Mask, Image::new(width, height, 1, s.mask.clone())),
        ];
        for (pool, img) in files {
            let path = out.join(pool.dir()).join(format!("{stem}.{}", pool.extension()));
            created.0.push(path.clone());
            pnm::write(&path, &img)?;
        }
        names.push(stem);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_val = val_count(n);
    let (val_idx, train_idx) = order.split_at(n_val);
    let manifest = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        let mut entries = Vec::new();
        for pool in [Pool::A, Pool::B, Pool::Mask] {
            for &i in &idx {
                entries.push(PathBuf::from(pool.dir()).join(format!("{}.{}", names[i], pool.extension())));
            }
        }
        Manifest { root: out.to_owned(), height, width, entries }
    };
    let (train, val) = (manifest(train_idx), manifest(val_idx));
    for (file, m) in [(TRAIN_MANIFEST, &train), (VAL_MANIFEST, &val)] {
        let path = out.join(file);
        created.0.push(path.clone());
        fs::write(&path, m.render()).map_err(io_err(&path))?;
    }
    Ok(SynthOutput { train, val })
}
