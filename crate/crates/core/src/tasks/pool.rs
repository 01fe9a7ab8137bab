use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length images are resampled to before flattening.
pub const IMAGE_SIDE: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    Synthetic,
    ImageDir,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassDescriptor {
    /// Isotropic Gaussian cluster `mean + scale * N(0, I)`.
    Synthetic { mean: Vec<f64>, scale: f64 },
    Image { paths: Vec<PathBuf> },
}

/// One class with its materialised instances, each a `dim`-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolClass {
    pub name: String,
    pub descriptor: ClassDescriptor,
    instances: Vec<f64>,
}

impl PoolClass {
    pub fn num_instances(&self, dim: usize) -> usize {
        self.instances.len() / dim
    }

    pub fn instance(&self, dim: usize, idx: usize) -> &[f64] {
        &self.instances[idx * dim..(idx + 1) * dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPool {
    pub source: PoolSource,
    dim: usize,
    classes: Vec<PoolClass>,
}

impl ClassPool {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[PoolClass] {
        &self.classes
    }

    pub fn class(&self, idx: usize) -> &PoolClass {
        &self.classes[idx]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPoolSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub cluster_scale: f64,
    pub mean_box: (f64, f64),
    pub instances_per_class: usize,
}

impl Default for SyntheticPoolSpec {
    fn default() -> Self {
        SyntheticPoolSpec { num_classes: 200, dim: 16, cluster_scale: 0.3, mean_box: (-1.0, 1.0), instances_per_class: 20 }
    }
}

/// Gaussian-cluster class pool; class `c` has mean drawn uniformly from the
/// box and instances `mean + scale * z`.
pub fn make_synthetic_pool(spec: &SyntheticPoolSpec, seed: u64) -> Result<ClassPool> {
    let (lo, hi) = spec.mean_box;
    if spec.num_classes < 2 || spec.dim < 2 {
        return Err(Error::Invalid("synthetic pool needs at least 2 classes and 2 dimensions".into()));
    }
    if !(spec.cluster_scale > 0.0) || !spec.cluster_scale.is_finite() {
        return Err(Error::Invalid(format!("cluster scale must be positive, got {}", spec.cluster_scale)));
    }
    if !(lo < hi) || spec.instances_per_class == 0 {
        return Err(Error::Invalid("mean box must be non-empty and classes need instances".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> =
        (0..spec.num_classes).map(|_| (0..spec.dim).map(|_| rng.random_range(lo..hi)).collect()).collect();
    let classes = means
        .into_iter()
        .enumerate()
        .map(|(c, mean)| {
            let mut instances = Vec::with_capacity(spec.instances_per_class * spec.dim);
            for _ in 0..spec.instances_per_class {
                for &m in &mean {
                    let z: f64 = rng.sample(StandardNormal);
                    instances.push(m + spec.cluster_scale * z);
                }
            }
            PoolClass {
                name: format!("synthetic_{c:04}"),
                descriptor: ClassDescriptor::Synthetic { mean, scale: spec.cluster_scale },
                instances,
            }
        })
        .collect();
    Ok(ClassPool { source: PoolSource::Synthetic, dim: spec.dim, classes })
}

/// Loads `root/<class>/<image>.png`, one class per subdirectory, in sorted
/// order. Images are converted to grayscale, resampled to 28x28, scaled to
/// `[0, 1]` and flattened.
pub fn load_image_pool(root: impl AsRef<Path>) -> Result<ClassPool> {
    let root = root.as_ref();
    let mut class_dirs = sorted_entries(root)?;
    class_dirs.retain(|p| p.is_dir());
    if class_dirs.is_empty() {
        return Err(Error::Invalid(format!("{}: no class directories", root.display())));
    }
    let dim = IMAGE_SIDE * IMAGE_SIDE;
    let mut classes = Vec::with_capacity(class_dirs.len());
    for dir in class_dirs {
        let mut paths = sorted_entries(&dir)?;
        paths.retain(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
        if paths.is_empty() {
            return Err(Error::Invalid(format!("{}: empty class directory", dir.display())));
        }
        let mut instances = Vec::with_capacity(paths.len() * dim);
        for path in &paths {
            instances.extend(load_image(path)?);
        }
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        classes.push(PoolClass { name, descriptor: ClassDescriptor::Image { paths }, instances });
    }
    Ok(ClassPool { source: PoolSource::ImageDir, dim, classes })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// One image as 784 values in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Vec<f64>> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f64> = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    Ok(resample_bilinear(&pixels, w, h, IMAGE_SIDE, IMAGE_SIDE))
}

/// Bilinear resampling with pixel centres aligned; identity when the sizes
/// match.
pub fn resample_bilinear(src: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(n_in - 1);
        (x0, x1, x - x0 as f64)
    };
    let mut out = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, h, out_h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, w, out_w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}
