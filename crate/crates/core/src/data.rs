//! Image datasets and seeded minibatch sampling.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Generating factors of one synthetic blob image, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobFactors {
    /// Column of the blob centre (pixel `j` sits at coordinate `j`).
    pub center_x: f64,
    /// Row of the blob centre.
    pub center_y: f64,
    /// Gaussian standard deviation. Zero renders background only.
    pub sigma: f64,
    pub color: [f64; 3],
    pub background: [f64; 3],
}

/// An immutable set of equally sized images with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    resolution: usize,
    channels: usize,
    items: Vec<Vec<f64>>,
    sources: Vec<String>,
    factors: Option<Vec<BlobFactors>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Where item `i` came from: a file path or a synthetic identifier.
    pub fn source(&self, i: usize) -> &str {
        &self.sources[i]
    }

    /// Per-item generating factors, for synthetic datasets.
    pub fn factors(&self) -> Option<&[BlobFactors]> {
        self.factors.as_deref()
    }

    /// Item `i` as a `[1, c, r, r]` tensor.
    pub fn item(&self, i: usize) -> Tensor {
        let r = self.resolution;
        Tensor::new(self.items[i].clone(), &[1, self.channels, r, r])
    }

    /// Raw values of item `i`, `c * r * r` of them.
    pub fn item_data(&self, i: usize) -> &[f64] {
        &self.items[i]
    }

    /// Items at `indices` stacked into `[n, c, r, r]`.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let r = self.resolution;
        let mut data = Vec::with_capacity(indices.len() * self.channels * r * r);
        for &i in indices {
            data.extend_from_slice(&self.items[i]);
        }
        Tensor::new(data, &[indices.len(), self.channels, r, r])
    }

    /// Opens `spec`, either a `synthetic://blobs?n=..&res=..&seed=..` URI or an
    /// image directory, at the given resolution.
    pub fn open(spec: &str, resolution: usize) -> Result<Self> {
        if spec.starts_with("synthetic://") {
            let s = SyntheticSpec::parse(spec)?;
            if let Some(res) = s.res {
                if res != resolution {
                    return Err(Error::Config(format!("dataset res={res} does not match model resolution {resolution}")));
                }
            }
            Ok(synthetic_blobs(s.n, resolution, s.seed))
        } else {
            load_image_folder(Path::new(spec), resolution)
        }
    }
}

/// Parsed `synthetic://blobs` URI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub res: Option<usize>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn parse(uri: &str) -> Result<Self> {
        let bad = |msg: String| Error::Dataset(format!("{uri}: {msg}"));
        let url = url::Url::parse(uri).map_err(|e| bad(e.to_string()))?;
        if url.scheme() != "synthetic" || url.host_str() != Some("blobs") {
            return Err(bad("only synthetic://blobs is supported".into()));
        }
        let (mut n, mut res, mut seed) = (None, None, 0u64);
        for (k, v) in url.query_pairs() {
            let num = |v: &str| v.parse::<u64>().map_err(|_| bad(format!("{k}={v} is not a non-negative integer")));
            match k.as_ref() {
                "n" => n = Some(num(&v)? as usize),
                "res" => res = Some(num(&v)? as usize),
                "seed" => seed = num(&v)?,
                other => return Err(bad(format!("unknown parameter {other:?}"))),
            }
        }
        let n = n.filter(|&n| n >= 1).ok_or_else(|| bad("n >= 1 is required".into()))?;
        Ok(Self { n, res, seed })
    }
}

/// Renders one blob image as `[3, r, r]` values.
pub fn render_blob(f: &BlobFactors, resolution: usize) -> Vec<f64> {
    let r = resolution;
    let mut out = vec![0.0; 3 * r * r];
    for i in 0..r {
        for j in 0..r {
            let g = if f.sigma > 0.0 {
                let d2 = (j as f64 - f.center_x).powi(2) + (i as f64 - f.center_y).powi(2);
                (-d2 / (2.0 * f.sigma * f.sigma)).exp()
            } else {
                0.0
            };
            for c in 0..3 {
                out[c * r * r + i * r + j] = f.background[c] + (f.color[c] - f.background[c]) * g;
            }
        }
    }
    out
}

/// `n` Gaussian blob images with seeded centre, width and colours on a
/// seeded background. The same `(n, resolution, seed)` always yields the same
/// dataset.
pub fn synthetic_blobs(n: usize, resolution: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = resolution as f64;
    let mut factors = Vec::with_capacity(n);
    for _ in 0..n {
        let mut rgb = |lo: f64, hi: f64| [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
        let background = rgb(-0.9, -0.3);
        let color = rgb(0.2, 0.95);
        factors.push(BlobFactors {
            center_x: rng.gen_range(0.3 * r..0.7 * r),
            center_y: rng.gen_range(0.3 * r..0.7 * r),
            sigma: rng.gen_range(0.06 * r..0.12 * r),
            color,
            background,
        });
    }
    let items = factors.iter().map(|f| render_blob(f, resolution)).collect();
    let sources = (0..n).map(|i| format!("synthetic://blobs?n={n}&res={resolution}&seed={seed}#{i}")).collect();
    Dataset { resolution, channels: 3, items, sources, factors: Some(factors) }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Centre-crops to a square, resizes with an antialiased bilinear (triangle)
/// filter and maps `[0, 255]` to `[-1, 1]`.
fn prepare(img: image::DynamicImage, resolution: usize) -> Vec<f64> {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let s = w.min(h);
    let cropped = image::imageops::crop_imm(&rgb, (w - s) / 2, (h - s) / 2, s, s).to_image();
    let res = resolution as u32;
    let resized = if s == res { cropped } else { image::imageops::resize(&cropped, res, res, FilterType::Triangle) };
    let r = resolution;
    let mut out = vec![0.0; 3 * r * r];
    for (x, y, px) in resized.enumerate_pixels() {
        for c in 0..3 {
            out[c * r * r + y as usize * r + x as usize] = px.0[c] as f64 / 127.5 - 1.0;
        }
    }
    out
}

/// Loads every PNG/JPEG under `path` (recursively), in sorted path order.
/// Files that fail to decode are skipped with a warning.
pub fn load_image_folder(path: &Path, resolution: usize) -> Result<Dataset> {
    if !path.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", path.display())));
    }
    let mut files: Vec<PathBuf> = WalkDir::new(path)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && is_image(e.path()))
        .map(|e| e.into_path())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Dataset(format!("no PNG or JPEG files under {}", path.display())));
    }
    let mut items = Vec::new();
    let mut sources = Vec::new();
    for f in &files {
        match image::open(f) {
            Ok(img) => {
                items.push(prepare(img, resolution));
                sources.push(f.display().to_string());
            }
            Err(e) => log::warn!("skipping {}: {e}", f.display()),
        }
    }
    if items.is_empty() {
        return Err(Error::Dataset(format!("none of the {} image files under {} could be decoded", files.len(), path.display())));
    }
    Ok(Dataset { resolution, channels: 3, items, sources, factors: None })
}

/// Without-replacement minibatch sampler. The stream of delivered indices is a
/// concatenation of seeded permutations of `0..len`; a batch that crosses an
/// epoch boundary takes the tail of one permutation and the head of the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinibatchSampler {
    len: usize,
    batch_size: usize,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    rng: ChaCha8Rng,
}

impl MinibatchSampler {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Argument("batch_size must be at least 1".into()));
        }
        if len == 0 {
            return Err(Error::Dataset("cannot sample from an empty dataset".into()));
        }
        if batch_size > len {
            return Err(Error::Argument(format!("batch_size {batch_size} exceeds dataset length {len}")));
        }
        let mut s = Self { len, batch_size, order: Vec::new(), pos: 0, epoch: 0, rng: ChaCha8Rng::seed_from_u64(seed) };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.len).collect();
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch_size);
        while out.len() < self.batch_size {
            if self.pos == self.len {
                self.epoch += 1;
                self.reshuffle();
            }
            let take = (self.batch_size - out.len()).min(self.len - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }

    pub fn next_batch(&mut self, data: &Dataset) -> Tensor {
        data.batch(&self.next_indices())
    }
}

/// One shuffled minibatch drawn without replacement from `rng`.
pub fn sample_minibatch(data: &Dataset, batch_size: usize, rng: &mut impl Rng) -> Result<Tensor> {
    if batch_size == 0 {
        return Err(Error::Argument("batch_size must be at least 1".into()));
    }
    if batch_size > data.len() {
        return Err(Error::Argument(format!("batch_size {batch_size} exceeds dataset length {}", data.len())));
    }
    let idx = rand::seq::index::sample(rng, data.len(), batch_size).into_vec();
    Ok(data.batch(&idx))
}
