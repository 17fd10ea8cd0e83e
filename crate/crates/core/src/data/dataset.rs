//! In-memory image sets, lazy patch views and deterministic batching.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::container::load_tensor;
use super::hha::encode_hha;
use super::manifest::{Manifest, Modality, Split};
use super::netpbm::{load_depth, load_rgb};
use super::patches::{crop, grid_windows};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps [0, 255] pixel values to [−1, 1].
pub fn normalize(image: &mut Tensor) {
    for v in image.data_mut() {
        *v = *v / 127.5 - 1.0;
    }
}

/// Mirror a C×H×W tensor left to right.
pub fn flip_horizontal(image: &Tensor) -> Tensor {
    let [c, h, w] = *image.shape() else {
        return image.clone();
    };
    let d = image.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let col = i % w;
        d[i - col + (w - 1 - col)]
    })
}

/// Anything that can hand out labelled samples by index.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn label(&self, index: usize) -> usize;
    fn sample(&self, index: usize) -> Result<Tensor>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

/// Decoded, normalised images of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl ImageSet {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!("label {l} outside {num_classes} classes")));
        }
        Ok(ImageSet {
            images,
            labels,
            num_classes,
        })
    }

    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.images.first().map(Tensor::shape)
    }
}

impl SampleSource for ImageSet {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn sample(&self, index: usize) -> Result<Tensor> {
        Ok(self.images[index].clone())
    }
}

/// Every grid patch of every image, cropped on demand. Patches inherit the
/// label of their image.
pub struct PatchView<'a> {
    base: &'a ImageSet,
    windows: Vec<(usize, usize)>,
    patch: usize,
}

impl<'a> PatchView<'a> {
    pub fn new(base: &'a ImageSet, grid: usize, patch: usize) -> Result<Self> {
        let Some(&[_, h, w]) = base.sample_shape() else {
            return Err(Error::Data("patch view needs a non-empty set of C×H×W images".into()));
        };
        if base.images.iter().any(|i| i.shape()[1..] != [h, w]) {
            return Err(Error::Data("patch view needs images of one size".into()));
        }
        if patch > h.min(w) {
            return Err(Error::param(
                "sample_patch_grid",
                format!("patch size {patch} exceeds image {h}×{w}"),
            ));
        }
        let windows = grid_windows(h, w, grid, patch)?
            .into_iter()
            .map(|(t, l, _, _)| (t, l))
            .collect();
        Ok(PatchView {
            base,
            windows,
            patch,
        })
    }

    pub fn per_image(&self) -> usize {
        self.windows.len()
    }

    /// Source image of a patch index.
    pub fn source(&self, index: usize) -> usize {
        index / self.windows.len()
    }
}

impl SampleSource for PatchView<'_> {
    fn len(&self) -> usize {
        self.base.len() * self.windows.len()
    }

    fn num_classes(&self) -> usize {
        self.base.num_classes
    }

    fn label(&self, index: usize) -> usize {
        self.base.labels[self.source(index)]
    }

    fn sample(&self, index: usize) -> Result<Tensor> {
        let (top, left) = self.windows[index % self.windows.len()];
        crop(&self.base.images[self.source(index)], top, left, self.patch)
    }
}

/// Depth input representation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthEncoding {
    pub gravity: [f64; 3],
}

impl Default for DepthEncoding {
    fn default() -> Self {
        DepthEncoding {
            gravity: super::hha::DEFAULT_GRAVITY,
        }
    }
}

/// Loads one split of a manifest. RGB images are read directly; depth maps
/// are HHA-encoded unless the depth column already points at encoded `.dtns`
/// tensors. Both are normalised to [−1, 1].
pub fn load_split(manifest: &Manifest, split: Split, modality: Modality, depth: DepthEncoding) -> Result<ImageSet> {
    if modality == Modality::Paired {
        return Err(Error::Config("load_split reads one modality; use load_paired".into()));
    }
    manifest.require(modality)?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for r in manifest.records.iter().filter(|r| r.split == split) {
        let mut img = match modality {
            Modality::Rgb => load_rgb(r.rgb.as_deref().expect("checked by require"))?,
            _ => {
                let path: &Path = r.depth.as_deref().expect("checked by require");
                if path.extension().is_some_and(|e| e == "dtns") {
                    let t = load_tensor(path)?;
                    if t.shape().len() != 3 || t.shape()[0] != 3 {
                        return Err(Error::Data(format!(
                            "{} holds a {:?} tensor, expected 3×H×W HHA",
                            path.display(),
                            t.shape()
                        )));
                    }
                    t
                } else {
                    encode_hha(&load_depth(path, None)?, depth.gravity)?
                }
            }
        };
        normalize(&mut img);
        images.push(img);
        labels.push(r.label);
    }
    ImageSet::new(images, labels, manifest.num_classes)
}

/// RGB and HHA sets of one split with matching order.
pub fn load_paired(manifest: &Manifest, split: Split, depth: DepthEncoding) -> Result<(ImageSet, ImageSet)> {
    manifest.require(Modality::Paired)?;
    Ok((
        load_split(manifest, split, Modality::Rgb, depth)?,
        load_split(manifest, split, Modality::Depth, depth)?,
    ))
}

/// Sample order for one epoch; depends only on `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0xA076_1D64_78BD_642F));
    order.shuffle(&mut rng);
    order
}

/// Stacks the samples at `indices` into an N×… batch.
pub fn make_batch(src: &dyn SampleSource, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let samples = indices.iter().map(|&i| src.sample(i)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor> = samples.iter().collect();
    let labels = indices.iter().map(|&i| src.label(i)).collect();
    Ok((Tensor::stack(&refs)?, labels))
}
