//! On-disk feature store format and synthetic feature generation.
//!
//! Stores hold 32-bit floats exactly as written, so write-then-read is
//! bit-identical; tensors are widened to 64-bit only when handed to the
//! numeric pipeline.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::core::FeatureTensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LPF1";
const VERSION: u32 = 1;

/// One class's name and its images' feature tensors (position-major f32).
#[derive(Debug, Clone, PartialEq)]
pub struct StoreClass {
    name: String,
    tensors: Vec<Vec<f32>>,
}

impl StoreClass {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn image_count(&self) -> usize {
        self.tensors.len()
    }
}

/// An extracted-feature dataset: fixed tensor shape, one tensor per image,
/// images grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    width: usize,
    height: usize,
    depth: usize,
    classes: Vec<StoreClass>,
}

impl FeatureStore {
    pub fn new(
        width: usize,
        height: usize,
        depth: usize,
        classes: Vec<(String, Vec<Vec<f32>>)>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || depth == 0 {
            return Err(Error::arg("store dimensions must be positive"));
        }
        if classes.is_empty() {
            return Err(Error::arg("store must have at least one class"));
        }
        let len = width * height * depth;
        for (name, tensors) in &classes {
            for tensor in tensors {
                if tensor.len() != len {
                    return Err(Error::arg(format!(
                        "class {:?} has a tensor of {} values, expected {}",
                        name,
                        tensor.len(),
                        len
                    )));
                }
                if tensor.iter().any(|v| !v.is_finite()) {
                    return Err(Error::arg(format!("class {:?} has non-finite values", name)));
                }
            }
        }
        Ok(Self {
            width,
            height,
            depth,
            classes: classes
                .into_iter()
                .map(|(name, tensors)| StoreClass { name, tensors })
                .collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[StoreClass] {
        &self.classes
    }

    pub fn class_name(&self, class: usize) -> &str {
        &self.classes[class].name
    }

    pub fn image_count(&self, class: usize) -> usize {
        self.classes[class].tensors.len()
    }

    /// The stored tensor widened to the compute precision.
    pub fn tensor(&self, class: usize, image: usize) -> FeatureTensor {
        let raw = &self.classes[class].tensors[image];
        let data: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
        FeatureTensor::new(self.width, self.height, self.depth, data)
            .expect("stored tensors are validated at construction")
    }
}

/// Serialize a store to its binary file format.
pub fn write_store(store: &FeatureStore, path: &Path) -> Result<()> {
    if store.classes.is_empty() {
        return Err(Error::Format {
            offset: 0,
            message: "store must have at least one class".into(),
        });
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for value in [
        VERSION,
        store.width as u32,
        store.height as u32,
        store.depth as u32,
        store.classes.len() as u32,
    ] {
        out.extend_from_slice(&value.to_le_bytes());
    }
    for class in &store.classes {
        out.extend_from_slice(&(class.name.len() as u32).to_le_bytes());
        out.extend_from_slice(class.name.as_bytes());
        out.extend_from_slice(&(class.tensors.len() as u32).to_le_bytes());
    }
    for class in &store.classes {
        for tensor in &class.tensors {
            for &v in tensor {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.offset as u64,
                message: format!("file truncated while reading {what}"),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parse a store file, reporting the byte offset of any malformation.
pub fn read_store(path: &Path) -> Result<FeatureStore> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        offset: 0,
    };

    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {:?}, expected {:?}", magic, MAGIC),
        });
    }
    let version_offset = cur.offset as u64;
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: version_offset,
            message: format!("unsupported version {version}"),
        });
    }
    let width = cur.u32("width")? as usize;
    let height = cur.u32("height")? as usize;
    let depth = cur.u32("depth")? as usize;
    let header_offset = cur.offset as u64;
    let n_classes = cur.u32("class count")? as usize;
    if width == 0 || height == 0 || depth == 0 || n_classes == 0 {
        return Err(Error::Format {
            offset: header_offset,
            message: "dimensions and class count must be positive".into(),
        });
    }

    let mut headers = Vec::with_capacity(n_classes);
    for i in 0..n_classes {
        let name_len = cur.u32("class name length")? as usize;
        let name_offset = cur.offset as u64;
        let name_bytes = cur.take(name_len, "class name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|e| Error::Format {
                offset: name_offset,
                message: format!("class {i} name is not UTF-8: {e}"),
            })?
            .to_owned();
        let count = cur.u32("image count")? as usize;
        headers.push((name, count));
    }

    let tensor_len = width * height * depth;
    let mut classes = Vec::with_capacity(n_classes);
    for (name, count) in headers {
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let raw = cur.take(tensor_len * 4, "tensor data")?;
            let tensor: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(tensor);
        }
        classes.push((name, tensors));
    }
    if cur.offset != bytes.len() {
        return Err(Error::Format {
            offset: cur.offset as u64,
            message: format!("{} trailing bytes after tensor data", bytes.len() - cur.offset),
        });
    }
    FeatureStore::new(width, height, depth, classes)
}

/// Generate a synthetic feature store with a controllable difficulty.
///
/// Each class gets a random unit "object" direction and a two-dimensional
/// offset subspace; object positions are unit-normalized samples around that
/// manifold with Gaussian noise `sigma`. The remaining positions are filled
/// from a background pool of low-norm (0.25) vectors shared across classes,
/// so norm-based attention can separate object from clutter. Deterministic
/// in `seed`.
#[allow(clippy::too_many_arguments)]
pub fn synth_generate(
    classes: usize,
    images_per_class: usize,
    width: usize,
    height: usize,
    depth: usize,
    clutter_fraction: f64,
    sigma: f64,
    seed: u64,
) -> Result<FeatureStore> {
    if classes == 0 || images_per_class == 0 || width == 0 || height == 0 {
        return Err(Error::arg("classes, images, and extent must be positive"));
    }
    if depth < 4 {
        return Err(Error::arg("depth must be at least 4"));
    }
    if !(0.0..1.0).contains(&clutter_fraction) {
        return Err(Error::arg("clutter fraction must lie in [0, 1)"));
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::arg("noise sigma must be finite and >= 0"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..depth).map(|_| rng.sample(StandardNormal)).collect()
    };
    let normalize = |v: &mut [f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            for x in v.iter_mut() {
                *x /= n;
            }
        }
    };

    const BACKGROUND_POOL: usize = 32;
    const BACKGROUND_NORM: f64 = 0.25;
    let background: Vec<Vec<f64>> = (0..BACKGROUND_POOL)
        .map(|_| {
            let mut v = gaussian(&mut rng);
            normalize(&mut v);
            for x in &mut v {
                *x *= BACKGROUND_NORM;
            }
            v
        })
        .collect();

    let positions = width * height;
    let object_positions = ((1.0 - clutter_fraction) * positions as f64).ceil() as usize;
    let mut out_classes = Vec::with_capacity(classes);
    for class in 0..classes {
        // object direction and an offset plane orthogonal to it
        let mut object = gaussian(&mut rng);
        normalize(&mut object);
        let mut basis = Vec::with_capacity(2);
        while basis.len() < 2 {
            let mut b = gaussian(&mut rng);
            for prev in std::iter::once(&object).chain(basis.iter()) {
                let dot: f64 = b.iter().zip(prev.iter()).map(|(x, y)| x * y).sum();
                for (x, p) in b.iter_mut().zip(prev.iter()) {
                    *x -= dot * p;
                }
            }
            let n = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                for x in &mut b {
                    *x /= n;
                }
                basis.push(b);
            }
        }

        let mut tensors = Vec::with_capacity(images_per_class);
        for _ in 0..images_per_class {
            // the image is one point on the class plane; its positions are
            // noisy observations of that point
            let c1: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
            let c2: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
            let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(positions);
            for _ in 0..object_positions {
                let mut v: Vec<f64> = (0..depth)
                    .map(|j| {
                        let noise: f64 = rng.sample::<f64, _>(StandardNormal);
                        object[j] + c1 * basis[0][j] + c2 * basis[1][j] + sigma * noise
                    })
                    .collect();
                normalize(&mut v);
                vectors.push(v);
            }
            for _ in object_positions..positions {
                let pick = rng.gen_range(0..background.len());
                vectors.push(background[pick].clone());
            }
            vectors.shuffle(&mut rng);
            let data: Vec<f32> = vectors
                .into_iter()
                .flatten()
                .map(|v| v as f32)
                .collect();
            tensors.push(data);
        }
        out_classes.push((format!("class_{class:03}"), tensors));
    }
    FeatureStore::new(width, height, depth, out_classes)
}
