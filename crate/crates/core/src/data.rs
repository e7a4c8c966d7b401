//! Desk-scale datasets: seeded Gaussian cluster surrogates and the IDX
//! binary image format (big-endian dims, u8 pixels).

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Vector { dim: usize },
    Image { c: usize, h: usize, w: usize },
}

impl DataKind {
    pub fn input_dim(&self) -> usize {
        match self {
            DataKind::Vector { dim } => *dim,
            DataKind::Image { c, h, w } => c * h * w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

/// Inputs are stored flattened to `[N, input_dim]`; labels are used only
/// by evaluation, never by training.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub kind: DataKind,
    pub inputs: Tensor,
    pub labels: Vec<u32>,
    pub num_classes: usize,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(
        kind: DataKind,
        inputs: Tensor,
        labels: Vec<u32>,
        num_classes: usize,
        split: SplitTag,
    ) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.cols() != kind.input_dim() {
            return Err(Error::shape(format!(
                "dataset inputs {:?} do not match kind width {}",
                inputs.shape(),
                kind.input_dim()
            )));
        }
        if labels.len() != inputs.rows() {
            return Err(Error::invalid(format!(
                "{} labels for {} samples",
                labels.len(),
                inputs.rows()
            )));
        }
        if labels.iter().any(|&l| l as usize >= num_classes) {
            return Err(Error::invalid("label outside [0, num_classes)"));
        }
        Ok(Dataset { kind, inputs, labels, num_classes, split })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.kind.input_dim()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }
}

/// Isotropic Gaussian blobs around random unit-norm class centers,
/// class-major sample order, fully determined by the seed.
pub fn make_gaussian_clusters(
    num_classes: usize,
    per_class: usize,
    d_in: usize,
    spread: f64,
    seed: u64,
    split: SplitTag,
) -> Result<Dataset> {
    if !(spread.is_finite() && spread > 0.0) {
        return Err(Error::invalid("spread must be > 0"));
    }
    if num_classes == 0 || per_class == 0 || d_in == 0 {
        return Err(Error::invalid("empty gaussian cluster dataset"));
    }
    let mut rng = rng_from_seed(seed);
    let mut centers = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut c: Vec<f64> = (0..d_in).map(|_| rng.sample(StandardNormal)).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut c {
            *v /= norm;
        }
        centers.push(c);
    }
    let mut data = Vec::with_capacity(num_classes * per_class * d_in);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &c in center {
                let eps: f64 = rng.sample(StandardNormal);
                data.push(c + spread * eps);
            }
            labels.push(class as u32);
        }
    }
    Dataset::new(
        DataKind::Vector { dim: d_in },
        Tensor::from_vec(vec![num_classes * per_class, d_in], data)?,
        labels,
        num_classes,
        split,
    )
}

fn read_u32_be(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    if *pos + 4 > bytes.len() {
        return Err(Error::Idx(format!("truncated file while reading {what}")));
    }
    let v = u32::from_be_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
    *pos += 4;
    Ok(v)
}

/// Raw IDX image payload: `(count, height, width, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let magic = read_u32_be(&bytes, &mut pos, "magic")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Idx(format!("bad image magic 0x{magic:08x}")));
    }
    let n = read_u32_be(&bytes, &mut pos, "count")? as usize;
    let h = read_u32_be(&bytes, &mut pos, "height")? as usize;
    let w = read_u32_be(&bytes, &mut pos, "width")? as usize;
    let expected = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Idx("image dimensions overflow".into()))?;
    let body = &bytes[pos..];
    if body.len() != expected {
        return Err(Error::Idx(format!(
            "expected {expected} pixel bytes, found {}",
            body.len()
        )));
    }
    Ok((n, h, w, body.to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let magic = read_u32_be(&bytes, &mut pos, "magic")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Idx(format!("bad label magic 0x{magic:08x}")));
    }
    let n = read_u32_be(&bytes, &mut pos, "count")? as usize;
    let body = &bytes[pos..];
    if body.len() != n {
        return Err(Error::Idx(format!(
            "expected {n} label bytes, found {}",
            body.len()
        )));
    }
    Ok(body.to_vec())
}

pub fn write_idx_images(path: &Path, h: usize, w: usize, pixels: &[u8]) -> Result<()> {
    if h == 0 || w == 0 || pixels.len() % (h * w) != 0 {
        return Err(Error::Idx("pixel count not divisible by h*w".into()));
    }
    let n = pixels.len() / (h * w);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&IDX_IMAGE_MAGIC.to_be_bytes())?;
    f.write_all(&(n as u32).to_be_bytes())?;
    f.write_all(&(h as u32).to_be_bytes())?;
    f.write_all(&(w as u32).to_be_bytes())?;
    f.write_all(pixels)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&IDX_LABEL_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)?;
    Ok(())
}

/// Load an IDX image/label pair as a single-channel image dataset with
/// pixels scaled to [0, 1].
pub fn load_idx_dataset(images: &Path, labels: &Path, split: SplitTag) -> Result<Dataset> {
    let (n, h, w, pixels) = read_idx_images(images)?;
    let raw_labels = read_idx_labels(labels)?;
    if raw_labels.len() != n {
        return Err(Error::Idx(format!(
            "{} labels for {n} images",
            raw_labels.len()
        )));
    }
    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<u32> = raw_labels.iter().map(|&l| l as u32).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    Dataset::new(
        DataKind::Image { c: 1, h, w },
        Tensor::from_vec(vec![n, h * w], data)?,
        labels,
        num_classes,
        split,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_clusters_deterministic() {
        let a = make_gaussian_clusters(3, 4, 8, 0.2, 42, SplitTag::Train).unwrap();
        let b = make_gaussian_clusters(3, 4, 8, 0.2, 42, SplitTag::Train).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.labels, b.labels);
        let c = make_gaussian_clusters(3, 4, 8, 0.2, 43, SplitTag::Train).unwrap();
        assert_ne!(a.inputs, c.inputs);
    }

    #[test]
    fn gaussian_clusters_tiny_spread_hugs_centers() {
        let ds = make_gaussian_clusters(2, 3, 4, 1e-12, 7, SplitTag::Train).unwrap();
        // Samples of the same class differ by at most ~spread.
        for i in 1..3 {
            let a = ds.sample(0);
            let b = ds.sample(i);
            let dist: f64 = a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            assert!(dist < 1e-10);
        }
    }

    #[test]
    fn gaussian_clusters_rejects_bad_spread() {
        assert!(make_gaussian_clusters(2, 3, 4, 0.0, 7, SplitTag::Train).is_err());
        assert!(make_gaussian_clusters(2, 3, 4, -1.0, 7, SplitTag::Train).is_err());
    }

    #[test]
    fn idx_round_trip_and_scaling() {
        let dir = std::env::temp_dir().join("embdyn_idx_test");
        std::fs::create_dir_all(&dir).unwrap();
        let img = dir.join("images.idx");
        let lbl = dir.join("labels.idx");
        write_idx_images(&img, 2, 2, &[0, 255, 0, 255]).unwrap();
        write_idx_labels(&lbl, &[1]).unwrap();
        let ds = load_idx_dataset(&img, &lbl, SplitTag::Train).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.sample(0), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(ds.labels, vec![1]);

        // Round trip the raw payload.
        let (n, h, w, pixels) = read_idx_images(&img).unwrap();
        assert_eq!((n, h, w), (1, 2, 2));
        assert_eq!(pixels, vec![0, 255, 0, 255]);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn idx_rejects_bad_magic_and_truncation() {
        let dir = std::env::temp_dir().join("embdyn_idx_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.idx");
        std::fs::write(&path, [0u8, 0, 8, 1, 0, 0, 0, 1]).unwrap();
        assert!(read_idx_images(&path).is_err(), "label magic on image read");
        std::fs::write(&path, IDX_IMAGE_MAGIC.to_be_bytes()).unwrap();
        assert!(read_idx_images(&path).is_err(), "truncated dims");
        // Promises 2 images of 2x2 but carries only 4 bytes.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[7, 7, 7, 7]);
        std::fs::write(&path, bytes).unwrap();
        assert!(read_idx_images(&path).is_err(), "short pixel payload");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn idx_label_count_mismatch() {
        let dir = std::env::temp_dir().join("embdyn_idx_mismatch");
        std::fs::create_dir_all(&dir).unwrap();
        let img = dir.join("images.idx");
        let lbl = dir.join("labels.idx");
        write_idx_images(&img, 2, 2, &[0, 255, 0, 255]).unwrap();
        write_idx_labels(&lbl, &[1, 0]).unwrap();
        assert!(load_idx_dataset(&img, &lbl, SplitTag::Train).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
