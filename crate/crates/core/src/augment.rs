//! The stochastic augmentation family producing K views per image, with
//! full parameter records so every view can be replayed bit-exactly.
//!
//! Images run the fixed pipeline crop -> flip -> jitter -> gray -> blur ->
//! solarize (plus optional additive pixel noise), all on [0,1] pixels.
//! Vector data degrades to additive Gaussian noise plus random coordinate
//! dropout behind the same probability interface.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{DataKind, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AugSpec {
    pub crop_p: f64,
    pub crop_scale: (f64, f64),
    pub flip_p: f64,
    pub jitter_p: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub gray_p: f64,
    pub blur_p: f64,
    pub blur_sigma: (f64, f64),
    pub solarize_p: f64,
    /// Additive Gaussian pixel noise, off by default.
    pub pixel_noise_sigma: f64,
    /// Vector-data noise scale.
    pub vec_noise_sigma: f64,
    /// Vector-data coordinate dropout probability.
    pub vec_dropout_p: f64,
    /// Crop scale range for the low-resolution views of the multi-crop
    /// baseline (a smaller input fraction at fixed input width).
    pub multicrop_low_scale: (f64, f64),
}

impl Default for AugSpec {
    fn default() -> Self {
        AugSpec {
            crop_p: 1.0,
            crop_scale: (0.2, 1.0),
            flip_p: 0.5,
            jitter_p: 0.8,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.2,
            gray_p: 0.2,
            blur_p: 1.0,
            blur_sigma: (0.1, 2.0),
            solarize_p: 0.2,
            pixel_noise_sigma: 0.0,
            vec_noise_sigma: 0.1,
            vec_dropout_p: 0.1,
            multicrop_low_scale: (0.05, 0.25),
        }
    }
}

impl AugSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("crop_p", self.crop_p),
            ("flip_p", self.flip_p),
            ("jitter_p", self.jitter_p),
            ("gray_p", self.gray_p),
            ("blur_p", self.blur_p),
            ("solarize_p", self.solarize_p),
            ("vec_dropout_p", self.vec_dropout_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        for (name, (lo, hi)) in [
            ("crop_scale", self.crop_scale),
            ("multicrop_low_scale", self.multicrop_low_scale),
        ] {
            if !(lo > 0.0 && hi <= 1.0 && lo <= hi) {
                return Err(Error::invalid(format!(
                    "{name} range ({lo}, {hi}) must sit inside (0, 1] with lo <= hi"
                )));
            }
        }
        let (blo, bhi) = self.blur_sigma;
        if !(blo > 0.0 && blo <= bhi) {
            return Err(Error::invalid("blur_sigma range must be positive"));
        }
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("pixel_noise_sigma", self.pixel_noise_sigma),
            ("vec_noise_sigma", self.vec_noise_sigma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropWindow {
    pub y0: usize,
    pub x0: usize,
    pub ch: usize,
    pub cw: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageAugRecord {
    pub crop: Option<CropWindow>,
    pub flip: bool,
    pub jitter: Option<JitterFactors>,
    pub gray: bool,
    pub blur_sigma: Option<f64>,
    pub solarize: bool,
    /// Exact noise values added per pixel, pre-clamp.
    pub pixel_noise: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorAugRecord {
    /// Exact noise values added per coordinate (already scaled).
    pub noise: Option<Vec<f64>>,
    /// Coordinates zeroed by dropout, ascending.
    pub dropped: Vec<usize>,
}

/// Every sampled transform parameter of one view, sufficient to reproduce
/// the view bit-exactly via [`replay`].
#[derive(Debug, Clone, PartialEq)]
pub enum AugRecord {
    Image(ImageAugRecord),
    Vector(VectorAugRecord),
}

fn clamp01(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Bilinear resample of one channel window back to (h, w). The mapping is
/// `src = (dst + 0.5) * scale - 0.5`, which reduces to an exact copy when
/// the window equals the full image.
fn resize_window(
    src: &[f64],
    h: usize,
    w: usize,
    win: &CropWindow,
    out: &mut [f64],
) {
    let sy = win.ch as f64 / h as f64;
    let sx = win.cw as f64 / w as f64;
    for oy in 0..h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).max(0.0).min(win.ch as f64 - 1.0);
        let y1 = fy.floor() as usize;
        let y2 = (y1 + 1).min(win.ch - 1);
        let wy = fy - y1 as f64;
        for ox in 0..w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).max(0.0).min(win.cw as f64 - 1.0);
            let x1 = fx.floor() as usize;
            let x2 = (x1 + 1).min(win.cw - 1);
            let wx = fx - x1 as f64;
            let at = |yy: usize, xx: usize| src[(win.y0 + yy) * w + win.x0 + xx];
            let top = at(y1, x1) * (1.0 - wx) + at(y1, x2) * wx;
            let bot = at(y2, x1) * (1.0 - wx) + at(y2, x2) * wx;
            out[oy * w + ox] = top * (1.0 - wy) + bot * wy;
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (2.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with clamp-to-edge padding, per channel.
fn blur_channel(src: &[f64], h: usize, w: usize, kernel: &[f64], out: &mut [f64]) {
    let radius = kernel.len() / 2;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let sx = (x + i).saturating_sub(radius).min(w - 1);
                acc += kv * src[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let sy = (y + i).saturating_sub(radius).min(h - 1);
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
}

fn apply_image_record(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    rec: &ImageAugRecord,
) -> Result<Vec<f64>> {
    if x.len() != c * h * w {
        return Err(Error::shape("image length does not match declared size"));
    }
    let plane = h * w;
    let mut cur = x.to_vec();

    if let Some(win) = &rec.crop {
        if win.ch == 0 || win.cw == 0 {
            return Err(Error::invalid("crop scale yields empty window"));
        }
        if win.y0 + win.ch > h || win.x0 + win.cw > w {
            return Err(Error::invalid("crop window out of bounds"));
        }
        let mut out = vec![0.0; c * plane];
        for ch_i in 0..c {
            resize_window(
                &cur[ch_i * plane..(ch_i + 1) * plane],
                h,
                w,
                win,
                &mut out[ch_i * plane..(ch_i + 1) * plane],
            );
        }
        cur = out;
    }

    if rec.flip {
        for ch_i in 0..c {
            for y in 0..h {
                let row = &mut cur[ch_i * plane + y * w..ch_i * plane + (y + 1) * w];
                row.reverse();
            }
        }
    }

    if let Some(j) = &rec.jitter {
        for v in cur.iter_mut() {
            *v *= j.brightness;
        }
        let mean = cur.iter().sum::<f64>() / cur.len() as f64;
        for v in cur.iter_mut() {
            *v = mean + j.contrast * (*v - mean);
        }
        if c > 1 {
            for p in 0..plane {
                let gray: f64 = (0..c).map(|ch_i| cur[ch_i * plane + p]).sum::<f64>() / c as f64;
                for ch_i in 0..c {
                    let v = &mut cur[ch_i * plane + p];
                    *v = gray + j.saturation * (*v - gray);
                }
            }
        }
        clamp01(&mut cur);
    }

    if rec.gray && c > 1 {
        for p in 0..plane {
            let gray: f64 = (0..c).map(|ch_i| cur[ch_i * plane + p]).sum::<f64>() / c as f64;
            for ch_i in 0..c {
                cur[ch_i * plane + p] = gray;
            }
        }
    }

    if let Some(sigma) = rec.blur_sigma {
        let kernel = gaussian_kernel(sigma);
        let mut out = vec![0.0; c * plane];
        for ch_i in 0..c {
            blur_channel(
                &cur[ch_i * plane..(ch_i + 1) * plane],
                h,
                w,
                &kernel,
                &mut out[ch_i * plane..(ch_i + 1) * plane],
            );
        }
        cur = out;
    }

    if rec.solarize {
        for v in cur.iter_mut() {
            if *v > 0.5 {
                *v = 1.0 - *v;
            }
        }
    }

    if let Some(noise) = &rec.pixel_noise {
        if noise.len() != cur.len() {
            return Err(Error::shape("pixel noise length mismatch"));
        }
        for (v, n) in cur.iter_mut().zip(noise.iter()) {
            *v += n;
        }
        clamp01(&mut cur);
    }

    Ok(cur)
}

fn apply_vector_record(x: &[f64], rec: &VectorAugRecord) -> Result<Vec<f64>> {
    let mut cur = x.to_vec();
    if let Some(noise) = &rec.noise {
        if noise.len() != cur.len() {
            return Err(Error::shape("vector noise length mismatch"));
        }
        for (v, n) in cur.iter_mut().zip(noise.iter()) {
            *v += n;
        }
    }
    for &i in &rec.dropped {
        if i >= cur.len() {
            return Err(Error::shape("dropout index out of range"));
        }
        cur[i] = 0.0;
    }
    Ok(cur)
}

fn sample_image_record(
    c: usize,
    h: usize,
    w: usize,
    spec: &AugSpec,
    scale_range: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<ImageAugRecord> {
    let mut rec = ImageAugRecord::default();
    if rng.gen::<f64>() < spec.crop_p {
        let (lo, hi) = scale_range;
        let s = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        let side = s.sqrt();
        let ch = ((h as f64 * side).round() as usize).min(h);
        let cw = ((w as f64 * side).round() as usize).min(w);
        if ch == 0 || cw == 0 {
            return Err(Error::invalid(format!(
                "crop scale {s} yields empty window on {h}x{w} image"
            )));
        }
        let y0 = if ch < h { rng.gen_range(0..=(h - ch)) } else { 0 };
        let x0 = if cw < w { rng.gen_range(0..=(w - cw)) } else { 0 };
        rec.crop = Some(CropWindow { y0, x0, ch, cw });
    }
    rec.flip = rng.gen::<f64>() < spec.flip_p;
    if rng.gen::<f64>() < spec.jitter_p {
        let draw = |rng: &mut ChaCha8Rng, max: f64| {
            if max == 0.0 {
                1.0
            } else {
                rng.gen_range((1.0 - max).max(0.0)..=1.0 + max)
            }
        };
        rec.jitter = Some(JitterFactors {
            brightness: draw(rng, spec.brightness),
            contrast: draw(rng, spec.contrast),
            saturation: draw(rng, spec.saturation),
        });
    }
    rec.gray = rng.gen::<f64>() < spec.gray_p;
    if rng.gen::<f64>() < spec.blur_p {
        let (lo, hi) = spec.blur_sigma;
        let sigma = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        rec.blur_sigma = Some(sigma);
    }
    rec.solarize = rng.gen::<f64>() < spec.solarize_p;
    if spec.pixel_noise_sigma > 0.0 {
        let noise: Vec<f64> = (0..c * h * w)
            .map(|_| spec.pixel_noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        rec.pixel_noise = Some(noise);
    }
    Ok(rec)
}

fn sample_vector_record(
    dim: usize,
    spec: &AugSpec,
    low_res: bool,
    rng: &mut ChaCha8Rng,
) -> VectorAugRecord {
    let mut rec = VectorAugRecord::default();
    if spec.vec_noise_sigma > 0.0 {
        rec.noise = Some(
            (0..dim)
                .map(|_| spec.vec_noise_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
    }
    let mut dropped = Vec::new();
    for i in 0..dim {
        if rng.gen::<f64>() < spec.vec_dropout_p {
            dropped.push(i);
        }
    }
    if low_res {
        // The low-resolution analogue for vectors: keep roughly a
        // `scale`-sized fraction of the coordinates.
        let (lo, hi) = spec.multicrop_low_scale;
        let s = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        for i in 0..dim {
            if rng.gen::<f64>() < 1.0 - s && !dropped.contains(&i) {
                dropped.push(i);
            }
        }
        dropped.sort_unstable();
    }
    rec.dropped = dropped;
    rec
}

/// Augment one sample, returning the view and the record of every sampled
/// parameter. Applying [`replay`] with the record reproduces the view
/// bit-exactly.
pub fn augment(
    x: &[f64],
    kind: DataKind,
    spec: &AugSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, AugRecord)> {
    augment_scaled(x, kind, spec, false, rng)
}

fn augment_scaled(
    x: &[f64],
    kind: DataKind,
    spec: &AugSpec,
    low_res: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, AugRecord)> {
    spec.validate()?;
    match kind {
        DataKind::Image { c, h, w } => {
            let scale = if low_res { spec.multicrop_low_scale } else { spec.crop_scale };
            let rec = sample_image_record(c, h, w, spec, scale, rng)?;
            let view = apply_image_record(x, c, h, w, &rec)?;
            Ok((view, AugRecord::Image(rec)))
        }
        DataKind::Vector { dim } => {
            if x.len() != dim {
                return Err(Error::shape("vector length mismatch"));
            }
            let rec = sample_vector_record(dim, spec, low_res, rng);
            let view = apply_vector_record(x, &rec)?;
            Ok((view, AugRecord::Vector(rec)))
        }
    }
}

/// Re-apply a recorded augmentation to its source sample.
pub fn replay(x: &[f64], kind: DataKind, record: &AugRecord) -> Result<Vec<f64>> {
    match (kind, record) {
        (DataKind::Image { c, h, w }, AugRecord::Image(rec)) => apply_image_record(x, c, h, w, rec),
        (DataKind::Vector { dim }, AugRecord::Vector(rec)) => {
            if x.len() != dim {
                return Err(Error::shape("vector length mismatch"));
            }
            apply_vector_record(x, rec)
        }
        _ => Err(Error::invalid("record kind does not match data kind")),
    }
}

/// K differently augmented views of the selected images. All views of row
/// i derive from `dataset` row `indices[i]`; draws are independent across
/// views and images.
#[derive(Debug, Clone)]
pub struct ViewBatch {
    /// K tensors of shape `[n, input_dim]`.
    pub views: Vec<Tensor>,
    pub image_ids: Vec<usize>,
    /// `records[j][i]` reproduces view j of batch row i.
    pub records: Vec<Vec<AugRecord>>,
}

pub fn make_view_batch(
    dataset: &Dataset,
    indices: &[usize],
    k: usize,
    spec: &AugSpec,
    rng: &mut ChaCha8Rng,
) -> Result<ViewBatch> {
    if k < 2 {
        return Err(Error::invalid("make_view_batch needs K >= 2"));
    }
    make_views_inner(dataset, indices, k, 0, spec, rng)
}

/// Multi-crop layout: two full-resolution views followed by `v_low`
/// low-resolution views, `V + 2` views in total.
pub fn make_multicrop_batch(
    dataset: &Dataset,
    indices: &[usize],
    v_low: usize,
    spec: &AugSpec,
    rng: &mut ChaCha8Rng,
) -> Result<ViewBatch> {
    make_views_inner(dataset, indices, 2, v_low, spec, rng)
}

fn make_views_inner(
    dataset: &Dataset,
    indices: &[usize],
    k_full: usize,
    k_low: usize,
    spec: &AugSpec,
    rng: &mut ChaCha8Rng,
) -> Result<ViewBatch> {
    if indices.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for &i in indices {
        if i >= dataset.len() {
            return Err(Error::invalid(format!("sample index {i} out of range")));
        }
    }
    let d = dataset.input_dim();
    let mut views = Vec::with_capacity(k_full + k_low);
    let mut records = Vec::with_capacity(k_full + k_low);
    for j in 0..k_full + k_low {
        let low_res = j >= k_full;
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut recs = Vec::with_capacity(indices.len());
        for &i in indices {
            let (view, rec) = augment_scaled(dataset.sample(i), dataset.kind, spec, low_res, rng)?;
            data.extend_from_slice(&view);
            recs.push(rec);
        }
        views.push(Tensor::from_vec(vec![indices.len(), d], data)?);
        records.push(recs);
    }
    Ok(ViewBatch { views, image_ids: indices.to_vec(), records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_gaussian_clusters, SplitTag};
    use crate::rng::rng_from_seed;

    fn image_kind() -> DataKind {
        DataKind::Image { c: 1, h: 8, w: 8 }
    }

    fn test_image() -> Vec<f64> {
        (0..64).map(|i| (i % 7) as f64 / 6.0).collect()
    }

    fn identity_spec() -> AugSpec {
        AugSpec {
            crop_p: 0.0,
            flip_p: 0.0,
            jitter_p: 0.0,
            gray_p: 0.0,
            blur_p: 0.0,
            solarize_p: 0.0,
            pixel_noise_sigma: 0.0,
            ..AugSpec::default()
        }
    }

    #[test]
    fn all_probabilities_zero_is_identity() {
        let x = test_image();
        let mut rng = rng_from_seed(1);
        let (view, _) = augment(&x, image_kind(), &identity_spec(), &mut rng).unwrap();
        assert_eq!(view, x);
    }

    #[test]
    fn full_scale_crop_is_identity() {
        let x = test_image();
        let spec = AugSpec { crop_scale: (1.0, 1.0), crop_p: 1.0, ..identity_spec() };
        let mut rng = rng_from_seed(2);
        let (view, rec) = augment(&x, image_kind(), &spec, &mut rng).unwrap();
        assert_eq!(view, x, "scale-1 crop must resample exactly");
        match rec {
            AugRecord::Image(r) => {
                assert_eq!(r.crop, Some(CropWindow { y0: 0, x0: 0, ch: 8, cw: 8 }))
            }
            _ => panic!("expected image record"),
        }
    }

    #[test]
    fn double_flip_is_identity() {
        let x = test_image();
        let rec = ImageAugRecord { flip: true, ..ImageAugRecord::default() };
        let once = apply_image_record(&x, 1, 8, 8, &rec).unwrap();
        let twice = apply_image_record(&once, 1, 8, 8, &rec).unwrap();
        assert_eq!(twice, x);
    }

    #[test]
    fn replay_reproduces_view_bit_exactly() {
        let x = test_image();
        let spec = AugSpec { pixel_noise_sigma: 0.02, ..AugSpec::default() };
        for seed in 0..20 {
            let mut rng = rng_from_seed(seed);
            let (view, rec) = augment(&x, image_kind(), &spec, &mut rng).unwrap();
            let replayed = replay(&x, image_kind(), &rec).unwrap();
            assert_eq!(view, replayed, "seed {seed}");
        }
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        let x = test_image();
        let spec = AugSpec { pixel_noise_sigma: 0.5, ..AugSpec::default() };
        for seed in 0..50 {
            let mut rng = rng_from_seed(seed);
            let (view, _) = augment(&x, image_kind(), &spec, &mut rng).unwrap();
            assert!(view.iter().all(|&v| (0.0..=1.0).contains(&v) && v.is_finite()));
        }
    }

    #[test]
    fn crop_scale_too_small_for_image_is_error() {
        // A 2x2 image with scale 0.01 rounds to an empty window.
        let x = vec![0.0; 4];
        let spec = AugSpec {
            crop_p: 1.0,
            crop_scale: (0.01, 0.01),
            ..identity_spec()
        };
        let mut rng = rng_from_seed(3);
        let res = augment(&x, DataKind::Image { c: 1, h: 2, w: 2 }, &spec, &mut rng);
        assert!(res.is_err());
    }

    #[test]
    fn vector_replay_bit_exact_and_deterministic() {
        let ds = make_gaussian_clusters(2, 4, 6, 0.2, 5, SplitTag::Train).unwrap();
        let spec = AugSpec::default();
        let mut r1 = rng_from_seed(9);
        let mut r2 = rng_from_seed(9);
        let b1 = make_view_batch(&ds, &[0, 3, 5], 3, &spec, &mut r1).unwrap();
        let b2 = make_view_batch(&ds, &[0, 3, 5], 3, &spec, &mut r2).unwrap();
        for (v1, v2) in b1.views.iter().zip(b2.views.iter()) {
            assert_eq!(v1, v2);
        }
        for (j, view) in b1.views.iter().enumerate() {
            for (i, &img) in b1.image_ids.iter().enumerate() {
                let replayed = replay(ds.sample(img), ds.kind, &b1.records[j][i]).unwrap();
                assert_eq!(view.row(i), replayed.as_slice());
            }
        }
    }

    #[test]
    fn view_batch_needs_two_views() {
        let ds = make_gaussian_clusters(2, 4, 6, 0.2, 5, SplitTag::Train).unwrap();
        let mut rng = rng_from_seed(1);
        assert!(make_view_batch(&ds, &[0], 1, &AugSpec::default(), &mut rng).is_err());
    }

    #[test]
    fn flip_bits_independent_across_views() {
        // 2x2 chi-square on the flip bits of two views over many draws.
        let x = test_image();
        let spec = AugSpec { flip_p: 0.5, ..identity_spec() };
        let mut rng = rng_from_seed(1234);
        let mut counts = [[0f64; 2]; 2];
        let trials = 2000;
        for _ in 0..trials {
            let flips: Vec<bool> = (0..2)
                .map(|_| {
                    let (_, rec) = augment(&x, image_kind(), &spec, &mut rng).unwrap();
                    match rec {
                        AugRecord::Image(r) => r.flip,
                        _ => unreachable!(),
                    }
                })
                .collect();
            counts[flips[0] as usize][flips[1] as usize] += 1.0;
        }
        let total = trials as f64;
        let row: Vec<f64> = (0..2).map(|i| counts[i][0] + counts[i][1]).collect();
        let col: Vec<f64> = (0..2).map(|j| counts[0][j] + counts[1][j]).collect();
        let mut chi2 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let expected = row[i] * col[j] / total;
                chi2 += (counts[i][j] - expected).powi(2) / expected;
            }
        }
        assert!(chi2 < 6.63, "chi-square {chi2} exceeds the 1% critical value");
    }

    #[test]
    fn positive_views_closer_than_other_images() {
        // At default spread/noise, two views of an image stay closer to
        // each other than to views of other images, on average.
        let ds = make_gaussian_clusters(4, 8, 12, 0.15, 21, SplitTag::Train).unwrap();
        let spec = AugSpec::default();
        let mut rng = rng_from_seed(77);
        let indices: Vec<usize> = (0..ds.len()).collect();
        let batch = make_view_batch(&ds, &indices, 2, &spec, &mut rng).unwrap();
        let (a, b) = (&batch.views[0], &batch.views[1]);
        let dist = |x: &[f64], y: &[f64]| {
            x.iter()
                .zip(y.iter())
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt()
        };
        let n = ds.len();
        let mut positive = 0.0;
        for i in 0..n {
            positive += dist(a.row(i), b.row(i));
        }
        positive /= n as f64;
        let mut negative = 0.0;
        let mut pairs = 0.0;
        for i in 0..n {
            for o in 0..n {
                if i != o {
                    negative += dist(a.row(i), b.row(o));
                    pairs += 1.0;
                }
            }
        }
        negative /= pairs;
        assert!(
            positive < negative,
            "positive pair distance {positive} should undercut {negative}"
        );
    }

    #[test]
    fn multicrop_batch_layout() {
        let ds = make_gaussian_clusters(2, 4, 10, 0.2, 5, SplitTag::Train).unwrap();
        let mut rng = rng_from_seed(3);
        let batch = make_multicrop_batch(&ds, &[0, 1], 3, &AugSpec::default(), &mut rng).unwrap();
        assert_eq!(batch.views.len(), 5, "2 full + 3 low views");
        // Low-res vector views drop more coordinates on average.
        let low_dropped: usize = (2..5)
            .flat_map(|j| batch.records[j].iter())
            .map(|r| match r {
                AugRecord::Vector(v) => v.dropped.len(),
                _ => 0,
            })
            .sum();
        let full_dropped: usize = (0..2)
            .flat_map(|j| batch.records[j].iter())
            .map(|r| match r {
                AugRecord::Vector(v) => v.dropped.len(),
                _ => 0,
            })
            .sum();
        assert!(low_dropped > full_dropped);
    }

    #[test]
    fn solarize_and_gray_behave() {
        let x = vec![0.2, 0.8, 0.5, 1.0];
        let rec = ImageAugRecord { solarize: true, ..ImageAugRecord::default() };
        let out = apply_image_record(&x, 1, 2, 2, &rec).unwrap();
        assert_eq!(out, vec![0.2, 1.0 - 0.8, 0.5, 0.0]);

        // Gray on a 2-channel image averages channels per pixel.
        let x2 = vec![0.0, 1.0, 1.0, 0.0];
        let rec = ImageAugRecord { gray: true, ..ImageAugRecord::default() };
        let out = apply_image_record(&x2, 2, 1, 2, &rec).unwrap();
        assert_eq!(out, vec![0.5, 0.5, 0.5, 0.5]);
    }
}
