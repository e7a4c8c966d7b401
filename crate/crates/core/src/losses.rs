//! The loss zoo: two-view cosine loss, multiview centroid loss, Brownian
//! diffusion loss, covariance / singular value loss, the multi-crop
//! baseline, and the alignment/uniformity diagnostics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Tolerance when validating unit-norm preconditions.
const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvInput {
    /// Covariance over raw predictions `p` (the equation's form; default).
    RawPredictions,
    /// Covariance over row-normalized predictions.
    NormalizedPredictions,
}

impl SvInput {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(SvInput::RawPredictions),
            "normalized" => Ok(SvInput::NormalizedPredictions),
            other => Err(Error::Config(format!(
                "unknown sv_input '{other}' (expected raw|normalized)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SvInput::RawPredictions => "raw",
            SvInput::NormalizedPredictions => "normalized",
        }
    }
}

/// Coefficients of the total loss and its variant switches.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    /// Views per image.
    pub k: usize,
    pub lambda_s: f64,
    pub lambda_b: f64,
    pub sv_input: SvInput,
    /// Low-resolution view count for the multi-crop baseline.
    pub multicrop_v: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        // Best sweep values: lambda_s = 0.004, lambda_b = 0.5.
        LossWeights {
            k: 4,
            lambda_s: 0.004,
            lambda_b: 0.5,
            sv_input: SvInput::RawPredictions,
            multicrop_v: 6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("K must be at least 2"));
        }
        if !self.lambda_s.is_finite() || self.lambda_s < 0.0 {
            return Err(Error::invalid("lambda_s must be finite and >= 0"));
        }
        if !self.lambda_b.is_finite() || self.lambda_b < 0.0 {
            return Err(Error::invalid("lambda_b must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One random unit direction per image, shared across that image's views.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    n_hat: Tensor,
    /// Seed of the stream this draw came from, for provenance.
    pub seed: u64,
}

impl NoiseDraw {
    /// Rows drawn i.i.d. from the normalized standard normal in d dimensions.
    pub fn sample(n: usize, d: usize, rng: &mut ChaCha8Rng, seed: u64) -> Self {
        let mut data = vec![0.0; n * d];
        for r in 0..n {
            loop {
                let row = &mut data[r * d..(r + 1) * d];
                for v in row.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    for v in row.iter_mut() {
                        *v /= norm;
                    }
                    break;
                }
            }
        }
        NoiseDraw {
            n_hat: Tensor::from_vec(vec![n, d], data).expect("noise shape"),
            seed,
        }
    }

    pub fn from_tensor(n_hat: Tensor, seed: u64) -> Result<Self> {
        check_unit_rows(&n_hat, "noise directions")?;
        Ok(NoiseDraw { n_hat, seed })
    }

    pub fn n_hat(&self) -> &Tensor {
        &self.n_hat
    }
}

fn check_unit_rows(t: &Tensor, what: &str) -> Result<()> {
    for r in 0..t.rows() {
        let norm: f64 = t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!(
                "{what}: row {r} has norm {norm}, expected unit"
            )));
        }
    }
    Ok(())
}

fn check_view_shapes(graph: &Graph, views: &[NodeId], what: &str) -> Result<(usize, usize)> {
    let first = graph.value(views[0]);
    if first.shape().len() != 2 {
        return Err(Error::shape(format!("{what}: views must be [n, d] matrices")));
    }
    let (n, d) = (first.rows(), first.cols());
    for &v in views {
        let t = graph.value(v);
        if t.shape() != [n, d] {
            return Err(Error::shape(format!("{what}: ragged view shapes")));
        }
    }
    Ok((n, d))
}

/// Two-view cosine loss: mean over the batch of `|p_hat - z_hat|^2`,
/// which equals `2 - 2 <p_hat, z_hat>` per row. Both inputs must be
/// row-normalized; the target is gradient-severed by construction.
pub fn byol_loss(graph: &mut Graph, p_hat: NodeId, z_prime_hat: &Tensor) -> Result<NodeId> {
    let p = graph.value(p_hat);
    if p.shape() != z_prime_hat.shape() {
        return Err(Error::shape(format!(
            "byol_loss: {:?} vs {:?}",
            p.shape(),
            z_prime_hat.shape()
        )));
    }
    check_unit_rows(p, "byol_loss predictions")?;
    check_unit_rows(z_prime_hat, "byol_loss targets")?;
    let n = p.rows() as f64;
    let z = graph.constant(z_prime_hat.clone());
    let diff = graph.sub(p_hat, z)?;
    let ss = graph.frob_sq(diff);
    Ok(graph.scale(ss, 1.0 / n))
}

/// Multiview centroid loss: per image, mean over views of the squared
/// distance between the online prediction and the centroid of the target
/// projections, averaged over the batch.
pub fn centroid_loss(
    graph: &mut Graph,
    p_hat_views: &[NodeId],
    z_prime_hat_views: &[Tensor],
) -> Result<NodeId> {
    let k = p_hat_views.len();
    if k < 2 {
        return Err(Error::invalid("centroid_loss needs K >= 2 views"));
    }
    if z_prime_hat_views.len() != k {
        return Err(Error::shape("centroid_loss: view count mismatch"));
    }
    let (n, _) = check_view_shapes(graph, p_hat_views, "centroid_loss")?;

    let mut centroid = z_prime_hat_views[0].clone();
    for z in &z_prime_hat_views[1..] {
        centroid = centroid.add(z);
    }
    let centroid = centroid.scale(1.0 / k as f64);
    let c = graph.constant(centroid);

    let mut acc: Option<NodeId> = None;
    for &p in p_hat_views {
        let diff = graph.sub(p, c)?;
        let ss = graph.frob_sq(diff);
        acc = Some(match acc {
            Some(a) => graph.add(a, ss)?,
            None => ss,
        });
    }
    Ok(graph.scale(acc.unwrap(), 1.0 / (n as f64 * k as f64)))
}

/// Brownian diffusion loss: mean over images and views of the inner
/// product between the per-image unit noise direction and the normalized
/// prediction. The same direction serves all K views of an image.
pub fn brownian_loss(
    graph: &mut Graph,
    p_hat_views: &[NodeId],
    noise: &NoiseDraw,
) -> Result<NodeId> {
    if p_hat_views.is_empty() {
        return Err(Error::invalid("brownian_loss needs at least one view"));
    }
    let (n, d) = check_view_shapes(graph, p_hat_views, "brownian_loss")?;
    if noise.n_hat().shape() != [n, d] {
        return Err(Error::shape(format!(
            "brownian_loss: noise shape {:?} does not match views [{n}, {d}]",
            noise.n_hat().shape()
        )));
    }
    check_unit_rows(noise.n_hat(), "brownian_loss noise")?;
    let k = p_hat_views.len() as f64;
    let nh = graph.constant(noise.n_hat().clone());
    let mut acc: Option<NodeId> = None;
    for &p in p_hat_views {
        let ip = graph.dot(p, nh)?;
        acc = Some(match acc {
            Some(a) => graph.add(a, ip)?,
            None => ip,
        });
    }
    Ok(graph.scale(acc.unwrap(), 1.0 / (n as f64 * k)))
}

/// Differentiable unbiased covariance of the rows of a `[n, d]` node.
pub fn covariance_node(graph: &mut Graph, p: NodeId) -> Result<NodeId> {
    let t = graph.value(p);
    if t.shape().len() != 2 {
        return Err(Error::shape("covariance needs a matrix"));
    }
    let n = t.rows();
    if n < 2 {
        return Err(Error::invalid("covariance undefined for n < 2"));
    }
    let mean = graph.mean_axis0(p)?;
    let centered = graph.sub_row(p, mean)?;
    let ct = graph.transpose(centered)?;
    let prod = graph.matmul(ct, centered)?;
    Ok(graph.scale(prod, 1.0 / (n as f64 - 1.0)))
}

/// Singular value loss: mean over views of the squared Frobenius distance
/// between the per-view covariance and the identity. Differentiated
/// directly in the Frobenius form; no decomposition happens here.
pub fn singular_value_loss(graph: &mut Graph, p_views: &[NodeId]) -> Result<NodeId> {
    if p_views.is_empty() {
        return Err(Error::invalid("singular_value_loss needs views"));
    }
    let (_, d) = check_view_shapes(graph, p_views, "singular_value_loss")?;
    let k = p_views.len() as f64;
    let eye = Tensor::eye(d);
    let mut acc: Option<NodeId> = None;
    for &p in p_views {
        let s = covariance_node(graph, p)?;
        let i = graph.constant(eye.clone());
        let diff = graph.sub(s, i)?;
        let fs = graph.frob_sq(diff);
        acc = Some(match acc {
            Some(a) => graph.add(a, fs)?,
            None => fs,
        });
    }
    Ok(graph.scale(acc.unwrap(), 1.0 / k))
}

/// Multi-crop baseline: per image, the sum over ordered view pairs
/// `i != j` of `|p_hat_i - z_hat_j|^2`, averaged over the batch. With two
/// views this is the symmetric two-view loss (both orderings summed).
pub fn multicrop_byol_loss(
    graph: &mut Graph,
    p_hat_views: &[NodeId],
    z_prime_hat_views: &[Tensor],
) -> Result<NodeId> {
    let k = p_hat_views.len();
    if k < 2 {
        return Err(Error::invalid("multicrop loss needs at least 2 views"));
    }
    if z_prime_hat_views.len() != k {
        return Err(Error::shape("multicrop loss: view count mismatch"));
    }
    let (n, _) = check_view_shapes(graph, p_hat_views, "multicrop_byol_loss")?;
    let mut acc: Option<NodeId> = None;
    for (i, &p) in p_hat_views.iter().enumerate() {
        for (j, z) in z_prime_hat_views.iter().enumerate() {
            if i == j {
                continue;
            }
            let zc = graph.constant(z.clone());
            let diff = graph.sub(p, zc)?;
            let ss = graph.frob_sq(diff);
            acc = Some(match acc {
                Some(a) => graph.add(a, ss)?,
                None => ss,
            });
        }
    }
    Ok(graph.scale(acc.unwrap(), 1.0 / n as f64))
}

/// Scalar loss node plus the raw (unweighted) per-term values for logging.
pub struct TotalLoss {
    pub node: NodeId,
    pub l_c: f64,
    pub l_s: f64,
    pub l_b: f64,
    pub total: f64,
}

/// Attach the weighted regularizers to an attraction term:
/// `L = attraction + lambda_s * L_s + lambda_b * L_b`. Terms with zero
/// weight are skipped and reported as zero.
pub fn total_loss_with_attraction(
    graph: &mut Graph,
    attraction: NodeId,
    p_views: &[NodeId],
    p_hat_views: &[NodeId],
    noise: &NoiseDraw,
    weights: &LossWeights,
) -> Result<TotalLoss> {
    weights.validate()?;
    let l_c = graph.value(attraction).item();
    let mut node = attraction;
    let mut l_s = 0.0;
    let mut l_b = 0.0;
    if weights.lambda_s > 0.0 {
        let sv_views = match weights.sv_input {
            SvInput::RawPredictions => p_views,
            SvInput::NormalizedPredictions => p_hat_views,
        };
        let s = singular_value_loss(graph, sv_views)?;
        l_s = graph.value(s).item();
        let weighted = graph.scale(s, weights.lambda_s);
        node = graph.add(node, weighted)?;
    }
    if weights.lambda_b > 0.0 {
        let b = brownian_loss(graph, p_hat_views, noise)?;
        l_b = graph.value(b).item();
        let weighted = graph.scale(b, weights.lambda_b);
        node = graph.add(node, weighted)?;
    }
    let total = graph.value(node).item();
    Ok(TotalLoss { node, l_c, l_s, l_b, total })
}

/// The full training objective: centroid attraction plus the weighted
/// singular value and Brownian terms.
pub fn total_loss(
    graph: &mut Graph,
    p_views: &[NodeId],
    p_hat_views: &[NodeId],
    z_prime_hat_views: &[Tensor],
    noise: &NoiseDraw,
    weights: &LossWeights,
) -> Result<TotalLoss> {
    let attraction = centroid_loss(graph, p_hat_views, z_prime_hat_views)?;
    total_loss_with_attraction(graph, attraction, p_views, p_hat_views, noise, weights)
}

/// Mean squared distance between positive pairs: all unordered view pairs
/// of each image, averaged over images. Rows must be unit-norm.
pub fn alignment_metric(views: &[Tensor]) -> Result<f64> {
    let k = views.len();
    if k < 2 {
        return Err(Error::invalid("alignment needs at least 2 views"));
    }
    let (n, d) = (views[0].rows(), views[0].cols());
    for v in views {
        if v.shape() != [n, d] {
            return Err(Error::shape("alignment: ragged views"));
        }
        check_unit_rows(v, "alignment views")?;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for j in 0..k {
        for l in (j + 1)..k {
            for i in 0..n {
                let a = views[j].row(i);
                let b = views[l].row(i);
                total += a
                    .iter()
                    .zip(b.iter())
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum::<f64>();
            }
            pairs += n;
        }
    }
    Ok(total / pairs as f64)
}

/// Log of the mean Gaussian potential over distinct point pairs:
/// `log mean_{i<k} exp(-t |x_i - x_k|^2)`. Rows must be unit-norm.
pub fn uniformity_metric(feats: &Tensor, t: f64) -> Result<f64> {
    let n = feats.rows();
    if n < 2 {
        return Err(Error::invalid("uniformity needs n >= 2"));
    }
    check_unit_rows(feats, "uniformity features")?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for k in (i + 1)..n {
            let a = feats.row(i);
            let b = feats.row(k);
            let d2: f64 = a
                .iter()
                .zip(b.iter())
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum();
            total += (-t * d2).exp();
            pairs += 1;
        }
    }
    Ok((total / pairs as f64).ln())
}
