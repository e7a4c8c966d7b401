//! Define-by-run reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is a tape of [`Node`]s appended during the forward pass; ids
//! are tape positions, so tape order is already a topological order and the
//! backward sweep is a single reverse pass. The graph is rebuilt every step.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Inputs handed to a backward rule: parent values, own value, and the
/// cotangent flowing into this node. Returns one cotangent per parent.
pub struct BackwardArgs<'a> {
    pub parents: Vec<&'a Tensor>,
    pub value: &'a Tensor,
    pub grad: &'a Tensor,
}

type BackwardRule = Box<dyn Fn(&BackwardArgs) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<NodeId>,
    backward: Option<BackwardRule>,
}

/// Batch statistics captured by a train-mode batch-norm node, for the
/// caller to fold into running statistics.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Tensor,
    pub var_biased: Tensor,
    pub var_unbiased: Tensor,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node cotangents produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, or zeros when the leaf is unreachable from the root.
    pub fn take_or_zeros(&mut self, id: NodeId, shape: &[usize]) -> Tensor {
        self.grads
            .get_mut(id.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

fn colsum(t: &Tensor) -> Tensor {
    let (n, d) = (t.rows(), t.cols());
    let mut out = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            out[j] += t.data()[i * d + j];
        }
    }
    Tensor::vector(out)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, parents: Vec<NodeId>, backward: Option<BackwardRule>) -> NodeId {
        debug_assert!(value.data().iter().all(|v| v.is_finite()), "non-finite node value");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, parents, backward });
        id
    }

    /// Differentiable input; gradients accumulate here.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, vec![], None)
    }

    /// Non-differentiable input. Structurally identical to a leaf; callers
    /// implement stop-gradient by simply never reading its gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, vec![], None)
    }

    /// Re-enter a value as a fresh constant, severing gradient flow.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.value(id).clone();
        self.constant(v)
    }

    fn check_same_shape(&self, a: NodeId, b: NodeId, op: &str) -> Result<()> {
        if self.value(a).same_shape(self.value(b)) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{op}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )))
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "add")?;
        let value = self.value(a).add(self.value(b));
        Ok(self.push(
            value,
            vec![a, b],
            Some(Box::new(|args| vec![args.grad.clone(), args.grad.clone()])),
        ))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "sub")?;
        let value = self.value(a).sub(self.value(b));
        Ok(self.push(
            value,
            vec![a, b],
            Some(Box::new(|args| vec![args.grad.clone(), args.grad.scale(-1.0)])),
        ))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "mul")?;
        let value = self.value(a).mul(self.value(b));
        Ok(self.push(
            value,
            vec![a, b],
            Some(Box::new(|args| {
                vec![args.grad.mul(args.parents[1]), args.grad.mul(args.parents[0])]
            })),
        ))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).scale(c);
        self.push(
            value,
            vec![a],
            Some(Box::new(move |args| vec![args.grad.scale(c)])),
        )
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).map(|v| v + c);
        self.push(value, vec![a], Some(Box::new(|args| vec![args.grad.clone()])))
    }

    fn check_row_broadcast(&self, a: NodeId, v: NodeId, op: &str) -> Result<()> {
        let (at, vt) = (self.value(a), self.value(v));
        if at.shape().len() == 2 && vt.shape().len() == 1 && at.cols() == vt.cols() {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{op} expects [n,d] and [d], got {:?} and {:?}",
                at.shape(),
                vt.shape()
            )))
        }
    }

    /// `[n, d] + [d]`, the bias-broadcast form.
    pub fn add_row(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        self.check_row_broadcast(a, v, "add_row")?;
        let (at, vt) = (self.value(a), self.value(v));
        let d = at.cols();
        let mut out = at.clone();
        for r in 0..out.rows() {
            for j in 0..d {
                out.row_mut(r)[j] += vt.data()[j];
            }
        }
        Ok(self.push(
            out,
            vec![a, v],
            Some(Box::new(|args| vec![args.grad.clone(), colsum(args.grad)])),
        ))
    }

    /// `[n, d] - [d]`, e.g. subtracting a column-mean row vector.
    pub fn sub_row(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        self.check_row_broadcast(a, v, "sub_row")?;
        let (at, vt) = (self.value(a), self.value(v));
        let d = at.cols();
        let mut out = at.clone();
        for r in 0..out.rows() {
            for j in 0..d {
                out.row_mut(r)[j] -= vt.data()[j];
            }
        }
        Ok(self.push(
            out,
            vec![a, v],
            Some(Box::new(|args| {
                vec![args.grad.clone(), colsum(args.grad).scale(-1.0)]
            })),
        ))
    }

    /// `[n, d] * [d]` columnwise scaling.
    pub fn mul_row(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        self.check_row_broadcast(a, v, "mul_row")?;
        let (at, vt) = (self.value(a), self.value(v));
        let d = at.cols();
        let mut out = at.clone();
        for r in 0..out.rows() {
            for j in 0..d {
                out.row_mut(r)[j] *= vt.data()[j];
            }
        }
        Ok(self.push(
            out,
            vec![a, v],
            Some(Box::new(|args| {
                let (a, v) = (args.parents[0], args.parents[1]);
                let d = a.cols();
                let mut da = args.grad.clone();
                let mut dv = vec![0.0; d];
                for r in 0..a.rows() {
                    for j in 0..d {
                        let g = args.grad.data()[r * d + j];
                        dv[j] += g * a.data()[r * d + j];
                        da.row_mut(r)[j] = g * v.data()[j];
                    }
                }
                vec![da, Tensor::vector(dv)]
            })),
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(
            value,
            vec![a, b],
            Some(Box::new(|args| {
                let (a, b) = (args.parents[0], args.parents[1]);
                let da = args.grad.matmul(&b.transpose()).expect("matmul backward");
                let db = a.transpose().matmul(args.grad).expect("matmul backward");
                vec![da, db]
            })),
        ))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).shape().len() != 2 {
            return Err(Error::shape("transpose needs a matrix"));
        }
        let value = self.value(a).transpose();
        Ok(self.push(
            value,
            vec![a],
            Some(Box::new(|args| vec![args.grad.transpose()])),
        ))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(
            value,
            vec![a],
            Some(Box::new(|args| {
                vec![args
                    .grad
                    .zip_map(args.parents[0], |g, x| if x > 0.0 { g } else { 0.0 })]
            })),
        )
    }

    /// Custom differentiable elementwise map with caller-supplied derivative.
    pub fn elementwise(
        &mut self,
        a: NodeId,
        f: impl Fn(f64) -> f64 + 'static,
        df: impl Fn(f64) -> f64 + 'static,
    ) -> NodeId {
        let value = self.value(a).map(&f);
        self.push(
            value,
            vec![a],
            Some(Box::new(move |args| {
                vec![args.grad.zip_map(args.parents[0], |g, x| g * df(x))]
            })),
        )
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(
            value,
            vec![a],
            Some(Box::new(|args| {
                vec![Tensor::filled(
                    args.parents[0].shape().to_vec(),
                    args.grad.item(),
                )]
            })),
        )
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f64;
        let value = Tensor::scalar(self.value(a).sum() / n);
        self.push(
            value,
            vec![a],
            Some(Box::new(move |args| {
                vec![Tensor::filled(
                    args.parents[0].shape().to_vec(),
                    args.grad.item() / n,
                )]
            })),
        )
    }

    /// Column means: `[n, d] -> [d]`.
    pub fn mean_axis0(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).shape().len() != 2 {
            return Err(Error::shape("mean_axis0 needs a matrix"));
        }
        let value = self.value(a).mean_axis0();
        Ok(self.push(
            value,
            vec![a],
            Some(Box::new(|args| {
                let (n, d) = (args.parents[0].rows(), args.parents[0].cols());
                let mut out = Tensor::zeros(vec![n, d]);
                for r in 0..n {
                    for j in 0..d {
                        out.row_mut(r)[j] = args.grad.data()[j] / n as f64;
                    }
                }
                vec![out]
            })),
        ))
    }

    /// Sum of squared entries, as a scalar node.
    pub fn frob_sq(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).frob_sq());
        self.push(
            value,
            vec![a],
            Some(Box::new(|args| {
                vec![args.parents[0].scale(2.0 * args.grad.item())]
            })),
        )
    }

    /// Full inner product of two same-shape tensors, as a scalar node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "dot")?;
        let value = Tensor::scalar(self.value(a).dot(self.value(b)));
        Ok(self.push(
            value,
            vec![a, b],
            Some(Box::new(|args| {
                let g = args.grad.item();
                vec![args.parents[1].scale(g), args.parents[0].scale(g)]
            })),
        ))
    }

    /// Rows divided by `max(row_norm, eps)`.
    pub fn l2_normalize_rows(&mut self, a: NodeId, eps: f64) -> NodeId {
        let value = self.value(a).l2_normalize_rows(eps);
        self.push(
            value,
            vec![a],
            Some(Box::new(move |args| {
                let x = args.parents[0];
                let y = args.value;
                let d = x.cols();
                let mut dx = Tensor::zeros(x.shape().to_vec());
                for r in 0..x.rows() {
                    let xr = x.row(r);
                    let yr = y.row(r);
                    let gr = &args.grad.data()[r * d..(r + 1) * d];
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let out = dx.row_mut(r);
                    if norm > eps {
                        let yg: f64 = yr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            out[j] = (gr[j] - yr[j] * yg) / norm;
                        }
                    } else {
                        for j in 0..d {
                            out[j] = gr[j] / eps;
                        }
                    }
                }
                vec![dx]
            })),
        )
    }

    /// Train-mode batch normalization, differentiable through the batch
    /// statistics. Returns the node and the statistics of this batch.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<(NodeId, BatchStats)> {
        let xt = self.value(x);
        if xt.shape().len() != 2 || xt.rows() < 2 {
            return Err(Error::invalid(format!(
                "batch_norm train mode needs [n>=2, d], got {:?}",
                xt.shape()
            )));
        }
        let (n, d) = (xt.rows(), xt.cols());
        self.check_row_broadcast(x, gamma, "batch_norm gamma")?;
        self.check_row_broadcast(x, beta, "batch_norm beta")?;

        let mean = xt.mean_axis0();
        let mut var = vec![0.0; d];
        for r in 0..n {
            for j in 0..d {
                let c = xt.at(r, j) - mean.data()[j];
                var[j] += c * c;
            }
        }
        let var_biased = Tensor::vector(var.iter().map(|v| v / n as f64).collect());
        let var_unbiased = Tensor::vector(var.iter().map(|v| v / (n as f64 - 1.0)).collect());
        let inv_std: Vec<f64> = var_biased.data().iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

        let gt = self.value(gamma);
        let bt = self.value(beta);
        let mut xhat = Tensor::zeros(vec![n, d]);
        let mut out = Tensor::zeros(vec![n, d]);
        for r in 0..n {
            for j in 0..d {
                let h = (xt.at(r, j) - mean.data()[j]) * inv_std[j];
                xhat.row_mut(r)[j] = h;
                out.row_mut(r)[j] = gt.data()[j] * h + bt.data()[j];
            }
        }

        let stats = BatchStats { mean, var_biased, var_unbiased };
        let inv_std_c = inv_std.clone();
        let xhat_c = xhat;
        let id = self.push(
            out,
            vec![x, gamma, beta],
            Some(Box::new(move |args| {
                let gamma = args.parents[1];
                let (n, d) = (args.parents[0].rows(), args.parents[0].cols());
                let nf = n as f64;
                // ghat = grad * gamma broadcast; column means of ghat and ghat*xhat
                let mut mean_g = vec![0.0; d];
                let mut mean_gx = vec![0.0; d];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..n {
                    for j in 0..d {
                        let g = args.grad.data()[r * d + j];
                        let h = xhat_c.at(r, j);
                        let gh = g * gamma.data()[j];
                        mean_g[j] += gh;
                        mean_gx[j] += gh * h;
                        dgamma[j] += g * h;
                        dbeta[j] += g;
                    }
                }
                for j in 0..d {
                    mean_g[j] /= nf;
                    mean_gx[j] /= nf;
                }
                let mut dx = Tensor::zeros(vec![n, d]);
                for r in 0..n {
                    for j in 0..d {
                        let g = args.grad.data()[r * d + j];
                        let gh = g * gamma.data()[j];
                        let h = xhat_c.at(r, j);
                        dx.row_mut(r)[j] = (gh - mean_g[j] - h * mean_gx[j]) * inv_std_c[j];
                    }
                }
                vec![dx, Tensor::vector(dgamma), Tensor::vector(dbeta)]
            })),
        );
        Ok((id, stats))
    }

    /// Per-row standardization across features followed by the affine map.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let xt = self.value(x);
        if xt.shape().len() != 2 || xt.cols() < 2 {
            return Err(Error::invalid(format!(
                "layer_norm needs [n, d>=2], got {:?}",
                xt.shape()
            )));
        }
        self.check_row_broadcast(x, gamma, "layer_norm gamma")?;
        self.check_row_broadcast(x, beta, "layer_norm beta")?;
        let (n, d) = (xt.rows(), xt.cols());
        let df = d as f64;

        let gt = self.value(gamma);
        let bt = self.value(beta);
        let mut xhat = Tensor::zeros(vec![n, d]);
        let mut inv_std = vec![0.0; n];
        let mut out = Tensor::zeros(vec![n, d]);
        for r in 0..n {
            let row = xt.row(r);
            let mu = row.iter().sum::<f64>() / df;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / df;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mu) * is;
                xhat.row_mut(r)[j] = h;
                out.row_mut(r)[j] = gt.data()[j] * h + bt.data()[j];
            }
        }

        Ok(self.push(
            out,
            vec![x, gamma, beta],
            Some(Box::new(move |args| {
                let gamma = args.parents[1];
                let (n, d) = (args.parents[0].rows(), args.parents[0].cols());
                let df = d as f64;
                let mut dx = Tensor::zeros(vec![n, d]);
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..n {
                    let mut mean_g = 0.0;
                    let mut mean_gx = 0.0;
                    for j in 0..d {
                        let g = args.grad.data()[r * d + j];
                        let h = xhat.at(r, j);
                        let gh = g * gamma.data()[j];
                        mean_g += gh;
                        mean_gx += gh * h;
                        dgamma[j] += g * h;
                        dbeta[j] += g;
                    }
                    mean_g /= df;
                    mean_gx /= df;
                    for j in 0..d {
                        let g = args.grad.data()[r * d + j];
                        let gh = g * gamma.data()[j];
                        let h = xhat.at(r, j);
                        dx.row_mut(r)[j] = (gh - mean_g - h * mean_gx) * inv_std[r];
                    }
                }
                vec![dx, Tensor::vector(dgamma), Tensor::vector(dbeta)]
            })),
        ))
    }

    /// Reverse sweep from a scalar root. Gradients accumulate by summation
    /// over all paths; nodes a root does not reach keep no gradient.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Tensor::filled(self.value(root).shape().to_vec(), 1.0));

        for id in (0..=root.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[id];
            if let Some(rule) = &node.backward {
                let args = BackwardArgs {
                    parents: node.parents.iter().map(|p| self.value(*p)).collect(),
                    value: &node.value,
                    grad: &g,
                };
                let partials = rule(&args);
                debug_assert_eq!(partials.len(), node.parents.len());
                for (pid, pg) in node.parents.iter().zip(partials) {
                    debug_assert_eq!(
                        pg.shape(),
                        self.value(*pid).shape(),
                        "backward produced wrong shape"
                    );
                    grads[pid.0] = Some(match grads[pid.0].take() {
                        Some(acc) => acc.add(&pg),
                        None => pg,
                    });
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Test hook: append a unary node with an arbitrary backward rule.
    /// Used by the gradient-check harness to prove it detects wrong rules.
    #[doc(hidden)]
    pub fn raw_unary(
        &mut self,
        parent: NodeId,
        value: Tensor,
        backward: impl Fn(&BackwardArgs) -> Vec<Tensor> + 'static,
    ) -> NodeId {
        self.push(value, vec![parent], Some(Box::new(backward)))
    }
}
