//! Central finite-difference verification of every differentiable op and
//! loss. The harness rebuilds the graph per perturbed input (define-by-run
//! makes this cheap at check sizes) and compares against the reverse-mode
//! gradients component by component.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::losses::{
    brownian_loss, byol_loss, centroid_loss, covariance_node, multicrop_byol_loss,
    singular_value_loss, NoiseDraw,
};
use crate::nn::L2_EPS;
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

type BuildFn<'a> = &'a dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>;

fn eval_root(inputs: &[Tensor], build: BuildFn) -> Result<f64> {
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| graph.leaf(t.clone())).collect();
    let root = build(&mut graph, &ids)?;
    Ok(graph.value(root).item())
}

/// Max relative error between reverse-mode and central finite-difference
/// gradients over every component of every input.
pub fn finite_diff_max_err(inputs: &[Tensor], build: BuildFn) -> Result<f64> {
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| graph.leaf(t.clone())).collect();
    let root = build(&mut graph, &ids)?;
    let mut grads = graph.backward(root)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(inputs.iter())
        .map(|(&id, t)| grads.take_or_zeros(id, t.shape()))
        .collect();

    let mut max_err = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for c in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[c] += FD_STEP;
            let f_plus = eval_root(&plus, build)?;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[c] -= FD_STEP;
            let f_minus = eval_root(&minus, build)?;
            let fd = (f_plus - f_minus) / (2.0 * FD_STEP);
            let ad = analytic[i].data()[c];
            let err = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let numel = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Uniform in [-2, 2] but pushed away from the ReLU kink at zero.
fn rand_tensor_off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v = 0.05f64.copysign(if *v == 0.0 { 1.0 } else { *v });
        }
    }
    t
}

/// Random rows with norms comfortably above the normalization epsilon.
fn rand_rows_normable(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    let mut t = rand_tensor(rng, &[n, d]);
    for r in 0..n {
        loop {
            let norm: f64 = t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.3 {
                break;
            }
            let fresh = rand_tensor(rng, &[1, d]);
            t.row_mut(r).copy_from_slice(fresh.row(0));
        }
    }
    t
}

fn rand_unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    rand_rows_normable(rng, n, d).l2_normalize_rows(L2_EPS)
}

struct OpCase {
    name: &'static str,
    gen: Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>,
    build: Box<dyn Fn(&mut Graph, &[NodeId], &[Tensor]) -> Result<NodeId>>,
    fixed: Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>,
}

/// Scalarize a non-scalar node by an inner product with a fixed random
/// probe tensor (`dot` is itself verified standalone).
fn scalarize(graph: &mut Graph, id: NodeId, probe: &Tensor) -> Result<NodeId> {
    let w = graph.constant(probe.clone());
    graph.dot(id, w)
}

fn op_cases() -> Vec<OpCase> {
    let mut cases: Vec<OpCase> = Vec::new();

    // name, input shapes, op builder taking (graph, leaf ids, fixed consts)
    macro_rules! case {
        ($name:literal, $gen:expr, $fixed:expr, $build:expr) => {
            cases.push(OpCase {
                name: $name,
                gen: Box::new($gen),
                fixed: Box::new($fixed),
                build: Box::new($build),
            });
        };
    }

    let pair = |rng: &mut ChaCha8Rng| vec![rand_tensor(rng, &[3, 4]), rand_tensor(rng, &[3, 4])];
    let single = |rng: &mut ChaCha8Rng| vec![rand_tensor(rng, &[3, 4])];
    let probe34 = |rng: &mut ChaCha8Rng| vec![rand_tensor(rng, &[3, 4])];

    case!("add", pair, probe34, |g, ids, fx| {
        let o = g.add(ids[0], ids[1])?;
        scalarize(g, o, &fx[0])
    });
    case!("sub", pair, probe34, |g, ids, fx| {
        let o = g.sub(ids[0], ids[1])?;
        scalarize(g, o, &fx[0])
    });
    case!("mul", pair, probe34, |g, ids, fx| {
        let o = g.mul(ids[0], ids[1])?;
        scalarize(g, o, &fx[0])
    });
    case!(
        "scale",
        single,
        |rng: &mut ChaCha8Rng| vec![rand_tensor(rng, &[3, 4]), rand_tensor(rng, &[1])],
        |g, ids, fx| {
            let o = g.scale(ids[0], fx[1].data()[0]);
            scalarize(g, o, &fx[0])
        }
    );
    case!(
        "add_scalar",
        single,
        |rng: &mut ChaCha8Rng| vec![rand_tensor(rng, &[3, 4]), rand_tensor(rng, &[1])],
        |g, ids, fx| {
            let o = g.add_scalar(ids[0], fx[1].data()[0]);
            scalarize(g, o, &fx[0])
        }
    );

    let row_pair = |rng: &mut ChaCha8Rng| vec![rand_tensor(rng, &[3, 4]), rand_tensor(rng, &[4])];
    case!("add_row", row_pair, probe34, |g, ids, fx| {
        let o = g.add_row(ids[0], ids[1])?;
        scalarize(g, o, &fx[0])
    });
    case!("sub_row", row_pair, probe34, |g, ids, fx| {
        let o = g.sub_row(ids[0], ids[1])?;
        scalarize(g, o, &fx[0])
    });
    case!("mul_row", row_pair, probe34, |g, ids, fx| {
        let o = g.mul_row(ids[0], ids[1])?;
        scalarize(g, o, &fx[0])
    });

    case!(
        "matmul",
        |rng: &mut ChaCha8Rng| vec![rand_tensor(rng, &[3, 2]), rand_tensor(rng, &[2, 4])],
        probe34,
        |g, ids, fx| {
            let o = g.matmul(ids[0], ids[1])?;
            scalarize(g, o, &fx[0])
        }
    );
    case!(
        "transpose",
        single,
        |rng: &mut ChaCha8Rng| vec![rand_tensor(rng, &[4, 3])],
        |g, ids, fx| {
            let o = g.transpose(ids[0])?;
            scalarize(g, o, &fx[0])
        }
    );
    case!(
        "relu",
        |rng: &mut ChaCha8Rng| vec![rand_tensor_off_kink(rng, &[3, 4])],
        probe34,
        |g, ids, fx| {
            let o = g.relu(ids[0]);
            scalarize(g, o, &fx[0])
        }
    );
    case!(
        "elementwise",
        single,
        |_rng: &mut ChaCha8Rng| vec![],
        |g, ids, _fx| {
            let o = g.elementwise(ids[0], f64::tanh, |x| 1.0 - x.tanh() * x.tanh());
            Ok(g.sum_all(o))
        }
    );
    case!("sum_all", single, |_rng: &mut ChaCha8Rng| vec![], |g, ids, _fx| Ok(g.sum_all(ids[0])));
    case!("mean_all", single, |_rng: &mut ChaCha8Rng| vec![], |g, ids, _fx| Ok(g.mean_all(ids[0])));
    case!(
        "mean_axis0",
        single,
        |rng: &mut ChaCha8Rng| vec![rand_tensor(rng, &[4])],
        |g, ids, fx| {
            let o = g.mean_axis0(ids[0])?;
            scalarize(g, o, &fx[0])
        }
    );
    case!("frob_sq", single, |_rng: &mut ChaCha8Rng| vec![], |g, ids, _fx| Ok(g.frob_sq(ids[0])));
    case!("dot", pair, |_rng: &mut ChaCha8Rng| vec![], |g, ids, _fx| g.dot(ids[0], ids[1]));
    case!(
        "l2_normalize",
        |rng: &mut ChaCha8Rng| vec![rand_rows_normable(rng, 3, 4)],
        probe34,
        |g, ids, fx| {
            let o = g.l2_normalize_rows(ids[0], L2_EPS);
            scalarize(g, o, &fx[0])
        }
    );
    case!(
        "batch_norm",
        |rng: &mut ChaCha8Rng| {
            vec![
                rand_tensor(rng, &[4, 3]),
                rand_tensor(rng, &[3]),
                rand_tensor(rng, &[3]),
            ]
        },
        |rng: &mut ChaCha8Rng| vec![rand_tensor(rng, &[4, 3])],
        |g, ids, fx| {
            let (o, _) = g.batch_norm_train(ids[0], ids[1], ids[2], 1e-5)?;
            scalarize(g, o, &fx[0])
        }
    );
    case!(
        "layer_norm",
        |rng: &mut ChaCha8Rng| {
            vec![
                rand_tensor(rng, &[4, 3]),
                rand_tensor(rng, &[3]),
                rand_tensor(rng, &[3]),
            ]
        },
        |rng: &mut ChaCha8Rng| vec![rand_tensor(rng, &[4, 3])],
        |g, ids, fx| {
            let o = g.layer_norm(ids[0], ids[1], ids[2], 1e-5)?;
            scalarize(g, o, &fx[0])
        }
    );
    case!(
        "covariance",
        |rng: &mut ChaCha8Rng| vec![rand_tensor(rng, &[5, 3])],
        |rng: &mut ChaCha8Rng| vec![rand_tensor(rng, &[3, 3])],
        |g, ids, fx| {
            let o = covariance_node(g, ids[0])?;
            scalarize(g, o, &fx[0])
        }
    );

    // Losses, composed with row normalization exactly as the training path
    // uses them (their unit-norm preconditions forbid raw perturbation).
    case!(
        "byol_loss",
        |rng: &mut ChaCha8Rng| vec![rand_rows_normable(rng, 3, 4)],
        |rng: &mut ChaCha8Rng| vec![rand_unit_rows(rng, 3, 4)],
        |g, ids, fx| {
            let p_hat = g.l2_normalize_rows(ids[0], L2_EPS);
            byol_loss(g, p_hat, &fx[0])
        }
    );
    case!(
        "centroid_loss",
        |rng: &mut ChaCha8Rng| {
            (0..3).map(|_| rand_rows_normable(rng, 3, 4)).collect()
        },
        |rng: &mut ChaCha8Rng| (0..3).map(|_| rand_unit_rows(rng, 3, 4)).collect(),
        |g, ids, fx| {
            let p_hat: Vec<NodeId> = ids.iter().map(|&id| g.l2_normalize_rows(id, L2_EPS)).collect();
            centroid_loss(g, &p_hat, fx)
        }
    );
    case!(
        "brownian_loss",
        |rng: &mut ChaCha8Rng| (0..2).map(|_| rand_rows_normable(rng, 3, 4)).collect(),
        |rng: &mut ChaCha8Rng| vec![rand_unit_rows(rng, 3, 4)],
        |g, ids, fx| {
            let p_hat: Vec<NodeId> = ids.iter().map(|&id| g.l2_normalize_rows(id, L2_EPS)).collect();
            let noise = NoiseDraw::from_tensor(fx[0].clone(), 0)?;
            brownian_loss(g, &p_hat, &noise)
        }
    );
    case!(
        "singular_value_loss_raw",
        |rng: &mut ChaCha8Rng| (0..2).map(|_| rand_tensor(rng, &[5, 3])).collect(),
        |_rng: &mut ChaCha8Rng| vec![],
        |g, ids, _fx| singular_value_loss(g, ids)
    );
    case!(
        "singular_value_loss_normalized",
        |rng: &mut ChaCha8Rng| (0..2).map(|_| rand_rows_normable(rng, 5, 3)).collect(),
        |_rng: &mut ChaCha8Rng| vec![],
        |g, ids, _fx| {
            let p_hat: Vec<NodeId> = ids.iter().map(|&id| g.l2_normalize_rows(id, L2_EPS)).collect();
            singular_value_loss(g, &p_hat)
        }
    );
    case!(
        "multicrop_loss",
        |rng: &mut ChaCha8Rng| (0..3).map(|_| rand_rows_normable(rng, 3, 4)).collect(),
        |rng: &mut ChaCha8Rng| (0..3).map(|_| rand_unit_rows(rng, 3, 4)).collect(),
        |g, ids, fx| {
            let p_hat: Vec<NodeId> = ids.iter().map(|&id| g.l2_normalize_rows(id, L2_EPS)).collect();
            multicrop_byol_loss(g, &p_hat, fx)
        }
    );

    // A composite exercising the full layer chain the way training does:
    // linear -> layer norm -> relu -> linear -> normalize -> losses.
    case!(
        "composite_mlp_loss",
        |rng: &mut ChaCha8Rng| {
            vec![
                rand_tensor(rng, &[3, 5]),      // w1
                rand_tensor(rng, &[5]),         // b1
                rand_tensor(rng, &[5]),         // gamma
                rand_tensor(rng, &[5]),         // beta
                rand_tensor(rng, &[5, 3]),      // w2
                rand_tensor(rng, &[3]),         // b2
            ]
        },
        |rng: &mut ChaCha8Rng| {
            vec![
                rand_tensor(rng, &[4, 3]),   // input batch
                rand_unit_rows(rng, 4, 3),   // target
                rand_unit_rows(rng, 4, 3),   // noise directions
            ]
        },
        |g, ids, fx| {
            let x = g.constant(fx[0].clone());
            let h = g.matmul(x, ids[0])?;
            let h = g.add_row(h, ids[1])?;
            let h = g.layer_norm(h, ids[2], ids[3], 1e-5)?;
            let h = g.relu(h);
            let p = g.matmul(h, ids[4])?;
            let p = g.add_row(p, ids[5])?;
            let p_hat = g.l2_normalize_rows(p, L2_EPS);
            let attract = byol_loss(g, p_hat, &fx[1])?;
            let sv = singular_value_loss(g, &[p])?;
            let noise = NoiseDraw::from_tensor(fx[2].clone(), 0)?;
            let br = brownian_loss(g, &[p_hat], &noise)?;
            let sv_w = g.scale(sv, 0.004);
            let br_w = g.scale(br, 0.5);
            let t = g.add(attract, sv_w)?;
            g.add(t, br_w)
        }
    );

    cases
}

/// Names of every op the suite covers, in run order.
pub fn suite_op_names() -> Vec<&'static str> {
    op_cases().iter().map(|c| c.name).collect()
}

/// Run `instances` random checks per op. `filter`, when given, selects a
/// subset of ops by exact name; unknown names simply match nothing.
pub fn run_full_suite(
    seed: u64,
    instances: usize,
    filter: Option<&[String]>,
) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    for case in op_cases() {
        if let Some(names) = filter {
            if !names.iter().any(|n| n == case.name) {
                continue;
            }
        }
        let mut rng = rng_from_seed(seed ^ fxhash(case.name));
        let mut max_err = 0.0f64;
        for _ in 0..instances {
            let inputs = (case.gen)(&mut rng);
            let fixed = (case.fixed)(&mut rng);
            let build = |g: &mut Graph, ids: &[NodeId]| (case.build)(g, ids, &fixed);
            let err = finite_diff_max_err(&inputs, &build)?;
            max_err = max_err.max(err);
        }
        reports.push(CheckReport {
            name: case.name.to_string(),
            instances,
            max_rel_err: max_err,
            tolerance: FD_TOLERANCE,
            passed: max_err < FD_TOLERANCE,
        });
    }
    Ok(reports)
}

fn fxhash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in s.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let reports = run_full_suite(42, 3, None).unwrap();
        assert!(!reports.is_empty());
        for r in &reports {
            assert!(r.passed, "{} failed with max err {}", r.name, r.max_rel_err);
        }
    }

    #[test]
    fn filter_selects_ops() {
        let reports = run_full_suite(1, 2, Some(&["matmul".to_string()])).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].name, "matmul");
        let none = run_full_suite(1, 2, Some(&["no_such_op".to_string()])).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn corrupted_backward_rule_is_detected() {
        // A doubling op that claims gradient 1 instead of 2.
        let build = |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let v = g.value(ids[0]).scale(2.0);
            let bad = g.raw_unary(ids[0], v, |args| vec![args.grad.clone()]);
            Ok(g.sum_all(bad))
        };
        let inputs = vec![Tensor::vector(vec![1.0, -0.5, 2.0])];
        let err = finite_diff_max_err(&inputs, &build).unwrap();
        assert!(
            err > FD_TOLERANCE * 100.0,
            "harness must flag a wrong backward rule, got {err}"
        );
    }
}
