//! Siamese online/target pairing: forward passes over K views, the
//! exponentially weighted moving-average target update, and its decay
//! schedule.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{apply_stage, init_params, GraphParams, MlpSpec, ParamSet, StageMode, L2_EPS};
use crate::tensor::Tensor;

/// Online parameters, target accumulator, and the step counter.
///
/// The target accumulator is stored raw; with bias correction enabled the
/// effective target is `raw / (1 - prod(tau))`, which makes a constant
/// online stream reproduce itself exactly at every step. Before the first
/// update the effective target falls back to the online parameters (the
/// corrected average of an empty history).
#[derive(Debug, Clone)]
pub struct SiameseState {
    pub spec: MlpSpec,
    pub theta: ParamSet,
    /// Batch-norm running statistics of the online network.
    pub buffers: ParamSet,
    xi_raw: ParamSet,
    tau_prod: f64,
    pub bias_correction: bool,
    pub step: u64,
}

/// Stage prefixes covered by the target network (the predictor stays
/// online-only).
const TARGET_STAGES: [&str; 2] = ["f.", "g."];

impl SiameseState {
    pub fn new(spec: MlpSpec, rng: &mut ChaCha8Rng, bias_correction: bool) -> Result<Self> {
        spec.validate()?;
        let (theta, buffers) = init_params(&spec, rng);
        let target_subset = theta.subset(&TARGET_STAGES);
        let xi_raw = if bias_correction {
            target_subset.zeros_like()
        } else {
            target_subset
        };
        Ok(SiameseState {
            spec,
            theta,
            buffers,
            xi_raw,
            tau_prod: 1.0,
            bias_correction,
            step: 0,
        })
    }

    /// Rebuild a state from checkpointed pieces.
    pub fn from_parts(
        spec: MlpSpec,
        theta: ParamSet,
        buffers: ParamSet,
        xi_raw: ParamSet,
        tau_prod: f64,
        bias_correction: bool,
        step: u64,
    ) -> Result<Self> {
        spec.validate()?;
        for name in xi_raw.names() {
            if theta.get(name).is_none() {
                return Err(Error::invalid(format!("target parameter {name} missing from theta")));
            }
        }
        Ok(SiameseState { spec, theta, buffers, xi_raw, tau_prod, bias_correction, step })
    }

    pub fn xi_raw(&self) -> &ParamSet {
        &self.xi_raw
    }

    pub fn tau_prod(&self) -> f64 {
        self.tau_prod
    }

    /// Effective target parameters (stages f and g only).
    pub fn target_params(&self) -> ParamSet {
        if !self.bias_correction {
            return self.xi_raw.clone();
        }
        if self.tau_prod == 1.0 {
            // No updates yet: fall back to the online parameters.
            return self.theta.subset(&TARGET_STAGES);
        }
        let correction = 1.0 / (1.0 - self.tau_prod);
        let mut out = ParamSet::new();
        for (name, t) in self.xi_raw.iter() {
            out.insert(name, t.scale(correction));
        }
        out
    }

    /// `xi <- tau * xi + (1 - tau) * theta`, then advance the step counter.
    pub fn ema_update(&mut self, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid(format!("tau must lie in [0,1], got {tau}")));
        }
        for i in 0..self.xi_raw.len() {
            let name = self.xi_raw.name_at(i).to_string();
            let theta = self.theta.expect(&name).clone();
            let xi = self.xi_raw.tensor_at_mut(i);
            *xi = xi.scale(tau).add(&theta.scale(1.0 - tau));
        }
        self.tau_prod *= tau;
        self.step += 1;
        Ok(())
    }
}

/// Cosine ramp of the target decay rate from `tau_base` at step 0 to 1 at
/// the final step.
pub fn tau_cosine(step: u64, total_steps: u64, tau_base: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("tau_cosine needs total_steps >= 1"));
    }
    if step > total_steps {
        return Err(Error::invalid(format!(
            "step {step} beyond schedule end {total_steps}"
        )));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(1.0 - (1.0 - tau_base) * ((std::f64::consts::PI * frac).cos() + 1.0) / 2.0)
}

/// Per-view outputs of one training forward pass. Online quantities are
/// graph nodes (gradients flow); target projections are plain tensors, so
/// the stop-gradient is structural.
pub struct ForwardOutputs {
    /// Online projections `z`, one `[n, d_proj]` node per view.
    pub z: Vec<NodeId>,
    /// Online predictions `p`.
    pub p: Vec<NodeId>,
    /// Row-normalized predictions.
    pub p_hat: Vec<NodeId>,
    /// Row-normalized target projections, gradient-severed.
    pub z_prime_hat: Vec<Tensor>,
}

/// Run online and target networks over K views. Each view is processed
/// independently, so batch-norm statistics are computed per view slice.
/// `update_stats` selects whether the online pass refreshes the running
/// statistics (true during training).
pub fn forward(
    graph: &mut Graph,
    state: &mut SiameseState,
    views: &[Tensor],
    update_stats: bool,
) -> Result<(GraphParams, ForwardOutputs)> {
    if views.is_empty() {
        return Err(Error::invalid("forward needs at least one view"));
    }
    let d_in = state.spec.input_dim();
    for v in views {
        if v.shape().len() != 2 || v.cols() != d_in {
            return Err(Error::shape(format!(
                "view shape {:?} does not match backbone input width {d_in}",
                v.shape()
            )));
        }
    }

    let theta_nodes = GraphParams::register(graph, &state.theta);
    let online_mode = if update_stats { StageMode::TrainUpdate } else { StageMode::TrainFrozen };

    let mut z = Vec::with_capacity(views.len());
    let mut p = Vec::with_capacity(views.len());
    let mut p_hat = Vec::with_capacity(views.len());
    for v in views {
        let x = graph.constant(v.clone());
        let repr = apply_stage(
            graph,
            &state.spec,
            "f",
            &theta_nodes,
            Some(&mut state.buffers),
            x,
            online_mode,
        )?;
        let zj = apply_stage(
            graph,
            &state.spec,
            "g",
            &theta_nodes,
            Some(&mut state.buffers),
            repr,
            online_mode,
        )?;
        let pj = apply_stage(
            graph,
            &state.spec,
            "h",
            &theta_nodes,
            Some(&mut state.buffers),
            zj,
            online_mode,
        )?;
        z.push(zj);
        p.push(pj);
        p_hat.push(graph.l2_normalize_rows(pj, L2_EPS));
    }

    // Target branch: parameters enter as nodes whose gradients are never
    // read, and outputs are materialized as plain tensors.
    let xi = state.target_params();
    let xi_nodes = GraphParams::register(graph, &xi);
    let mut z_prime_hat = Vec::with_capacity(views.len());
    for v in views {
        let x = graph.constant(v.clone());
        let repr = apply_stage(graph, &state.spec, "f", &xi_nodes, None, x, StageMode::TrainFrozen)?;
        let zj = apply_stage(graph, &state.spec, "g", &xi_nodes, None, repr, StageMode::TrainFrozen)?;
        let normed = graph.l2_normalize_rows(zj, L2_EPS);
        z_prime_hat.push(graph.value(normed).clone());
    }

    Ok((theta_nodes, ForwardOutputs { z, p, p_hat, z_prime_hat }))
}

/// Backbone representations for evaluation, using running statistics for
/// batch norm. Builds a throwaway graph; gradients never flow.
pub fn extract_features(state: &mut SiameseState, inputs: &Tensor, mode: StageMode) -> Result<Tensor> {
    let mut graph = Graph::new();
    let nodes = GraphParams::register(&mut graph, &state.theta);
    let x = graph.constant(inputs.clone());
    let repr = apply_stage(
        &mut graph,
        &state.spec,
        "f",
        &nodes,
        Some(&mut state.buffers),
        x,
        mode,
    )?;
    Ok(graph.value(repr).clone())
}

/// Online projections `g(f(x))`, the embedding space the losses act on;
/// collapse is diagnosed here.
pub fn extract_projections(
    state: &mut SiameseState,
    inputs: &Tensor,
    mode: StageMode,
) -> Result<Tensor> {
    let mut graph = Graph::new();
    let nodes = GraphParams::register(&mut graph, &state.theta);
    let x = graph.constant(inputs.clone());
    let repr = apply_stage(
        &mut graph,
        &state.spec,
        "f",
        &nodes,
        Some(&mut state.buffers),
        x,
        mode,
    )?;
    let proj = apply_stage(
        &mut graph,
        &state.spec,
        "g",
        &nodes,
        Some(&mut state.buffers),
        repr,
        mode,
    )?;
    Ok(graph.value(proj).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NormKind;
    use crate::rng::rng_from_seed;

    fn spec() -> MlpSpec {
        MlpSpec::new(vec![4, 8, 6], vec![6, 8, 5], vec![5, 8, 5], NormKind::Batch).unwrap()
    }

    fn views(n: usize, seed: u64) -> Vec<Tensor> {
        use rand::Rng;
        let mut rng = rng_from_seed(seed);
        (0..2)
            .map(|_| {
                let data: Vec<f64> = (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Tensor::from_vec(vec![n, 4], data).unwrap()
            })
            .collect()
    }

    #[test]
    fn tau_cosine_boundaries() {
        assert!((tau_cosine(0, 100, 0.996).unwrap() - 0.996).abs() < 1e-15);
        assert!((tau_cosine(100, 100, 0.996).unwrap() - 1.0).abs() < 1e-15);
        let mid = tau_cosine(50, 100, 0.996).unwrap();
        assert!((mid - (1.0 - (1.0 - 0.996) / 2.0)).abs() < 1e-15);
        assert!(tau_cosine(0, 0, 0.996).is_err());
    }

    #[test]
    fn tau_cosine_monotone() {
        let mut last = 0.0;
        for step in 0..=200 {
            let t = tau_cosine(step, 200, 0.9).unwrap();
            assert!(t >= last - 1e-15);
            last = t;
        }
    }

    #[test]
    fn ema_tau_zero_copies_theta() {
        let mut state = SiameseState::new(spec(), &mut rng_from_seed(1), false).unwrap();
        // Perturb theta so raw target differs.
        state.theta.get_mut("f.0.weight").unwrap().data_mut()[0] += 1.0;
        state.ema_update(0.0).unwrap();
        let target = state.target_params();
        assert_eq!(target.expect("f.0.weight"), state.theta.expect("f.0.weight"));
        assert_eq!(state.step, 1);
    }

    #[test]
    fn ema_tau_one_freezes_target() {
        let mut state = SiameseState::new(spec(), &mut rng_from_seed(1), false).unwrap();
        let before = state.target_params();
        state.theta.get_mut("f.0.weight").unwrap().data_mut()[0] += 1.0;
        state.ema_update(1.0).unwrap();
        let after = state.target_params();
        assert_eq!(before.expect("f.0.weight"), after.expect("f.0.weight"));
    }

    #[test]
    fn bias_corrected_ema_exact_for_constant_stream() {
        let mut state = SiameseState::new(spec(), &mut rng_from_seed(5), true).unwrap();
        let reference = state.theta.subset(&["f.", "g."]);
        // Before any update the fallback applies.
        for (name, t) in state.target_params().iter() {
            let r = reference.expect(name);
            assert_eq!(t, r);
        }
        for step in 0..20 {
            let tau = tau_cosine(step, 20, 0.9).unwrap();
            state.ema_update(tau).unwrap();
            for (name, t) in state.target_params().iter() {
                let r = reference.expect(name);
                let max_err = t
                    .data()
                    .iter()
                    .zip(r.data().iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                assert!(max_err < 1e-12, "step {step}: target drifted by {max_err}");
            }
        }
    }

    #[test]
    fn forward_shapes_and_unit_norm() {
        let mut state = SiameseState::new(spec(), &mut rng_from_seed(2), true).unwrap();
        let vs = views(6, 11);
        let mut graph = Graph::new();
        let (_, out) = forward(&mut graph, &mut state, &vs, true).unwrap();
        assert_eq!(out.p_hat.len(), 2);
        for &id in &out.p_hat {
            let t = graph.value(id);
            assert_eq!(t.shape(), &[6, 5]);
            for r in 0..t.rows() {
                let norm: f64 = t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-9);
            }
        }
        for t in &out.z_prime_hat {
            for r in 0..t.rows() {
                let norm: f64 = t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_views_give_identical_targets() {
        // theta == xi right after construction (bias-corrected fallback),
        // so identical augmentations must give identical target outputs.
        let mut state = SiameseState::new(spec(), &mut rng_from_seed(3), true).unwrap();
        let v = views(5, 7)[0].clone();
        let mut graph = Graph::new();
        let (_, out) = forward(&mut graph, &mut state, &[v.clone(), v], false).unwrap();
        assert_eq!(out.z_prime_hat[0], out.z_prime_hat[1]);
    }

    #[test]
    fn stop_gradient_contract() {
        // A loss built purely from target outputs must leave every theta
        // gradient untouched.
        let mut state = SiameseState::new(spec(), &mut rng_from_seed(4), true).unwrap();
        let vs = views(4, 13);
        let mut graph = Graph::new();
        let (theta_nodes, out) = forward(&mut graph, &mut state, &vs, false).unwrap();
        let z0 = graph.constant(out.z_prime_hat[0].clone());
        let loss = graph.frob_sq(z0);
        let grads = graph.backward(loss).unwrap();
        for &id in theta_nodes.ids() {
            assert!(grads.get(id).is_none(), "theta gradient must be absent");
        }
    }

    #[test]
    fn forward_permutation_equivariance() {
        let mut state = SiameseState::new(spec(), &mut rng_from_seed(6), true).unwrap();
        let vs = views(5, 17);
        let mut graph = Graph::new();
        let (_, out) = forward(&mut graph, &mut state.clone(), &vs, false).unwrap();
        let base: Vec<Tensor> = out.p_hat.iter().map(|&id| graph.value(id).clone()).collect();

        // Reverse the batch rows of every view.
        let perm: Vec<usize> = (0..5).rev().collect();
        let vs_perm: Vec<Tensor> = vs
            .iter()
            .map(|v| {
                let rows: Vec<&[f64]> = perm.iter().map(|&i| v.row(i)).collect();
                Tensor::from_rows(&rows).unwrap()
            })
            .collect();
        let mut graph2 = Graph::new();
        let (_, out2) = forward(&mut graph2, &mut state, &vs_perm, false).unwrap();
        for (j, &id) in out2.p_hat.iter().enumerate() {
            let permuted = graph2.value(id);
            for (new_row, &orig_row) in perm.iter().enumerate() {
                let a = permuted.row(new_row);
                let b = base[j].row(orig_row);
                for (x, y) in a.iter().zip(b.iter()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batch_duplication_leaves_outputs_unchanged() {
        let mut state = SiameseState::new(spec(), &mut rng_from_seed(8), true).unwrap();
        let vs = views(4, 23);
        let mut graph = Graph::new();
        let (_, out) = forward(&mut graph, &mut state.clone(), &vs, false).unwrap();
        let base: Vec<Tensor> = out.p_hat.iter().map(|&id| graph.value(id).clone()).collect();

        let vs_dup: Vec<Tensor> = vs
            .iter()
            .map(|v| {
                let mut rows: Vec<&[f64]> = (0..v.rows()).map(|i| v.row(i)).collect();
                let extra: Vec<&[f64]> = (0..v.rows()).map(|i| v.row(i)).collect();
                rows.extend(extra);
                Tensor::from_rows(&rows).unwrap()
            })
            .collect();
        let mut graph2 = Graph::new();
        let (_, out2) = forward(&mut graph2, &mut state, &vs_dup, false).unwrap();
        for (j, &id) in out2.p_hat.iter().enumerate() {
            let dup = graph2.value(id);
            for r in 0..4 {
                for (x, y) in dup.row(r).iter().zip(base[j].row(r).iter()) {
                    assert!((x - y).abs() < 1e-9, "duplication changed row {r}");
                }
            }
        }
    }
}
