//! One training step: parallel per-sample forward graphs, a small head
//! graph coupling the batch through the contrastive loss, and the backward
//! sweep back through every sample.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::data::PairSample;
use crate::model::{
    contrastive_loss_graph, pair_forward, patchify, total_loss_graph, ModelConfig, ParamBinding,
    RegionalMask, SampleNodes,
};
use crate::tensor::{Element, Graph, Tensor, TensorMap};
use crate::{Error, Result};

/// Loss values and (optionally) parameter gradients of one batch.
pub struct StepOutcome<E: Element> {
    pub total: f64,
    pub con: f64,
    pub cap: f64,
    pub grads: BTreeMap<String, Vec<E>>,
}

/// Weighting knobs for the combined loss.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda_cap: f64,
    /// 1.0 normally; 0.0 for the "no contrastive learning" ablation.
    pub contrastive_weight: f64,
}

struct SampleRun<E: Element> {
    graph: Graph<E>,
    binding: ParamBinding,
    nodes: SampleNodes,
}

fn forward_sample<E: Element>(
    cfg: &ModelConfig,
    mask: &RegionalMask,
    params: &TensorMap<E>,
    sample: &PairSample,
    trainable: &(dyn Fn(&str) -> bool + Sync),
) -> Result<SampleRun<E>> {
    let mut graph = Graph::new();
    let binding = ParamBinding::bind(&mut graph, params, &trainable);
    let pc = patchify::<E>(&sample.current, cfg.image_side, cfg.patch_size)?;
    let pp = match &sample.prior {
        Some(prior) => Some(patchify::<E>(prior, cfg.image_side, cfg.patch_size)?),
        None => None,
    };
    let nodes = pair_forward(&mut graph, &binding, cfg, mask, pc, pp, &sample.text_ids)?;
    Ok(SampleRun {
        graph,
        binding,
        nodes,
    })
}

/// Forward (and optionally backward) over a batch.
///
/// Per-sample graphs are independent and run in parallel; the head graph
/// couples the batch through `L_con` and averages the captioning losses.
/// Gradients are accumulated over samples in index order, so the result is
/// deterministic regardless of thread scheduling.
pub fn compute_batch<E: Element>(
    cfg: &ModelConfig,
    mask: &RegionalMask,
    params: &TensorMap<E>,
    batch: &[PairSample],
    weights: LossWeights,
    trainable: Option<&(dyn Fn(&str) -> bool + Sync)>,
) -> Result<StepOutcome<E>> {
    if batch.len() < 2 {
        return Err(Error::config("batch size must be at least 2"));
    }
    let no_grads = |_: &str| false;
    let predicate: &(dyn Fn(&str) -> bool + Sync) = match trainable {
        Some(p) => p,
        None => &no_grads,
    };

    let mut runs: Vec<SampleRun<E>> = batch
        .par_iter()
        .map(|s| forward_sample(cfg, mask, params, s, predicate))
        .collect::<Result<Vec<_>>>()?;

    // Assemble the head inputs.
    let n = runs.len();
    let d = cfg.embed_dim;
    let mut xdata = Vec::with_capacity(n * d);
    let mut ydata = Vec::with_capacity(n * d);
    let mut caps = Vec::with_capacity(n);
    for run in &runs {
        xdata.extend_from_slice(run.graph.value(run.nodes.x_emb).data());
        ydata.extend_from_slice(run.graph.value(run.nodes.y_emb).data());
        caps.push(run.graph.value(run.nodes.cap_loss).item());
    }

    let mut head = Graph::<E>::new();
    let want_grads = trainable.is_some();
    let mut xt = Tensor::from_op(vec![n, d], xdata);
    let mut yt = Tensor::from_op(vec![n, d], ydata);
    let mut ct = Tensor::from_op(vec![n, 1], caps);
    if want_grads {
        xt = xt.with_grad();
        yt = yt.with_grad();
        ct = ct.with_grad();
    }
    let x = head.leaf(xt);
    let y = head.leaf(yt);
    let cap_vec = head.leaf(ct);
    let tau_tensor = params
        .get("con.temperature")
        .ok_or_else(|| Error::config("missing temperature parameter"))?
        .clone();
    let tau_trainable = want_grads && predicate("con.temperature");
    let tau = head.leaf(if tau_trainable {
        tau_tensor.with_grad()
    } else {
        tau_tensor
    });

    let con = contrastive_loss_graph(&mut head, x, y, tau)?;
    let cap = head.mean_rows(cap_vec)?;
    let total = total_loss_graph(&mut head, con, cap, weights.lambda_cap, weights.contrastive_weight)?;

    let outcome_values = (
        head.value(total).item().to_f64(),
        head.value(con).item().to_f64(),
        head.value(cap).item().to_f64(),
    );

    let mut grads = BTreeMap::new();
    if want_grads {
        let mut head_grads = head.backward(total)?;
        let dx = head_grads.take(x).unwrap_or_else(|| vec![E::zero(); n * d]);
        let dy = head_grads.take(y).unwrap_or_else(|| vec![E::zero(); n * d]);
        let dcap = head_grads
            .take(cap_vec)
            .unwrap_or_else(|| vec![E::zero(); n]);

        // Backward through each sample graph, seeded by the head.
        let per_sample: Vec<BTreeMap<String, Vec<E>>> = runs
            .par_iter_mut()
            .enumerate()
            .map(|(i, run)| -> Result<BTreeMap<String, Vec<E>>> {
                let seeds = vec![
                    (run.nodes.x_emb, dx[i * d..(i + 1) * d].to_vec()),
                    (run.nodes.y_emb, dy[i * d..(i + 1) * d].to_vec()),
                    (run.nodes.cap_loss, vec![dcap[i]]),
                ];
                let mut g = run.graph.backward_from(&seeds)?;
                Ok(run.binding.collect_grads(&mut g))
            })
            .collect::<Result<Vec<_>>>()?;

        for sample_grads in per_sample {
            for (name, g) in sample_grads {
                match grads.get_mut(&name) {
                    None => {
                        grads.insert(name, g);
                    }
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&g) {
                            *a = *a + *v;
                        }
                    }
                }
            }
        }
        if tau_trainable {
            if let Some(dtau) = head_grads.take(tau) {
                grads.insert("con.temperature".to_string(), dtau);
            }
        }
    }

    Ok(StepOutcome {
        total: outcome_values.0,
        con: outcome_values.1,
        cap: outcome_values.2,
        grads,
    })
}

/// Scalar loss of a batch under explicit parameters (used by the
/// finite-difference gradient checker).
pub fn batch_loss_value<E: Element>(
    cfg: &ModelConfig,
    mask: &RegionalMask,
    params: &TensorMap<E>,
    batch: &[PairSample],
    weights: LossWeights,
) -> Result<f64> {
    Ok(compute_batch(cfg, mask, params, batch, weights, None)?.total)
}

/// Trainable-set predicate from a list of name prefixes.
pub fn prefix_predicate(prefixes: Vec<String>, temperature_learnable: bool) -> impl Fn(&str) -> bool + Sync {
    move |name: &str| {
        if name == "con.temperature" && !temperature_learnable {
            return false;
        }
        prefixes.iter().any(|p| name.starts_with(p.as_str()))
    }
}

/// Gradient of the full combined loss for every parameter (all trainable).
pub fn full_loss_grads<E: Element>(
    cfg: &ModelConfig,
    mask: &RegionalMask,
    params: &TensorMap<E>,
    batch: &[PairSample],
    weights: LossWeights,
) -> Result<StepOutcome<E>> {
    let all = |_: &str| true;
    compute_batch(cfg, mask, params, batch, weights, Some(&all))
}
