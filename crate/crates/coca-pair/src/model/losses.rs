//! Training losses: symmetric contrastive, captioning NLL, and their
//! weighted combination.

use super::params::ParamBinding;
use crate::tensor::{Element, Graph, NodeId, Tensor};
use crate::{Error, Result};

/// Unit-norm image/text embeddings of one batch plus the temperature.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch<E: Element> {
    pub x: Tensor<E>,
    pub y: Tensor<E>,
    pub tau: E,
}

impl<E: Element> EmbeddingBatch<E> {
    pub fn new(x: Tensor<E>, y: Tensor<E>, tau: E) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(Error::shape(format!(
                "embedding shapes disagree: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        if x.rows() < 2 {
            return Err(Error::config("contrastive loss needs a batch of at least 2"));
        }
        if tau <= E::zero() {
            return Err(Error::config("temperature must be positive"));
        }
        for (name, t) in [("x", &x), ("y", &y)] {
            let c = t.cols();
            for (i, row) in t.data().chunks(c).enumerate() {
                let norm = row
                    .iter()
                    .fold(E::zero(), |acc, &v| acc + v * v)
                    .sqrt();
                if (norm.to_f64() - 1.0).abs() > 1e-6 {
                    return Err(Error::config(format!(
                        "{name} row {i} has norm {}, expected 1",
                        norm.to_f64()
                    )));
                }
            }
        }
        Ok(EmbeddingBatch { x, y, tau })
    }
}

/// Symmetric InfoNCE over similarity logits `x yᵀ / τ`: mean cross-entropy
/// against the diagonal in both directions.
pub fn contrastive_loss_graph<E: Element>(
    g: &mut Graph<E>,
    x: NodeId,
    y: NodeId,
    tau: NodeId,
) -> Result<NodeId> {
    let n = g.value(x).rows();
    if n < 2 {
        return Err(Error::config("contrastive loss needs a batch of at least 2"));
    }
    if g.value(tau).item() <= E::zero() {
        return Err(Error::config("temperature must be positive"));
    }
    let yt = g.transpose(y)?;
    let sims = g.matmul(x, yt)?;
    let inv_tau = g.recip(tau)?;
    let logits = g.mul_scalar(sims, inv_tau)?;
    let diag: Vec<Option<usize>> = (0..n).map(Some).collect();
    let img_to_txt = g.cross_entropy_mean(logits, &diag)?;
    let logits_t = g.transpose(logits)?;
    let txt_to_img = g.cross_entropy_mean(logits_t, &diag)?;
    g.add(img_to_txt, txt_to_img)
}

/// Value-level contrastive loss over an [`EmbeddingBatch`].
pub fn contrastive_loss<E: Element>(batch: &EmbeddingBatch<E>) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.leaf(batch.x.clone());
    let y = g.leaf(batch.y.clone());
    let tau = g.leaf(Tensor::scalar(batch.tau));
    let loss = contrastive_loss_graph(&mut g, x, y, tau)?;
    Ok(g.value(loss).item().to_f64())
}

/// Value-level captioning loss: mean NLL of `targets` under `logits`,
/// excluding padded positions.
pub fn captioning_loss<E: Element>(
    logits: &Tensor<E>,
    targets: &[Option<usize>],
) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.leaf(logits.clone());
    let loss = g.cross_entropy_mean(l, targets)?;
    Ok(g.value(loss).item().to_f64())
}

/// `L = L_con + lambda * L_cap`.
pub fn total_loss(con: f64, cap: f64, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::config("lambda must be non-negative"));
    }
    Ok(con + lambda * cap)
}

/// Graph version of the combination, with a contrastive weight for the
/// "no contrastive learning" ablation.
pub fn total_loss_graph<E: Element>(
    g: &mut Graph<E>,
    con: NodeId,
    cap: NodeId,
    lambda: f64,
    contrastive_weight: f64,
) -> Result<NodeId> {
    let cw = g.scale(con, contrastive_weight)?;
    let lw = g.scale(cap, lambda)?;
    g.add(cw, lw)
}

/// Clamp range for the learnable temperature.
pub const TAU_MIN: f64 = 1e-3;
pub const TAU_MAX: f64 = 10.0;

/// Clamp the temperature parameter in place after an optimizer step.
pub fn clamp_temperature<E: Element>(params: &mut crate::tensor::TensorMap<E>) {
    if let Some(t) = params.get_mut("con.temperature") {
        let v = t.data()[0].to_f64();
        let clamped = v.clamp(TAU_MIN, TAU_MAX);
        if clamped != v {
            t.data_mut()[0] = E::from_f64(clamped);
        }
    }
}

/// Bound temperature node straight from a binding.
pub fn temperature_node(b: &ParamBinding) -> NodeId {
    b.node("con.temperature")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows(rows: Vec<Vec<f64>>) -> Tensor<f64> {
        let c = rows[0].len();
        let data: Vec<f64> = rows
            .iter()
            .flat_map(|r| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(move |v| v / n).collect::<Vec<_>>()
            })
            .collect();
        Tensor::new(vec![rows.len(), c], data).unwrap()
    }

    #[test]
    fn degenerate_batch_gives_two_log_n() {
        // all x_i == y_j: softmax uniform, loss = 2 ln N.
        for n in [2usize, 3, 5] {
            let x = unit_rows(vec![vec![1.0, 1.0, 0.0]; n]);
            let batch = EmbeddingBatch::new(x.clone(), x.clone(), 0.07).unwrap();
            let loss = contrastive_loss(&batch).unwrap();
            assert!(
                (loss - 2.0 * (n as f64).ln()).abs() < 1e-9,
                "n={n}: {loss}"
            );
        }
    }

    #[test]
    fn well_separated_pairs_drive_loss_to_zero() {
        // x_i . y_i = 1, x_i . y_j = 0 (i != j), tau = 0.07
        let x = unit_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let batch = EmbeddingBatch::new(x.clone(), x, 0.07).unwrap();
        let loss = contrastive_loss(&batch).unwrap();
        let expect = 2.0 * (1.0 + (-1.0f64 / 0.07).exp()).ln();
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
        assert!(loss < 2e-6);
    }

    #[test]
    fn loss_is_invariant_under_joint_row_permutation() {
        let x = unit_rows(vec![
            vec![0.9, 0.1, 0.3],
            vec![-0.2, 0.8, 0.1],
            vec![0.3, -0.5, 0.7],
        ]);
        let y = unit_rows(vec![
            vec![0.7, 0.3, 0.2],
            vec![0.1, 0.9, -0.3],
            vec![-0.4, 0.2, 0.8],
        ]);
        let perm = [2usize, 0, 1];
        let permute = |t: &Tensor<f64>| {
            let c = t.cols();
            let mut data = Vec::new();
            for &p in &perm {
                data.extend_from_slice(&t.data()[p * c..(p + 1) * c]);
            }
            Tensor::new(vec![3, c], data).unwrap()
        };
        let a = contrastive_loss(&EmbeddingBatch::new(x.clone(), y.clone(), 0.1).unwrap()).unwrap();
        let b =
            contrastive_loss(&EmbeddingBatch::new(permute(&x), permute(&y), 0.1).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn batch_validation() {
        let one = unit_rows(vec![vec![1.0, 0.0]]);
        assert!(EmbeddingBatch::new(one.clone(), one, 0.07).is_err());
        let x = unit_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(EmbeddingBatch::new(x.clone(), x.clone(), 0.0).is_err());
        let bad = Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(EmbeddingBatch::new(bad, x, 0.07).is_err());
    }

    #[test]
    fn captioning_uniform_and_one_hot() {
        let uniform = Tensor::new(vec![2, 9], vec![0.1; 18]).unwrap();
        let loss = captioning_loss(&uniform, &[Some(0), Some(5)]).unwrap();
        assert!((loss - (9.0f64).ln()).abs() < 1e-9);

        // near one-hot correct logits: loss ~ 0
        let mut data = vec![0.0; 18];
        data[0] = 50.0;
        data[9 + 5] = 50.0;
        let hot = Tensor::new(vec![2, 9], data).unwrap();
        let loss = captioning_loss(&hot, &[Some(0), Some(5)]).unwrap();
        assert!(loss < 1e-9);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(1.0, 2.0, 2.0).unwrap(), 5.0);
        assert_eq!(total_loss(0.7, 9.9, 0.0).unwrap(), 0.7);
        assert!(total_loss(1.0, 1.0, -0.5).is_err());
    }

    #[test]
    fn temperature_clamp() {
        let mut params = crate::tensor::TensorMap::<f64>::new();
        params.insert("con.temperature".into(), Tensor::scalar(1e-9));
        clamp_temperature(&mut params);
        assert_eq!(params.get("con.temperature").unwrap().item(), TAU_MIN);
    }
}
