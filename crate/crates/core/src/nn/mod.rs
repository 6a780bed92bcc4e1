//! The trainable model: residual convolutional backbone, graph
//! convolution, softmax cross-entropy and Adam, all in `f64` with
//! hand-written backward passes.

mod adam;
mod backbone;
mod gcn;
mod layers;
mod loss;
mod model;
mod tensor;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, Adam, AdamState};
pub use backbone::{Backbone, ResBlock, Shortcut};
pub use gcn::{Gcn, GcnLayer};
pub use layers::{BatchNorm1d, Conv1d};
pub use loss::{argmax_rows, softmax, softmax_xent, xent_grad};
pub use model::{ForwardCache, Mode, Model, ModelConfig};
pub use tensor::{Act, Tensor};

/// Optimization settings. The batch size must be even so that half of it
/// can be labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 500,
            lr: 1e-4,
            weight_decay: 4e-3,
            seed: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, BatchGraph, GraphConfig};
    use rand::Rng;

    fn random_batch(m: usize, len: usize, seed: u64) -> Act {
        let mut r = crate::rng::stream(seed);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..len).map(|_| r.random_range(-1.5..1.5)).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        Act::from_rows(&refs).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_embedding() {
        let model = Model::init(ModelConfig::standard(2), 1);
        let x = Act::zeros(1, 3, 20);
        for mode in [Mode::Train, Mode::Eval] {
            let z = model.backbone_forward(&x, mode).unwrap();
            assert!(z.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn embedding_shape() {
        let model = Model::init(ModelConfig::standard(3), 1);
        let z = model.backbone_forward(&random_batch(4, 500, 3), Mode::Eval).unwrap();
        assert_eq!(z.len(), 4 * 64);
    }

    #[test]
    fn short_series_is_rejected() {
        let model = Model::init(ModelConfig::standard(2), 1);
        assert!(model.backbone_forward(&Act::zeros(1, 2, 6), Mode::Eval).is_err());
    }

    #[test]
    fn identical_rows_embed_identically() {
        let model = Model::init(ModelConfig::standard(2), 5);
        let base = random_batch(1, 24, 9);
        let rows = [base.data.as_slice(), base.data.as_slice(), &[0.5; 24][..]];
        let x = Act::from_rows(&rows).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let z = model.backbone_forward(&x, mode).unwrap();
            assert_eq!(z[..64], z[64..128]);
        }
    }

    #[test]
    fn eval_is_repeatable() {
        let model = Model::init(ModelConfig::standard(2), 2);
        let x = random_batch(5, 30, 1);
        let g = BatchGraph::identity(5);
        assert_eq!(model.forward_eval(&x, &g).unwrap(), model.forward_eval(&x, &g).unwrap());
    }

    #[test]
    fn permuting_the_batch_permutes_logits() {
        let model = Model::init(ModelConfig::standard(3), 4);
        let m = 6;
        let x = random_batch(m, 20, 2);
        let mut r = crate::rng::stream(6);
        let d: Vec<f64> = (0..m * m)
            .map(|i| if i % (m + 1) == 0 { 0.0 } else { r.random_range(0.0..2.0) })
            .collect();
        let g = build_graph(&d, m, &GraphConfig::new(1.0, 3, 0), 0).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let mut rows = vec![vec![]; m];
        for (i, &p) in perm.iter().enumerate() {
            rows[p] = x.data[i * 20..(i + 1) * 20].to_vec();
        }
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let xp = Act::from_rows(&refs).unwrap();
        let gp = g.permuted(&perm);
        for mode in [Mode::Train, Mode::Eval] {
            let z = model.backbone_forward(&x, mode).unwrap();
            let zp = model.backbone_forward(&xp, mode).unwrap();
            let a = model.gcn_forward(&z, &g).unwrap();
            let b = model.gcn_forward(&zp, &gp).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                for c in 0..3 {
                    assert!((a[i * 3 + c] - b[p * 3 + c]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = Model::init(ModelConfig::standard(4), 12);
        let x = random_batch(4, 16, 0);
        let cache = model.forward_train(&x, &BatchGraph::identity(4)).unwrap();
        model.absorb_batch_stats(&cache);
        let bytes = model.to_checkpoint_bytes();
        let back = Model::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_checkpoint_bytes(), bytes);
        assert!(Model::from_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(matches!(Model::from_checkpoint_bytes(&bad), Err(crate::Error::FormatError(_))));
    }

    #[test]
    fn gradients_are_deterministic() {
        let model = Model::init(ModelConfig::standard(2), 3);
        let x = random_batch(4, 16, 4);
        let g = BatchGraph::identity(4);
        let labels = [Some(1), Some(2), None, None];
        let run = || {
            let c = model.forward_train(&x, &g).unwrap();
            model.backward(&c, &g, &labels).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn overfits_a_toy_batch() {
        let mut model = Model::init(ModelConfig::standard(2), 7);
        let x = random_batch(8, 16, 5);
        let g = BatchGraph::identity(8);
        let labels: Vec<Option<usize>> = (0..8).map(|i| Some(i % 2 + 1)).collect();
        let mut opt = Adam::new(1e-3, 0.0, &model.params());
        let mut last = f64::INFINITY;
        for _ in 0..500 {
            let c = model.forward_train(&x, &g).unwrap();
            let (loss, grads) = model.backward(&c, &g, &labels).unwrap();
            model.absorb_batch_stats(&c);
            opt.step(&mut model.params_mut(), &grads);
            last = loss;
        }
        let final_loss = model.loss(&x, &g, &labels).unwrap();
        assert!(final_loss < 0.01, "loss {final_loss} (last step {last})");
    }

    #[test]
    fn near_perfect_fit_has_vanishing_gradient() {
        let mut model = Model::init(ModelConfig::standard(2), 7);
        let x = random_batch(4, 16, 5);
        let g = BatchGraph::identity(4);
        let labels: Vec<Option<usize>> = (0..4).map(|i| Some(i % 2 + 1)).collect();
        let mut opt = Adam::new(3e-3, 0.0, &model.params());
        let c0 = model.forward_train(&x, &g).unwrap();
        let (_, g0) = model.backward(&c0, &g, &labels).unwrap();
        let norm = |gs: &[Tensor]| gs.iter().flat_map(|t| &t.data).map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..400 {
            let c = model.forward_train(&x, &g).unwrap();
            let (_, grads) = model.backward(&c, &g, &labels).unwrap();
            opt.step(&mut model.params_mut(), &grads);
        }
        let c1 = model.forward_train(&x, &g).unwrap();
        let (loss, g1) = model.backward(&c1, &g, &labels).unwrap();
        assert!(loss < 1e-3);
        assert!(norm(&g1) < 1e-2 * norm(&g0), "{} vs {}", norm(&g1), norm(&g0));
    }
}
