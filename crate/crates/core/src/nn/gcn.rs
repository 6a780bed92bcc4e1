use rand::Rng;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::graph::BatchGraph;
use crate::rng::Stream;

/// One graph convolution: `E · H · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    /// `[in_dim, out_dim]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl GcnLayer {
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut Stream) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor {
                shape: vec![in_dim, out_dim],
                data,
            },
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[1]
    }

    fn affine(&self, agg: &[f64], m: usize) -> Vec<f64> {
        let (i, o) = (self.in_dim(), self.out_dim());
        let mut out: Vec<f64> = (0..m).flat_map(|_| self.bias.data.iter().copied()).collect();
        gemm(m, i, o, agg, (i as isize, 1), &self.weight.data, (o as isize, 1), &mut out, 1.0);
        out
    }
}

/// Stack of graph convolutions with ReLU between layers and none after
/// the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Gcn {
    pub layers: Vec<GcnLayer>,
}

#[derive(Debug, Clone)]
pub(crate) struct GcnCache {
    /// `E · H` entering each layer.
    aggregated: Vec<Vec<f64>>,
    /// Post-ReLU inputs of layers after the first.
    activated: Vec<Vec<f64>>,
}

impl GcnCache {
    pub(crate) fn relu_pattern(&self, out: &mut Vec<bool>) {
        for h in &self.activated {
            out.extend(h.iter().map(|&v| v > 0.0));
        }
    }
}

impl Gcn {
    pub fn init(in_dim: usize, hidden: usize, n_layers: usize, n_classes: usize, rng: &mut Stream) -> Self {
        assert!(n_layers >= 1);
        let mut dims = vec![in_dim];
        dims.extend(std::iter::repeat_n(hidden, n_layers - 1));
        dims.push(n_classes);
        Self {
            layers: dims.windows(2).map(|w| GcnLayer::init(w[0], w[1], rng)).collect(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, GcnLayer::out_dim)
    }

    fn check(&self, z: &[f64], g: &BatchGraph) -> Result<()> {
        let d = self.layers[0].in_dim();
        if z.len() != g.m * d {
            return Err(Error::ShapeError(format!(
                "embedding has {} values, graph has {} nodes of width {d}",
                z.len(),
                g.m
            )));
        }
        Ok(())
    }

    pub fn forward(&self, z: &[f64], g: &BatchGraph) -> Result<Vec<f64>> {
        Ok(self.forward_cached(z, g)?.0)
    }

    pub(crate) fn forward_cached(&self, z: &[f64], g: &BatchGraph) -> Result<(Vec<f64>, GcnCache)> {
        self.check(z, g)?;
        let mut cache = GcnCache {
            aggregated: Vec::with_capacity(self.layers.len()),
            activated: Vec::new(),
        };
        let mut h = z.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            if li > 0 {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
                cache.activated.push(h.clone());
            }
            let agg = g.aggregate(&h, layer.in_dim());
            h = layer.affine(&agg, g.m);
            cache.aggregated.push(agg);
        }
        Ok((h, cache))
    }

    /// Returns per-layer `(dW, db)` and the gradient w.r.t. the input
    /// embedding.
    pub(crate) fn backward(&self, cache: &GcnCache, g: &BatchGraph, dlogits: &[f64]) -> (Vec<(Tensor, Tensor)>, Vec<f64>) {
        let m = g.m;
        let mut d = dlogits.to_vec();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let (i, o) = (layer.in_dim(), layer.out_dim());
            let agg = &cache.aggregated[li];
            let mut dw = layer.weight.zeros_like();
            gemm(i, m, o, agg, (1, i as isize), &d, (o as isize, 1), &mut dw.data, 0.0);
            let mut db = layer.bias.zeros_like();
            for row in d.chunks(o) {
                for (a, b) in db.data.iter_mut().zip(row) {
                    *a += b;
                }
            }
            let mut dagg = vec![0.0; m * i];
            gemm(m, o, i, &d, (o as isize, 1), &layer.weight.data, (1, o as isize), &mut dagg, 0.0);
            d = g.aggregate_transpose(&dagg, i);
            if li > 0 {
                for (dv, &a) in d.iter_mut().zip(&cache.activated[li - 1]) {
                    if a <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
            grads.push((dw, db));
        }
        grads.reverse();
        (grads, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn single(weight: Vec<f64>, in_dim: usize, out_dim: usize, bias: Vec<f64>) -> Gcn {
        Gcn {
            layers: vec![GcnLayer {
                weight: Tensor::from_vec(&[in_dim, out_dim], weight).unwrap(),
                bias: Tensor::from_vec(&[out_dim], bias).unwrap(),
            }],
        }
    }

    #[test]
    fn identity_graph_hand_arithmetic() {
        let gcn = single(vec![2.0], 1, 1, vec![0.0]);
        let out = gcn.forward(&[3.0, 5.0], &BatchGraph::identity(2)).unwrap();
        assert_eq!(out, vec![6.0, 10.0]);
    }

    #[test]
    fn identity_graph_is_per_node_affine() {
        let gcn = single(vec![1.0, -1.0, 0.5, 2.0], 2, 2, vec![0.1, -0.2]);
        let z = [1.0, 2.0, -3.0, 0.5];
        let out = gcn.forward(&z, &BatchGraph::identity(2)).unwrap();
        let expect = [1.0 + 1.0 + 0.1, -1.0 + 4.0 - 0.2, -3.0 + 0.25 + 0.1, 3.0 + 1.0 - 0.2];
        for (a, b) in out.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_complete_graph_gives_identical_rows() {
        let m = 4;
        let g = BatchGraph {
            m,
            k: m,
            alpha: 0.0,
            edges: (0..m)
                .map(|_| (0..m).map(|to| Edge { to, w: 0.25 }).collect())
                .collect(),
        };
        let mut rng = crate::rng::stream(2);
        let gcn = Gcn::init(3, 5, 2, 2, &mut rng);
        let z: Vec<f64> = (0..m * 3).map(|i| (i as f64).sin()).collect();
        let out = gcn.forward(&z, &g).unwrap();
        for row in out.chunks(2).skip(1) {
            assert!((row[0] - out[0]).abs() < 1e-12 && (row[1] - out[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let gcn = single(vec![1.0, 1.0], 2, 1, vec![0.0]);
        assert!(matches!(gcn.forward(&[1.0, 2.0, 3.0], &BatchGraph::identity(2)), Err(Error::ShapeError(_))));
    }
}
