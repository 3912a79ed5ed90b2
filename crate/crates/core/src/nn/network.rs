use serde::{Deserialize, Serialize};

use super::gemm::{dgemm, dot};
use crate::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    pub fn n_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Layer shapes for a chain of widths, e.g. `[1, 64, 128, 11]`.
pub fn shapes_for(widths: &[usize]) -> Vec<LayerShape> {
    assert!(widths.len() >= 2, "need at least an input and an output width");
    widths
        .windows(2)
        .map(|w| LayerShape {
            inputs: w[0],
            outputs: w[1],
        })
        .collect()
}

/// Batches up to this size use plain dot products instead of the packed
/// matrix product, which has a high fixed cost.
const SMALL_BATCH: usize = 4;

/// Parameters of a dense ReLU network with a linear output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layer_shapes: Vec<LayerShape>,
    pub values: Vec<f64>,
}

/// Activations saved by a forward pass over a batch.
///
/// `activations[0]` is the input, `activations[l + 1]` the output of layer
/// `l` (after ReLU for hidden layers). A hidden-only tape stops before the
/// output layer.
#[derive(Clone, Debug)]
pub struct Tape {
    pub batch: usize,
    activations: Vec<Vec<f64>>,
}

impl Tape {
    /// Output of the last layer evaluated.
    pub fn last(&self) -> &[f64] {
        self.activations.last().expect("tape holds the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

/// Gradient of a scalar objective with respect to every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub grad: Vec<f64>,
    pub l2_norm: f64,
}

impl GradReport {
    pub fn new(grad: Vec<f64>) -> Self {
        let l2_norm = l2_norm(&grad);
        Self { grad, l2_norm }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    super::gemm::dot(v, v).sqrt()
}

impl NetworkParams {
    pub fn zeros(layer_shapes: Vec<LayerShape>) -> Self {
        assert!(!layer_shapes.is_empty(), "network needs at least one layer");
        for w in layer_shapes.windows(2) {
            assert_eq!(w[0].outputs, w[1].inputs, "layer widths do not chain");
        }
        let n = layer_shapes.iter().map(LayerShape::n_params).sum();
        Self {
            layer_shapes,
            values: vec![0.0; n],
        }
    }

    pub fn from_widths(widths: &[usize]) -> Self {
        Self::zeros(shapes_for(widths))
    }

    pub fn n_params(&self) -> usize {
        self.values.len()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_shapes.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_shapes[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layer_shapes.last().unwrap().outputs
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Offset of layer `l`'s weights in the flat vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.layer_shapes[..l].iter().map(LayerShape::n_params).sum()
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let off = self.layer_offset(l);
        let s = self.layer_shapes[l];
        &self.values[off..off + s.inputs * s.outputs]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let s = self.layer_shapes[l];
        let off = self.layer_offset(l) + s.inputs * s.outputs;
        &self.values[off..off + s.outputs]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let off = self.layer_offset(l);
        let s = self.layer_shapes[l];
        &mut self.values[off..off + s.inputs * s.outputs]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let s = self.layer_shapes[l];
        let off = self.layer_offset(l) + s.inputs * s.outputs;
        &mut self.values[off..off + s.outputs]
    }

    fn layer_forward(&self, l: usize, input: &[f64], batch: usize, relu: bool) -> Vec<f64> {
        let s = self.layer_shapes[l];
        let bias = self.bias(l);
        let mut out = Vec::with_capacity(batch * s.outputs);
        if batch <= SMALL_BATCH {
            let w = self.weights(l);
            for x in input.chunks_exact(s.inputs) {
                for (o, b) in bias.iter().enumerate() {
                    out.push(b + dot(&w[o * s.inputs..(o + 1) * s.inputs], x));
                }
            }
            if relu {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            return out;
        }
        for _ in 0..batch {
            out.extend_from_slice(bias);
        }
        // out (B x out) += input (B x in) * W^T (in x out)
        dgemm(
            batch,
            s.inputs,
            s.outputs,
            1.0,
            input,
            (s.inputs, 1),
            self.weights(l),
            (1, s.inputs),
            1.0,
            &mut out,
            (s.outputs, 1),
        );
        if relu {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        out
    }

    fn check_input(&self, x: &[f64], batch: usize) {
        assert_eq!(
            x.len(),
            batch * self.input_dim(),
            "input length {} does not match batch {} x input width {}",
            x.len(),
            batch,
            self.input_dim()
        );
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_batch(x, 1)
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Vec<f64> {
        self.check_input(x, batch);
        let last = self.n_layers() - 1;
        let mut h = x.to_vec();
        for l in 0..=last {
            h = self.layer_forward(l, &h, batch, l != last);
        }
        h
    }

    /// Forward pass through every layer, keeping activations for backprop.
    pub fn tape(&self, x: &[f64], batch: usize) -> Tape {
        self.tape_upto(x, batch, self.n_layers())
    }

    /// Forward pass through the hidden layers only.
    pub fn tape_hidden(&self, x: &[f64], batch: usize) -> Tape {
        self.tape_upto(x, batch, self.n_layers() - 1)
    }

    fn tape_upto(&self, x: &[f64], batch: usize, layers: usize) -> Tape {
        self.check_input(x, batch);
        let last = self.n_layers() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(x.to_vec());
        for l in 0..layers {
            let next = self.layer_forward(l, &activations[l], batch, l != last);
            activations.push(next);
        }
        Tape { batch, activations }
    }

    /// Accumulate into `grad` the gradient of `Σ upstream ⊙ output` for a
    /// full tape.
    pub fn backward_into(&self, tape: &Tape, upstream: &[f64], grad: &mut [f64]) {
        let last = self.n_layers() - 1;
        assert_eq!(tape.activations.len(), self.n_layers() + 1, "backward needs a full tape");
        assert_eq!(upstream.len(), tape.batch * self.output_dim(), "upstream shape");
        self.backprop_from(tape, last, upstream.to_vec(), grad);
    }

    /// Gradient for a full tape, as a fresh vector.
    pub fn backward_batch(&self, tape: &Tape, upstream: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.n_params()];
        self.backward_into(tape, upstream, &mut grad);
        grad
    }

    /// Accumulate the gradient given `d objective / d (last hidden
    /// activation)`, through the hidden layers only.
    pub fn backward_hidden_into(&self, tape: &Tape, upstream_hidden: &[f64], grad: &mut [f64]) {
        let last = self.n_layers() - 1;
        assert!(last >= 1, "network has no hidden layer");
        assert_eq!(tape.activations.len(), last + 1, "expected a hidden-only tape");
        let h = &tape.activations[last];
        assert_eq!(upstream_hidden.len(), h.len(), "upstream shape");
        let g: Vec<f64> = upstream_hidden
            .iter()
            .zip(h)
            .map(|(&u, &a)| if a > 0.0 { u } else { 0.0 })
            .collect();
        self.backprop_from(tape, last - 1, g, grad);
    }

    /// `g` is the gradient with respect to the output of layer `top` (already
    /// passed through that layer's activation derivative).
    fn backprop_from(&self, tape: &Tape, top: usize, mut g: Vec<f64>, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.n_params(), "gradient buffer length");
        let batch = tape.batch;
        for l in (0..=top).rev() {
            let s = self.layer_shapes[l];
            let input = &tape.activations[l];
            let off = self.layer_offset(l);
            let (gw, rest) = grad[off..].split_at_mut(s.inputs * s.outputs);
            // dW (out x in) += g^T (out x B) * input (B x in)
            dgemm(
                s.outputs,
                batch,
                s.inputs,
                1.0,
                &g,
                (1, s.outputs),
                input,
                (s.inputs, 1),
                1.0,
                gw,
                (s.inputs, 1),
            );
            let gb = &mut rest[..s.outputs];
            for row in g.chunks_exact(s.outputs) {
                for (b, v) in gb.iter_mut().zip(row) {
                    *b += v;
                }
            }
            if l == 0 {
                break;
            }
            // d input (B x in) = g (B x out) * W (out x in), masked by ReLU
            let mut gin = vec![0.0; batch * s.inputs];
            dgemm(
                batch,
                s.outputs,
                s.inputs,
                1.0,
                &g,
                (s.outputs, 1),
                self.weights(l),
                (s.inputs, 1),
                0.0,
                &mut gin,
                (s.inputs, 1),
            );
            for (v, &a) in gin.iter_mut().zip(input) {
                if a <= 0.0 {
                    *v = 0.0;
                }
            }
            g = gin;
        }
    }

    /// Output rows `starts[b] .. starts[b] + k` of the output layer for each
    /// sample `b`, from a hidden-only tape. Returns `batch x k` values.
    pub fn head_block_forward(&self, tape: &Tape, starts: &[usize], k: usize) -> Vec<f64> {
        let last = self.n_layers() - 1;
        let s = self.layer_shapes[last];
        let hd = s.inputs;
        assert_eq!(starts.len(), tape.batch, "one block start per sample");
        let h = tape.last();
        let w = self.weights(last);
        let bias = self.bias(last);
        let mut out = vec![0.0; tape.batch * k];
        for (start, members) in group_by_start(starts) {
            assert!(start + k <= s.outputs, "block out of range");
            let n = members.len();
            let hg = gather_rows(h, hd, &members);
            let mut cg = Vec::with_capacity(n * k);
            for _ in 0..n {
                cg.extend_from_slice(&bias[start..start + k]);
            }
            // C_g (n x k) += H_g (n x hd) * W_block^T (hd x k)
            dgemm(
                n,
                hd,
                k,
                1.0,
                &hg,
                (hd, 1),
                &w[start * hd..(start + k) * hd],
                (1, hd),
                1.0,
                &mut cg,
                (k, 1),
            );
            for (r, &b) in members.iter().enumerate() {
                out[b * k..(b + 1) * k].copy_from_slice(&cg[r * k..(r + 1) * k]);
            }
        }
        out
    }

    /// Backward counterpart of [`head_block_forward`]: `upstream` is
    /// `batch x k`, gradients are accumulated into `grad` through the whole
    /// network.
    ///
    /// [`head_block_forward`]: NetworkParams::head_block_forward
    pub fn head_block_backward(
        &self,
        tape: &Tape,
        starts: &[usize],
        k: usize,
        upstream: &[f64],
        grad: &mut [f64],
    ) {
        let last = self.n_layers() - 1;
        let s = self.layer_shapes[last];
        let hd = s.inputs;
        assert_eq!(upstream.len(), tape.batch * k, "upstream shape");
        let h = tape.last();
        let w = self.weights(last);
        let off = self.layer_offset(last);
        let mut dh = vec![0.0; tape.batch * hd];
        {
            let (gw, gb) = grad[off..off + s.n_params()].split_at_mut(hd * s.outputs);
            for (start, members) in group_by_start(starts) {
                let n = members.len();
                let hg = gather_rows(h, hd, &members);
                let ug = gather_rows(upstream, k, &members);
                // dW_block (k x hd) += U_g^T (k x n) * H_g (n x hd)
                dgemm(
                    k,
                    n,
                    hd,
                    1.0,
                    &ug,
                    (1, k),
                    &hg,
                    (hd, 1),
                    1.0,
                    &mut gw[start * hd..(start + k) * hd],
                    (hd, 1),
                );
                for row in ug.chunks_exact(k) {
                    for (g, v) in gb[start..start + k].iter_mut().zip(row) {
                        *g += v;
                    }
                }
                // dH_g (n x hd) = U_g (n x k) * W_block (k x hd)
                let mut dg = vec![0.0; n * hd];
                dgemm(
                    n,
                    k,
                    hd,
                    1.0,
                    &ug,
                    (k, 1),
                    &w[start * hd..(start + k) * hd],
                    (hd, 1),
                    0.0,
                    &mut dg,
                    (hd, 1),
                );
                for (r, &b) in members.iter().enumerate() {
                    dh[b * hd..(b + 1) * hd].copy_from_slice(&dg[r * hd..(r + 1) * hd]);
                }
            }
        }
        self.backward_hidden_into(tape, &dh, grad);
    }
}

/// Sample indices grouped by block start, in order of first appearance.
fn group_by_start(starts: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (b, &st) in starts.iter().enumerate() {
        match groups.iter_mut().find(|(s, _)| *s == st) {
            Some((_, m)) => m.push(b),
            None => groups.push((st, vec![b])),
        }
    }
    groups
}

fn gather_rows(src: &[f64], width: usize, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&src[r * width..(r + 1) * width]);
    }
    out
}

/// Single-sample forward pass.
pub fn forward(p: &NetworkParams, x: &[f64]) -> Vec<f64> {
    p.forward(x)
}

/// Exact gradient of `⟨upstream, forward(p, x)⟩` with respect to `p`.
pub fn backward(p: &NetworkParams, x: &[f64], upstream: &[f64]) -> GradReport {
    let tape = p.tape(x, 1);
    GradReport::new(p.backward_batch(&tape, upstream))
}

/// He-uniform weights (bound `√(6 / fan_in)`), zero biases.
pub fn init_params(layer_shapes: Vec<LayerShape>, stream: &mut RngStream) -> NetworkParams {
    let mut p = NetworkParams::zeros(layer_shapes);
    for l in 0..p.n_layers() {
        let bound = (6.0 / p.layer_shapes[l].inputs as f64).sqrt();
        for w in p.weights_mut(l) {
            *w = stream.uniform_in(-bound, bound);
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_net(widths: &[usize], seed: u64) -> NetworkParams {
        let mut p = init_params(shapes_for(widths), &mut RngStream::new(seed));
        // non-zero biases so bias gradients are exercised
        let mut s = RngStream::new(seed + 1);
        for l in 0..p.n_layers() {
            for b in p.bias_mut(l) {
                *b = s.uniform_in(-0.1, 0.1);
            }
        }
        p
    }

    fn naive_forward(p: &NetworkParams, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = p.n_layers() - 1;
        for l in 0..=last {
            let s = p.layer_shapes[l];
            let w = p.weights(l);
            let b = p.bias(l);
            h = (0..s.outputs)
                .map(|o| {
                    let v = b[o] + (0..s.inputs).map(|i| w[o * s.inputs + i] * h[i]).sum::<f64>();
                    if l == last { v } else { v.max(0.0) }
                })
                .collect();
        }
        h
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = NetworkParams::from_widths(&[3, 8, 2]);
        assert_eq!(p.forward(&[1.0, -2.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut p = NetworkParams::from_widths(&[3, 3]);
        for i in 0..3 {
            p.weights_mut(0)[i * 3 + i] = 1.0;
        }
        assert_eq!(p.forward(&[0.5, -1.5, 2.0]), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn batch_forward_matches_naive() {
        let p = random_net(&[3, 8, 4, 2], 3);
        let xs: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = p.forward_batch(&xs, 5);
        for b in 0..5 {
            let expect = naive_forward(&p, &xs[b * 3..b * 3 + 3]);
            for (a, e) in out[b * 2..b * 2 + 2].iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let p = random_net(&[3, 16, 16, 4], 8);
        let x = [0.1, 0.2, -0.3];
        assert_eq!(p.forward(&x), p.forward(&x));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = random_net(&[3, 8, 4, 2], 1);
        let rep = backward(&p, &[0.3, -0.2, 0.9], &[0.0, 0.0]);
        assert!(rep.grad.iter().all(|&g| g == 0.0));
        assert_eq!(rep.l2_norm, 0.0);
    }

    #[test]
    fn upstream_scaling_scales_gradient_exactly() {
        let p = random_net(&[3, 8, 4, 2], 1);
        let x = [0.3, -0.2, 0.9];
        let g1 = backward(&p, &x, &[0.5, -1.0]).grad;
        let g2 = backward(&p, &x, &[2.0 * 0.5, 2.0 * -1.0]).grad;
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn head_blocks_match_full_output_and_gradient() {
        let p = random_net(&[2, 16, 12], 4);
        let batch = 3;
        let x: Vec<f64> = (0..batch * 2).map(|i| 0.3 * i as f64 - 0.4).collect();
        let starts = [0usize, 8, 4];
        let k = 4;
        let hidden = p.tape_hidden(&x, batch);
        let block = p.head_block_forward(&hidden, &starts, k);
        let full = p.forward_batch(&x, batch);
        for b in 0..batch {
            for j in 0..k {
                assert!((block[b * k + j] - full[b * 12 + starts[b] + j]).abs() < 1e-12);
            }
        }
        let upstream: Vec<f64> = (0..batch * k).map(|i| (i as f64).cos()).collect();
        let mut g_block = vec![0.0; p.n_params()];
        p.head_block_backward(&hidden, &starts, k, &upstream, &mut g_block);
        let mut dense = vec![0.0; batch * 12];
        for b in 0..batch {
            for j in 0..k {
                dense[b * 12 + starts[b] + j] = upstream[b * k + j];
            }
        }
        let g_full = p.backward_batch(&p.tape(&x, batch), &dense);
        for (a, b) in g_block.iter().zip(&g_full) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn he_uniform_biases_are_zero_and_seeded() {
        let a = init_params(shapes_for(&[4, 32, 2]), &mut RngStream::new(1));
        let b = init_params(shapes_for(&[4, 32, 2]), &mut RngStream::new(1));
        assert_eq!(a, b);
        for l in 0..a.n_layers() {
            assert!(a.bias(l).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn he_uniform_variance() {
        let p = init_params(shapes_for(&[128, 256, 1]), &mut RngStream::new(5));
        let w = p.weights(0);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let target = 2.0 / 128.0;
        assert!((var / target - 1.0).abs() < 0.2, "{var} vs {target}");
    }

    #[test]
    fn forward_is_piecewise_affine() {
        let p = random_net(&[2, 32, 32, 3], 6);
        let x1 = [0.2, -0.7];
        let d = [1e-9, 2e-9];
        let x2 = [x1[0] + d[0], x1[1] + d[1]];
        let x3 = [x1[0] + 2.0 * d[0], x1[1] + 2.0 * d[1]];
        let (f1, f2, f3) = (p.forward(&x1), p.forward(&x2), p.forward(&x3));
        for o in 0..3 {
            let second = f3[o] - 2.0 * f2[o] + f1[o];
            assert!(second.abs() < 1e-13, "{second}");
        }
    }
}
