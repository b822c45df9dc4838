use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected layer; `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

/// Multilayer perceptron with rectifier hidden layers and a linear output
/// layer, one output per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    layers: Vec<Dense>,
}

/// One training example: input, the output that was trained and its target.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub input: &'a [f64],
    pub output: usize,
    pub target: f64,
}

impl QNetwork {
    /// All-zero network with the given layer widths, input first.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad layer sizes {sizes:?}")));
        }
        Ok(QNetwork {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = QNetwork::zeros(sizes)?;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("a network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::InvalidConfig(format!("layer {k} has inconsistent shapes")));
            }
            if k > 0 && layers[k - 1].outputs != l.inputs {
                return Err(Error::DimensionMismatch {
                    expected: layers[k - 1].outputs,
                    found: l.inputs,
                });
            }
        }
        Ok(QNetwork { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Layer widths, input first.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                found: params.len(),
            });
        }
        let mut k = 0;
        for l in &mut self.layers {
            let (nw, nb) = (l.weights.len(), l.biases.len());
            l.weights.copy_from_slice(&params[k..k + nw]);
            l.biases.copy_from_slice(&params[k + nw..k + nw + nb]);
            k += nw + nb;
        }
        Ok(())
    }

    /// Copies parameters from a network of the same shape.
    pub fn copy_from(&mut self, other: &QNetwork) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.copy_from_slice(&b.weights);
            a.biases.copy_from_slice(&b.biases);
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_len(),
                found: input.len(),
            });
        }
        let mut x = input.to_vec();
        let mut y = Vec::new();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            l.apply(&x, &mut y);
            if k < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut x, &mut y);
        }
        Ok(x)
    }

    /// Activations of every layer, input first; hidden entries are post-rectifier.
    fn activations(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![input.to_vec()];
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut y = Vec::with_capacity(l.outputs);
            l.apply(&acts[k], &mut y);
            if k < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(y);
        }
        acts
    }

    /// Loss `½ · mean (t - Q(x, a))²` over the batch and its gradient with
    /// respect to [`QNetwork::params`]. Only the trained output contributes.
    pub fn loss_and_gradient(&self, batch: &[Sample<'_>]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidConfig("empty training batch".into()));
        }
        let mut grad = vec![0.0; self.param_count()];
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |k, l| {
                let o = *k;
                *k += l.weights.len() + l.biases.len();
                Some(o)
            })
            .collect();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for sample in batch {
            if sample.input.len() != self.input_len() {
                return Err(Error::DimensionMismatch {
                    expected: self.input_len(),
                    found: sample.input.len(),
                });
            }
            if sample.output >= self.output_len() {
                return Err(Error::DimensionMismatch {
                    expected: self.output_len(),
                    found: sample.output,
                });
            }
            let acts = self.activations(sample.input);
            let q = acts[acts.len() - 1][sample.output];
            let err = q - sample.target;
            loss += 0.5 * err * err * scale;

            // delta = dL/d(pre-activation) of the current layer.
            let mut delta = vec![0.0; self.output_len()];
            delta[sample.output] = err * scale;
            for k in (0..self.layers.len()).rev() {
                let l = &self.layers[k];
                let x = &acts[k];
                let base = offsets[k];
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        let row = &mut grad[base + o * l.inputs..base + (o + 1) * l.inputs];
                        for (g, v) in row.iter_mut().zip(x) {
                            *g += d * v;
                        }
                        grad[base + l.weights.len() + o] += d;
                    }
                }
                if k > 0 {
                    let mut prev = vec![0.0; l.inputs];
                    for (o, &d) in delta.iter().enumerate() {
                        if d != 0.0 {
                            let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                            for (p, w) in prev.iter_mut().zip(row) {
                                *p += d * w;
                            }
                        }
                    }
                    // Rectifier derivative: zero where the unit was inactive.
                    for (p, &a) in prev.iter_mut().zip(x) {
                        if a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        Ok((loss, grad))
    }

    /// One step of gradient descent on the batch loss, that is
    /// `β += lr · mean (t - Q) ∇Q`. Returns the loss before the step.
    pub fn gradient_step(&mut self, batch: &[Sample<'_>], learning_rate: f64) -> Result<f64> {
        let (loss, grad) = self.loss_and_gradient(batch)?;
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite gradient at parameter {k} (batch loss {loss})"
            )));
        }
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *w -= learning_rate * grad[k];
                k += 1;
            }
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(&[4, 8, 3]).unwrap();
        assert_eq!(net.forward(&[0.3, 0.1, 1.0, 0.5]).unwrap(), vec![0.0; 3]);
        assert_eq!(net.param_count(), 4 * 8 + 8 + 8 * 3 + 3);
    }

    #[test]
    fn identity_layer_copies_input() {
        let mut net = QNetwork::zeros(&[3, 3]).unwrap();
        let mut p = vec![0.0; 12];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        net.set_params(&p).unwrap();
        assert_eq!(net.forward(&[0.2, -0.7, 4.0]).unwrap(), vec![0.2, -0.7, 4.0]);
    }

    #[test]
    fn forward_is_deterministic_and_checks_length() {
        let net = QNetwork::glorot(&[4, 16, 16, 2], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = [0.1, 0.9, 0.5, 0.0];
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        let again = QNetwork::glorot(&[4, 16, 16, 2], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(net, again);
        assert!(matches!(net.forward(&x[..3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn hand_computed_one_hidden_unit() {
        // h = relu(2 x0 - x1 + 0.5); q = [3h - 1, -h].
        let net = QNetwork::from_layers(vec![
            Dense {
                inputs: 2,
                outputs: 1,
                weights: vec![2.0, -1.0],
                biases: vec![0.5],
            },
            Dense {
                inputs: 1,
                outputs: 2,
                weights: vec![3.0, -1.0],
                biases: vec![-1.0, 0.0],
            },
        ])
        .unwrap();
        assert_eq!(net.forward(&[1.0, 0.5]).unwrap(), vec![5.0, -2.0]);
        assert_eq!(net.forward(&[0.0, 1.0]).unwrap(), vec![-1.0, 0.0]);
        // One sample at x = (1, 0.5), output 0, target 4: err = 1.
        let (loss, g) = net
            .loss_and_gradient(&[Sample {
                input: &[1.0, 0.5],
                output: 0,
                target: 4.0,
            }])
            .unwrap();
        assert_eq!(loss, 0.5);
        // dq/dw1 = 3 x, dq/db1 = 3, dq/dW2[0] = h = 2, dq/db2[0] = 1.
        assert_eq!(g, vec![3.0, 1.5, 3.0, 2.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_rate_and_zero_error_leave_weights() {
        let mut net = QNetwork::glorot(&[3, 5, 2], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let before = net.params();
        let x = [0.5, 0.25, 1.0];
        let batch = [Sample {
            input: &x,
            output: 1,
            target: 10.0,
        }];
        net.gradient_step(&batch, 0.0).unwrap();
        assert_eq!(net.params(), before);
        let q = net.forward(&x).unwrap()[1];
        let (_, g) = net
            .loss_and_gradient(&[Sample {
                input: &x,
                output: 1,
                target: q,
            }])
            .unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_reduces_loss_on_a_fixed_batch() {
        let mut net = QNetwork::glorot(&[2, 8, 2], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let xs = [[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]];
        let batch: Vec<Sample> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Sample {
                input: x,
                output: i % 2,
                target: i as f64,
            })
            .collect();
        let first = net.gradient_step(&batch, 0.05).unwrap();
        let mut last = first;
        for _ in 0..200 {
            last = net.gradient_step(&batch, 0.05).unwrap();
        }
        assert!(last < 0.1 * first);
    }
}
