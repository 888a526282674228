use super::{NnError, Real};
use crate::rng::Stream;

/// One affine layer. `weight` is `outputs × inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Multilayer perceptron: rectifier on hidden layers, identity on the output.
///
/// The same type doubles as the gradient container returned by
/// [`Mlp::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Layer<T>>,
}

/// Activations saved by [`Mlp::forward_cached`]; `acts[0]` is the input and
/// `acts[i]` the (post-rectifier) output of layer `i - 1`.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub batch: usize,
    acts: Vec<Vec<T>>,
}

impl<T> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().expect("cache has an input")
    }
}

impl<T: Real> Mlp<T> {
    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn new(layer_sizes: &[usize], rng: &mut Stream) -> Self {
        assert!(
            layer_sizes.len() >= 2,
            "need at least input and output sizes"
        );
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = 1.0 / (inputs as f64).sqrt();
                let mut draw = || T::of((2.0 * rng.uniform() - 1.0) * bound);
                let weight = (0..inputs * outputs).map(|_| draw()).collect();
                let bias = (0..outputs).map(|_| draw()).collect();
                Layer {
                    inputs,
                    outputs,
                    weight,
                    bias,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(layer_sizes: &[usize]) -> Self {
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                inputs: w[0],
                outputs: w[1],
                weight: vec![T::zero(); w[0] * w[1]],
                bias: vec![T::zero(); w[1]],
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Shape("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(NnError::Shape(format!(
                    "layer {i} buffers do not match its size"
                )));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(NnError::Shape(format!("layer {i} does not chain")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.layer_sizes())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameter buffers in canonical order: per layer, weight then bias.
    pub fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// `self = tau * src + (1 - tau) * self`.
    pub fn polyak_from(&mut self, src: &Self, tau: T) {
        for (dst, s) in self.slices_mut().into_iter().zip(src.slices()) {
            for (d, x) in dst.iter_mut().zip(s) {
                *d = tau * *x + (T::one() - tau) * *d;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weight: l.weight.iter().map(|x| U::of(x.f64())).collect(),
                    bias: l.bias.iter().map(|x| U::of(x.f64())).collect(),
                })
                .collect(),
        }
    }

    fn check_input(&self, input: &[T], batch: usize) -> Result<(), NnError> {
        if input.len() != batch * self.input_dim() {
            return Err(NnError::Shape(format!(
                "input has {} values, expected {batch} x {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass over `batch` row-major samples.
    pub fn forward(&self, input: &[T], batch: usize) -> Result<Vec<T>, NnError> {
        self.check_input(input, batch)?;
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            x = affine(layer, &x, batch);
            if i + 1 < self.layers.len() {
                relu_in_place(&mut x);
            }
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &[T], batch: usize) -> Result<ForwardCache<T>, NnError> {
        self.check_input(input, batch)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = affine(layer, &acts[i], batch);
            if i + 1 < self.layers.len() {
                relu_in_place(&mut z);
            }
            acts.push(z);
        }
        Ok(ForwardCache { batch, acts })
    }

    /// Reverse-mode pass. Returns parameter gradients (summed over the batch)
    /// and the gradient with respect to the input rows.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &[T],
    ) -> Result<(Mlp<T>, Vec<T>), NnError> {
        let mut grads = self.zeros_like();
        let dx = self.backward_into(cache, output_grad, Some(&mut grads))?;
        Ok((grads, dx))
    }

    /// Gradient with respect to the input only; skips parameter gradients.
    pub fn input_gradient(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &[T],
    ) -> Result<Vec<T>, NnError> {
        self.backward_into(cache, output_grad, None)
    }

    fn backward_into(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &[T],
        mut grads: Option<&mut Mlp<T>>,
    ) -> Result<Vec<T>, NnError> {
        let batch = cache.batch;
        if cache.acts.len() != self.layers.len() + 1 {
            return Err(NnError::Shape(
                "forward cache belongs to a different network".into(),
            ));
        }
        if output_grad.len() != batch * self.output_dim() {
            return Err(NnError::Shape(format!(
                "output gradient has {} values, expected {batch} x {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        let mut delta = output_grad.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let (nin, nout) = (layer.inputs, layer.outputs);
            let x = &cache.acts[i];
            if let Some(grads) = grads.as_deref_mut() {
                let g = &mut grads.layers[i];
                // dW = delta^T * x  (nout × batch) · (batch × nin)
                T::gemm(
                    nout,
                    batch,
                    nin,
                    T::one(),
                    &delta,
                    1,
                    nout as isize,
                    x,
                    nin as isize,
                    1,
                    T::zero(),
                    &mut g.weight,
                    nin as isize,
                    1,
                );
                for row in delta.chunks_exact(nout) {
                    for (gb, d) in g.bias.iter_mut().zip(row) {
                        *gb = *gb + *d;
                    }
                }
            }
            // dx = delta * W  (batch × nout) · (nout × nin)
            let mut dx = vec![T::zero(); batch * nin];
            T::gemm(
                batch,
                nout,
                nin,
                T::one(),
                &delta,
                nout as isize,
                1,
                &layer.weight,
                nin as isize,
                1,
                T::zero(),
                &mut dx,
                nin as isize,
                1,
            );
            if i > 0 {
                // x is the rectified output of the previous layer.
                for (d, a) in dx.iter_mut().zip(x) {
                    if *a <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            delta = dx;
        }
        Ok(delta)
    }
}

fn affine<T: Real>(layer: &Layer<T>, x: &[T], batch: usize) -> Vec<T> {
    let (nin, nout) = (layer.inputs, layer.outputs);
    let mut z = Vec::with_capacity(batch * nout);
    for _ in 0..batch {
        z.extend_from_slice(&layer.bias);
    }
    // z += x * W^T  (batch × nin) · (nin × nout)
    T::gemm(
        batch,
        nin,
        nout,
        T::one(),
        x,
        nin as isize,
        1,
        &layer.weight,
        1,
        nin as isize,
        T::one(),
        &mut z,
        nout as isize,
        1,
    );
    z
}

fn relu_in_place<T: Real>(x: &mut [T]) {
    for v in x {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}
