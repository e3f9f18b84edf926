use std::fmt::{Debug, Display};

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};

/// Floating point types the networks can be instantiated with. Training
/// runs use `f32`; numerical checks use `f64`.
pub trait Real:
    Float + LinalgScalar + ScalarOperand + Debug + Display + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Fully connected layer; `weights` is `(inputs, outputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Dense<F> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = || F::of(rng.random_range(-bound..bound));
        Dense {
            weights: Array2::from_shape_simple_fn((inputs, outputs), &mut draw),
            bias: Array1::from_shape_simple_fn(outputs, &mut draw),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

/// ReLU hidden layers followed by a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    layers: Vec<Dense<F>>,
}

pub type Gradients<F> = Mlp<F>;

impl<F: Real> Mlp<F> {
    /// `sizes = [inputs, hidden.., outputs]`, weights uniform in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output size");
        Mlp {
            layers: sizes
                .windows(2)
                .map(|w| Dense::uniform(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output size");
        Mlp {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn from_layers(layers: Vec<Dense<F>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::domain(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        if let Some(l) = layers.iter().find(|l| l.bias.len() != l.outputs()) {
            return Err(Error::domain(format!(
                "bias length {} != layer width {}",
                l.bias.len(),
                l.outputs()
            )));
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<F>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs()))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn same_shape(&self, other: &Mlp<F>) -> bool {
        self.sizes() == other.sizes()
    }

    pub fn forward(&self, input: &[F]) -> Result<Vec<F>> {
        if input.len() != self.input_dim() {
            return Err(Error::domain(format!(
                "input has {} features, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_batch(x).into_raw_vec_and_offset().0)
    }

    /// Row-wise forward pass over a `(batch, inputs)` matrix.
    pub fn forward_batch(&self, x: ArrayView2<F>) -> Array2<F> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weights) + &layer.bias;
            if i < last {
                h.mapv_inplace(relu);
            }
        }
        h
    }

    /// Mean squared error between `Q(x_r, a_r)` and `y_r` over all rows,
    /// together with its gradient with respect to every parameter.
    pub fn td_loss_and_grad(
        &self,
        x: ArrayView2<F>,
        actions: &[usize],
        targets: &[F],
    ) -> Result<(F, Gradients<F>)> {
        let rows = x.nrows();
        if rows == 0 {
            return Err(Error::domain("empty training batch"));
        }
        if actions.len() != rows || targets.len() != rows {
            return Err(Error::domain(format!(
                "batch of {rows} rows with {} actions and {} targets",
                actions.len(),
                targets.len()
            )));
        }
        if x.ncols() != self.input_dim() {
            return Err(Error::domain(format!(
                "batch has {} features, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if let Some(a) = actions.iter().find(|&&a| a >= self.output_dim()) {
            return Err(Error::domain(format!("action index {a} out of range")));
        }

        let last = self.layers.len() - 1;
        // activations[l] is the input to layer l
        let mut activations: Vec<Array2<F>> = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weights) + &layer.bias;
            if i < last {
                z.mapv_inplace(relu);
            }
            activations.push(h);
            h = z;
        }

        let scale = F::of(2.0 / rows as f64);
        let mut loss = F::zero();
        let mut delta = Array2::<F>::zeros(h.raw_dim());
        for (r, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            let err = h[[r, a]] - y;
            loss = loss + err * err;
            delta[[r, a]] = scale * err;
        }
        loss = loss / F::of(rows as f64);

        let mut grads: Vec<Dense<F>> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = &activations[i];
            let g_w = input.t().dot(&delta);
            let g_b = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weights.t());
                Zip::from(&mut back).and(input).for_each(|d, &a| {
                    if a <= F::zero() {
                        *d = F::zero();
                    }
                });
                delta = back;
            }
            grads.push(Dense {
                weights: g_w,
                bias: g_b,
            });
        }
        grads.reverse();
        Ok((loss, Mlp { layers: grads }))
    }

    pub fn copy_from(&mut self, other: &Mlp<F>) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::domain(format!(
                "cannot copy a {:?} network into a {:?} network",
                other.sizes(),
                self.sizes()
            )));
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.assign(&src.weights);
            dst.bias.assign(&src.bias);
        }
        Ok(())
    }
}

fn relu<F: Real>(v: F) -> F {
    if v > F::zero() {
        v
    } else {
        F::zero()
    }
}

/// RMSprop without momentum: `s = decay*s + (1-decay)*g^2`,
/// `w -= lr * g / (sqrt(s) + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp<F> {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    square_avg: Mlp<F>,
}

impl<F: Real> RmsProp<F> {
    pub fn new(shape_of: &Mlp<F>, lr: f64, decay: f64, eps: f64) -> Self {
        RmsProp {
            lr,
            decay,
            eps,
            square_avg: Mlp::zeros(&shape_of.sizes()),
        }
    }

    pub fn square_avg(&self) -> &Mlp<F> {
        &self.square_avg
    }

    pub fn apply(&mut self, params: &mut Mlp<F>, grads: &Gradients<F>) {
        let (lr, decay, eps) = (F::of(self.lr), F::of(self.decay), F::of(self.eps));
        let keep = F::one() - decay;
        for ((p, s), g) in params
            .layers
            .iter_mut()
            .zip(self.square_avg.layers.iter_mut())
            .zip(&grads.layers)
        {
            Zip::from(&mut p.weights)
                .and(&mut s.weights)
                .and(&g.weights)
                .for_each(|w, s, &g| {
                    *s = decay * *s + keep * g * g;
                    *w = *w - lr * g / (s.sqrt() + eps);
                });
            Zip::from(&mut p.bias)
                .and(&mut s.bias)
                .and(&g.bias)
                .for_each(|w, s, &g| {
                    *s = decay * *s + keep * g * g;
                    *w = *w - lr * g / (s.sqrt() + eps);
                });
        }
    }
}
