use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN_WIDTH: usize = 512;
pub const HIDDEN_LAYERS: usize = 4;

/// One fully-connected layer, `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Layer {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// SDF decoder weights. Hidden layers use a rectifier, the output is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Per-layer activations cached by the forward pass.
pub struct ForwardCache {
    /// `inputs[l]` feeds layer `l`; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    output: Array1<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array1<f64> {
        &self.output
    }
}

/// `[input, h, h, h, h, 1]`.
pub fn decoder_widths(input: usize, hidden: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat_n(hidden, HIDDEN_LAYERS));
    w.push(1);
    w
}

impl MlpParams {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        Ok(MlpParams {
            layers: widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    /// Uniform in `+-1/sqrt(fan_in)` for weights and biases.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(widths, &mut rng)
    }

    pub fn init_with<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(widths)?;
        for layer in &mut p.layers {
            let bound = 1.0 / (layer.input_dim() as f64).sqrt();
            layer.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
            layer.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Ok(p)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(Layer::output_dim));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Layer-major flattening: each layer's weight (row-major) then its bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn from_flat(widths: &[usize], flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(widths)?;
        if flat.len() != p.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: p.parameter_count(),
                actual: flat.len(),
                context: "flattened decoder parameters",
            });
        }
        let mut it = flat.iter().copied();
        for l in &mut p.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap_or_default());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap_or_default());
        }
        Ok(p)
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                f(k, w);
                k += 1;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Empty("decoder has no layers"));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].output_dim(),
                    actual: pair[1].input_dim(),
                    context: if i == 0 { "decoder layer 1 input" } else { "decoder layer input" },
                });
            }
        }
        if let Some(l) = self.layers.last() {
            if l.output_dim() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    actual: l.output_dim(),
                    context: "decoder output width",
                });
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(v) = l.weight.iter().chain(l.bias.iter()).find(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    value: *v,
                    context: format!("decoder layer {i} parameters"),
                });
            }
        }
        Ok(())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: cols,
                context: "decoder input",
            });
        }
        Ok(())
    }

    /// Evaluates a batch whose rows are network inputs.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.weight.t());
            z += &l.bias;
            inputs.push(h);
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        let output = h.index_axis(Axis(1), 0).to_owned();
        Ok(ForwardCache { inputs, output })
    }

    /// Reverse-mode gradients of `sum_r upstream[r] * f(x_r)`. Returns the
    /// parameter gradient (same shape as `self`) and the input gradient.
    pub fn backward_batch(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<(MlpParams, Array2<f64>)> {
        let n = cache.output.len();
        if upstream.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: upstream.len(),
                context: "upstream gradient",
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dz = Array2::from_shape_vec((n, 1), upstream.to_vec()).expect("column shape");
        for (i, l) in self.layers.iter().enumerate().rev() {
            let h = &cache.inputs[i];
            let dw = dz.t().dot(h);
            let db = dz.sum_axis(Axis(0));
            let mut dh = dz.dot(&l.weight);
            if i > 0 {
                // h = relu(z), so h > 0 exactly where the unit was active
                ndarray::Zip::from(&mut dh).and(h).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            grads.push(Layer { weight: dw, bias: db });
            dz = dh;
        }
        grads.reverse();
        Ok((MlpParams { layers: grads }, dz))
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::InvalidArgument("decoder needs at least input and output widths".into()));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidArgument(format!("decoder widths {widths:?} contain zero")));
    }
    Ok(())
}

fn concat_row(e_v: &[f64], e_k: &[f64]) -> Array2<f64> {
    let row: Vec<f64> = e_v.iter().chain(e_k).copied().collect();
    Array2::from_shape_vec((1, row.len()), row).expect("row shape")
}

/// `f([e_v; e_k])` for a single query.
pub fn sdf_forward(params: &MlpParams, e_v: &[f64], e_k: &[f64]) -> Result<f64> {
    let x = concat_row(e_v, e_k);
    Ok(params.forward_batch(x.view())?[0])
}

/// Gradients of `upstream * f([e_v; e_k])` with respect to the parameters
/// and to the concatenated input.
pub fn sdf_backward(params: &MlpParams, e_v: &[f64], e_k: &[f64], upstream: f64) -> Result<(MlpParams, Vec<f64>)> {
    let x = concat_row(e_v, e_k);
    let cache = params.forward_cached(x.view())?;
    let (g, dx) = params.backward_batch(&cache, &[upstream])?;
    Ok((g, dx.into_raw_vec_and_offset().0))
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Worst `|a - n| / max(|a|, |n|, floor)` over the compared parameters.
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters whose `+-eps` probes flip a rectifier, where central
    /// differences do not approximate the derivative.
    pub skipped_kinks: usize,
}

fn activation_pattern(params: &MlpParams, x: &Array2<f64>) -> Result<(f64, Vec<bool>)> {
    let cache = params.forward_cached(x.view())?;
    let pattern = cache.inputs[1..].iter().flat_map(|h| h.iter().map(|v| *v > 0.0)).collect();
    Ok((cache.output[0], pattern))
}

/// Compares analytic parameter gradients at `(e_v, e_k)` with central
/// differences of step `eps`.
pub fn gradient_check_report(params: &MlpParams, e_v: &[f64], e_k: &[f64], eps: f64, floor: f64) -> Result<GradientCheck> {
    let (g, _) = sdf_backward(params, e_v, e_k, 1.0)?;
    let analytic = g.to_flat();
    let widths = params.widths();
    let base = params.to_flat();
    let x = concat_row(e_v, e_k);
    let (_, base_pattern) = activation_pattern(params, &x)?;
    let mut report = GradientCheck { max_relative_error: 0.0, checked: 0, skipped_kinks: 0 };
    let mut probe = base.clone();
    for (k, a) in analytic.iter().enumerate() {
        probe[k] = base[k] + eps;
        let (fp, pp) = activation_pattern(&MlpParams::from_flat(&widths, &probe)?, &x)?;
        probe[k] = base[k] - eps;
        let (fm, pm) = activation_pattern(&MlpParams::from_flat(&widths, &probe)?, &x)?;
        probe[k] = base[k];
        if pp != base_pattern || pm != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

/// Worst relative error of [`gradient_check_report`].
pub fn gradient_check(params: &MlpParams, e_v: &[f64], e_k: &[f64], eps: f64, floor: f64) -> Result<f64> {
    Ok(gradient_check_report(params, e_v, e_k, eps, floor)?.max_relative_error)
}
