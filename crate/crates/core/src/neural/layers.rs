//! Dense and LSTM layers with cached forward passes and exact backward passes.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::Activation;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn glorot<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Dense {
            weight: glorot_uniform(output, input, input, output, rng),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.weight.nrows()
    }

    /// `x W^T + b`
    pub fn affine(&self, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        z
    }
}

/// LSTM layer with gates stacked `[input, forget, cell, output]` along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `4H x in`
    pub w_input: Array2<f64>,
    /// `4H x H`
    pub w_recurrent: Array2<f64>,
    /// `4H`
    pub bias: Array1<f64>,
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayer {
            w_input: Array2::zeros((4 * hidden, input)),
            w_recurrent: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn glorot<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut bias = Array1::zeros(4 * hidden);
        bias.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        LstmLayer {
            w_input: glorot_uniform(4 * hidden, input, input, 4 * hidden, rng),
            w_recurrent: glorot_uniform(4 * hidden, hidden, hidden, 4 * hidden, rng),
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_recurrent.ncols()
    }

    pub fn input_width(&self) -> usize {
        self.w_input.ncols()
    }
}

fn glorot_uniform<R: Rng>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------------------
// Fully connected stack

#[derive(Debug, Clone)]
pub struct DenseCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
}

fn layer_activation(index: usize, count: usize, hidden: Activation) -> Activation {
    if index + 1 == count {
        Activation::Linear
    } else {
        hidden
    }
}

/// Forward pass of a dense stack; the final layer is linear.
pub fn dense_forward(
    layers: &[Dense],
    hidden: Activation,
    x: ArrayView2<'_, f64>,
    keep_cache: bool,
) -> (Array2<f64>, Option<DenseCache>) {
    let mut cache = DenseCache {
        inputs: Vec::new(),
        pre: Vec::new(),
    };
    let mut a = x.to_owned();
    for (i, layer) in layers.iter().enumerate() {
        let z = layer.affine(&a.view());
        let act = layer_activation(i, layers.len(), hidden);
        let next = z.mapv(|v| act.apply(v));
        if keep_cache {
            cache.inputs.push(a);
            cache.pre.push(z);
        }
        a = next;
    }
    (a, keep_cache.then_some(cache))
}

/// Gradients of a dense stack given `d_out = dLoss/dOutput`.
/// Returns the layer gradients and `dLoss/dInput`.
pub fn dense_backward(
    layers: &[Dense],
    hidden: Activation,
    cache: &DenseCache,
    d_out: Array2<f64>,
) -> (Vec<Dense>, Array2<f64>) {
    let mut grads: Vec<Dense> = Vec::with_capacity(layers.len());
    let mut upstream = d_out;
    for i in (0..layers.len()).rev() {
        let act = layer_activation(i, layers.len(), hidden);
        let z = &cache.pre[i];
        let mut dz = upstream;
        if act != Activation::Linear {
            Zip::from(&mut dz).and(z).for_each(|d, &zv| {
                *d *= act.derivative(zv, act.apply(zv));
            });
        }
        let weight = dz.t().dot(&cache.inputs[i]);
        let bias = dz.sum_axis(Axis(0));
        upstream = dz.dot(&layers[i].weight);
        grads.push(Dense { weight, bias });
    }
    grads.reverse();
    (grads, upstream)
}

// ---------------------------------------------------------------------------
// LSTM stack

/// Per-layer activations of a time-major batch. Row `t * batch + b` holds
/// sequence `b` at step `t`.
#[derive(Debug, Clone)]
struct LstmLayerCache {
    input: Array2<f64>,
    /// Post-nonlinearity gates `[i, f, g, o]`, `TB x 4H`.
    gates: Array2<f64>,
    cell: Array2<f64>,
    cell_act: Array2<f64>,
    hidden: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    layers: Vec<LstmLayerCache>,
    output_input: Array2<f64>,
    steps: usize,
    batch: usize,
}

fn lstm_layer_forward(
    layer: &LstmLayer,
    act: Activation,
    input: Array2<f64>,
    steps: usize,
    batch: usize,
) -> LstmLayerCache {
    let h = layer.hidden();
    let mut gates = input.dot(&layer.w_input.t());
    gates += &layer.bias;
    let mut cell = Array2::zeros((steps * batch, h));
    let mut cell_act = Array2::zeros((steps * batch, h));
    let mut hidden = Array2::zeros((steps * batch, h));
    let mut h_prev = Array2::<f64>::zeros((batch, h));
    let mut c_prev = Array2::<f64>::zeros((batch, h));

    for t in 0..steps {
        let rows = t * batch..(t + 1) * batch;
        let mut g_t = gates.slice_mut(s![rows.clone(), ..]);
        g_t += &h_prev.dot(&layer.w_recurrent.t());
        for mut row in g_t.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if (2 * h..3 * h).contains(&j) {
                    v.tanh()
                } else {
                    sigmoid(*v)
                };
            }
        }
        let g_t = gates.slice(s![rows.clone(), ..]);
        let mut c_t = cell.slice_mut(s![rows.clone(), ..]);
        Zip::from(&mut c_t)
            .and(&c_prev)
            .and(g_t.slice(s![.., 0..h]))
            .and(g_t.slice(s![.., h..2 * h]))
            .and(g_t.slice(s![.., 2 * h..3 * h]))
            .for_each(|c, &cp, &i, &f, &g| *c = f * cp + i * g);
        let mut ac_t = cell_act.slice_mut(s![rows.clone(), ..]);
        Zip::from(&mut ac_t).and(&c_t).for_each(|a, &c| *a = act.apply(c));
        let mut h_t = hidden.slice_mut(s![rows.clone(), ..]);
        Zip::from(&mut h_t)
            .and(g_t.slice(s![.., 3 * h..4 * h]))
            .and(&ac_t)
            .for_each(|hv, &o, &a| *hv = o * a);
        h_prev.assign(&h_t);
        c_prev.assign(&c_t);
    }
    LstmLayerCache {
        input,
        gates,
        cell,
        cell_act,
        hidden,
    }
}

/// Forward pass over a time-major batch `x` of shape `(steps * batch, in)`.
/// States start at zero for every sequence. Output layer is linear.
pub fn lstm_forward(
    cells: &[LstmLayer],
    output: &Dense,
    act: Activation,
    x: ArrayView2<'_, f64>,
    steps: usize,
    batch: usize,
    keep_cache: bool,
) -> (Array2<f64>, Option<LstmCache>) {
    debug_assert_eq!(x.nrows(), steps * batch);
    let mut layers = Vec::with_capacity(cells.len());
    let mut input = x.to_owned();
    for cell in cells {
        let cache = lstm_layer_forward(cell, act, input, steps, batch);
        input = cache.hidden.clone();
        if keep_cache {
            layers.push(cache);
        }
    }
    let y = output.affine(&input.view());
    let cache = keep_cache.then(|| LstmCache {
        layers,
        output_input: input,
        steps,
        batch,
    });
    (y, cache)
}

fn lstm_layer_backward(
    layer: &LstmLayer,
    act: Activation,
    cache: &LstmLayerCache,
    d_hidden: Array2<f64>,
    steps: usize,
    batch: usize,
) -> (LstmLayer, Array2<f64>) {
    let h = layer.hidden();
    let mut d_pre = Array2::<f64>::zeros((steps * batch, 4 * h));
    let mut dh_next = Array2::<f64>::zeros((batch, h));
    let mut dc_next = Array2::<f64>::zeros((batch, h));
    let zeros = Array2::<f64>::zeros((batch, h));

    for t in (0..steps).rev() {
        let rows = t * batch..(t + 1) * batch;
        let g_t = cache.gates.slice(s![rows.clone(), ..]);
        let c_t = cache.cell.slice(s![rows.clone(), ..]);
        let ac_t = cache.cell_act.slice(s![rows.clone(), ..]);
        let c_prev = if t == 0 {
            zeros.view()
        } else {
            cache.cell.slice(s![(t - 1) * batch..t * batch, ..])
        };
        let mut dh = d_hidden.slice(s![rows.clone(), ..]).to_owned();
        dh += &dh_next;

        let mut dp = d_pre.slice_mut(s![rows.clone(), ..]);
        for b in 0..batch {
            for j in 0..h {
                let i = g_t[[b, j]];
                let f = g_t[[b, h + j]];
                let g = g_t[[b, 2 * h + j]];
                let o = g_t[[b, 3 * h + j]];
                let c = c_t[[b, j]];
                let ac = ac_t[[b, j]];
                let dhv = dh[[b, j]];
                let d_o = dhv * ac;
                let dc = dhv * o * act.derivative(c, ac) + dc_next[[b, j]];
                dp[[b, j]] = dc * g * i * (1.0 - i);
                dp[[b, h + j]] = dc * c_prev[[b, j]] * f * (1.0 - f);
                dp[[b, 2 * h + j]] = dc * i * (1.0 - g * g);
                dp[[b, 3 * h + j]] = d_o * o * (1.0 - o);
                dc_next[[b, j]] = dc * f;
            }
        }
        dh_next = dp.dot(&layer.w_recurrent);
    }

    // h_{t-1} for every row, zero at t = 0
    let mut h_prev = Array2::<f64>::zeros((steps * batch, h));
    if steps > 1 {
        h_prev
            .slice_mut(s![batch.., ..])
            .assign(&cache.hidden.slice(s![..(steps - 1) * batch, ..]));
    }
    let grads = LstmLayer {
        w_input: d_pre.t().dot(&cache.input),
        w_recurrent: d_pre.t().dot(&h_prev),
        bias: d_pre.sum_axis(Axis(0)),
    };
    let d_input = d_pre.dot(&layer.w_input);
    (grads, d_input)
}

/// Backpropagation through time over the whole cached batch.
pub fn lstm_backward(
    cells: &[LstmLayer],
    output: &Dense,
    act: Activation,
    cache: &LstmCache,
    d_out: Array2<f64>,
) -> (Vec<LstmLayer>, Dense) {
    let out_grad = Dense {
        weight: d_out.t().dot(&cache.output_input),
        bias: d_out.sum_axis(Axis(0)),
    };
    let mut upstream = d_out.dot(&output.weight);
    let mut grads = Vec::with_capacity(cells.len());
    for (layer, lc) in cells.iter().zip(&cache.layers).rev() {
        let (g, d_in) = lstm_layer_backward(layer, act, lc, upstream, cache.steps, cache.batch);
        grads.push(g);
        upstream = d_in;
    }
    grads.reverse();
    (grads, out_grad)
}
