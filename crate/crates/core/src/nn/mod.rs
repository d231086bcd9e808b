//! Feed-forward network with batch normalization and PReLU, trained by Adam.
//!
//! All trainable values live in one flat `Vec<f64>`; [`Mlp::layout`] gives
//! the offsets. Per hidden layer `l`: `W_l` (`fan_in × fan_out`, row-major),
//! `b_l`, then `γ_l` and `β_l` if the layer is normalized, then one PReLU
//! slope. The output layer is `W`, `b` only.

mod adam;
mod checkpoint;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const HIDDEN_DIMS: [usize; 4] = [128, 256, 256, 128];
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const PRELU_INIT: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    /// Hidden layers (0-based) followed by batch normalization.
    pub bn_layers: Vec<usize>,
}

impl MlpSpec {
    /// The standard stack: four hidden layers, BN on the first three.
    pub fn standard(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: HIDDEN_DIMS.to_vec(),
            output_dim,
            bn_layers: vec![0, 1, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.bn_layers.iter().any(|&l| l >= self.hidden_dims.len()) {
            return Err(Error::Config("batch normalization on a non-hidden layer".into()));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden_dims);
        d.push(self.output_dim);
        d
    }

    pub fn has_bn(&self, layer: usize) -> bool {
        self.bn_layers.contains(&layer)
    }

    pub fn param_count(&self) -> usize {
        let d = self.dims();
        let linear: usize = d.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let bn: usize = self.bn_layers.iter().map(|&l| 2 * self.hidden_dims[l]).sum();
        linear + bn + self.hidden_dims.len()
    }
}

/// Offsets of one layer's parameters in the flat vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlots {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: usize,
    pub bias: usize,
    /// `(γ, β)` offsets.
    pub bn: Option<(usize, usize)>,
    pub prelu: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct LayerCache {
    input: Array2<f64>,
    /// BN output (or linear output), the PReLU argument.
    pre_act: Array2<f64>,
    xhat: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
}

struct Cache {
    mode: Mode,
    layers: Vec<LayerCache>,
}

/// Model with its non-trainable BN statistics.
pub struct Mlp {
    spec: MlpSpec,
    layout: Vec<LayerSlots>,
    params: Vec<f64>,
    running_mean: Vec<Vec<f64>>,
    running_var: Vec<Vec<f64>>,
    cache: Option<Cache>,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            params: self.params.clone(),
            running_mean: self.running_mean.clone(),
            running_var: self.running_var.clone(),
            cache: None,
        }
    }
}

fn build_layout(spec: &MlpSpec) -> Vec<LayerSlots> {
    let d = spec.dims();
    let n_hidden = spec.hidden_dims.len();
    let mut off = 0;
    let mut out = Vec::with_capacity(d.len() - 1);
    for l in 0..d.len() - 1 {
        let (fan_in, fan_out) = (d[l], d[l + 1]);
        let weight = off;
        off += fan_in * fan_out;
        let bias = off;
        off += fan_out;
        let bn = if l < n_hidden && spec.has_bn(l) {
            let g = off;
            off += 2 * fan_out;
            Some((g, g + fan_out))
        } else {
            None
        };
        let prelu = if l < n_hidden {
            off += 1;
            Some(off - 1)
        } else {
            None
        };
        out.push(LayerSlots {
            fan_in,
            fan_out,
            weight,
            bias,
            bn,
            prelu,
        });
    }
    out
}

impl Mlp {
    /// Fan-in uniform initialization: weights and biases drawn from
    /// `U(-1/√fan_in, 1/√fan_in)`; `γ = 1`, `β = 0`, slopes 0.25.
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = build_layout(&spec);
        let mut params = vec![0.0; spec.param_count()];
        let mut rng = rng_from_seed(seed);
        for s in &layout {
            let bound = 1.0 / (s.fan_in as f64).sqrt();
            for p in &mut params[s.weight..s.bias + s.fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            if let Some((g, _)) = s.bn {
                params[g..g + s.fan_out].fill(1.0);
            }
            if let Some(a) = s.prelu {
                params[a] = PRELU_INIT;
            }
        }
        Ok(Self::from_parts_unchecked(spec, layout, params))
    }

    fn from_parts_unchecked(spec: MlpSpec, layout: Vec<LayerSlots>, params: Vec<f64>) -> Self {
        let running_mean = spec.hidden_dims.iter().map(|&d| vec![0.0; d]).collect();
        let running_var = spec.hidden_dims.iter().map(|&d| vec![1.0; d]).collect();
        Self {
            spec,
            layout,
            params,
            running_mean,
            running_var,
            cache: None,
        }
    }

    /// Rebuilds a model from stored values.
    pub fn from_parts(
        spec: MlpSpec,
        params: Vec<f64>,
        running_mean: Vec<Vec<f64>>,
        running_var: Vec<Vec<f64>>,
    ) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters for a model with {}",
                params.len(),
                spec.param_count()
            )));
        }
        let shapes_ok = |v: &Vec<Vec<f64>>| {
            v.len() == spec.hidden_dims.len() && v.iter().zip(&spec.hidden_dims).all(|(a, &d)| a.len() == d)
        };
        if !shapes_ok(&running_mean) || !shapes_ok(&running_var) {
            return Err(Error::Shape("running statistics do not match the hidden widths".into()));
        }
        let layout = build_layout(&spec);
        let mut m = Self::from_parts_unchecked(spec, layout, params);
        m.running_mean = running_mean;
        m.running_var = running_var;
        Ok(m)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[LayerSlots] {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn running_mean(&self) -> &[Vec<f64>] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[Vec<f64>] {
        &self.running_var
    }

    fn weight(&self, s: &LayerSlots) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((s.fan_in, s.fan_out), &self.params[s.weight..s.bias]).expect("layout")
    }

    fn vector(&self, at: usize, len: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[at..at + len])
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.ncols(),
                self.spec.input_dim
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(())
    }

    /// Forward pass that records what [`Mlp::backward`] needs. Train mode
    /// normalizes with batch statistics and updates the running ones.
    pub fn forward(&mut self, x: ArrayView2<'_, f64>, mode: Mode) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let batch = x.nrows();
        if mode == Mode::Train && batch < 2 {
            return Err(Error::Shape(
                "train-mode batch normalization needs at least 2 samples".into(),
            ));
        }
        let mut caches = Vec::with_capacity(self.layout.len());
        let mut h = x.to_owned();
        let layout = self.layout.clone();
        for (l, s) in layout.iter().enumerate() {
            let mut z = h.dot(&self.weight(s)) + self.vector(s.bias, s.fan_out);
            let (mut xhat, mut inv_std) = (None, None);
            if let Some((g, b)) = s.bn {
                let (mean, var) = match mode {
                    Mode::Train => {
                        let mean = z.mean_axis(Axis(0)).expect("non-empty");
                        let var = z.var_axis(Axis(0), 0.0);
                        let unbiased = batch as f64 / (batch - 1) as f64;
                        for j in 0..s.fan_out {
                            let rm = &mut self.running_mean[l][j];
                            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[j];
                            let rv = &mut self.running_var[l][j];
                            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var[j] * unbiased;
                        }
                        (mean, var)
                    }
                    Mode::Eval => (
                        Array1::from(self.running_mean[l].clone()),
                        Array1::from(self.running_var[l].clone()),
                    ),
                };
                let istd = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let xh = (&z - &mean) * &istd;
                z = &xh * &self.vector(g, s.fan_out) + self.vector(b, s.fan_out);
                xhat = Some(xh);
                inv_std = Some(istd);
            }
            let next = match s.prelu {
                Some(a) => {
                    let slope = self.params[a];
                    z.mapv(|v| if v > 0.0 { v } else { slope * v })
                }
                None => z.clone(),
            };
            caches.push(LayerCache {
                input: std::mem::replace(&mut h, next),
                pre_act: z,
                xhat,
                inv_std,
            });
        }
        self.cache = Some(Cache { mode, layers: caches });
        Ok(h)
    }

    /// Eval-mode forward pass without caching.
    pub fn infer(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for (l, s) in self.layout.iter().enumerate() {
            let mut z = h.dot(&self.weight(s)) + self.vector(s.bias, s.fan_out);
            if let Some((g, b)) = s.bn {
                let gamma = self.vector(g, s.fan_out);
                let beta = self.vector(b, s.fan_out);
                let istd: Vec<f64> = self.running_var[l].iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mean = &self.running_mean[l];
                for mut row in z.rows_mut() {
                    for j in 0..s.fan_out {
                        row[j] = (row[j] - mean[j]) * istd[j] * gamma[j] + beta[j];
                    }
                }
            }
            if let Some(a) = s.prelu {
                let slope = self.params[a];
                z.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
            }
            h = z;
        }
        Ok(h)
    }

    /// Gradient of a scalar with respect to all parameters, given its
    /// gradient `upstream` with respect to the last forward output. Consumes
    /// the cache.
    pub fn backward(&mut self, upstream: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        let batch = cache.layers[0].input.nrows();
        if upstream.dim() != (batch, self.spec.output_dim) {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, expected ({batch}, {})",
                upstream.dim(),
                self.spec.output_dim
            )));
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut d = upstream.to_owned();
        for (s, c) in self.layout.iter().zip(&cache.layers).rev() {
            if let Some(a) = s.prelu {
                let slope = self.params[a];
                let mut ga = 0.0;
                for (dv, &y) in d.iter_mut().zip(c.pre_act.iter()) {
                    if y <= 0.0 {
                        ga += *dv * y;
                        *dv *= slope;
                    }
                }
                grad[a] = ga;
            }
            if let Some((g, b)) = s.bn {
                let xhat = c.xhat.as_ref().expect("bn cache");
                let istd = c.inv_std.as_ref().expect("bn cache");
                let gamma = self.vector(g, s.fan_out).to_owned();
                let dgamma = (&d * xhat).sum_axis(Axis(0));
                let dbeta = d.sum_axis(Axis(0));
                grad[g..g + s.fan_out].copy_from_slice(dgamma.as_slice().expect("contiguous"));
                grad[b..b + s.fan_out].copy_from_slice(dbeta.as_slice().expect("contiguous"));
                let dxhat = &d * &gamma;
                d = match cache.mode {
                    Mode::Eval => dxhat * istd,
                    Mode::Train => {
                        let m = batch as f64;
                        let sum_d = dxhat.sum_axis(Axis(0));
                        let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                        ((dxhat * m - &sum_d - xhat * &sum_dx) * istd) / m
                    }
                };
            }
            let dw = c.input.t().dot(&d);
            grad[s.weight..s.bias].copy_from_slice(dw.as_standard_layout().as_slice().expect("contiguous"));
            let db = d.sum_axis(Axis(0));
            grad[s.bias..s.bias + s.fan_out].copy_from_slice(db.as_slice().expect("contiguous"));
            d = d.dot(&self.weight(s).t());
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = substream(seed, 0);
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn standard_counts() {
        assert_eq!(MlpSpec::standard(33, 32).param_count(), 141_476);
        assert_eq!(MlpSpec::standard(37, 36).param_count(), 142_504);
        assert_eq!(MlpSpec::standard(41, 40).param_count(), 143_532);
    }

    #[test]
    fn layout_covers_every_parameter_once() {
        let spec = MlpSpec::standard(9, 5);
        let layout = build_layout(&spec);
        let mut seen = vec![0u8; spec.param_count()];
        for s in &layout {
            for i in s.weight..s.bias + s.fan_out {
                seen[i] += 1;
            }
            if let Some((g, b)) = s.bn {
                for i in g..g + s.fan_out {
                    seen[i] += 1;
                }
                for i in b..b + s.fan_out {
                    seen[i] += 1;
                }
            }
            if let Some(a) = s.prelu {
                seen[a] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn invalid_specs() {
        let mut s = MlpSpec::standard(3, 2);
        s.bn_layers.push(4);
        assert!(Mlp::new(s, 0).is_err());
        assert!(Mlp::new(MlpSpec::standard(0, 2), 0).is_err());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut m = Mlp::new(MlpSpec::standard(6, 4), 1).unwrap();
        for s in m.layout.clone() {
            m.params[s.weight..s.bias + s.fan_out].fill(0.0);
        }
        let x = random_batch(5, 6, 2);
        assert!(m.infer(x.view()).unwrap().iter().all(|&v| v == 0.0));
        assert!(m.forward(x.view(), Mode::Train).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_is_bitwise_repeatable() {
        let m = Mlp::new(MlpSpec::standard(6, 4), 3).unwrap();
        let x = random_batch(7, 6, 4);
        assert_eq!(m.infer(x.view()).unwrap(), m.infer(x.view()).unwrap());
        let mut m2 = m.clone();
        assert_eq!(m2.forward(x.view(), Mode::Eval).unwrap(), m.infer(x.view()).unwrap());
    }

    #[test]
    fn train_batch_of_one_is_rejected() {
        let mut m = Mlp::new(MlpSpec::standard(6, 4), 3).unwrap();
        let x = random_batch(1, 6, 4);
        assert!(matches!(m.forward(x.view(), Mode::Train), Err(Error::Shape(_))));
        assert!(m.forward(x.view(), Mode::Eval).is_ok());
    }

    #[test]
    fn wrong_width_is_rejected() {
        let m = Mlp::new(MlpSpec::standard(6, 4), 3).unwrap();
        assert!(m.infer(random_batch(3, 5, 0).view()).is_err());
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let mut m = Mlp::new(MlpSpec::standard(6, 4), 3).unwrap();
        let g = Array2::zeros((2, 4));
        assert!(matches!(m.backward(g.view()), Err(Error::State(_))));
    }

    #[test]
    fn prelu_pointwise() {
        // one hidden layer of width 1 with identity weights exposes the activation
        let spec = MlpSpec {
            input_dim: 1,
            hidden_dims: vec![1],
            output_dim: 1,
            bn_layers: vec![],
        };
        let mut m = Mlp::new(spec, 0).unwrap();
        let s = m.layout[0].clone();
        let o = m.layout[1].clone();
        m.params[s.weight] = 1.0;
        m.params[s.bias] = 0.0;
        m.params[s.prelu.unwrap()] = 0.3;
        m.params[o.weight] = 1.0;
        m.params[o.bias] = 0.0;
        for i in -20..=20 {
            let x = i as f64 * 0.25;
            let y = m.infer(Array2::from_elem((1, 1), x).view()).unwrap()[[0, 0]];
            assert_eq!(y, if x > 0.0 { x } else { 0.3 * x });
        }
    }

    #[test]
    fn train_bn_normalizes_batch() {
        let spec = MlpSpec::standard(5, 3);
        let mut m = Mlp::new(spec, 9).unwrap();
        let x = random_batch(64, 5, 10) * 50.0 + 2.0;
        m.forward(x.view(), Mode::Train).unwrap();
        let cache = m.cache.as_ref().unwrap();
        for (l, c) in cache.layers.iter().take(3).enumerate() {
            let xh = c.xhat.as_ref().unwrap();
            for (col, istd) in xh.columns().into_iter().zip(c.inv_std.as_ref().unwrap()) {
                assert!(col.mean().unwrap().abs() <= 1e-6);
                let var_z = 1.0 / (istd * istd) - BN_EPS;
                assert_relative_eq!(col.var(0.0), var_z / (var_z + BN_EPS), max_relative = 1e-12);
                if l == 0 {
                    // wide inputs: the ε shift is below 1e-6
                    assert!((col.var(0.0) - 1.0).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn running_stats_follow_ema() {
        let spec = MlpSpec {
            input_dim: 1,
            hidden_dims: vec![1],
            output_dim: 1,
            bn_layers: vec![0],
        };
        let mut m = Mlp::new(spec, 0).unwrap();
        let s = m.layout[0].clone();
        m.params[s.weight] = 1.0;
        m.params[s.bias] = 0.0;
        let x = Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        m.forward(x.view(), Mode::Train).unwrap();
        // mean 3, unbiased variance 14/3
        assert_relative_eq!(m.running_mean[0][0], 0.1 * 3.0, max_relative = 1e-15);
        assert_relative_eq!(m.running_var[0][0], 0.9 + 0.1 * 14.0 / 3.0, max_relative = 1e-15);
    }

    fn loss_of(m: &mut Mlp, x: &Array2<f64>, t: &Array2<f64>, mode: Mode) -> f64 {
        let y = m.forward(x.view(), mode).unwrap();
        0.5 * (&y - t).mapv(|v| v * v).sum()
    }

    fn check_param_gradients(mode: Mode) {
        let spec = MlpSpec {
            input_dim: 5,
            hidden_dims: vec![7, 6, 6, 4],
            output_dim: 3,
            bn_layers: vec![0, 1, 2],
        };
        let mut m = Mlp::new(spec, 21).unwrap();
        // keep running statistics away from the init values for eval mode
        let warm = random_batch(16, 5, 22);
        m.forward(warm.view(), Mode::Train).unwrap();
        for s in m.layout.clone() {
            if let Some(a) = s.prelu {
                m.params[a] = 0.1 + 0.05 * a as f64 / m.params.len() as f64;
            }
        }
        let x = random_batch(16, 5, 23);
        let t = random_batch(16, 3, 24);
        let y = m.forward(x.view(), mode).unwrap();
        let grad = m.backward((&y - &t).view()).unwrap();
        let running = (m.running_mean.clone(), m.running_var.clone());
        let h = 1e-6;
        for i in 0..m.params.len() {
            let orig = m.params[i];
            m.params[i] = orig + h;
            let fp = loss_of(&mut m, &x, &t, mode);
            m.params[i] = orig - h;
            let fm = loss_of(&mut m, &x, &t, mode);
            m.params[i] = orig;
            (m.running_mean, m.running_var) = running.clone();
            let fd = (fp - fm) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs());
            if scale < 1e-6 {
                assert!((fd - grad[i]).abs() < 1e-8, "param {i}: fd {fd} analytic {}", grad[i]);
            } else {
                assert!(
                    (fd - grad[i]).abs() / scale < 1e-4,
                    "param {i}: fd {fd} analytic {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn train_mode_gradients_match_finite_differences() {
        check_param_gradients(Mode::Train);
    }

    #[test]
    fn eval_mode_gradients_match_finite_differences() {
        check_param_gradients(Mode::Eval);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut m = Mlp::new(MlpSpec::standard(4, 2), 5).unwrap();
        let x = random_batch(8, 4, 6);
        m.forward(x.view(), Mode::Train).unwrap();
        let g = m.backward(Array2::zeros((8, 2)).view()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gamma_gradient_identity_case() {
        // single normalized unit, unit output weight: ∂(Σ y)/∂γ = Σ x̂ = 0 and
        // ∂(½Σ y²)/∂γ = γ Σ x̂² = γ·B·var/(var+ε) on the positive side
        let spec = MlpSpec {
            input_dim: 1,
            hidden_dims: vec![1],
            output_dim: 1,
            bn_layers: vec![0],
        };
        let mut m = Mlp::new(spec, 0).unwrap();
        let s = m.layout[0].clone();
        let o = m.layout[1].clone();
        m.params[s.weight] = 1.0;
        m.params[s.bias] = 0.0;
        m.params[s.prelu.unwrap()] = 1.0;
        m.params[o.weight] = 1.0;
        m.params[o.bias] = 0.0;
        let (g_off, _) = s.bn.unwrap();
        m.params[g_off] = 2.0;
        let xs = [1.0, -1.0, 3.0, -3.0];
        let x = Array2::from_shape_vec((4, 1), xs.to_vec()).unwrap();
        let y = m.forward(x.view(), Mode::Train).unwrap();
        let g = m.backward(y.view()).unwrap();
        let var = 5.0;
        let expect = 2.0 * 4.0 * var / (var + BN_EPS);
        assert_relative_eq!(g[g_off], expect, max_relative = 1e-12);
    }
}
