use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::{read_json, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y = σ(x)`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Shape of an MLP `N(z) = W_L z_{L-1} + b_L`, `z_l = σ(W_l z_{l-1} + b_l)`.
///
/// `depth` is `L`: the input counts as layer 1, so there are `L - 1` affine
/// maps and `L - 2` hidden layers of size `width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub depth: usize,
    pub width: usize,
    pub input: usize,
    pub output: usize,
}

impl Architecture {
    pub fn new(depth: usize, width: usize, input: usize, output: usize) -> Result<Self> {
        let arch = Self {
            depth,
            width,
            input,
            output,
        };
        arch.check()?;
        Ok(arch)
    }

    fn check(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!(
                "MLP depth must be at least 2, got {}",
                self.depth
            )));
        }
        if self.input == 0 || self.output == 0 || (self.depth > 2 && self.width == 0) {
            return Err(Error::Config("MLP layer sizes must be positive".into()));
        }
        Ok(())
    }

    /// `(rows, cols)` of each weight matrix, first to last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let maps = self.depth - 1;
        (0..maps)
            .map(|k| {
                let cols = if k == 0 { self.input } else { self.width };
                let rows = if k + 1 == maps {
                    self.output
                } else {
                    self.width
                };
                (rows, cols)
            })
            .collect()
    }

    /// Weights plus biases over all layers.
    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerSlots {
    rows: usize,
    cols: usize,
    weight: usize,
    bias: usize,
}

/// Parameters live in one flat vector: for each layer the row-major weight
/// matrix followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    activation: Activation,
    seed: u64,
    params: Vec<f64>,
    slots: Vec<LayerSlots>,
}

/// Activations kept from a batched forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[k]` is the input of affine map `k` (batch x cols).
    inputs: Vec<Array2<f64>>,
}

fn slots_for(arch: &Architecture) -> Vec<LayerSlots> {
    let mut offset = 0;
    arch.layer_shapes()
        .into_iter()
        .map(|(rows, cols)| {
            let s = LayerSlots {
                rows,
                cols,
                weight: offset,
                bias: offset + rows * cols,
            };
            offset += rows * cols + rows;
            s
        })
        .collect()
}

/// Glorot-uniform weights and zero biases from a ChaCha8 stream keyed by
/// `(seed, stream)`.
pub fn init_mlp(seed: u64, arch: Architecture, activation: Activation) -> Result<Mlp> {
    Mlp::init(seed, 0, arch, activation)
}

impl Mlp {
    pub fn init(
        seed: u64,
        stream: u64,
        arch: Architecture,
        activation: Activation,
    ) -> Result<Self> {
        arch.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let slots = slots_for(&arch);
        let mut params = vec![0.0; arch.param_count()];
        for s in &slots {
            let limit = (6.0 / (s.rows + s.cols) as f64).sqrt();
            for w in &mut params[s.weight..s.bias] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(Self {
            arch,
            activation,
            seed,
            params,
            slots,
        })
    }

    pub fn from_params(
        arch: Architecture,
        activation: Activation,
        seed: u64,
        params: Vec<f64>,
    ) -> Result<Self> {
        arch.check()?;
        if params.len() != arch.param_count() {
            return Err(Error::Dimension {
                expected: arch.param_count(),
                actual: params.len(),
                context: "MLP parameter count",
            });
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("MLP parameter {i}")));
        }
        Ok(Self {
            slots: slots_for(&arch),
            arch,
            activation,
            seed,
            params,
        })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_layers(&self) -> usize {
        self.slots.len()
    }

    /// Row-major weight matrix of affine map `k`.
    pub fn weight(&self, k: usize) -> ArrayView2<'_, f64> {
        let s = self.slots[k];
        ArrayView2::from_shape((s.rows, s.cols), &self.params[s.weight..s.bias])
            .expect("slot shape")
    }

    pub fn bias(&self, k: usize) -> ArrayView1<'_, f64> {
        let s = self.slots[k];
        ArrayView1::from(&self.params[s.bias..s.bias + s.rows])
    }

    /// Mutable `(weight, bias)` slices of affine map `k`.
    pub fn layer_mut(&mut self, k: usize) -> (&mut [f64], &mut [f64]) {
        let s = self.slots[k];
        let (w, rest) = self.params[s.weight..].split_at_mut(s.rows * s.cols);
        (w, &mut rest[..s.rows])
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.arch.input {
            return Err(Error::Dimension {
                expected: self.arch.input,
                actual: cols,
                context: "MLP input size",
            });
        }
        Ok(())
    }

    /// Single-vector evaluation.
    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z.len())?;
        let mut x = Array1::from(z.to_vec());
        for k in 0..self.n_layers() {
            let mut y = self.weight(k).dot(&x) + self.bias(k);
            if k + 1 < self.n_layers() {
                y.mapv_inplace(|v| self.activation.apply(v));
            }
            x = y;
        }
        Ok(x.to_vec())
    }

    /// Rows of `x` are independent inputs; returns outputs row by row.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut a = x.to_owned();
        for k in 0..self.n_layers() {
            let mut z = a.dot(&self.weight(k).t());
            z += &self.bias(k);
            inputs.push(a);
            if k + 1 < self.n_layers() {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            a = z;
        }
        Ok((a, ForwardCache { inputs }))
    }

    /// Batched forward pass without keeping activations.
    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = x.to_owned();
        for k in 0..self.n_layers() {
            let mut z = a.dot(&self.weight(k).t());
            z += &self.bias(k);
            if k + 1 < self.n_layers() {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            a = z;
        }
        Ok(a)
    }

    /// Reverse accumulation: given `dL/d output` per row, returns `dL/dθ`
    /// summed over rows, laid out like [`Mlp::params`].
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = d_out.to_owned();
        for k in (0..self.n_layers()).rev() {
            let s = self.slots[k];
            let input = &cache.inputs[k];
            let gw = delta.t().dot(input);
            let gb = delta.sum_axis(Axis(0));
            grad[s.weight..s.bias].copy_from_slice(gw.as_slice().expect("standard layout"));
            grad[s.bias..s.bias + s.rows].copy_from_slice(gb.as_slice().expect("standard layout"));
            if k > 0 {
                let mut d_in = delta.dot(&self.weight(k));
                ndarray::Zip::from(&mut d_in)
                    .and(input)
                    .for_each(|d, &y| *d *= self.activation.derivative_from_output(y));
                delta = d_in;
            }
        }
        if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i}")));
        }
        Ok(grad)
    }

    /// Value and parameter gradient of `loss_tail(N(z))`; `loss_tail`
    /// returns the loss and its gradient with respect to the output.
    pub fn gradient(
        &self,
        z: &[f64],
        loss_tail: impl Fn(&[f64]) -> (f64, Vec<f64>),
    ) -> Result<(f64, Vec<f64>)> {
        let x = ArrayView2::from_shape((1, z.len()), z).expect("row vector");
        let (out, cache) = self.forward_batch(x)?;
        let out = out.row(0).to_vec();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MLP output".into()));
        }
        let (loss, d_out) = loss_tail(&out);
        if !loss.is_finite() || d_out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("loss or its output gradient".into()));
        }
        let d_out =
            Array2::from_shape_vec((1, d_out.len()), d_out).map_err(|_| Error::Dimension {
                expected: self.arch.output,
                actual: 0,
                context: "loss gradient length",
            })?;
        Ok((loss, self.backward(&cache, d_out.view())?))
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            arch: self.arch,
            activation: self.activation,
            seed: self.seed,
            layers: (0..self.n_layers())
                .map(|k| LayerCheckpoint {
                    weights: self.weight(k).iter().copied().collect(),
                    bias: self.bias(k).to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: MlpCheckpoint) -> Result<Self> {
        let shapes = ck.arch.layer_shapes();
        if shapes.len() != ck.layers.len() {
            return Err(Error::Dimension {
                expected: shapes.len(),
                actual: ck.layers.len(),
                context: "checkpoint layer count",
            });
        }
        let mut params = Vec::with_capacity(ck.arch.param_count());
        for ((rows, cols), layer) in shapes.into_iter().zip(ck.layers) {
            if layer.weights.len() != rows * cols || layer.bias.len() != rows {
                return Err(Error::Dimension {
                    expected: rows * cols + rows,
                    actual: layer.weights.len() + layer.bias.len(),
                    context: "checkpoint layer shape",
                });
            }
            params.extend(layer.weights);
            params.extend(layer.bias);
        }
        Self::from_params(ck.arch, ck.activation, ck.seed, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(read_json(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    #[serde(rename = "W")]
    pub weights: Vec<f64>,
    #[serde(rename = "b")]
    pub bias: Vec<f64>,
}

/// `{"arch", "activation", "seed", "layers": [{"W": row-major, "b"}]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub arch: Architecture,
    pub activation: Activation,
    pub seed: u64,
    pub layers: Vec<LayerCheckpoint>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::fd_gradient;

    fn zeroed(arch: Architecture) -> Mlp {
        Mlp::from_params(arch, Activation::Tanh, 0, vec![0.0; arch.param_count()]).unwrap()
    }

    #[test]
    fn zero_network_outputs() {
        let arch = Architecture::new(4, 5, 3, 2).unwrap();
        let mut net = zeroed(arch);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let last = net.n_layers() - 1;
        net.layer_mut(last).1.copy_from_slice(&[1.0, 2.0]);
        assert_eq!(net.forward(&[7.0, 0.5, -1.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn two_layer_is_affine() {
        let arch = Architecture::new(2, 0, 2, 2).unwrap();
        let net = Mlp::from_params(
            arch,
            Activation::Tanh,
            0,
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        )
        .unwrap();
        assert_eq!(net.forward(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let net = init_mlp(0, Architecture::new(3, 4, 2, 1).unwrap(), Activation::Tanh).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
        assert!(Architecture::new(1, 4, 2, 1).is_err());
    }

    #[test]
    fn zero_network_gradient_by_hand() {
        // all activations after the first map are tanh(0) = 0, so only the
        // first weight matrix sees nonzero inputs, and only b_L gets a
        // nonzero gradient (ones) because deltas vanish behind zero weights
        let arch = Architecture::new(3, 3, 2, 2).unwrap();
        let net = zeroed(arch);
        let (loss, g) = net
            .gradient(&[0.7, -0.4], |y| (y.iter().sum(), vec![1.0; y.len()]))
            .unwrap();
        assert_eq!(loss, 0.0);
        let s = net.slots[1];
        assert_eq!(&g[s.bias..], &[1.0, 1.0]);
        assert!(g[..s.bias].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, (depth, width)) in [(2, 0), (3, 7), (4, 5), (3, 16), (4, 12)]
            .into_iter()
            .enumerate()
        {
            let arch = Architecture::new(depth, width, 3, 2).unwrap();
            for act in [Activation::Tanh] {
                let net = Mlp::init(seed as u64, 0, arch, act).unwrap();
                let z = [0.3, -0.8, 0.5];
                let target = [0.2, -0.1];
                let tail = |y: &[f64]| {
                    let l: f64 = y.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
                    (
                        l,
                        y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect(),
                    )
                };
                let (_, g) = net.gradient(&z, tail).unwrap();
                let f = |p: &[f64]| {
                    let n = Mlp::from_params(arch, act, 0, p.to_vec()).unwrap();
                    tail(&n.forward(&z).unwrap()).0
                };
                let fd = fd_gradient(f, net.params(), 1e-6).unwrap();
                for (a, b) in g.iter().zip(&fd) {
                    let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
                    assert!(rel <= 1e-6, "depth {depth}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn gradient_deterministic() {
        let net = init_mlp(3, Architecture::new(3, 8, 4, 3).unwrap(), Activation::Tanh).unwrap();
        let tail = |y: &[f64]| {
            (
                y.iter().map(|v| v * v).sum(),
                y.iter().map(|v| 2.0 * v).collect(),
            )
        };
        let a = net.gradient(&[1.0, 2.0, 3.0, 4.0], tail).unwrap();
        let b = net.gradient(&[1.0, 2.0, 3.0, 4.0], tail).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn relu_network_forward() {
        let arch = Architecture::new(3, 2, 1, 1).unwrap();
        // W1 = [1, -1]^T, b1 = 0, W2 = [1, 1], b2 = 0 -> |x|
        let net = Mlp::from_params(
            arch,
            Activation::Relu,
            0,
            vec![1.0, -1.0, 0.0, 0.0, 1.0, 1.0, 0.0],
        )
        .unwrap();
        assert_eq!(net.forward(&[-2.5]).unwrap(), vec![2.5]);
        assert_eq!(net.forward(&[1.5]).unwrap(), vec![1.5]);
    }

    #[test]
    fn init_is_seeded() {
        let arch = Architecture::new(4, 16, 6, 4).unwrap();
        let a = init_mlp(0, arch, Activation::Tanh).unwrap();
        assert_eq!(a, init_mlp(0, arch, Activation::Tanh).unwrap());
        assert_ne!(
            a.params(),
            init_mlp(1, arch, Activation::Tanh).unwrap().params()
        );
        assert_ne!(
            a.params(),
            Mlp::init(0, 1, arch, Activation::Tanh).unwrap().params()
        );
    }

    #[test]
    fn closed_form_param_count() {
        // 412 -> 512 -> 512 x4 -> 32: (412*512 + 512) + 4 (512*512 + 512) + (512*32 + 32)
        let arch = Architecture::new(7, 512, 412, 32).unwrap();
        assert_eq!(arch.param_count(), 211_456 + 4 * 262_656 + 16_416);
        assert_eq!(
            init_mlp(0, arch, Activation::Tanh).unwrap().params().len(),
            1_278_496
        );
    }

    #[test]
    fn last_layer_homogeneity() {
        let mut net =
            init_mlp(9, Architecture::new(4, 6, 3, 2).unwrap(), Activation::Tanh).unwrap();
        let z = [0.1, 0.2, -0.3];
        let base = net.forward(&z).unwrap();
        let last = net.n_layers() - 1;
        let (w, b) = net.layer_mut(last);
        w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= 2.0);
        let scaled = net.forward(&z).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = init_mlp(4, Architecture::new(3, 5, 2, 3).unwrap(), Activation::Relu).unwrap();
        let path = dir.path().join("net.json");
        net.save(&path).unwrap();
        assert_eq!(Mlp::load(&path).unwrap(), net);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"W\"") && text.contains("\"relu\""));
    }
}
