//! Fixed-topology multilayer perceptron with exact reverse-mode gradients
//! and second-order meta-gradients.
//!
//! Hidden layers use tanh (smooth second derivatives, which the
//! second-order meta-gradient needs); the output layer is linear. The
//! meta-gradient differentiates the adapted query loss through the inner
//! gradient steps using Hessian-vector products (Pearlmutter's R-operator),
//! so no external autodiff is involved.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One dense layer: `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Full parameter set of the network (the θ of the meta-learning loop).
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// A single training pair: relative desired state in, next-position
/// displacement out.
#[derive(Clone, Debug)]
pub struct Sample {
    pub input: DVector<f64>,
    pub target: DVector<f64>,
}

/// All training pairs collected under one fault condition.
#[derive(Clone, Debug, Default)]
pub struct TaskDataset {
    pub samples: Vec<Sample>,
    pub fault_id: String,
}

impl TaskDataset {
    pub fn new(fault_id: impl Into<String>) -> Self {
        TaskDataset {
            samples: Vec::new(),
            fault_id: fault_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl MlpParams {
    /// Seeded uniform fan-in initialization for the given layer sizes,
    /// e.g. `[6, 40, 40, 3]`.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Self {
        assert!(layer_sizes.len() >= 2, "need at least input and output");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|io| {
                let (n_in, n_out) = (io[0], io[1]);
                let bound = 1.0 / (n_in as f64).sqrt();
                let w = DMatrix::from_fn(n_out, n_in, |_, _| rng.gen_range(-bound..bound));
                let b = DVector::from_fn(n_out, |_, _| rng.gen_range(-bound..bound));
                Layer { w, b }
            })
            .collect();
        MlpParams { layers }
    }

    /// All-zero parameters with the given topology.
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        let layers = layer_sizes
            .windows(2)
            .map(|io| Layer {
                w: DMatrix::zeros(io[1], io[0]),
                b: DVector::zeros(io[1]),
            })
            .collect();
        MlpParams { layers }
    }

    /// Layer sizes, input first.
    pub fn topology(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].w.ncols()];
        sizes.extend(self.layers.iter().map(|l| l.w.nrows()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    /// `self += scale * other`, elementwise over all weights and biases.
    pub fn add_scaled(&mut self, scale: f64, other: &MlpParams) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            l.w.iter_mut().zip(o.w.iter()).for_each(|(a, b)| *a += scale * b);
            l.b.iter_mut().zip(o.b.iter()).for_each(|(a, b)| *a += scale * b);
        }
    }

    /// Euclidean norm over all parameters.
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.iter().chain(l.b.iter()).map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Flat copy of all parameters, layer by layer, weights
    /// (column-major) then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) for a known topology.
    pub fn from_flat(layer_sizes: &[usize], flat: &[f64]) -> Result<Self> {
        let mut params = MlpParams::zeros(layer_sizes);
        let expected: usize = layer_sizes.windows(2).map(|io| io[1] * io[0] + io[1]).sum();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} values, topology {:?} needs {}",
                flat.len(),
                layer_sizes,
                expected
            )));
        }
        let mut it = flat.iter();
        for l in &mut params.layers {
            for v in l.w.iter_mut() {
                *v = *it.next().unwrap();
            }
            for v in l.b.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        Ok(params)
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
    }
}

/// Versioned on-disk checkpoint: topology header, seed, flat parameters.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub topology: Vec<usize>,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_params(params: &MlpParams, seed: u64) -> Self {
        Checkpoint {
            version: 1,
            topology: params.topology(),
            seed,
            params: params.flatten(),
        }
    }

    pub fn to_params(&self) -> Result<MlpParams> {
        MlpParams::from_flat(&self.topology, &self.params)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        // validate shapes eagerly
        ckpt.to_params()?;
        Ok(ckpt)
    }
}

/// Forward pass returning all layer activations (input included).
fn forward_cached(params: &MlpParams, input: &DVector<f64>) -> Vec<DVector<f64>> {
    let n_layers = params.layers.len();
    let mut acts = Vec::with_capacity(n_layers + 1);
    acts.push(input.clone());
    for (i, l) in params.layers.iter().enumerate() {
        let mut z = &l.w * acts.last().unwrap() + &l.b;
        if i + 1 < n_layers {
            z.apply(|v| *v = v.tanh());
        }
        acts.push(z);
    }
    acts
}

/// Network output for a single input.
pub fn forward(params: &MlpParams, input: &DVector<f64>) -> DVector<f64> {
    forward_cached(params, input).pop().unwrap()
}

/// Sum of squared l2 prediction errors over the dataset.
pub fn loss(params: &MlpParams, data: &TaskDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(data
        .samples
        .iter()
        .map(|s| (forward(params, &s.input) - &s.target).norm_squared())
        .sum())
}

/// Exact reverse-mode gradient of [`loss`].
pub fn grad(params: &MlpParams, data: &TaskDataset) -> Result<MlpParams> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut g = MlpParams::zeros(&params.topology());
    let n_layers = params.layers.len();
    for s in &data.samples {
        let acts = forward_cached(params, &s.input);
        // delta at the linear output layer
        let mut delta = 2.0 * (&acts[n_layers] - &s.target);
        for l in (0..n_layers).rev() {
            g.layers[l].w += &delta * acts[l].transpose();
            g.layers[l].b += &delta;
            if l > 0 {
                let back = params.layers[l].w.transpose() * &delta;
                // tanh'(z) = 1 - a^2 at the hidden activation
                delta = back.component_mul(&acts[l].map(|a| 1.0 - a * a));
            }
        }
    }
    Ok(g)
}

/// Hessian-vector product of the dataset loss at `params` with direction
/// `v`, computed with the R-operator pushed through the backward pass.
pub fn hvp(params: &MlpParams, data: &TaskDataset, v: &MlpParams) -> Result<MlpParams> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_layers = params.layers.len();
    let mut hv = MlpParams::zeros(&params.topology());
    for s in &data.samples {
        let acts = forward_cached(params, &s.input);
        // R-forward: directional derivative of every activation
        let mut racts: Vec<DVector<f64>> = Vec::with_capacity(n_layers + 1);
        racts.push(DVector::zeros(s.input.len()));
        for (i, l) in params.layers.iter().enumerate() {
            let rz = &l.w * &racts[i] + &v.layers[i].w * &acts[i] + &v.layers[i].b;
            if i + 1 < n_layers {
                racts.push(rz.component_mul(&acts[i + 1].map(|a| 1.0 - a * a)));
            } else {
                racts.push(rz);
            }
        }
        // R-backward
        let mut delta = 2.0 * (&acts[n_layers] - &s.target);
        let mut rdelta = 2.0 * racts[n_layers].clone();
        for l in (0..n_layers).rev() {
            hv.layers[l].w += &rdelta * acts[l].transpose() + &delta * racts[l].transpose();
            hv.layers[l].b += &rdelta;
            if l > 0 {
                let back = params.layers[l].w.transpose() * &delta;
                let rback =
                    v.layers[l].w.transpose() * &delta + params.layers[l].w.transpose() * &rdelta;
                let sp = acts[l].map(|a| 1.0 - a * a);
                let rsp = -2.0 * acts[l].component_mul(&racts[l]);
                rdelta = rback.component_mul(&sp) + back.component_mul(&rsp);
                delta = back.component_mul(&sp);
            }
        }
    }
    Ok(hv)
}

/// Inner-loop adaptation: `inner_steps` plain gradient steps of size
/// `alpha` on `data`, starting from `params`.
pub fn adapt(params: &MlpParams, data: &TaskDataset, alpha: f64, inner_steps: usize) -> Result<MlpParams> {
    let mut theta = params.clone();
    for _ in 0..inner_steps {
        let g = grad(&theta, data)?;
        theta.add_scaled(-alpha, &g);
    }
    Ok(theta)
}

/// Gradient with respect to `params` of the query loss evaluated after
/// `inner_steps` inner gradient steps on the support set.
///
/// `second_order = false` selects the FOMAML approximation, which drops
/// the curvature terms and returns the plain query gradient at the
/// adapted parameters.
pub fn meta_grad(
    params: &MlpParams,
    support: &TaskDataset,
    query: &TaskDataset,
    alpha: f64,
    inner_steps: usize,
    second_order: bool,
) -> Result<MlpParams> {
    if support.is_empty() || query.is_empty() {
        return Err(Error::EmptyDataset);
    }
    assert!(inner_steps >= 1, "meta_grad requires at least one inner step");
    // inner trajectory θ_0 .. θ_n
    let mut thetas = Vec::with_capacity(inner_steps + 1);
    thetas.push(params.clone());
    for t in 0..inner_steps {
        let g = grad(&thetas[t], support)?;
        let mut next = thetas[t].clone();
        next.add_scaled(-alpha, &g);
        thetas.push(next);
    }
    let mut v = grad(&thetas[inner_steps], query)?;
    if second_order {
        // back-propagate through θ_{t+1} = θ_t − α ∇L_s(θ_t):
        // v ← (I − α H_s(θ_t)) v
        for t in (0..inner_steps).rev() {
            let hv = hvp(&thetas[t], support, &v)?;
            v.add_scaled(-alpha, &hv);
        }
    }
    Ok(v)
}
