//! Readout network: a stack of 1×1 convolutions over frozen features.
//!
//! Every layer is an affine map across channels applied independently at each
//! pixel, with a ReLU between consecutive layers and none after the last one.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::FeatureStack;
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DEFAULT_HIDDEN: [usize; 3] = [16, 32, 2];
pub const INIT_BIAS: f64 = 0.1;
pub const INIT_SIGMA: f64 = 5.0;

pub const RPAR_MAGIC: &[u8; 4] = b"RPAR";
pub const RPAR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Readout weights plus the log blur bandwidth (`sigma = exp(rho)`).
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutParams {
    pub layers: Vec<Layer>,
    pub rho: f64,
}

/// Gradients with the same layout as [`ReadoutParams`].
pub type ParamGradients = ReadoutParams;

impl ReadoutParams {
    /// All-zero parameters for a channel plan (rho = 0).
    pub fn zeros(plan: &[usize]) -> Result<Self> {
        validate_plan(plan)?;
        Ok(ReadoutParams {
            layers: plan.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            rho: 0.0,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ReadoutParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
            rho: 0.0,
        }
    }

    pub fn channel_plan(&self) -> Vec<usize> {
        let mut plan = vec![self.layers[0].inputs];
        plan.extend(self.layers.iter().map(|l| l.outputs));
        plan
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn sigma(&self) -> f64 {
        self.rho.exp()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum::<usize>() + 1
    }

    /// Layer weights and biases in order, then rho.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out.push(self.rho);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut i = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[i..i + nw]);
            i += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[i..i + nb]);
            i += nb;
        }
        self.rho = flat[i];
        Ok(())
    }

    pub fn add_assign(&mut self, other: &ReadoutParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        self.rho += other.rho;
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|x| *x *= factor);
            l.bias.iter_mut().for_each(|x| *x *= factor);
        }
        self.rho *= factor;
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

fn validate_plan(plan: &[usize]) -> Result<()> {
    if plan.len() < 2 {
        return Err(Error::Invalid(format!(
            "channel plan needs at least 2 entries, got {plan:?}"
        )));
    }
    if plan.contains(&0) {
        return Err(Error::Invalid(format!("zero-width layer in plan {plan:?}")));
    }
    if *plan.last().unwrap() != 1 {
        return Err(Error::Invalid(format!(
            "channel plan must end with a single output channel, got {plan:?}"
        )));
    }
    Ok(())
}

/// The default plan `[channels, 16, 32, 2, 1]`.
pub fn default_plan(channels: usize) -> Vec<usize> {
    let mut plan = vec![channels];
    plan.extend(DEFAULT_HIDDEN);
    plan.push(1);
    plan
}

/// Seeded initialization: weights `N(0, 1/C_in)`, biases 0.1, `sigma = 5`.
pub fn init_params(channel_plan: &[usize], seed: u64) -> Result<ReadoutParams> {
    validate_plan(channel_plan)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = channel_plan
        .windows(2)
        .map(|w| {
            let (inputs, outputs) = (w[0], w[1]);
            let scale = 1.0 / (inputs as f64).sqrt();
            let weight = (0..inputs * outputs)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect();
            Layer {
                inputs,
                outputs,
                weight,
                bias: vec![INIT_BIAS; outputs],
            }
        })
        .collect();
    Ok(ReadoutParams {
        layers,
        rho: INIT_SIGMA.ln(),
    })
}

/// Activations retained by the forward pass.
#[derive(Debug)]
pub struct ForwardCache<'a> {
    input: &'a FeatureStack,
    /// Per layer, `outputs × pixels` pre-activations.
    pre: Vec<Vec<f64>>,
    /// Per hidden layer, `outputs × pixels` post-ReLU activations.
    post: Vec<Vec<f64>>,
}

impl ForwardCache<'_> {
    pub fn pre_activations(&self, layer: usize) -> &[f64] {
        &self.pre[layer]
    }
}

pub fn readout_forward<'a>(
    features: &'a FeatureStack,
    params: &ReadoutParams,
) -> Result<(Grid, ForwardCache<'a>)> {
    if features.channels() != params.input_channels() {
        return Err(Error::Shape(format!(
            "features have {} channels, readout expects {}",
            features.channels(),
            params.input_channels()
        )));
    }
    let pixels = features.height() * features.width();
    let n_layers = params.layers.len();
    let mut pre = Vec::with_capacity(n_layers);
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_layers - 1);

    for (li, layer) in params.layers.iter().enumerate() {
        let mut z = vec![0.0; layer.outputs * pixels];
        for o in 0..layer.outputs {
            let row = &mut z[o * pixels..(o + 1) * pixels];
            row.fill(layer.bias[o]);
            for c in 0..layer.inputs {
                let w = layer.weight[o * layer.inputs + c];
                if li == 0 {
                    for (r, &f) in row.iter_mut().zip(features.channel(c)) {
                        *r += w * f as f64;
                    }
                } else {
                    let a = &post[li - 1][c * pixels..(c + 1) * pixels];
                    for (r, &v) in row.iter_mut().zip(a) {
                        *r += w * v;
                    }
                }
            }
        }
        if li + 1 < n_layers {
            post.push(z.iter().map(|&v| v.max(0.0)).collect());
        }
        pre.push(z);
    }
    let out = Grid::new(
        features.height(),
        features.width(),
        pre[n_layers - 1].clone(),
    )?;
    Ok((
        out,
        ForwardCache {
            input: features,
            pre,
            post,
        },
    ))
}

/// Gradients of the loss with respect to every readout weight and bias,
/// given the gradient with respect to the output map. Feature gradients are
/// not computed; `rho` of the result is left at zero.
pub fn readout_backward(
    cache: &ForwardCache<'_>,
    params: &ReadoutParams,
    grad_out: &Grid,
) -> Result<ParamGradients> {
    let pixels = cache.input.height() * cache.input.width();
    if cache.pre.len() != params.layers.len()
        || cache
            .pre
            .iter()
            .zip(&params.layers)
            .any(|(z, l)| z.len() != l.outputs * pixels)
    {
        return Err(Error::Shape("forward cache does not match params".into()));
    }
    if grad_out.as_slice().len() != pixels {
        return Err(Error::Shape(format!(
            "output gradient has {} cells, cache has {pixels}",
            grad_out.as_slice().len()
        )));
    }

    let mut grads = params.zeros_like();
    let mut delta = grad_out.as_slice().to_vec();
    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let g = &mut grads.layers[li];
        for o in 0..layer.outputs {
            let d = &delta[o * pixels..(o + 1) * pixels];
            g.bias[o] = d.iter().sum();
            for c in 0..layer.inputs {
                let dot: f64 = if li == 0 {
                    d.iter()
                        .zip(cache.input.channel(c))
                        .map(|(&a, &f)| a * f as f64)
                        .sum()
                } else {
                    d.iter()
                        .zip(&cache.post[li - 1][c * pixels..(c + 1) * pixels])
                        .map(|(a, b)| a * b)
                        .sum()
                };
                g.weight[o * layer.inputs + c] = dot;
            }
        }
        if li == 0 {
            break;
        }
        let mut next = vec![0.0; layer.inputs * pixels];
        for o in 0..layer.outputs {
            let d = &delta[o * pixels..(o + 1) * pixels];
            for c in 0..layer.inputs {
                let w = layer.weight[o * layer.inputs + c];
                for (n, &v) in next[c * pixels..(c + 1) * pixels].iter_mut().zip(d) {
                    *n += w * v;
                }
            }
        }
        for (n, &z) in next.iter_mut().zip(&cache.pre[li - 1]) {
            if z <= 0.0 {
                *n = 0.0;
            }
        }
        delta = next;
    }
    Ok(grads)
}

pub fn encode_rpar(params: &ReadoutParams) -> Vec<u8> {
    let plan = params.channel_plan();
    let mut out = Vec::new();
    out.extend_from_slice(RPAR_MAGIC);
    out.extend_from_slice(&RPAR_VERSION.to_le_bytes());
    out.extend_from_slice(&(plan.len() as u32).to_le_bytes());
    for p in &plan {
        out.extend_from_slice(&(*p as u32).to_le_bytes());
    }
    out.extend_from_slice(&params.rho.to_le_bytes());
    for l in &params.layers {
        for v in l.weight.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_rpar(bytes: &[u8]) -> Result<ReadoutParams> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or(
            Error::Truncated {
                expected: pos.saturating_add(n),
                found: bytes.len(),
            },
        )?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != RPAR_MAGIC {
        return Err(Error::Format("bad RPAR magic".into()));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != RPAR_VERSION {
        return Err(Error::Format(format!("unsupported RPAR version {version}")));
    }
    let plan_len = u32_at(take(4)?) as usize;
    if plan_len > 64 {
        return Err(Error::Format(format!("implausible plan length {plan_len}")));
    }
    let mut plan = Vec::with_capacity(plan_len);
    for _ in 0..plan_len {
        plan.push(u32_at(take(4)?) as usize);
    }
    let mut params = ReadoutParams::zeros(&plan)?;
    params.rho = f64::from_le_bytes(take(8)?.try_into().unwrap());
    for l in &mut params.layers {
        for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
    }
    if pos != bytes.len() {
        return Err(Error::Format("trailing bytes after RPAR payload".into()));
    }
    if !params.is_finite() {
        return Err(Error::Format("non-finite readout parameter".into()));
    }
    Ok(params)
}

pub fn save_params(params: &ReadoutParams, path: &Path) -> Result<()> {
    fs::write(path, encode_rpar(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ReadoutParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rpar(&bytes)
}
