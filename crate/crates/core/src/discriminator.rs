//! Discriminators `d(x, y)` with hand-derived gradients.
//!
//! A [`Network`] maps one point to a scalar logit (or, for the pair table,
//! one ordered pair to a raw score). A [`Discriminator`] combines a network
//! with one of three heads and an output floor `b`:
//!
//! * pairwise logit difference: `d(x, y) = m(net(x) - net(y))`
//! * factorized independent: `d(x) = m(net(x))`, `d(x, y) = d(x) (1 - d(y))`
//! * tabular: `d(x, y) = m(score[x][y])`
//!
//! where `m(s) = b + (1 - b) sigmoid(s)` keeps every output in `[b, 1]`.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::Point;
use crate::error::{Error, Result};

/// Negative slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Architecture {
    /// Fully connected leaky-rectifier network with a scalar output.
    Mlp { input_dim: usize, hidden: Vec<usize> },
    /// One free logit per finite state.
    PointTable { states: usize },
    /// One free score per ordered pair of finite states.
    PairTable { states: usize },
}

impl Architecture {
    /// `(fan_in, fan_out)` of each dense layer.
    fn layers(&self) -> Vec<(usize, usize)> {
        match self {
            Architecture::Mlp { input_dim, hidden } => {
                let mut sizes = vec![*input_dim];
                sizes.extend(hidden);
                sizes.push(1);
                sizes.windows(2).map(|w| (w[0], w[1])).collect()
            }
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Architecture::Mlp { .. } => self.layers().iter().map(|(i, o)| i * o + o).sum(),
            Architecture::PointTable { states } => *states,
            Architecture::PairTable { states } => states * states,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Architecture::Mlp { input_dim, hidden } => {
                *input_dim > 0 && hidden.iter().all(|h| *h > 0)
            }
            Architecture::PointTable { states } | Architecture::PairTable { states } => {
                *states > 0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("degenerate architecture {self:?}")))
        }
    }
}

/// Architecture plus a flat parameter vector in declared layer order
/// (for each layer: row-major weights `out x in`, then biases).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    params: Vec<f64>,
}

/// Output of [`Network::forward`]: the logit and what backward needs.
#[derive(Debug, Clone)]
pub struct NetForward {
    pub logit: f64,
    cache: NetCache,
}

#[derive(Debug, Clone)]
enum NetCache {
    /// `activations[l]` is the input of layer `l`; `pre[l]` its pre-activation.
    Mlp {
        activations: Vec<Vec<f64>>,
        pre: Vec<Vec<f64>>,
    },
    Table {
        index: usize,
    },
}

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

impl Network {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let params = vec![0.0; arch.param_count()];
        Ok(Network { arch, params })
    }

    /// Hidden layers uniform in `+-sqrt(6 / (fan_in + fan_out))`, biases zero.
    /// The output layer starts at zero so an untrained network has a constant
    /// logit and every head starts at density ratio one.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut net = Network::zeros(arch)?;
        let layers = net.arch.layers();
        let mut offset = 0;
        for (l, (fan_in, fan_out)) in layers.iter().enumerate() {
            let weights = fan_in * fan_out;
            if l + 1 < layers.len() {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for w in &mut net.params[offset..offset + weights] {
                    *w = rng.random_range(-limit..limit);
                }
            }
            offset += weights + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::LengthMismatch(params.len(), arch.param_count()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(Network { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn table_states(&self) -> Option<usize> {
        match self.arch {
            Architecture::PointTable { states } | Architecture::PairTable { states } => {
                Some(states)
            }
            Architecture::Mlp { .. } => None,
        }
    }

    /// Scalar logit `net(x)` with the activations needed for backward.
    pub fn forward(&self, x: &Point) -> Result<NetForward> {
        match &self.arch {
            Architecture::Mlp { input_dim, .. } => {
                if x.dim() != *input_dim {
                    return Err(Error::DimensionMismatch {
                        expected: *input_dim,
                        found: x.dim(),
                    });
                }
                let layers = self.arch.layers();
                let mut activations = Vec::with_capacity(layers.len());
                let mut pre = Vec::with_capacity(layers.len());
                let mut input = x.coords().to_vec();
                let mut offset = 0;
                for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
                    let w = &self.params[offset..offset + fan_in * fan_out];
                    let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
                    let z: Vec<f64> = w
                        .chunks_exact(fan_in)
                        .zip(b)
                        .map(|(row, bias)| {
                            row.iter().zip(&input).map(|(w, a)| w * a).sum::<f64>() + bias
                        })
                        .collect();
                    offset += fan_in * fan_out + fan_out;
                    let next = if l + 1 < layers.len() {
                        z.iter().map(|v| leaky(*v)).collect()
                    } else {
                        z.clone()
                    };
                    activations.push(std::mem::replace(&mut input, next));
                    pre.push(z);
                }
                let logit = input[0];
                if !logit.is_finite() {
                    return Err(Error::NonFinite("network logit".into()));
                }
                Ok(NetForward {
                    logit,
                    cache: NetCache::Mlp { activations, pre },
                })
            }
            Architecture::PointTable { states } => {
                let index = x.as_state(*states)?;
                Ok(NetForward {
                    logit: self.params[index],
                    cache: NetCache::Table { index },
                })
            }
            Architecture::PairTable { .. } => Err(Error::Incompatible(
                "pair table scores ordered pairs, not single points".into(),
            )),
        }
    }

    /// Accumulates `dlogit * d net / d params` into `grads`.
    pub fn backward(&self, fwd: &NetForward, dlogit: f64, grads: &mut [f64]) {
        match &fwd.cache {
            NetCache::Table { index } => grads[*index] += dlogit,
            NetCache::Mlp { activations, pre } => {
                let layers = self.arch.layers();
                let mut offsets = Vec::with_capacity(layers.len());
                let mut offset = 0;
                for (fan_in, fan_out) in &layers {
                    offsets.push(offset);
                    offset += fan_in * fan_out + fan_out;
                }
                let mut delta = vec![dlogit];
                for l in (0..layers.len()).rev() {
                    let (fan_in, fan_out) = layers[l];
                    let off = offsets[l];
                    let input = &activations[l];
                    for o in 0..fan_out {
                        let row = &mut grads[off + o * fan_in..off + (o + 1) * fan_in];
                        for (g, a) in row.iter_mut().zip(input) {
                            *g += delta[o] * a;
                        }
                        grads[off + fan_in * fan_out + o] += delta[o];
                    }
                    if l > 0 {
                        let w = &self.params[off..off + fan_in * fan_out];
                        let mut prev = vec![0.0; fan_in];
                        for (row, d) in w.chunks_exact(fan_in).zip(&delta) {
                            for (p, wv) in prev.iter_mut().zip(row) {
                                *p += wv * d;
                            }
                        }
                        for (p, z) in prev.iter_mut().zip(&pre[l - 1]) {
                            *p *= leaky_grad(*z);
                        }
                        delta = prev;
                    }
                }
            }
        }
    }

    /// Signs of every hidden pre-activation. Two parameter settings with the
    /// same pattern at an input lie on one linear piece of the network there.
    pub fn activation_pattern(&self, x: &Point) -> Result<Vec<bool>> {
        let fwd = self.forward(x)?;
        Ok(match fwd.cache {
            NetCache::Mlp { pre, .. } => {
                let hidden = pre.len().saturating_sub(1);
                pre[..hidden].iter().flatten().map(|z| *z > 0.0).collect()
            }
            NetCache::Table { .. } => Vec::new(),
        })
    }

    fn pair_index(&self, x: &Point, y: &Point) -> Result<(usize, usize)> {
        let states = self.table_states().unwrap_or(0);
        Ok((x.as_state(states)?, y.as_state(states)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    PairwiseLogitDiff,
    FactorizedIndependent,
    Tabular,
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// A network, a head and the output floor `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub head: HeadKind,
    pub floor: f64,
    pub net: Network,
}

/// Forward values of one ordered pair, with caches for [`Discriminator::pair_backward`].
#[derive(Debug, Clone)]
pub struct PairForward {
    pub d_xy: f64,
    pub d_yx: f64,
    /// Per-point values of the factorized head.
    pub d_x: Option<f64>,
    pub d_y: Option<f64>,
    cache: PairCache,
}

#[derive(Debug, Clone)]
enum PairCache {
    Points {
        fx: NetForward,
        fy: NetForward,
    },
    Table {
        xy: usize,
        yx: usize,
    },
}

/// Partial derivatives of a scalar objective w.r.t. the values of a [`PairForward`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairPartials {
    pub d_xy: f64,
    pub d_yx: f64,
    pub d_x: f64,
    pub d_y: f64,
}

impl Discriminator {
    pub fn new(head: HeadKind, floor: f64, net: Network) -> Result<Self> {
        let disc = Discriminator { head, floor, net };
        disc.validate()?;
        Ok(disc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.floor) {
            return Err(Error::InvalidSpec(format!(
                "output floor must lie in [0, 1), got {}",
                self.floor
            )));
        }
        let table = matches!(self.net.arch, Architecture::PairTable { .. });
        if table != (self.head == HeadKind::Tabular) {
            return Err(Error::Incompatible(format!(
                "{:?} head cannot use {:?}",
                self.head, self.net.arch
            )));
        }
        Ok(())
    }

    /// `b + (1 - b) sigmoid(s)`.
    pub fn squash(&self, s: f64) -> f64 {
        self.floor + (1.0 - self.floor) * sigmoid(s)
    }

    /// `(m(s), m(-s))`. The smaller sigmoid is evaluated directly and the
    /// larger as its complement, so at `b = 0` the two sum to exactly one.
    fn squash_pair(&self, s: f64) -> (f64, f64) {
        let lo = sigmoid(-s.abs());
        let hi = 1.0 - lo;
        let (pos, neg) = if s >= 0.0 { (hi, lo) } else { (lo, hi) };
        if self.floor == 0.0 {
            (pos, neg)
        } else {
            (
                self.floor + (1.0 - self.floor) * pos,
                self.floor + (1.0 - self.floor) * neg,
            )
        }
    }

    fn squash_grad(&self, s: f64) -> f64 {
        let sg = sigmoid(s);
        (1.0 - self.floor) * sg * (1.0 - sg)
    }

    /// Per-point value `d(x)` of the factorized head.
    pub fn point_value(&self, x: &Point) -> Result<f64> {
        if self.head != HeadKind::FactorizedIndependent {
            return Err(Error::Incompatible(
                "per-point values exist only for the factorized head".into(),
            ));
        }
        Ok(self.squash(self.net.forward(x)?.logit))
    }

    pub fn pair_forward(&self, x: &Point, y: &Point) -> Result<PairForward> {
        match self.head {
            HeadKind::PairwiseLogitDiff => {
                let fx = self.net.forward(x)?;
                let fy = self.net.forward(y)?;
                let (d_xy, d_yx) = self.squash_pair(fx.logit - fy.logit);
                Ok(PairForward {
                    d_xy,
                    d_yx,
                    d_x: None,
                    d_y: None,
                    cache: PairCache::Points { fx, fy },
                })
            }
            HeadKind::FactorizedIndependent => {
                let fx = self.net.forward(x)?;
                let fy = self.net.forward(y)?;
                let dx = self.squash(fx.logit);
                let dy = self.squash(fy.logit);
                Ok(PairForward {
                    d_xy: dx * (1.0 - dy),
                    d_yx: dy * (1.0 - dx),
                    d_x: Some(dx),
                    d_y: Some(dy),
                    cache: PairCache::Points { fx, fy },
                })
            }
            HeadKind::Tabular => {
                let (ix, iy) = self.net.pair_index(x, y)?;
                let k = self.net.table_states().unwrap_or(0);
                let (xy, yx) = (ix * k + iy, iy * k + ix);
                Ok(PairForward {
                    d_xy: self.squash(self.net.params[xy]),
                    d_yx: self.squash(self.net.params[yx]),
                    d_x: None,
                    d_y: None,
                    cache: PairCache::Table { xy, yx },
                })
            }
        }
    }

    /// Accumulates the parameter gradient of an objective whose partials
    /// w.r.t. the pair values are `g`.
    pub fn pair_backward(&self, fwd: &PairForward, g: PairPartials, grads: &mut [f64]) {
        match (&fwd.cache, self.head) {
            (PairCache::Points { fx, fy }, HeadKind::PairwiseLogitDiff) => {
                let delta = fx.logit - fy.logit;
                // m'(s) is even, so d/dDelta of m(-Delta) is -m'(Delta)
                let dd = (g.d_xy - g.d_yx) * self.squash_grad(delta);
                self.net.backward(fx, dd, grads);
                self.net.backward(fy, -dd, grads);
            }
            (PairCache::Points { fx, fy }, HeadKind::FactorizedIndependent) => {
                let dx = fwd.d_x.unwrap_or_default();
                let dy = fwd.d_y.unwrap_or_default();
                let gx = g.d_x + g.d_xy * (1.0 - dy) - g.d_yx * dy;
                let gy = g.d_y - g.d_xy * dx + g.d_yx * (1.0 - dx);
                self.net.backward(fx, gx * self.squash_grad(fx.logit), grads);
                self.net.backward(fy, gy * self.squash_grad(fy.logit), grads);
            }
            (PairCache::Table { xy, yx }, _) => {
                grads[*xy] += g.d_xy * self.squash_grad(self.net.params[*xy]);
                grads[*yx] += g.d_yx * self.squash_grad(self.net.params[*yx]);
            }
            _ => unreachable!("pair cache always matches the head that built it"),
        }
    }

    /// `d(x, y)`.
    pub fn eval(&self, x: &Point, y: &Point) -> Result<f64> {
        Ok(self.pair_forward(x, y)?.d_xy)
    }

    /// `d(x, y) / d(y, x)`; errors on a zero denominator.
    pub fn ratio(&self, x: &Point, y: &Point) -> Result<f64> {
        let f = self.pair_forward(x, y)?;
        if f.d_yx <= 0.0 {
            return Err(Error::ZeroDenominator);
        }
        Ok(f.d_xy / f.d_yx)
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: usize) -> Self {
        AdamState {
            config,
            first: vec![0.0; params],
            second: vec![0.0; params],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::LengthMismatch(params.len(), grads.len()));
    }
    if state.first.len() != params.len() {
        return Err(Error::LengthMismatch(state.first.len(), params.len()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"IMHW";
pub const CHECKPOINT_FORMAT: &str = "imhw/1";

/// JSON header of an `.imhw` checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub architecture: Architecture,
    pub head: HeadKind,
    pub floor: f64,
    pub seed: u64,
    pub iteration: u64,
    pub param_count: usize,
}

/// Writes `IMHW`, the header length as u64 LE, the JSON header, then the
/// parameters as f64 LE in declared layer order.
pub fn write_checkpoint<W: Write>(
    mut w: W,
    disc: &Discriminator,
    seed: u64,
    iteration: u64,
) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        architecture: disc.net.arch.clone(),
        head: disc.head,
        floor: disc.floor,
        seed,
        iteration,
        param_count: disc.net.params.len(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in &disc.net.params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, Discriminator)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {}", header.format)));
    }
    if header.param_count != header.architecture.param_count() {
        return Err(Error::Checkpoint("parameter count does not match architecture".into()));
    }
    let mut raw = vec![0u8; header.param_count * 8];
    r.read_exact(&mut raw)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let net = Network::from_params(header.architecture.clone(), params)?;
    let disc = Discriminator::new(header.head, header.floor, net)?;
    Ok((header, disc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn mlp(input_dim: usize) -> Architecture {
        Architecture::Mlp {
            input_dim,
            hidden: vec![8, 8],
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Network::zeros(mlp(3)).unwrap();
        let x = Point::new(vec![1.0, -4.0, 2.5]).unwrap();
        assert_eq!(net.forward(&x).unwrap().logit, 0.0);
    }

    #[test]
    fn single_linear_layer_sums_coordinates() {
        let arch = Architecture::Mlp {
            input_dim: 3,
            hidden: vec![],
        };
        let net = Network::from_params(arch, vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let x = Point::new(vec![1.0, -4.0, 2.5]).unwrap();
        assert_eq!(net.forward(&x).unwrap().logit, -0.5);
    }

    #[test]
    fn layout_and_param_count() {
        let arch = Architecture::Mlp {
            input_dim: 1,
            hidden: vec![100, 100],
        };
        assert_eq!(arch.param_count(), 100 + 100 + 100 * 100 + 100 + 100 + 1);
    }

    #[test]
    fn pairwise_equal_logits() {
        let net = Network::zeros(mlp(1)).unwrap();
        let d = Discriminator::new(HeadKind::PairwiseLogitDiff, 0.1, net).unwrap();
        let (x, y) = (Point::scalar(0.3), Point::scalar(-2.0));
        assert!((d.eval(&x, &y).unwrap() - (0.1 + 0.9 / 2.0)).abs() < 1e-15);
        assert_eq!(d.ratio(&x, &y).unwrap(), 1.0);
    }

    #[test]
    fn pairwise_ratio_is_exp_logit_gap_at_zero_floor() {
        let net = Network::from_params(
            Architecture::PointTable { states: 3 },
            vec![0.5, -1.0, 2.0],
        )
        .unwrap();
        let d = Discriminator::new(HeadKind::PairwiseLogitDiff, 0.0, net).unwrap();
        let r = d.ratio(&Point::state(2), &Point::state(1)).unwrap();
        assert!((r - 3.0f64.exp()).abs() < 1e-12 * r);
        let s = d.eval(&Point::state(2), &Point::state(1)).unwrap()
            + d.eval(&Point::state(1), &Point::state(2)).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn factorized_saturation() {
        let net = Network::from_params(
            Architecture::PointTable { states: 2 },
            vec![40.0, -40.0],
        )
        .unwrap();
        let b = 0.1;
        let d = Discriminator::new(HeadKind::FactorizedIndependent, b, net).unwrap();
        let v = d.eval(&Point::state(0), &Point::state(1)).unwrap();
        assert!((v - (1.0 - b)).abs() < 1e-12);
    }

    #[test]
    fn head_architecture_compatibility() {
        let table = Network::zeros(Architecture::PairTable { states: 2 }).unwrap();
        assert!(Discriminator::new(HeadKind::PairwiseLogitDiff, 0.1, table.clone()).is_err());
        assert!(Discriminator::new(HeadKind::Tabular, 0.1, table).is_ok());
        let point = Network::zeros(Architecture::PointTable { states: 2 }).unwrap();
        assert!(Discriminator::new(HeadKind::Tabular, 0.1, point.clone()).is_err());
        assert!(Discriminator::new(HeadKind::Tabular, 1.0, point).is_err());
    }

    #[test]
    fn tabular_index_out_of_range() {
        let table = Network::zeros(Architecture::PairTable { states: 2 }).unwrap();
        let d = Discriminator::new(HeadKind::Tabular, 0.1, table).unwrap();
        assert!(matches!(
            d.eval(&Point::state(2), &Point::state(0)),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut params = vec![1.0, -2.0, 3.0];
        let mut state = AdamState::new(AdamConfig::default(), 3);
        for _ in 0..10 {
            adam_step(&mut params, &[0.0; 3], &mut state).unwrap();
        }
        assert_eq!(params, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_constant_gradient_moves_at_learning_rate() {
        let mut params = vec![0.0, 0.0];
        let mut state = AdamState::new(AdamConfig::default(), 2);
        let mut last = params.clone();
        for _ in 0..200 {
            adam_step(&mut params, &[3.0, -0.01], &mut state).unwrap();
            let step: Vec<f64> = params.iter().zip(&last).map(|(a, b)| a - b).collect();
            assert!((step[0] + 1e-3).abs() < 1e-8);
            assert!((step[1] - 1e-3).abs() < 1e-5);
            last = params.clone();
        }
    }

    #[test]
    fn adam_rejects_nonfinite() {
        let mut params = vec![0.0];
        let mut state = AdamState::new(AdamConfig::default(), 1);
        assert!(adam_step(&mut params, &[f64::NAN], &mut state).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_corruption() {
        let net = Network::init(mlp(1), &mut seeded(4)).unwrap();
        let d = Discriminator::new(HeadKind::PairwiseLogitDiff, 0.0, net).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &d, 9, 250).unwrap();
        let (header, back) = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(header.iteration, 250);
        assert_eq!(header.seed, 9);
        assert_eq!(back, d);

        let mut truncated = bytes.clone();
        truncated.pop();
        assert!(read_checkpoint(&truncated[..]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
    }

    #[test]
    fn init_zeroes_output_layer() {
        let net = Network::init(mlp(2), &mut seeded(1)).unwrap();
        let x = Point::new(vec![0.2, 0.9]).unwrap();
        assert_eq!(net.forward(&x).unwrap().logit, 0.0);
        assert!(net.params().iter().any(|p| *p != 0.0));
    }
}
