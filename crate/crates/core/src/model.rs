//! The network: a shared encoder whose output is split positionally into a
//! bias block (first `rep_dim_a` columns) and an outcome block (remaining
//! `rep_dim_bc` columns), a decoder reconstructing the input from both blocks,
//! and one outcome head per treatment that reads only the outcome block.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Activation, Dense, InitScheme, LayerCache, Matrix, ParamTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// Hidden widths before the representation layer.
    pub encoder_layers: Vec<usize>,
    /// Width of the bias block (`m`).
    pub rep_dim_a: usize,
    /// Width of the outcome block (`n`).
    pub rep_dim_bc: usize,
    /// Hidden widths between the representation and the reconstruction.
    pub decoder_layers: Vec<usize>,
    /// Hidden widths of each outcome head before its scalar output.
    pub head_layers: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub init: InitScheme,
}

impl NetworkConfig {
    /// Three 200-unit representation layers split 50/150, a mirrored decoder and
    /// three 100-unit layers per head.
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            encoder_layers: vec![200, 200],
            rep_dim_a: 50,
            rep_dim_bc: 150,
            decoder_layers: vec![200, 200],
            head_layers: vec![100, 100, 100],
            activation: Activation::Elu,
            init: InitScheme::default(),
        }
    }

    pub fn rep_dim(&self) -> usize {
        self.rep_dim_a + self.rep_dim_bc
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be at least 1"));
        }
        if self.rep_dim_a == 0 || self.rep_dim_bc == 0 {
            return Err(Error::config(format!(
                "representation split needs rep_dim_a >= 1 and rep_dim_bc >= 1, got {} and {}",
                self.rep_dim_a, self.rep_dim_bc
            )));
        }
        let widths = self
            .encoder_layers
            .iter()
            .chain(&self.decoder_layers)
            .chain(&self.head_layers);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        Ok(())
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    fn build(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        output_act: Activation,
        init: InitScheme,
        rng: &mut SeededRng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input;
        for &width in hidden {
            layers.push(Dense::new(fan_in, width, hidden_act, rng, init));
            fan_in = width;
        }
        layers.push(Dense::new(fan_in, output, output_act, rng, init));
        Self { layers }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Vec<LayerCache>> {
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = caches.last().map_or(x, |c| &c.output);
            let cache = layer.forward(input)?;
            caches.push(cache);
        }
        Ok(caches)
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.clone();
        for layer in &self.layers {
            out = layer.infer(&out)?;
        }
        Ok(out)
    }

    /// Accumulates gradients and returns d(loss)/d(input).
    pub fn backward(&mut self, caches: &[LayerCache], upstream: Matrix) -> Result<Matrix> {
        let mut grad = upstream;
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            grad = layer.backward(cache, &grad)?;
        }
        Ok(grad)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }
}

/// Which treatment's outcome head to use.
fn head_index(t: u8) -> Result<usize> {
    match t {
        0 | 1 => Ok(t as usize),
        other => Err(Error::contract(format!("treatment must be 0 or 1, got {other}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsbNet {
    pub config: NetworkConfig,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub head0: Mlp,
    pub head1: Mlp,
}

impl RsbNet {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(seed);
        let act = config.activation;
        let init = config.init;
        let encoder = Mlp::build(config.input_dim, &config.encoder_layers, config.rep_dim(), act, act, init, &mut rng);
        let decoder = Mlp::build(
            config.rep_dim(),
            &config.decoder_layers,
            config.input_dim,
            act,
            Activation::Identity,
            init,
            &mut rng,
        );
        let head0 = Mlp::build(config.rep_dim_bc, &config.head_layers, 1, act, Activation::Identity, init, &mut rng);
        let head1 = Mlp::build(config.rep_dim_bc, &config.head_layers, 1, act, Activation::Identity, init, &mut rng);
        Ok(Self {
            config,
            encoder,
            decoder,
            head0,
            head1,
        })
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.config.input_dim {
            return Err(Error::config(format!(
                "input has {} features, network expects {}",
                x.cols(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Splits a representation into its bias and outcome blocks.
    pub fn split(&self, phi: &Matrix) -> Result<(Matrix, Matrix)> {
        let m = self.config.rep_dim_a;
        Ok((phi.select_cols(0..m)?, phi.select_cols(m..phi.cols())?))
    }

    pub fn encode(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_input(x)?;
        let phi = self.encoder.infer(x)?;
        self.split(&phi)
    }

    pub fn decode(&self, phi_a: &Matrix, phi_bc: &Matrix) -> Result<Matrix> {
        if phi_a.cols() != self.config.rep_dim_a || phi_bc.cols() != self.config.rep_dim_bc {
            return Err(Error::config(format!(
                "decoder expects blocks of width {}+{}, got {}+{}",
                self.config.rep_dim_a,
                self.config.rep_dim_bc,
                phi_a.cols(),
                phi_bc.cols()
            )));
        }
        self.decoder.infer(&phi_a.hcat(phi_bc)?)
    }

    pub fn head(&self, t: u8) -> Result<&Mlp> {
        Ok(if head_index(t)? == 1 { &self.head1 } else { &self.head0 })
    }

    pub(crate) fn head_mut(&mut self, t: u8) -> Result<&mut Mlp> {
        Ok(if head_index(t)? == 1 { &mut self.head1 } else { &mut self.head0 })
    }

    /// Outcome under treatment `t` from the outcome block alone.
    pub fn predict(&self, phi_bc: &Matrix, t: u8) -> Result<Matrix> {
        if phi_bc.cols() != self.config.rep_dim_bc {
            return Err(Error::config(format!(
                "heads expect {} outcome features, got {}",
                self.config.rep_dim_bc,
                phi_bc.cols()
            )));
        }
        self.head(t)?.infer(phi_bc)
    }

    /// Routes every row through the head of its own treatment.
    pub fn predict_factual(&self, phi_bc: &Matrix, t: &[u8]) -> Result<Matrix> {
        if phi_bc.rows() != t.len() {
            return Err(Error::contract("one treatment per row required"));
        }
        let (treated, control) = crate::losses::arms(t)?;
        let mut out = Matrix::zeros(t.len(), 1);
        for (idx, arm) in [(control, 0u8), (treated, 1u8)] {
            if idx.is_empty() {
                continue;
            }
            let y = self.predict(&phi_bc.select_rows(&idx), arm)?;
            out.scatter_rows(&idx, &y)?;
        }
        Ok(out)
    }

    /// Both potential outcomes `(ŷ⁰, ŷ¹)` from one encoder pass.
    pub fn predict_outcomes(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let (_, phi_bc) = self.encode(x)?;
        Ok((self.predict(&phi_bc, 0)?, self.predict(&phi_bc, 1)?))
    }

    /// Estimated individual effect `ŷ¹ - ŷ⁰`.
    pub fn predict_ite(&self, x: &Matrix) -> Result<Matrix> {
        let (y0, y1) = self.predict_outcomes(x)?;
        y1.sub(&y0)
    }

    /// Every trainable tensor in a fixed order: encoder, decoder, head0, head1.
    pub fn params(&self) -> impl Iterator<Item = &ParamTensor> {
        [&self.encoder, &self.decoder, &self.head0, &self.head1]
            .into_iter()
            .flat_map(|mlp| mlp.layers.iter())
            .flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        [&mut self.encoder, &mut self.decoder, &mut self.head0, &mut self.head1]
            .into_iter()
            .flat_map(|mlp| mlp.layers.iter_mut())
            .flat_map(|l| l.params_mut())
    }

    /// Weight matrices only; biases are not penalized.
    pub fn weight_matrices(&self) -> impl Iterator<Item = &Matrix> {
        [&self.encoder, &self.decoder, &self.head0, &self.head1]
            .into_iter()
            .flat_map(|mlp| mlp.layers.iter())
            .map(|l| &l.weight.value)
    }

    pub fn zero_grads(&mut self) {
        self.params_mut().for_each(ParamTensor::zero_grad);
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|p| p.value.as_slice().len()).sum()
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.params().flat_map(|p| p.value.as_slice().iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params().flat_map(|p| p.grad.as_slice().iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let slot = p.value.as_mut_slice();
            slot.copy_from_slice(&values[offset..offset + slot.len()]);
            offset += slot.len();
        }
        Ok(())
    }

    fn named_layers(&self) -> impl Iterator<Item = (String, &Dense)> {
        [
            ("encoder", &self.encoder),
            ("decoder", &self.decoder),
            ("head0", &self.head0),
            ("head1", &self.head1),
        ]
        .into_iter()
        .flat_map(|(name, mlp)| mlp.layers.iter().enumerate().map(move |(i, l)| (format!("{name}.{i}"), l)))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = BTreeMap::new();
        for (name, layer) in self.named_layers() {
            for (suffix, m) in [("weight", &layer.weight.value), ("bias", &layer.bias.value)] {
                tensors.insert(
                    format!("{name}.{suffix}"),
                    TensorRecord {
                        shape: [m.rows(), m.cols()],
                        values: m.as_slice().to_vec(),
                    },
                );
            }
        }
        Checkpoint {
            config: self.config.clone(),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut net = RsbNet::new(ckpt.config.clone(), 0)?;
        let names: Vec<String> = net.named_layers().map(|(n, _)| n).collect();
        let layers = [&mut net.encoder, &mut net.decoder, &mut net.head0, &mut net.head1]
            .into_iter()
            .flat_map(|mlp| mlp.layers.iter_mut());
        for (name, layer) in names.iter().zip(layers) {
            for (suffix, slot) in [("weight", &mut layer.weight), ("bias", &mut layer.bias)] {
                let key = format!("{name}.{suffix}");
                let record = ckpt
                    .tensors
                    .get(&key)
                    .ok_or_else(|| Error::config(format!("checkpoint is missing tensor {key}")))?;
                let [r, c] = record.shape;
                if (r, c) != slot.shape() {
                    return Err(Error::config(format!(
                        "checkpoint tensor {key} has shape {r}x{c}, config implies {:?}",
                        slot.shape()
                    )));
                }
                *slot = ParamTensor::new(Matrix::new(r, c, record.values.clone())?);
            }
        }
        if ckpt.tensors.len() != names.len() * 2 {
            return Err(Error::config("checkpoint has tensors the configuration does not use"));
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Serialized network: configuration plus every tensor by layer name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> NetworkConfig {
        NetworkConfig {
            input_dim: 6,
            encoder_layers: vec![8],
            rep_dim_a: 2,
            rep_dim_bc: 3,
            decoder_layers: vec![8],
            head_layers: vec![4],
            activation: Activation::Elu,
            init: InitScheme::ScaledNormal { gain: 1.0 },
        }
    }

    fn random_input(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = SeededRng::new(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.normal(0.0, 1.0))
    }

    #[test]
    fn default_shapes() {
        let net = RsbNet::new(NetworkConfig::new(25), 1).unwrap();
        let x = random_input(32, 25, 2);
        let (a, bc) = net.encode(&x).unwrap();
        assert_eq!(a.shape(), (32, 50));
        assert_eq!(bc.shape(), (32, 150));
        assert_eq!(net.decode(&a, &bc).unwrap().shape(), (32, 25));
    }

    #[test]
    fn rows_are_independent() {
        let net = RsbNet::new(small_config(), 3).unwrap();
        let x = random_input(1, 6, 4);
        let doubled = Matrix::from_rows(&[x.row(0), x.row(0)]).unwrap();
        let (a, bc) = net.encode(&doubled).unwrap();
        assert_eq!(a.row(0), a.row(1));
        assert_eq!(bc.row(0), bc.row(1));
    }

    #[test]
    fn forward_is_deterministic() {
        let x = random_input(5, 6, 5);
        let a = RsbNet::new(small_config(), 9).unwrap().predict_ite(&x).unwrap();
        let b = RsbNet::new(small_config(), 9).unwrap().predict_ite(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_input_decodes_finite() {
        let net = RsbNet::new(small_config(), 1).unwrap();
        let (a, bc) = net.encode(&Matrix::zeros(3, 6)).unwrap();
        assert!(net.decode(&a, &bc).unwrap().is_finite());
    }

    #[test]
    fn prediction_ignores_bias_block() {
        let mut net = RsbNet::new(small_config(), 1).unwrap();
        let x = random_input(4, 6, 6);
        let (a_before, bc) = net.encode(&x).unwrap();
        let before = net.predict_outcomes(&x).unwrap();

        // Scramble the representation units that make up the bias block.
        let last = net.encoder.layers.last_mut().unwrap();
        for r in 0..last.weight.value.rows() {
            for c in 0..2 {
                last.weight.value.set(r, c, 100.0 * (r + c) as f64);
            }
        }
        last.bias.value.set(0, 0, -7.0);
        let (a_after, bc_after) = net.encode(&x).unwrap();
        assert_ne!(a_before, a_after);
        assert_eq!(bc, bc_after);
        assert_eq!(net.predict_outcomes(&x).unwrap(), before);
        assert!(net.predict(&bc, 2).is_err());
    }

    #[test]
    fn mixed_batch_routing_matches_per_sample() {
        let net = RsbNet::new(small_config(), 1).unwrap();
        let x = random_input(6, 6, 7);
        let t = [0u8, 1, 1, 0, 1, 0];
        let (_, bc) = net.encode(&x).unwrap();
        let routed = net.predict_factual(&bc, &t).unwrap();
        for (i, &ti) in t.iter().enumerate() {
            let single = net.predict(&bc.select_rows(&[i]), ti).unwrap();
            assert_eq!(single.get(0, 0), routed.get(i, 0));
        }
    }

    #[test]
    fn identical_heads_give_zero_effect() {
        let mut net = RsbNet::new(small_config(), 1).unwrap();
        net.head1 = net.head0.clone();
        let tau = net.predict_ite(&random_input(5, 6, 8)).unwrap();
        assert!(tau.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ite_is_difference_of_heads() {
        let net = RsbNet::new(small_config(), 2).unwrap();
        let x = random_input(5, 6, 9);
        let (_, bc) = net.encode(&x).unwrap();
        let diff = net.predict(&bc, 1).unwrap().sub(&net.predict(&bc, 0).unwrap()).unwrap();
        assert_eq!(net.predict_ite(&x).unwrap(), diff);
    }

    #[test]
    fn dimension_errors() {
        let net = RsbNet::new(small_config(), 1).unwrap();
        assert!(matches!(net.encode(&Matrix::zeros(2, 5)), Err(Error::Config(_))));
        let mut bad = small_config();
        bad.rep_dim_a = 0;
        assert!(RsbNet::new(bad, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let net = RsbNet::new(small_config(), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        net.to_checkpoint().save(&path).unwrap();
        let restored = RsbNet::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        let a: Vec<u64> = net.flat_values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = restored.flat_values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(restored.config, net.config);
    }

    #[test]
    fn flat_values_round_trip() {
        let mut net = RsbNet::new(small_config(), 12).unwrap();
        let mut values = net.flat_values();
        values[3] += 1.0;
        net.set_flat_values(&values).unwrap();
        assert_eq!(net.flat_values(), values);
        assert!(net.set_flat_values(&values[1..]).is_err());
    }
}
