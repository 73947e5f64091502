//! Dual-latent autoencoder.
//!
//! A shared 1-D convolutional trunk feeds two linear heads producing the
//! damage-sensitive latent `z_dmg` and the nuisance latent `z_ndmg`.
//! Decoder 1 maps `[z_dmg, z_ndmg]` back to the C×T window through a linear
//! layer and transposed convolutions mirroring the encoder; decoder 2 maps
//! `z_dmg` alone to the C×K normalized PSD through an MLP with a logistic
//! output.

mod checkpoint;
pub mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{param_checksum, Checkpoint, TrainingMeta, CHECKPOINT_VERSION};
pub use layers::{Activation, ParamSlot, Params};

use layers::{sigmoid, sigmoid_backward, ConvGeom, ConvTranspose1d, Conv1d, Linear};

use crate::tensor::{Matrix, Tensor3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// How the trunk output is reduced before the latent heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInput {
    /// Average over the remaining time positions.
    #[default]
    GlobalMean,
    /// Concatenate all channels and positions.
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub window: usize,
    pub latent_dim: usize,
    /// Encoder stages; decoder 1 mirrors them in reverse.
    pub stages: Vec<ConvStage>,
    #[serde(default)]
    pub head_input: HeadInput,
    pub psd_hidden: usize,
    /// Number of linear layers in the PSD decoder (hidden layers + output).
    pub psd_layers: usize,
    pub psd_bins: usize,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 12,
            window: 2048,
            latent_dim: 128,
            stages: [32, 64, 128, 256]
                .iter()
                .map(|&channels| ConvStage {
                    channels,
                    kernel: 7,
                    stride: 4,
                })
                .collect(),
            head_input: HeadInput::GlobalMean,
            psd_hidden: 512,
            psd_layers: 3,
            psd_bins: 1025,
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Sequence lengths entering each encoder stage, plus the trunk output length.
    fn lengths(&self) -> Result<Vec<ConvGeom>> {
        let mut len = self.window;
        let mut geoms = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            if s.kernel == 0 || s.stride == 0 || s.channels == 0 {
                return Err(Error::Config(format!("stage {i}: kernel, stride and channels must be positive")));
            }
            let g = ConvGeom::new(s.kernel, s.stride, len)
                .ok_or_else(|| Error::Config(format!("stage {i}: sequence of {len} is shorter than kernel {}", s.kernel)))?;
            len = g.len_out;
            geoms.push(g);
        }
        Ok(geoms)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.window == 0 || self.psd_bins == 0 {
            return Err(Error::Config("channels, window and psd_bins must be positive".into()));
        }
        if self.latent_dim < 2 {
            return Err(Error::Config("latent_dim must be at least 2".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("at least one convolutional stage is required".into()));
        }
        if self.psd_layers == 0 || (self.psd_layers > 1 && self.psd_hidden == 0) {
            return Err(Error::Config("psd decoder needs >= 1 layer and a positive hidden width".into()));
        }
        self.lengths().map(|_| ())
    }

    fn trunk_features(&self, geoms: &[ConvGeom]) -> usize {
        let last = self.stages.last().unwrap().channels;
        match self.head_input {
            HeadInput::GlobalMean => last,
            HeadInput::Flatten => last * geoms.last().unwrap().len_out,
        }
    }
}

/// Latent representations of a batch, one row per window.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair {
    pub z_dmg: Matrix,
    pub z_ndmg: Matrix,
}

/// Everything a training step needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub latents: LatentPair,
    /// Reconstructed windows, B×C×T.
    pub x_hat: Tensor3,
    /// Reconstructed normalized PSD, B×C×K (absent when not requested).
    pub s_hat: Option<Tensor3>,
}

/// Upstream gradients of the loss with respect to each output.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub z_dmg: Option<Vec<f64>>,
    pub z_ndmg: Option<Vec<f64>>,
    pub x_hat: Option<Vec<f64>>,
    pub s_hat: Option<Vec<f64>>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct Cache {
    batch: usize,
    enc_cols: Vec<Vec<f64>>,
    enc_out: Vec<Vec<f64>>,
    head_in: Vec<f64>,
    dec_in: Vec<f64>,
    dec_fc_out: Vec<f64>,
    dec_out: Vec<Vec<f64>>,
    psd_acts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DualLatentAutoencoder {
    config: ModelConfig,
    params: Params,
    encoder: Vec<Conv1d>,
    head_dmg: Linear,
    head_ndmg: Linear,
    dec_fc: Linear,
    decoder: Vec<ConvTranspose1d>,
    psd: Vec<Linear>,
}

impl DualLatentAutoencoder {
    /// Build a model with PyTorch-style U(±1/√fan_in) initialization drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let geoms = config.lengths()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Params::default();
        let bound = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();

        let mut encoder = Vec::new();
        let mut c_in = config.channels;
        for (i, (s, g)) in config.stages.iter().zip(&geoms).enumerate() {
            let fan = c_in * s.kernel;
            encoder.push(Conv1d {
                weight: params.add(&format!("encoder.conv{i}.weight"), &[s.channels, c_in, s.kernel], bound(fan), &mut rng),
                bias: params.add(&format!("encoder.conv{i}.bias"), &[s.channels], bound(fan), &mut rng),
                c_in,
                c_out: s.channels,
                geom: *g,
            });
            c_in = s.channels;
        }

        let feat = config.trunk_features(&geoms);
        let h = config.latent_dim;
        let linear = |name: &str, d_in: usize, d_out: usize, params: &mut Params, rng: &mut ChaCha8Rng| Linear {
            weight: params.add(&format!("{name}.weight"), &[d_out, d_in], bound(d_in), rng),
            bias: params.add(&format!("{name}.bias"), &[d_out], bound(d_in), rng),
            d_in,
            d_out,
        };
        let head_dmg = linear("encoder.head_dmg", feat, h, &mut params, &mut rng);
        let head_ndmg = linear("encoder.head_ndmg", feat, h, &mut params, &mut rng);

        let last = config.stages.last().unwrap();
        let trunk_len = geoms.last().unwrap().len_out;
        let dec_fc = linear("decoder_time.fc", 2 * h, last.channels * trunk_len, &mut params, &mut rng);

        let mut decoder = Vec::new();
        for i in (0..config.stages.len()).rev() {
            let s = config.stages[i];
            let c_out = if i == 0 { config.channels } else { config.stages[i - 1].channels };
            let fan = c_out * s.kernel;
            let j = config.stages.len() - 1 - i;
            decoder.push(ConvTranspose1d {
                weight: params.add(&format!("decoder_time.deconv{j}.weight"), &[s.channels, c_out, s.kernel], bound(fan), &mut rng),
                bias: params.add(&format!("decoder_time.deconv{j}.bias"), &[c_out], bound(fan), &mut rng),
                c_in: s.channels,
                c_out,
                geom: geoms[i],
            });
        }

        let mut psd = Vec::new();
        let mut d_in = h;
        for i in 0..config.psd_layers {
            let d_out = if i + 1 == config.psd_layers {
                config.channels * config.psd_bins
            } else {
                config.psd_hidden
            };
            psd.push(linear(&format!("decoder_psd.fc{i}"), d_in, d_out, &mut params, &mut rng));
            d_in = d_out;
        }

        Ok(Self {
            config,
            params,
            encoder,
            head_dmg,
            head_ndmg,
            dec_fc,
            decoder,
            psd,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params.data
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Replace all parameters; slot names and shapes must match.
    pub fn load_params(&mut self, slots: &[ParamSlot], data: Vec<f64>) -> Result<()> {
        if slots != self.params.slots.as_slice() || data.len() != self.params.len() {
            return Err(Error::contract("parameter layout does not match the model config"));
        }
        self.params.data = data;
        Ok(())
    }

    fn check_input(&self, x: &Tensor3) -> Result<()> {
        let [_, c, t] = x.dims;
        if c != self.config.channels || t != self.config.window {
            return Err(Error::contract(format!(
                "input windows are {c}x{t}, model expects {}x{}",
                self.config.channels, self.config.window
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: &Matrix, batch: usize) -> Result<()> {
        if z.cols != self.config.latent_dim || z.rows != batch {
            return Err(Error::contract(format!(
                "latent is {}x{}, expected {batch}x{}",
                z.rows, z.cols, self.config.latent_dim
            )));
        }
        Ok(())
    }

    fn encode_cached(&self, x: &Tensor3, cache: &mut Cache) -> LatentPair {
        let b = x.batch();
        let act = self.config.activation;
        let mut h = x.swap01().data;
        for conv in &self.encoder {
            let (mut y, cols) = conv.forward(&self.params, &h, b);
            act.apply(&mut y);
            cache.enc_cols.push(cols);
            cache.enc_out.push(y.clone());
            h = y;
        }
        let last = self.encoder.last().unwrap();
        let (c, l) = (last.c_out, last.geom.len_out);
        let mut head_in = vec![0.0; b * self.head_dmg.d_in];
        for ch in 0..c {
            for bi in 0..b {
                let src = &h[(ch * b + bi) * l..(ch * b + bi + 1) * l];
                match self.config.head_input {
                    HeadInput::GlobalMean => {
                        head_in[bi * c + ch] = src.iter().sum::<f64>() / l as f64;
                    }
                    HeadInput::Flatten => {
                        head_in[bi * c * l + ch * l..bi * c * l + (ch + 1) * l].copy_from_slice(src);
                    }
                }
            }
        }
        let hd = self.config.latent_dim;
        let z_dmg = self.head_dmg.forward(&self.params, &head_in, b);
        let z_ndmg = self.head_ndmg.forward(&self.params, &head_in, b);
        cache.head_in = head_in;
        LatentPair {
            z_dmg: Matrix { rows: b, cols: hd, data: z_dmg },
            z_ndmg: Matrix { rows: b, cols: hd, data: z_ndmg },
        }
    }

    fn decode_time_cached(&self, z: &LatentPair, cache: &mut Cache) -> Tensor3 {
        let b = z.z_dmg.rows;
        let hd = self.config.latent_dim;
        let mut u = vec![0.0; b * 2 * hd];
        for i in 0..b {
            u[i * 2 * hd..i * 2 * hd + hd].copy_from_slice(z.z_dmg.row(i));
            u[i * 2 * hd + hd..(i + 1) * 2 * hd].copy_from_slice(z.z_ndmg.row(i));
        }
        let act = self.config.activation;
        let mut fc = self.dec_fc.forward(&self.params, &u, b);
        act.apply(&mut fc);
        // [b][c][l] -> [c][b][l]
        let first = &self.decoder[0];
        let l = first.geom.len_out;
        let mut h = Tensor3 { dims: [b, first.c_in, l], data: fc.clone() }.swap01().data;
        cache.dec_in = u;
        cache.dec_fc_out = fc;
        let n = self.decoder.len();
        for (i, layer) in self.decoder.iter().enumerate() {
            let mut y = layer.forward(&self.params, &h, b);
            if i + 1 < n {
                act.apply(&mut y);
            }
            cache.dec_out.push(h);
            h = y;
        }
        Tensor3 { dims: [self.config.channels, b, self.config.window], data: h }.swap01()
    }

    fn decode_psd_cached(&self, z_dmg: &Matrix, cache: &mut Cache) -> Tensor3 {
        let b = z_dmg.rows;
        let act = self.config.activation;
        let mut h = z_dmg.data.clone();
        let n = self.psd.len();
        for (i, layer) in self.psd.iter().enumerate() {
            let mut y = layer.forward(&self.params, &h, b);
            if i + 1 < n {
                act.apply(&mut y);
            } else {
                sigmoid(&mut y);
            }
            cache.psd_acts.push(h);
            h = y;
        }
        cache.psd_acts.push(h.clone());
        Tensor3 { dims: [b, self.config.channels, self.config.psd_bins], data: h }
    }

    fn empty_cache(batch: usize) -> Cache {
        Cache {
            batch,
            enc_cols: vec![],
            enc_out: vec![],
            head_in: vec![],
            dec_in: vec![],
            dec_fc_out: vec![],
            dec_out: vec![],
            psd_acts: vec![],
        }
    }

    /// Map a batch of B×C×T windows to the two latent representations.
    pub fn encode(&self, x: &Tensor3) -> Result<LatentPair> {
        self.check_input(x)?;
        Ok(self.encode_cached(x, &mut Self::empty_cache(x.batch())))
    }

    /// Reconstruct B×C×T windows from the concatenated latents.
    pub fn decode_time(&self, z_dmg: &Matrix, z_ndmg: &Matrix) -> Result<Tensor3> {
        self.check_latent(z_dmg, z_dmg.rows)?;
        self.check_latent(z_ndmg, z_dmg.rows)?;
        let z = LatentPair { z_dmg: z_dmg.clone(), z_ndmg: z_ndmg.clone() };
        Ok(self.decode_time_cached(&z, &mut Self::empty_cache(z_dmg.rows)))
    }

    /// Reconstruct the B×C×K normalized PSD from `z_dmg` alone.
    pub fn decode_psd(&self, z_dmg: &Matrix) -> Result<Tensor3> {
        self.check_latent(z_dmg, z_dmg.rows)?;
        Ok(self.decode_psd_cached(z_dmg, &mut Self::empty_cache(z_dmg.rows)))
    }

    /// Full forward pass keeping activations. The PSD branch runs only when `with_psd`.
    pub fn forward(&self, x: &Tensor3, with_psd: bool) -> Result<(ForwardOutput, Cache)> {
        self.check_input(x)?;
        let mut cache = Self::empty_cache(x.batch());
        let latents = self.encode_cached(x, &mut cache);
        let x_hat = self.decode_time_cached(&latents, &mut cache);
        let s_hat = with_psd.then(|| self.decode_psd_cached(&latents.z_dmg, &mut cache));
        Ok((ForwardOutput { latents, x_hat, s_hat }, cache))
    }

    /// Parameter gradient of a loss given its gradients with respect to the outputs.
    pub fn backward(&self, cache: &Cache, grads: &OutputGrads) -> Vec<f64> {
        let p = &self.params;
        let b = cache.batch;
        let hd = self.config.latent_dim;
        let act = self.config.activation;
        let mut g = vec![0.0; p.len()];
        let mut dz_dmg = grads.z_dmg.clone().unwrap_or_else(|| vec![0.0; b * hd]);
        let mut dz_ndmg = grads.z_ndmg.clone().unwrap_or_else(|| vec![0.0; b * hd]);

        if let Some(ds) = &grads.s_hat {
            let n = self.psd.len();
            let mut d = ds.clone();
            sigmoid_backward(&cache.psd_acts[n], &mut d);
            for i in (0..n).rev() {
                if i + 1 < n {
                    act.backward(&cache.psd_acts[i + 1], &mut d);
                }
                d = self.psd[i].backward(p, &mut g, &cache.psd_acts[i], &d, b, true).unwrap();
            }
            dz_dmg.iter_mut().zip(&d).for_each(|(a, v)| *a += v);
        }

        if let Some(dx) = &grads.x_hat {
            let [_, c, t] = [b, self.config.channels, self.config.window];
            let mut d = Tensor3 { dims: [b, c, t], data: dx.clone() }.swap01().data;
            let n = self.decoder.len();
            for i in (0..n).rev() {
                if i + 1 < n {
                    // output of layer i is the input of layer i + 1
                    act.backward(&cache.dec_out[i + 1], &mut d);
                }
                d = self.decoder[i].backward(p, &mut g, &cache.dec_out[i], &d, b, true).unwrap();
            }
            let first = &self.decoder[0];
            let mut d_fc = Tensor3 { dims: [first.c_in, b, first.geom.len_out], data: d }.swap01().data;
            act.backward(&cache.dec_fc_out, &mut d_fc);
            let du = self.dec_fc.backward(p, &mut g, &cache.dec_in, &d_fc, b, true).unwrap();
            for i in 0..b {
                let row = &du[i * 2 * hd..(i + 1) * 2 * hd];
                for j in 0..hd {
                    dz_dmg[i * hd + j] += row[j];
                    dz_ndmg[i * hd + j] += row[hd + j];
                }
            }
        }

        let mut d_head = self.head_dmg.backward(p, &mut g, &cache.head_in, &dz_dmg, b, true).unwrap();
        let d2 = self.head_ndmg.backward(p, &mut g, &cache.head_in, &dz_ndmg, b, true).unwrap();
        d_head.iter_mut().zip(&d2).for_each(|(a, v)| *a += v);

        let last = self.encoder.last().unwrap();
        let (c, l) = (last.c_out, last.geom.len_out);
        let mut d = vec![0.0; c * b * l];
        for ch in 0..c {
            for bi in 0..b {
                let dst = &mut d[(ch * b + bi) * l..(ch * b + bi + 1) * l];
                match self.config.head_input {
                    HeadInput::GlobalMean => {
                        let v = d_head[bi * c + ch] / l as f64;
                        dst.iter_mut().for_each(|x| *x = v);
                    }
                    HeadInput::Flatten => {
                        dst.copy_from_slice(&d_head[bi * c * l + ch * l..bi * c * l + (ch + 1) * l]);
                    }
                }
            }
        }
        for i in (0..self.encoder.len()).rev() {
            act.backward(&cache.enc_out[i], &mut d);
            match self.encoder[i].backward(p, &mut g, &cache.enc_cols[i], &d, b, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
        g
    }
}
