use std::fs;
use std::io::Write;
use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{GridMdp, StateId};
use crate::nn::{suffixed, Activation, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum RepKind {
    Arc,
    Vae,
    Slowness,
    Predictive,
    Inverse,
    Identity,
}

impl RepKind {
    pub const ALL: [RepKind; 6] = [
        RepKind::Arc,
        RepKind::Vae,
        RepKind::Slowness,
        RepKind::Predictive,
        RepKind::Inverse,
        RepKind::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RepKind::Arc => "arc",
            RepKind::Vae => "vae",
            RepKind::Slowness => "slowness",
            RepKind::Predictive => "predictive",
            RepKind::Inverse => "inverse",
            RepKind::Identity => "identity",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown representation kind `{name}`")))
    }

    /// Encoders of these kinds output `(μ, log σ)`; the embedding is `μ`.
    pub fn is_gaussian(self) -> bool {
        matches!(self, RepKind::Vae | RepKind::Slowness)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// ARC: sampled pairs per epoch = `pairs_per_state · |train states|`.
    pub pairs_per_state: usize,
    /// VAE/slowness KL weight, inverse-model forward weight.
    pub beta: f64,
    pub alpha_slow: f64,
    /// Caps transitions visited per epoch for the baselines.
    pub max_samples_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            epochs: 60,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            pairs_per_state: 50,
            beta: 1.0,
            alpha_slow: 1.0,
            max_samples_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.batch_size == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidParameter(
                "latent_dim, batch_size and hidden sizes must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || self.beta < 0.0 || self.alpha_slow < 0.0 {
            return Err(Error::InvalidParameter(
                "learning_rate must be positive, beta and alpha_slow nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Layer sizes `input → hidden… → output`.
    pub fn layers(&self, input: usize, output: usize) -> Vec<usize> {
        let mut v = vec![input];
        v.extend(&self.hidden);
        v.push(output);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: RepKind,
    pub epochs: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub dataset_hash: String,
    pub config: TrainConfig,
    pub param_hash: String,
    /// Not part of any deterministic output.
    pub wall_clock_secs: f64,
}

/// Maps state features to a latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    kind: RepKind,
    net: Option<Mlp>,
    feature_dim: usize,
    latent_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderManifest {
    pub kind: RepKind,
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub dataset_hash: String,
    pub config: Option<TrainConfig>,
}

impl Encoder {
    pub fn identity(feature_dim: usize) -> Self {
        Self {
            kind: RepKind::Identity,
            net: None,
            feature_dim,
            latent_dim: feature_dim,
        }
    }

    pub fn from_net(kind: RepKind, net: Mlp) -> Result<Self> {
        if kind == RepKind::Identity {
            return Err(Error::InvalidParameter("identity encoder has no network".into()));
        }
        let out = net.output_dim();
        if kind.is_gaussian() && out % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "gaussian encoder output {out} is not (μ, log σ)"
            )));
        }
        Ok(Self {
            kind,
            feature_dim: net.input_dim(),
            latent_dim: if kind.is_gaussian() { out / 2 } else { out },
            net: Some(net),
        })
    }

    pub fn kind(&self) -> RepKind {
        self.kind
    }

    pub fn net(&self) -> Option<&Mlp> {
        self.net.as_ref()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.net {
            None => {
                if x.len() != self.feature_dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.feature_dim,
                        got: x.len(),
                    });
                }
                Ok(x.to_vec())
            }
            Some(net) => {
                let mut z = net.forward(x)?;
                z.truncate(self.latent_dim);
                Ok(z)
            }
        }
    }

    pub fn encode_state(&self, mdp: &GridMdp, s: StateId) -> Result<Vec<f64>> {
        self.encode(&mdp.features(s))
    }

    /// Embedding of every state, indexed by state id.
    pub fn embed_all(&self, mdp: &GridMdp) -> Result<Vec<Vec<f64>>> {
        mdp.states().map(|s| self.encode_state(mdp, s)).collect()
    }

    pub fn manifest(&self, dataset_hash: &str, config: Option<&TrainConfig>) -> EncoderManifest {
        EncoderManifest {
            kind: self.kind,
            feature_dim: self.feature_dim,
            latent_dim: self.latent_dim,
            dataset_hash: dataset_hash.to_string(),
            config: config.cloned(),
        }
    }

    /// Writes `<stem>.encoder.json` and, unless identity, `<stem>.net.{json,bin}`.
    pub fn save(&self, stem: &Path, dataset_hash: &str, config: Option<&TrainConfig>) -> Result<()> {
        let mp = suffixed(stem, ".encoder.json");
        let json = serde_json::to_vec_pretty(&self.manifest(dataset_hash, config))?;
        fs::write(&mp, json).map_err(|e| Error::io(&mp, e))?;
        if let Some(net) = &self.net {
            net.save(&suffixed(stem, ".net"))?;
        }
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<(Self, EncoderManifest)> {
        let mp = suffixed(stem, ".encoder.json");
        let manifest: EncoderManifest =
            serde_json::from_slice(&fs::read(&mp).map_err(|e| Error::io(&mp, e))?)?;
        let enc = if manifest.kind == RepKind::Identity {
            Self::identity(manifest.feature_dim)
        } else {
            Self::from_net(manifest.kind, Mlp::load(&suffixed(stem, ".net"))?)?
        };
        if enc.latent_dim != manifest.latent_dim || enc.feature_dim != manifest.feature_dim {
            return Err(Error::Config(format!("encoder manifest {} disagrees with network", mp.display())));
        }
        Ok((enc, manifest))
    }
}

/// Maps latent vectors back to state features.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    net: Mlp,
}

impl Decoder {
    pub fn new(net: Mlp) -> Self {
        Self { net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(z)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        self.net.save(stem)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        Ok(Self::new(Mlp::load(stem)?))
    }
}

/// Rows `state_index, x, y, features…, z_1..z_d`.
pub fn write_embedding_csv<W: Write>(mdp: &GridMdp, encoder: &Encoder, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = vec!["state_index".into(), "x".into(), "y".into()];
    header.extend((0..mdp.feature_dim()).map(|k| format!("f_{}", k + 1)));
    header.extend((0..encoder.latent_dim()).map(|k| format!("z_{}", k + 1)));
    out.write_record(&header)?;
    for s in mdp.states() {
        let c = mdp.cell_of(s);
        let f = mdp.features(s);
        let z = encoder.encode(&f)?;
        let mut rec = vec![s.0.to_string(), c.x.to_string(), c.y.to_string()];
        rec.extend(f.iter().chain(&z).map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::build_wall_world;
    use crate::rng::Rng;

    #[test]
    fn identity_returns_features() {
        let mdp = build_wall_world(7, 7, 3).unwrap();
        let enc = Encoder::identity(2);
        for s in mdp.states() {
            assert_eq!(enc.encode_state(&mdp, s).unwrap(), mdp.features(s));
        }
        assert!(enc.encode(&[1.0]).is_err());
    }

    #[test]
    fn gaussian_encoder_exposes_mean() {
        let net = Mlp::new(&[2, 8, 6], Activation::Tanh, &mut Rng::new(1)).unwrap();
        let enc = Encoder::from_net(RepKind::Vae, net.clone()).unwrap();
        assert_eq!(enc.latent_dim(), 3);
        let full = net.forward(&[0.1, 0.2]).unwrap();
        assert_eq!(enc.encode(&[0.1, 0.2]).unwrap(), full[..3]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = Mlp::new(&[2, 8, 2], Activation::Relu, &mut Rng::new(1)).unwrap();
        let enc = Encoder::from_net(RepKind::Arc, net).unwrap();
        let stem = dir.path().join("arc");
        enc.save(&stem, "abc", Some(&TrainConfig::default())).unwrap();
        let (back, manifest) = Encoder::load(&stem).unwrap();
        assert_eq!(back, enc);
        assert_eq!(manifest.dataset_hash, "abc");

        let id = Encoder::identity(6);
        let stem = dir.path().join("id");
        id.save(&stem, "abc", None).unwrap();
        assert_eq!(Encoder::load(&stem).unwrap().0, id);
    }

    #[test]
    fn embedding_csv_shape() {
        let mdp = build_wall_world(7, 7, 3).unwrap();
        let mut buf = Vec::new();
        write_embedding_csv(&mdp, &Encoder::identity(2), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "state_index,x,y,f_1,f_2,z_1,z_2");
        assert_eq!(lines.count(), mdp.num_states());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in RepKind::ALL {
            assert_eq!(RepKind::parse(k.name()).unwrap(), k);
        }
        assert!(RepKind::parse("pca").is_err());
    }
}
