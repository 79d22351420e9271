//! Encoder, conditional decoder, subject discriminators and the MLP task head.
//!
//! Shapes (C channels, D latent nodes, S subjects, L classes):
//!
//! | network    | layers                                   |
//! |------------|------------------------------------------|
//! | encoder    | FC(C, D) → ReLU → FC(D, D)               |
//! | decoder    | FC(D [+ S], D) → ReLU → FC(D, C)         |
//! | adversary  | FC(D, S)                                 |
//! | nuisance   | FC(D, S)                                 |
//! | classifier | FC(D, D) → ReLU → FC(D, L)               |
//!
//! Conditional variants concatenate the one-hot subject code to `z` before the
//! decoder's first layer. Each network is initialised from its own random
//! stream, so the encoder and decoder of two variants built with the same seed
//! start from identical weights regardless of which heads are present.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{one_hot, Matrix};
use crate::nn::{Activation, DenseLayer, Network};
use crate::schedule::{DropoutSchedule, Head, ScheduleKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelVariant {
    #[serde(rename = "AE")]
    Ae,
    #[serde(rename = "cAE")]
    CAe,
    #[serde(rename = "A-cAE")]
    ACAe,
    #[serde(rename = "D-cAE")]
    DCAe,
    #[serde(rename = "DA-cAE")]
    DaCAe,
    #[serde(rename = "A-cRAE")]
    ACRae,
    #[serde(rename = "D-cRAE")]
    DCRae,
    #[serde(rename = "DA-cRAE")]
    DaCRae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleRequirement {
    None,
    Hard,
    Soft,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 8] = [
        ModelVariant::Ae,
        ModelVariant::CAe,
        ModelVariant::ACAe,
        ModelVariant::DCAe,
        ModelVariant::DaCAe,
        ModelVariant::ACRae,
        ModelVariant::DCRae,
        ModelVariant::DaCRae,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelVariant::Ae => "AE",
            ModelVariant::CAe => "cAE",
            ModelVariant::ACAe => "A-cAE",
            ModelVariant::DCAe => "D-cAE",
            ModelVariant::DaCAe => "DA-cAE",
            ModelVariant::ACRae => "A-cRAE",
            ModelVariant::DCRae => "D-cRAE",
            ModelVariant::DaCRae => "DA-cRAE",
        }
    }

    pub fn conditional(self) -> bool {
        self != ModelVariant::Ae
    }

    pub fn schedule_requirement(self) -> ScheduleRequirement {
        use ModelVariant::*;
        match self {
            Ae | CAe => ScheduleRequirement::None,
            ACAe | DCAe | DaCAe => ScheduleRequirement::Hard,
            ACRae | DCRae | DaCRae => ScheduleRequirement::Soft,
        }
    }

    pub fn use_adversary(self) -> bool {
        use ModelVariant::*;
        matches!(self, ACAe | DaCAe | ACRae | DaCRae)
    }

    pub fn use_nuisance(self) -> bool {
        use ModelVariant::*;
        matches!(self, DCAe | DaCAe | DCRae | DaCRae)
    }

    pub fn has_head(self, head: Head) -> bool {
        match head {
            Head::Adversary => self.use_adversary(),
            Head::Nuisance => self.use_nuisance(),
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .iter()
            .copied()
            .find(|v| v.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model variant '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// input channels
    pub c: usize,
    /// latent nodes
    pub d: usize,
    /// subjects
    pub s: usize,
    /// task classes
    pub l: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        if self.c == 0 || self.d == 0 || self.s == 0 || self.l == 0 {
            return Err(Error::Config(format!("all dimensions must be >= 1, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub alpha: f64,
    pub ratio: (u32, u32),
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            ratio: (2, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub variant: ModelVariant,
    pub dims: Dims,
    pub schedule: Option<DropoutSchedule>,
    pub encoder: Network,
    pub decoder: Network,
    pub adversary: Option<Network>,
    pub nuisance: Option<Network>,
    pub classifier: Network,
}

// random stream ids per network
const STREAM_ENCODER: u64 = 1;
const STREAM_DECODER: u64 = 2;
const STREAM_ADVERSARY: u64 = 3;
const STREAM_NUISANCE: u64 = 4;
const STREAM_CLASSIFIER: u64 = 5;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds a bundle, deriving the schedule from the variant.
pub fn build_model(
    variant: ModelVariant,
    dims: Dims,
    params: ScheduleParams,
    seed: u64,
) -> Result<ModelBundle> {
    dims.validate()?;
    let schedule = match variant.schedule_requirement() {
        ScheduleRequirement::None => None,
        ScheduleRequirement::Hard => Some(DropoutSchedule::hard(dims.d, params.ratio)?),
        ScheduleRequirement::Soft => Some(DropoutSchedule::soft(dims.d, params.alpha)?),
    };
    build_model_with_schedule(variant, dims, schedule, seed)
}

/// Builds a bundle with an explicit schedule, which must agree with the variant.
pub fn build_model_with_schedule(
    variant: ModelVariant,
    dims: Dims,
    schedule: Option<DropoutSchedule>,
    seed: u64,
) -> Result<ModelBundle> {
    dims.validate()?;
    match (variant.schedule_requirement(), &schedule) {
        (ScheduleRequirement::None, None) => {}
        (ScheduleRequirement::Hard, Some(s)) if s.is_hard() => {}
        (ScheduleRequirement::Soft, Some(s)) if !s.is_hard() => {}
        (req, s) => {
            return Err(Error::Config(format!(
                "{variant} needs a {req:?} schedule, got {}",
                match s {
                    None => "none".to_string(),
                    Some(s) if s.is_hard() => "hard".to_string(),
                    Some(_) => "soft".to_string(),
                }
            )))
        }
    }
    if let Some(s) = &schedule {
        if s.dim != dims.d {
            return Err(Error::Config(format!(
                "schedule covers {} nodes but D = {}",
                s.dim, dims.d
            )));
        }
    }
    let Dims { c, d, s, l } = dims;
    let encoder = Network::mlp("encoder", &[c, d, d], Activation::Relu, &mut stream_rng(seed, STREAM_ENCODER))?;
    let dec_in = if variant.conditional() { d + s } else { d };
    let decoder = Network::mlp("decoder", &[dec_in, d, c], Activation::Relu, &mut stream_rng(seed, STREAM_DECODER))?;
    let adversary = if variant.use_adversary() {
        Some(Network::mlp("adversary", &[d, s], Activation::Identity, &mut stream_rng(seed, STREAM_ADVERSARY))?)
    } else {
        None
    };
    let nuisance = if variant.use_nuisance() {
        Some(Network::mlp("nuisance", &[d, s], Activation::Identity, &mut stream_rng(seed, STREAM_NUISANCE))?)
    } else {
        None
    };
    let classifier = Network::mlp("classifier", &[d, d, l], Activation::Relu, &mut stream_rng(seed, STREAM_CLASSIFIER))?;
    Ok(ModelBundle {
        variant,
        dims,
        schedule,
        encoder,
        decoder,
        adversary,
        nuisance,
        classifier,
    })
}

impl ModelBundle {
    /// Swaps in a different schedule without the variant check. Used for
    /// ablations such as running a rateless variant on a step schedule.
    pub fn substitute_schedule(&mut self, schedule: DropoutSchedule) -> Result<()> {
        if schedule.dim != self.dims.d {
            return Err(Error::Config(format!(
                "schedule covers {} nodes but D = {}",
                schedule.dim, self.dims.d
            )));
        }
        if self.schedule.is_none() {
            return Err(Error::Config(format!("{} has no discriminator heads", self.variant)));
        }
        self.schedule = Some(schedule);
        Ok(())
    }

    pub fn head(&self, head: Head) -> Option<&Network> {
        match head {
            Head::Adversary => self.adversary.as_ref(),
            Head::Nuisance => self.nuisance.as_ref(),
        }
    }

    pub fn head_mut(&mut self, head: Head) -> Option<&mut Network> {
        match head {
            Head::Adversary => self.adversary.as_mut(),
            Head::Nuisance => self.nuisance.as_mut(),
        }
    }

    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dims.c {
            return Err(Error::dim("encode", self.dims.c, x.cols()));
        }
        self.encoder.forward(x)
    }

    /// Builds the decoder input, `[z | onehot(s)]` for conditional variants.
    pub fn decoder_input(&self, z: &Matrix, subjects: Option<&[usize]>) -> Result<Matrix> {
        if z.cols() != self.dims.d {
            return Err(Error::dim("decode", self.dims.d, z.cols()));
        }
        if !self.variant.conditional() {
            return Ok(z.clone());
        }
        let s = subjects.ok_or_else(|| {
            Error::Argument(format!("{} decoder needs subject codes", self.variant))
        })?;
        if s.len() != z.rows() {
            return Err(Error::dim("decode subjects", z.rows(), s.len()));
        }
        z.hcat(&one_hot(s, self.dims.s)?)
    }

    /// Reconstructs inputs from the full, unmasked latent.
    pub fn decode(&self, z: &Matrix, subjects: Option<&[usize]>) -> Result<Matrix> {
        self.decoder.forward(&self.decoder_input(z, subjects)?)
    }

    /// Subject logits from `z ⊙ mask`. `mask` is either a sampled `n × D`
    /// keep-mask or `None` for the deterministic expectation mask.
    pub fn discriminate(&self, head: Head, z: &Matrix, mask: Option<&Matrix>) -> Result<Matrix> {
        let net = self
            .head(head)
            .ok_or_else(|| Error::Config(format!("{} has no {head:?} head", self.variant)))?;
        let masked = self.mask_latent(head, z, mask)?;
        net.forward(&masked)
    }

    pub(crate) fn mask_latent(&self, head: Head, z: &Matrix, mask: Option<&Matrix>) -> Result<Matrix> {
        if z.cols() != self.dims.d {
            return Err(Error::dim("discriminate", self.dims.d, z.cols()));
        }
        match mask {
            Some(m) => z.hadamard(m),
            None => {
                let sched = self
                    .schedule
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("{} has no schedule", self.variant)))?;
                z.scale_columns(&sched.expectation_mask(head))
            }
        }
    }

    /// Task logits from the full latent.
    pub fn classify(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.dims.d {
            return Err(Error::dim("classify", self.dims.d, z.cols()));
        }
        self.classifier.forward(z)
    }

    fn networks(&self) -> Vec<&Network> {
        let mut v = vec![&self.encoder, &self.decoder];
        v.extend(self.adversary.iter());
        v.extend(self.nuisance.iter());
        v.push(&self.classifier);
        v
    }

    /// Writes the bundle to the versioned parameter container.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Container layout: magic, u32 version, u64 header length, JSON header,
    /// then every tensor as little-endian f64 in header order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        for net in self.networks() {
            for (layer_idx, l) in net.layers.iter().enumerate() {
                tensors.push(TensorEntry {
                    name: format!("{}.W{}", net.name, layer_idx + 1),
                    rows: l.weights.rows(),
                    cols: l.weights.cols(),
                    activation: Some(l.activation),
                });
                payload.extend(l.weights.as_slice().iter().flat_map(|v| v.to_le_bytes()));
                tensors.push(TensorEntry {
                    name: format!("{}.b{}", net.name, layer_idx + 1),
                    rows: l.bias.len(),
                    cols: 1,
                    activation: None,
                });
                payload.extend(l.bias.iter().flat_map(|v| v.to_le_bytes()));
            }
        }
        let header = ContainerHeader {
            variant: self.variant,
            dims: self.dims,
            schedule: self.schedule.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.write_all(CONTAINER_MAGIC).and_then(|_| out.write_all(&CONTAINER_VERSION.to_le_bytes()))
            .and_then(|_| out.write_all(&(header.len() as u64).to_le_bytes()))
            .and_then(|_| out.write_all(&header))
            .and_then(|_| out.write_all(&payload))
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated container".into()))?;
        if &magic != CONTAINER_MAGIC {
            return Err(Error::Format("not a parameter container".into()));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b).map_err(|_| Error::Format("truncated container".into()))?;
        let version = u32::from_le_bytes(u32b);
        if version != CONTAINER_VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b).map_err(|_| Error::Format("truncated container".into()))?;
        let hlen = u64::from_le_bytes(u64b) as usize;
        if r.len() < hlen {
            return Err(Error::Format("truncated header".into()));
        }
        let header: ContainerHeader =
            serde_json::from_slice(&r[..hlen]).map_err(|e| Error::Format(e.to_string()))?;
        r = &r[hlen..];

        let mut by_net: Vec<(String, Vec<DenseLayer>)> = Vec::new();
        let mut pending: Option<(String, Matrix, Activation)> = None;
        for t in &header.tensors {
            let n = t.rows * t.cols;
            if r.len() < n * 8 {
                return Err(Error::Format(format!("payload truncated at {}", t.name)));
            }
            let vals: Vec<f64> = r[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            r = &r[n * 8..];
            let (net, kind) = t
                .name
                .split_once('.')
                .ok_or_else(|| Error::Format(format!("bad tensor name {}", t.name)))?;
            if kind.starts_with('W') {
                let act = t.activation.ok_or_else(|| Error::Format(format!("{} lacks activation", t.name)))?;
                pending = Some((net.to_string(), Matrix::from_vec(t.rows, t.cols, vals)?, act));
            } else {
                let (pn, w, act) = pending
                    .take()
                    .ok_or_else(|| Error::Format(format!("bias {} without weights", t.name)))?;
                if pn != net {
                    return Err(Error::Format(format!("bias {} follows weights of {pn}", t.name)));
                }
                let layer = DenseLayer::from_parts(w, vals, act)?;
                match by_net.last_mut() {
                    Some((name, layers)) if name == net => layers.push(layer),
                    _ => by_net.push((net.to_string(), vec![layer])),
                }
            }
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.len())));
        }
        let mut take = |name: &str| -> Option<Network> {
            let pos = by_net.iter().position(|(n, _)| n == name)?;
            let (name, layers) = by_net.remove(pos);
            Some(Network { name, layers })
        };
        let missing = |n: &str| Error::Format(format!("container lacks {n}"));
        let bundle = ModelBundle {
            variant: header.variant,
            dims: header.dims,
            schedule: header.schedule,
            encoder: take("encoder").ok_or_else(|| missing("encoder"))?,
            decoder: take("decoder").ok_or_else(|| missing("decoder"))?,
            adversary: take("adversary"),
            nuisance: take("nuisance"),
            classifier: take("classifier").ok_or_else(|| missing("classifier"))?,
        };
        if bundle.adversary.is_some() != bundle.variant.use_adversary()
            || bundle.nuisance.is_some() != bundle.variant.use_nuisance()
        {
            return Err(Error::Format("heads do not match variant".into()));
        }
        Ok(bundle)
    }
}

const CONTAINER_MAGIC: &[u8; 8] = b"DRAEPRM\0";
const CONTAINER_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ContainerHeader {
    variant: ModelVariant,
    dims: Dims,
    schedule: Option<DropoutSchedule>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    activation: Option<Activation>,
}

/// Short description of the schedule for reports.
pub fn describe_schedule(s: Option<&DropoutSchedule>) -> String {
    match s.map(|s| s.kind) {
        None => "none".into(),
        Some(ScheduleKind::Soft { alpha }) => format!("soft(alpha={alpha})"),
        Some(ScheduleKind::Hard { split_index }) => format!("hard(split={split_index})"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{accuracy, softmax_cross_entropy};
    use rand::Rng;

    const STRESS: Dims = Dims { c: 7, d: 15, s: 20, l: 4 };

    fn random(n: usize, c: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(n, c, (0..n * c).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn variant_algebra() {
        for v in ModelVariant::ALL {
            let tag = v.tag();
            assert_eq!(tag.parse::<ModelVariant>().unwrap(), v);
            let heads = v.use_adversary() || v.use_nuisance();
            assert_eq!(heads, v.schedule_requirement() != ScheduleRequirement::None);
            assert_eq!(v.use_adversary(), tag.starts_with("A-") || tag.starts_with("DA-"));
            assert_eq!(v.use_nuisance(), tag.starts_with('D'));
            if heads {
                let want = if tag.ends_with("cRAE") { ScheduleRequirement::Soft } else { ScheduleRequirement::Hard };
                assert_eq!(v.schedule_requirement(), want);
            }
            assert_eq!(v.conditional(), v != ModelVariant::Ae);
        }
        assert!("XYZ".parse::<ModelVariant>().is_err());
    }

    #[test]
    fn conditional_decoder_width() {
        let m = build_model(ModelVariant::DaCRae, STRESS, ScheduleParams::default(), 0).unwrap();
        assert_eq!(m.decoder.in_dim(), 35);
        assert_eq!(m.adversary.as_ref().unwrap().in_dim(), 15);
        assert_eq!(m.nuisance.as_ref().unwrap().out_dim(), 20);
        let ae = build_model(ModelVariant::Ae, STRESS, ScheduleParams::default(), 0).unwrap();
        assert_eq!(ae.decoder.in_dim(), 15);
        assert!(ae.adversary.is_none() && ae.nuisance.is_none() && ae.schedule.is_none());
    }

    #[test]
    fn seeded_init_is_deterministic_and_shared() {
        let a = build_model(ModelVariant::DaCRae, STRESS, ScheduleParams::default(), 9).unwrap();
        let b = build_model(ModelVariant::DaCRae, STRESS, ScheduleParams::default(), 9).unwrap();
        assert_eq!(a, b);
        let c = build_model(ModelVariant::CAe, STRESS, ScheduleParams::default(), 9).unwrap();
        assert_eq!(a.encoder, c.encoder);
        assert_eq!(a.decoder, c.decoder);
    }

    #[test]
    fn schedule_mismatch_is_config_error() {
        let soft = DropoutSchedule::soft(15, 3.0).unwrap();
        let r = build_model_with_schedule(ModelVariant::DaCAe, STRESS, Some(soft), 0);
        assert!(matches!(r, Err(Error::Config(_))));
        let r = build_model_with_schedule(ModelVariant::Ae, STRESS, Some(DropoutSchedule::hard(15, (2, 1)).unwrap()), 0);
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(build_model_with_schedule(ModelVariant::DCRae, STRESS, None, 0).is_err());
    }

    #[test]
    fn encode_shapes_and_zero_input() {
        let mut m = build_model(ModelVariant::Ae, STRESS, ScheduleParams::default(), 1).unwrap();
        let z = m.encode(&random(6, 7, 2)).unwrap();
        assert_eq!(z.shape(), (6, 15));
        assert!(z.is_finite());
        for l in &mut m.encoder.layers {
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let z0 = m.encode(&Matrix::zeros(3, 7)).unwrap();
        assert!(z0.as_slice().iter().all(|&v| v == 0.0));
        assert!(m.encode(&Matrix::zeros(1, 6)).is_err());
    }

    #[test]
    fn decode_contracts() {
        let ae = build_model(ModelVariant::Ae, STRESS, ScheduleParams::default(), 1).unwrap();
        let z = random(4, 15, 3);
        assert_eq!(ae.decode(&z, None).unwrap(), ae.decode(&z, Some(&[0, 5, 7, 19])).unwrap());
        let cae = build_model(ModelVariant::CAe, STRESS, ScheduleParams::default(), 1).unwrap();
        assert!(matches!(cae.decode(&z, None), Err(Error::Argument(_))));
        let xh = cae.decode(&z, Some(&[0, 1, 2, 3])).unwrap();
        assert_eq!(xh.shape(), (4, 7));
    }

    #[test]
    fn zero_mask_gives_bias_row() {
        let mut m = build_model(ModelVariant::DaCRae, STRESS, ScheduleParams::default(), 2).unwrap();
        for (i, b) in m.adversary.as_mut().unwrap().layers[0].bias.iter_mut().enumerate() {
            *b = i as f64 * 0.1;
        }
        let z = random(5, 15, 4);
        let logits = m.discriminate(Head::Adversary, &z, Some(&Matrix::zeros(5, 15))).unwrap();
        for r in 0..5 {
            assert_eq!(logits.row(r), &m.adversary.as_ref().unwrap().layers[0].bias[..]);
        }
    }

    #[test]
    fn hard_adversary_ignores_nuisance_nodes() {
        let m = build_model(ModelVariant::DaCAe, STRESS, ScheduleParams::default(), 3).unwrap();
        let z = random(3, 15, 5);
        let mut z2 = z.clone();
        for r in 0..3 {
            z2.set(r, 10, z2.get(r, 10) + 7.0);
        }
        assert_eq!(
            m.discriminate(Head::Adversary, &z, None).unwrap(),
            m.discriminate(Head::Adversary, &z2, None).unwrap()
        );
        assert_ne!(
            m.discriminate(Head::Nuisance, &z, None).unwrap(),
            m.discriminate(Head::Nuisance, &z2, None).unwrap()
        );
    }

    #[test]
    fn absent_head_is_config_error() {
        let m = build_model(ModelVariant::DCRae, STRESS, ScheduleParams::default(), 3).unwrap();
        assert!(matches!(
            m.discriminate(Head::Adversary, &random(1, 15, 0), None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn untrained_head_is_at_chance() {
        let m = build_model(ModelVariant::DaCRae, STRESS, ScheduleParams::default(), 4).unwrap();
        let n = 2000;
        let z = random(n, 15, 6);
        let subjects: Vec<usize> = (0..n).map(|i| i % 20).collect();
        let pred = m.discriminate(Head::Adversary, &z, None).unwrap().argmax_rows();
        let acc = accuracy(&pred, &subjects);
        let sigma = (0.05 * 0.95 / n as f64).sqrt();
        assert!((acc - 0.05).abs() <= 3.0 * sigma, "acc {acc}");
    }

    #[test]
    fn classifier_starts_near_uniform() {
        let m = build_model(ModelVariant::DaCRae, STRESS, ScheduleParams::default(), 5).unwrap();
        let z = random(400, 15, 8);
        let logits = m.classify(&z).unwrap();
        assert_eq!(logits.shape(), (400, 4));
        let y: Vec<usize> = (0..400).map(|i| i % 4).collect();
        let (ce, _) = softmax_cross_entropy(&logits, &y).unwrap();
        assert!((ce - 4f64.ln()).abs() < 0.25, "ce {ce}");
    }

    #[test]
    fn container_round_trip_is_bit_exact() {
        for v in [ModelVariant::Ae, ModelVariant::DCAe, ModelVariant::DaCRae] {
            let m = build_model(v, STRESS, ScheduleParams::default(), 77).unwrap();
            let back = ModelBundle::from_bytes(&m.to_bytes().unwrap()).unwrap();
            assert_eq!(back, m);
            for (a, b) in back.encoder.flat_params().iter().zip(m.encoder.flat_params()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert!(ModelBundle::from_bytes(b"garbage!").is_err());
    }
}
