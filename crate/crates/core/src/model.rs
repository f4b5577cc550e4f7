//! The association head: per-modality projections, hyperbolic lift, gated
//! fusion, post-fusion projection and identity logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::hyperbolic::{self, BallConfig, PoincarePoint};
use crate::losses::Similarity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Face,
    Voice,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Voice => "voice",
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Face => Modality::Voice,
            Modality::Voice => Modality::Face,
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "face" => Ok(Modality::Face),
            "voice" => Ok(Modality::Voice),
            other => Err(Error::data(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateActivation {
    Tanh,
    Relu,
}

/// How the activated modalities are combined before the gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionCombine {
    Multiplication,
    Addition,
    Concatenation,
}

/// Fusion block used between the aligned projections and the post-fusion layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    /// Gated convex combination driven by the combined modalities.
    Egff,
    /// Concatenate the activated modalities and apply one affine layer.
    Linear,
}

macro_rules! from_str_snake {
    ($t:ty { $($s:literal => $v:expr),* $(,)? }) => {
        impl std::str::FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)*
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($t), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

from_str_snake!(GateActivation { "tanh" => GateActivation::Tanh, "relu" => GateActivation::Relu });
from_str_snake!(AttentionCombine {
    "multiplication" => AttentionCombine::Multiplication,
    "addition" => AttentionCombine::Addition,
    "concatenation" => AttentionCombine::Concatenation,
});
from_str_snake!(FusionKind { "egff" => FusionKind::Egff, "linear" => FusionKind::Linear });

/// Representation on which a single face and a single voice are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSpace {
    /// The alignment space, scored with the configured similarity.
    #[default]
    Aligned,
    /// Each modality fused with itself and passed through the fusion projection, scored by cosine.
    Fused,
}
from_str_snake!(ScoreSpace { "aligned" => ScoreSpace::Aligned, "fused" => ScoreSpace::Fused });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub face_dim: usize,
    pub voice_dim: usize,
    pub proj_dim: usize,
    pub num_identities: usize,
    pub gate_activation: GateActivation,
    pub attention_combine: AttentionCombine,
    pub fusion: FusionKind,
    pub use_hyperbolic: bool,
    /// Largest tangent-vector norm passed to the exp map; keeps lifted points off the clamped boundary.
    pub tangent_clip: Option<f64>,
    pub similarity: Similarity,
    pub ball: BallConfig,
}

impl ModelConfig {
    pub fn new(face_dim: usize, voice_dim: usize, num_identities: usize) -> Self {
        ModelConfig {
            face_dim,
            voice_dim,
            proj_dim: 128,
            num_identities,
            gate_activation: GateActivation::Tanh,
            attention_combine: AttentionCombine::Multiplication,
            fusion: FusionKind::Egff,
            use_hyperbolic: true,
            tangent_clip: Some(DEFAULT_TANGENT_CLIP),
            similarity: Similarity::NegHyperbolicDistance,
            ball: BallConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.face_dim == 0 || self.voice_dim == 0 || self.proj_dim == 0 {
            return Err(Error::Config(format!(
                "dimensions must be positive (face {}, voice {}, proj {})",
                self.face_dim, self.voice_dim, self.proj_dim
            )));
        }
        if self.num_identities < 2 {
            return Err(Error::Config(format!(
                "need at least 2 identities, got {}",
                self.num_identities
            )));
        }
        if !self.use_hyperbolic && self.similarity == Similarity::NegHyperbolicDistance {
            return Err(Error::Config(
                "hyperbolic-distance similarity requires use_hyperbolic".into(),
            ));
        }
        if let Some(r) = self.tangent_clip {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("tangent_clip must be positive, got {r}")));
            }
        }
        self.ball.validate()
    }

    pub fn input_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Face => self.face_dim,
            Modality::Voice => self.voice_dim,
        }
    }
}

/// Learnable tensors. Optional blocks exist only for the fusion variants that use them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w_face: Tensor,
    pub b_face: Tensor,
    pub w_voice: Tensor,
    pub b_voice: Tensor,
    pub gate_weight: Tensor,
    pub gate_bias: Tensor,
    pub w_fuse: Tensor,
    pub b_fuse: Tensor,
    pub w_cls: Tensor,
    pub b_cls: Tensor,
    pub logit_scale: Tensor,
    /// `[2D x D]` map for the concatenation attention combine.
    pub w_combine: Option<Tensor>,
    pub b_combine: Option<Tensor>,
    /// `[2D x D]` map for linear fusion.
    pub w_linear: Option<Tensor>,
    pub b_linear: Option<Tensor>,
}

pub const DEFAULT_TANGENT_CLIP: f64 = 2.0;
pub const INITIAL_LOGIT_SCALE: f64 = 2.659_260_036_932_778; // ln(1/0.07)
pub const MAX_LOGIT_SCALE: f64 = 4.605_170_185_988_092; // ln(100)

fn uniform_weight(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches data")
}

impl ModelParams {
    /// Deterministic initialisation: weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.proj_dim;
        let w_face = uniform_weight(&mut rng, cfg.face_dim, d);
        let w_voice = uniform_weight(&mut rng, cfg.voice_dim, d);
        // per-feature 1x1 conv: one input channel
        let gate_weight = Tensor::vector(uniform_weight(&mut rng, 1, d).into_data());
        let w_fuse = uniform_weight(&mut rng, d, d);
        let w_cls = uniform_weight(&mut rng, d, cfg.num_identities);
        let (w_combine, b_combine) = if cfg.attention_combine == AttentionCombine::Concatenation {
            (Some(uniform_weight(&mut rng, 2 * d, d)), Some(Tensor::zeros(vec![d])))
        } else {
            (None, None)
        };
        let (w_linear, b_linear) = if cfg.fusion == FusionKind::Linear {
            (Some(uniform_weight(&mut rng, 2 * d, d)), Some(Tensor::zeros(vec![d])))
        } else {
            (None, None)
        };
        Ok(ModelParams {
            w_face,
            b_face: Tensor::zeros(vec![d]),
            w_voice,
            b_voice: Tensor::zeros(vec![d]),
            gate_weight,
            gate_bias: Tensor::zeros(vec![d]),
            w_fuse,
            b_fuse: Tensor::zeros(vec![d]),
            w_cls,
            b_cls: Tensor::zeros(vec![cfg.num_identities]),
            logit_scale: Tensor::scalar(INITIAL_LOGIT_SCALE),
            w_combine,
            b_combine,
            w_linear,
            b_linear,
        })
    }

    /// Parameters in checkpoint order.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![
            ("w_face", &self.w_face),
            ("b_face", &self.b_face),
            ("w_voice", &self.w_voice),
            ("b_voice", &self.b_voice),
            ("gate_weight", &self.gate_weight),
            ("gate_bias", &self.gate_bias),
            ("w_fuse", &self.w_fuse),
            ("b_fuse", &self.b_fuse),
            ("w_cls", &self.w_cls),
            ("b_cls", &self.b_cls),
            ("logit_scale", &self.logit_scale),
        ];
        let optional = [
            ("w_combine", &self.w_combine),
            ("b_combine", &self.b_combine),
            ("w_linear", &self.w_linear),
            ("b_linear", &self.b_linear),
        ];
        out.extend(optional.into_iter().filter_map(|(n, t)| t.as_ref().map(|t| (n, t))));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out = vec![
            ("w_face", &mut self.w_face),
            ("b_face", &mut self.b_face),
            ("w_voice", &mut self.w_voice),
            ("b_voice", &mut self.b_voice),
            ("gate_weight", &mut self.gate_weight),
            ("gate_bias", &mut self.gate_bias),
            ("w_fuse", &mut self.w_fuse),
            ("b_fuse", &mut self.b_fuse),
            ("w_cls", &mut self.w_cls),
            ("b_cls", &mut self.b_cls),
            ("logit_scale", &mut self.logit_scale),
        ];
        let optional = [
            ("w_combine", &mut self.w_combine),
            ("b_combine", &mut self.b_combine),
            ("w_linear", &mut self.w_linear),
            ("b_linear", &mut self.b_linear),
        ];
        out.extend(optional.into_iter().filter_map(|(n, t)| t.as_mut().map(|t| (n, t))));
        out
    }

    /// Rebuilds parameters from named tensors, checking every shape against `cfg`.
    pub fn from_named(cfg: &ModelConfig, mut named: Vec<(String, Tensor)>) -> Result<Self> {
        let template = ModelParams::init(cfg, 0)?;
        let mut take = |name: &str| -> Option<Tensor> {
            let pos = named.iter().position(|(n, _)| n == name)?;
            Some(named.swap_remove(pos).1)
        };
        let mut out = template.clone();
        for (name, slot) in out.named_mut() {
            let t = take(name).ok_or_else(|| Error::data(format!("checkpoint lacks parameter `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::dim(format!(
                    "parameter `{name}` has shape {:?}, config expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        if let Some((n, _)) = named.first() {
            return Err(Error::data(format!("checkpoint has unexpected parameter `{n}`")));
        }
        Ok(out)
    }

    /// Records every parameter as a leaf; `trainable` controls `requires_grad`.
    pub fn register(&self, g: &mut Graph, trainable: bool) -> ParamVars {
        let mut leaf = |t: &Tensor| {
            let mut t = t.clone();
            t.set_requires_grad(trainable);
            g.leaf(t)
        };
        ParamVars {
            w_face: leaf(&self.w_face),
            b_face: leaf(&self.b_face),
            w_voice: leaf(&self.w_voice),
            b_voice: leaf(&self.b_voice),
            gate_weight: leaf(&self.gate_weight),
            gate_bias: leaf(&self.gate_bias),
            w_fuse: leaf(&self.w_fuse),
            b_fuse: leaf(&self.b_fuse),
            w_cls: leaf(&self.w_cls),
            b_cls: leaf(&self.b_cls),
            logit_scale: leaf(&self.logit_scale),
            w_combine: self.w_combine.as_ref().map(&mut leaf),
            b_combine: self.b_combine.as_ref().map(&mut leaf),
            w_linear: self.w_linear.as_ref().map(&mut leaf),
            b_linear: self.b_linear.as_ref().map(&mut leaf),
        }
    }
}

/// Graph handles of the parameters, mirroring [`ModelParams`].
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub w_face: Var,
    pub b_face: Var,
    pub w_voice: Var,
    pub b_voice: Var,
    pub gate_weight: Var,
    pub gate_bias: Var,
    pub w_fuse: Var,
    pub b_fuse: Var,
    pub w_cls: Var,
    pub b_cls: Var,
    pub logit_scale: Var,
    pub w_combine: Option<Var>,
    pub b_combine: Option<Var>,
    pub w_linear: Option<Var>,
    pub b_linear: Option<Var>,
}

impl ParamVars {
    /// Inverse of [`ParamVars::ordered`] for the optional parameters `cfg` implies.
    pub fn from_ordered(vars: &[Var], cfg: &ModelConfig) -> Result<Self> {
        let concat = cfg.attention_combine == AttentionCombine::Concatenation;
        let linear = cfg.fusion == FusionKind::Linear;
        let want = 11 + 2 * (concat as usize) + 2 * (linear as usize);
        if vars.len() != want {
            return Err(Error::contract(format!("expected {want} parameter handles, got {}", vars.len())));
        }
        let mut rest = vars[11..].iter().copied();
        let (w_combine, b_combine) = if concat { (rest.next(), rest.next()) } else { (None, None) };
        let (w_linear, b_linear) = if linear { (rest.next(), rest.next()) } else { (None, None) };
        Ok(ParamVars {
            w_face: vars[0],
            b_face: vars[1],
            w_voice: vars[2],
            b_voice: vars[3],
            gate_weight: vars[4],
            gate_bias: vars[5],
            w_fuse: vars[6],
            b_fuse: vars[7],
            w_cls: vars[8],
            b_cls: vars[9],
            logit_scale: vars[10],
            w_combine,
            b_combine,
            w_linear,
            b_linear,
        })
    }

    /// Same order as [`ModelParams::named`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![
            self.w_face,
            self.b_face,
            self.w_voice,
            self.b_voice,
            self.gate_weight,
            self.gate_bias,
            self.w_fuse,
            self.b_fuse,
            self.w_cls,
            self.b_cls,
            self.logit_scale,
        ];
        out.extend(
            [self.w_combine, self.b_combine, self.w_linear, self.b_linear]
                .into_iter()
                .flatten(),
        );
        out
    }
}

/// `x W + b` with `b` repeated over the rows of `x`.
pub fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    let rows = g.shape(xw)[0];
    let bb = g.broadcast_rows(b, rows)?;
    g.add(xw, bb)
}

fn rows_of(g: &Graph, x: Var, what: &str) -> Result<(usize, usize)> {
    match g.shape(x) {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(format!("{what}: expected [B x dim], got {s:?}"))),
    }
}

pub fn project_modality(
    g: &mut Graph,
    x: Var,
    which: Modality,
    p: &ParamVars,
    cfg: &ModelConfig,
) -> Result<Var> {
    let (_, in_dim) = rows_of(g, x, "project_modality")?;
    if in_dim != cfg.input_dim(which) {
        return Err(Error::dim(format!(
            "{} input has width {in_dim}, model expects {}",
            which.as_str(),
            cfg.input_dim(which)
        )));
    }
    let (w, b) = match which {
        Modality::Face => (p.w_face, p.b_face),
        Modality::Voice => (p.w_voice, p.b_voice),
    };
    affine(g, x, w, b)
}

/// Row-wise tangent clip, then the exponential map onto the ball (which re-projects inside it).
pub fn lift(g: &mut Graph, x: Var, cfg: &ModelConfig) -> Result<PoincarePoint> {
    if !cfg.use_hyperbolic {
        return Err(Error::contract("lift called with use_hyperbolic = false"));
    }
    let x = match cfg.tangent_clip {
        Some(r) => g.row_clip(x, r)?,
        None => x,
    };
    hyperbolic::exp_map_origin(g, x, cfg.ball)
}

fn activate(g: &mut Graph, x: Var, act: GateActivation) -> Var {
    match act {
        GateActivation::Tanh => g.tanh(x),
        GateActivation::Relu => g.relu(x),
    }
}

/// Intermediate values of one fusion, kept for inspection and tests.
#[derive(Debug, Clone, Copy)]
pub struct Fusion {
    pub face_act: Var,
    pub voice_act: Var,
    /// Gate values; absent for linear fusion.
    pub gate: Option<Var>,
    pub fused: Var,
}

/// Enhanced gated fusion:
/// `X_a = sigmoid(w ⊙ combine(act(f), act(v)) + b)`, `X_m = X_a ⊙ act(f) + (1 - X_a) ⊙ act(v)`.
pub fn egff_fuse(g: &mut Graph, face: Var, voice: Var, p: &ParamVars, cfg: &ModelConfig) -> Result<Fusion> {
    if g.shape(face) != g.shape(voice) {
        return Err(Error::dim(format!(
            "fusion inputs differ: {:?} vs {:?}",
            g.shape(face),
            g.shape(voice)
        )));
    }
    let (rows, _) = rows_of(g, face, "egff_fuse")?;
    let hf = activate(g, face, cfg.gate_activation);
    let hv = activate(g, voice, cfg.gate_activation);

    if cfg.fusion == FusionKind::Linear {
        let (w, b) = p
            .w_linear
            .zip(p.b_linear)
            .ok_or_else(|| Error::contract("linear fusion parameters missing"))?;
        let cat = g.concat_cols(hf, hv)?;
        let fused = affine(g, cat, w, b)?;
        return Ok(Fusion {
            face_act: hf,
            voice_act: hv,
            gate: None,
            fused,
        });
    }

    let combined = match cfg.attention_combine {
        AttentionCombine::Multiplication => g.mul(hf, hv)?,
        AttentionCombine::Addition => g.add(hf, hv)?,
        AttentionCombine::Concatenation => {
            let (w, b) = p
                .w_combine
                .zip(p.b_combine)
                .ok_or_else(|| Error::contract("concatenation combine parameters missing"))?;
            let cat = g.concat_cols(hf, hv)?;
            affine(g, cat, w, b)?
        }
    };
    let gw = g.broadcast_rows(p.gate_weight, rows)?;
    let gb = g.broadcast_rows(p.gate_bias, rows)?;
    let pre = g.mul(gw, combined)?;
    let pre = g.add(pre, gb)?;
    let gate = g.sigmoid(pre);
    // X_m = hv + X_a ⊙ (hf - hv)
    let delta = g.sub(hf, hv)?;
    let gated = g.mul(gate, delta)?;
    let fused = g.add(hv, gated)?;
    Ok(Fusion {
        face_act: hf,
        voice_act: hv,
        gate: Some(gate),
        fused,
    })
}

pub fn fuse_project(g: &mut Graph, fused: Var, p: &ParamVars) -> Result<Var> {
    affine(g, fused, p.w_fuse, p.b_fuse)
}

pub fn classify(g: &mut Graph, fused: Var, p: &ParamVars) -> Result<Var> {
    affine(g, fused, p.w_cls, p.b_cls)
}

/// Embeddings on which the two modalities are compared: ball points when
/// hyperbolic, otherwise the Euclidean projections.
pub fn aligned_embedding(g: &mut Graph, x: Var, which: Modality, p: &ParamVars, cfg: &ModelConfig) -> Result<Var> {
    let proj = project_modality(g, x, which, p, cfg)?;
    if cfg.use_hyperbolic {
        Ok(lift(g, proj, cfg)?.vector)
    } else {
        Ok(proj)
    }
}

/// Single-modality embedding in the fused space: the fusion of a projection with itself, then `fuse_project`.
pub fn fused_embedding(g: &mut Graph, x: Var, which: Modality, p: &ParamVars, cfg: &ModelConfig) -> Result<Var> {
    let proj = project_modality(g, x, which, p, cfg)?;
    let e = if cfg.use_hyperbolic {
        let h = lift(g, proj, cfg)?;
        hyperbolic::log_map_origin(g, &h)?
    } else {
        proj
    };
    let f = egff_fuse(g, e, e, p, cfg)?;
    fuse_project(g, f.fused, p)
}

/// Every output of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub align_face: Var,
    pub align_voice: Var,
    pub fusion: Fusion,
    pub embedding: Var,
    pub logits: Var,
}

pub fn forward(g: &mut Graph, faces: Var, voices: Var, p: &ParamVars, cfg: &ModelConfig) -> Result<Forward> {
    let pf = project_modality(g, faces, Modality::Face, p, cfg)?;
    let pv = project_modality(g, voices, Modality::Voice, p, cfg)?;
    let (align_face, align_voice, xf, xv) = if cfg.use_hyperbolic {
        let hf = lift(g, pf, cfg)?;
        let hv = lift(g, pv, cfg)?;
        // fusion runs in the tangent space at the origin
        let xf = hyperbolic::log_map_origin(g, &hf)?;
        let xv = hyperbolic::log_map_origin(g, &hv)?;
        (hf.vector, hv.vector, xf, xv)
    } else {
        (pf, pv, pf, pv)
    };
    let fusion = egff_fuse(g, xf, xv, p, cfg)?;
    let embedding = fuse_project(g, fusion.fused, p)?;
    let logits = classify(g, embedding, p)?;
    Ok(Forward {
        align_face,
        align_voice,
        fusion,
        embedding,
        logits,
    })
}

/// Configuration plus parameters; inference entry point.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Model { config, params })
    }

    /// Aligned embeddings for a set of same-modality vectors.
    pub fn embed(&self, which: Modality, vectors: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        self.embed_in(ScoreSpace::Aligned, which, vectors)
    }

    pub fn embed_in(&self, space: ScoreSpace, which: Modality, vectors: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let dim = self.config.input_dim(which);
        let mut out = Vec::with_capacity(vectors.len());
        for chunk in vectors.chunks(256) {
            let mut data = Vec::with_capacity(chunk.len() * dim);
            for v in chunk {
                if v.len() != dim {
                    return Err(Error::dim(format!(
                        "{} vector has length {}, model expects {dim}",
                        which.as_str(),
                        v.len()
                    )));
                }
                data.extend_from_slice(v);
            }
            let mut g = Graph::new();
            let p = self.params.register(&mut g, false);
            let x = g.constant(Tensor::matrix(chunk.len(), dim, data)?);
            let e = match space {
                ScoreSpace::Aligned => aligned_embedding(&mut g, x, which, &p, &self.config)?,
                ScoreSpace::Fused => fused_embedding(&mut g, x, which, &p, &self.config)?,
            };
            let t = g.tensor(e);
            out.extend((0..chunk.len()).map(|i| t.row(i).to_vec()));
        }
        Ok(out)
    }

    /// Similarity of two already-aligned embeddings in the configured mode.
    pub fn similarity(&self, face: &[f64], voice: &[f64]) -> Result<f64> {
        score_aligned(face, voice, self.config.similarity, &self.config.ball)
    }

    pub fn similarity_in(&self, space: ScoreSpace, face: &[f64], voice: &[f64]) -> Result<f64> {
        match space {
            ScoreSpace::Aligned => self.similarity(face, voice),
            ScoreSpace::Fused => score_aligned(face, voice, Similarity::Cosine, &self.config.ball),
        }
    }

    /// Score of one raw face/voice pair; higher means more likely the same identity.
    pub fn score_pair(&self, face: &[f64], voice: &[f64]) -> Result<f64> {
        let f = self.embed(Modality::Face, &[face])?;
        let v = self.embed(Modality::Voice, &[voice])?;
        self.similarity(&f[0], &v[0])
    }
}

pub fn score_aligned(face: &[f64], voice: &[f64], mode: Similarity, ball: &BallConfig) -> Result<f64> {
    if face.len() != voice.len() {
        return Err(Error::dim(format!(
            "aligned embeddings differ in width: {} vs {}",
            face.len(),
            voice.len()
        )));
    }
    Ok(match mode {
        Similarity::NegHyperbolicDistance => -hyperbolic::plain::distance(face, voice, ball),
        Similarity::Cosine => {
            let dot: f64 = face.iter().zip(voice).map(|(a, b)| a * b).sum();
            let nf = face.iter().map(|x| x * x).sum::<f64>().sqrt().max(crate::autodiff::ZERO_GUARD);
            let nv = voice.iter().map(|x| x * x).sum::<f64>().sqrt().max(crate::autodiff::ZERO_GUARD);
            dot / (nf * nv)
        }
    })
}
