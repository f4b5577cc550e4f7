//! Embedding datasets, evaluation splits, pair batching and synthetic data.
//!
//! # File format
//!
//! UTF-8, tab separated. The first line is `#fve v1 face=<int> voice=<int>`.
//! Every following line is one record:
//!
//! ```text
//! identity_id  modality  clip_id  gender  nationality  age_group  v_0 ... v_{n-1}
//! ```
//!
//! Missing demographic fields are empty strings. Vector entries are written
//! with 17 significant digits so every `f64` survives a round trip.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::Modality;

const MAGIC: &str = "#fve v1";

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Demographics {
    pub gender: Option<String>,
    pub nationality: Option<String>,
    pub age_group: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub identity_id: String,
    pub modality: Modality,
    pub clip_id: String,
    pub demographics: Demographics,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub face_dim: usize,
    pub voice_dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

fn opt_field(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_string())
}

fn check_field(name: &str, s: &str) -> Result<()> {
    if s.contains(['\t', '\n', '\r']) {
        return Err(Error::data(format!("{name} `{s}` contains a tab or newline")));
    }
    Ok(())
}

pub(crate) fn fmt_f64(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String cannot fail");
}

impl Dataset {
    pub fn new(face_dim: usize, voice_dim: usize) -> Self {
        Dataset {
            face_dim,
            voice_dim,
            records: Vec::new(),
        }
    }

    pub fn dim(&self, m: Modality) -> usize {
        match m {
            Modality::Face => self.face_dim,
            Modality::Voice => self.voice_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, r: EmbeddingRecord) -> Result<()> {
        self.validate_record(&r)?;
        self.records.push(r);
        Ok(())
    }

    fn validate_record(&self, r: &EmbeddingRecord) -> Result<()> {
        if r.vector.is_empty() {
            return Err(Error::data(format!("record {} has an empty vector", r.clip_id)));
        }
        if let Some(v) = r.vector.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "record {} ({}) holds non-finite value {v}",
                r.clip_id,
                r.modality.as_str()
            )));
        }
        let want = self.dim(r.modality);
        if r.vector.len() != want {
            return Err(Error::data(format!(
                "{} record {} has {} values, dataset declares {want}",
                r.modality.as_str(),
                r.clip_id,
                r.vector.len()
            )));
        }
        Ok(())
    }

    /// Sorted identity ids.
    pub fn identities(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.identity_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn to_tsv(&self) -> Result<String> {
        let mut out = format!("{MAGIC} face={} voice={}\n", self.face_dim, self.voice_dim);
        for r in &self.records {
            self.validate_record(r)?;
            let d = &r.demographics;
            let fields = [
                ("identity_id", r.identity_id.as_str()),
                ("clip_id", r.clip_id.as_str()),
                ("gender", d.gender.as_deref().unwrap_or("")),
                ("nationality", d.nationality.as_deref().unwrap_or("")),
                ("age_group", d.age_group.as_deref().unwrap_or("")),
            ];
            for (n, v) in fields {
                check_field(n, v)?;
            }
            out.push_str(&r.identity_id);
            out.push('\t');
            out.push_str(r.modality.as_str());
            for (_, v) in &fields[1..] {
                out.push('\t');
                out.push_str(v);
            }
            for v in &r.vector {
                out.push('\t');
                fmt_f64(&mut out, *v);
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let (face_dim, voice_dim) = parse_header(header)?;
        let mut ds = Dataset::new(face_dim, voice_dim);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 7 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected at least 7 columns, found {}", cols.len()),
                });
            }
            let modality: Modality = cols[1].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("unknown modality `{}`", cols[1]),
            })?;
            let vector = cols[6..]
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|e| Error::Parse {
                        line: lineno,
                        message: format!("bad number `{s}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let rec = EmbeddingRecord {
                identity_id: cols[0].to_string(),
                modality,
                clip_id: cols[2].to_string(),
                demographics: Demographics {
                    gender: opt_field(cols[3]),
                    nationality: opt_field(cols[4]),
                    age_group: opt_field(cols[5]),
                },
                vector,
            };
            ds.push(rec).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("line {lineno}: {m}")),
                Error::Data(m) => Error::Data(format!("line {lineno}: {m}")),
                other => other,
            })?;
        }
        Ok(ds)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        Dataset::from_tsv(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()?)?;
        Ok(())
    }
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let bad = |m: &str| Error::Parse {
        line: 1,
        message: m.to_string(),
    };
    let rest = line
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad("header must start with `#fve v1`"))?;
    let (mut face, mut voice) = (None, None);
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| bad(&format!("bad header token `{tok}`")))?;
        let n: usize = v
            .parse()
            .map_err(|_| bad(&format!("bad dimension `{v}`")))?;
        match k {
            "face" => face = Some(n),
            "voice" => voice = Some(n),
            _ => return Err(bad(&format!("unknown header key `{k}`"))),
        }
    }
    match (face, voice) {
        (Some(f), Some(v)) if f > 0 && v > 0 => Ok((f, v)),
        _ => Err(bad("header needs positive face= and voice= dimensions")),
    }
}

// ----- splits ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Same speakers, disjoint clips.
    SeenHeard,
    /// Disjoint speakers.
    UnseenUnheard,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seen_heard" => Ok(SplitMode::SeenHeard),
            "unseen_unheard" => Ok(SplitMode::UnseenUnheard),
            other => Err(Error::Config(format!("unknown split mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

/// Train/val/test membership: identity ids for unseen-unheard, clip ids for seen-heard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

pub fn read_id_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read split file {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

pub fn write_id_list(path: &Path, ids: &BTreeSet<String>) -> Result<()> {
    let mut s = String::new();
    for id in ids {
        s.push_str(id);
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

impl SplitSpec {
    pub fn load(mode: SplitMode, train: &Path, val: Option<&Path>, test: &Path) -> Result<Self> {
        Ok(SplitSpec {
            mode,
            train: read_id_list(train)?,
            val: val.map(read_id_list).transpose()?.unwrap_or_default(),
            test: read_id_list(test)?,
        })
    }

    pub fn part(&self, p: Part) -> &BTreeSet<String> {
        match p {
            Part::Train => &self.train,
            Part::Val => &self.val,
            Part::Test => &self.test,
        }
    }

    pub fn contains(&self, p: Part, r: &EmbeddingRecord) -> bool {
        let key = match self.mode {
            SplitMode::UnseenUnheard => &r.identity_id,
            SplitMode::SeenHeard => &r.clip_id,
        };
        self.part(p).contains(key)
    }

    pub fn records<'a>(&self, ds: &'a Dataset, p: Part) -> Vec<&'a EmbeddingRecord> {
        ds.records.iter().filter(|r| self.contains(p, r)).collect()
    }

    /// Sorted identity ids appearing in one part.
    pub fn identities(&self, ds: &Dataset, p: Part) -> Vec<String> {
        self.records(ds, p)
            .into_iter()
            .map(|r| r.identity_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Checks disjointness, the mode's identity rule, and that every id exists.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::data("split needs non-empty train and test lists"));
        }
        let parts = [("train", &self.train), ("val", &self.val), ("test", &self.test)];
        for (i, (na, a)) in parts.iter().enumerate() {
            for (nb, b) in &parts[i + 1..] {
                if let Some(x) = a.intersection(b).next() {
                    return Err(Error::data(format!("`{x}` appears in both {na} and {nb}")));
                }
            }
        }
        let known: BTreeSet<&str> = match self.mode {
            SplitMode::UnseenUnheard => ds.records.iter().map(|r| r.identity_id.as_str()).collect(),
            SplitMode::SeenHeard => ds.records.iter().map(|r| r.clip_id.as_str()).collect(),
        };
        for (name, ids) in parts {
            if let Some(x) = ids.iter().find(|x| !known.contains(x.as_str())) {
                return Err(Error::data(format!("{name} split references unknown id `{x}`")));
            }
        }
        if self.mode == SplitMode::SeenHeard {
            let train_ids = self.identities(ds, Part::Train);
            let test_ids = self.identities(ds, Part::Test);
            if train_ids != test_ids {
                return Err(Error::data(
                    "seen_heard split: train and test must cover the same identities",
                ));
            }
        }
        Ok(())
    }

    /// Random split with `n_val` / `n_test` identities (unseen-unheard) or clips per identity (seen-heard).
    pub fn random(ds: &Dataset, mode: SplitMode, n_val: usize, n_test: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = SplitSpec {
            mode,
            train: BTreeSet::new(),
            val: BTreeSet::new(),
            test: BTreeSet::new(),
        };
        match mode {
            SplitMode::UnseenUnheard => {
                let mut ids = ds.identities();
                if ids.len() < n_val + n_test + 2 {
                    return Err(Error::contract(format!(
                        "{} identities cannot supply {n_val} val + {n_test} test and 2 train",
                        ids.len()
                    )));
                }
                ids.shuffle(&mut rng);
                spec.test = ids[..n_test].iter().cloned().collect();
                spec.val = ids[n_test..n_test + n_val].iter().cloned().collect();
                spec.train = ids[n_test + n_val..].iter().cloned().collect();
            }
            SplitMode::SeenHeard => {
                let mut clips: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
                for r in &ds.records {
                    clips.entry(&r.identity_id).or_default().insert(&r.clip_id);
                }
                for (id, set) in clips {
                    let mut cs: Vec<&str> = set.into_iter().collect();
                    if cs.len() < n_val + n_test + 1 {
                        return Err(Error::contract(format!(
                            "identity {id} has {} clips, needs {}",
                            cs.len(),
                            n_val + n_test + 1
                        )));
                    }
                    cs.shuffle(&mut rng);
                    spec.test.extend(cs[..n_test].iter().map(|s| s.to_string()));
                    spec.val.extend(cs[n_test..n_test + n_val].iter().map(|s| s.to_string()));
                    spec.train.extend(cs[n_test + n_val..].iter().map(|s| s.to_string()));
                }
            }
        }
        Ok(spec)
    }
}

// ----- batching -------------------------------------------------------------

/// `B` matched pairs; row `i` of both matrices belongs to identity `labels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub faces: Tensor,
    pub voices: Tensor,
    pub labels: Vec<usize>,
}

/// Seeded pair sampler over one split part.
///
/// Each epoch draws identities from a fresh shuffle, without replacement
/// until exhausted, then reshuffles; each draw pairs one uniformly chosen
/// face with one uniformly chosen voice of that identity.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    identities: Vec<String>,
    faces: Vec<Vec<Vec<f64>>>,
    voices: Vec<Vec<Vec<f64>>>,
    face_dim: usize,
    voice_dim: usize,
    batch_size: usize,
    steps_per_epoch: usize,
    rng: ChaCha8Rng,
}

type Vectors = Vec<Vec<f64>>;

impl BatchSampler {
    pub fn new(ds: &Dataset, split: &SplitSpec, part: Part, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::contract(format!("batch size must be >= 2, got {batch_size}")));
        }
        let mut by_id: BTreeMap<String, (Vectors, Vectors)> = BTreeMap::new();
        for r in split.records(ds, part) {
            let e = by_id.entry(r.identity_id.clone()).or_default();
            match r.modality {
                Modality::Face => e.0.push(r.vector.clone()),
                Modality::Voice => e.1.push(r.vector.clone()),
            }
        }
        if by_id.len() < 2 {
            return Err(Error::data(format!(
                "batching needs at least 2 identities, found {}",
                by_id.len()
            )));
        }
        let missing: Vec<&str> = by_id
            .iter()
            .filter(|(_, (f, v))| f.is_empty() || v.is_empty())
            .map(|(k, _)| k.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::data(format!(
                "identities without both modalities: {}",
                missing.join(", ")
            )));
        }
        let n_faces: usize = by_id.values().map(|(f, _)| f.len()).sum();
        let steps_per_epoch = n_faces.div_ceil(batch_size);
        let (identities, lists): (Vec<_>, Vec<_>) = by_id.into_iter().unzip();
        let (faces, voices) = lists.into_iter().unzip();
        Ok(BatchSampler {
            identities,
            faces,
            voices,
            face_dim: ds.face_dim,
            voice_dim: ds.voice_dim,
            batch_size,
            steps_per_epoch,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Label `i` of every batch refers to `identities()[i]`.
    pub fn identities(&self) -> &[String] {
        &self.identities
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    /// The next epoch of `ceil(#faces / B)` full batches.
    pub fn next_epoch(&mut self) -> Vec<PairBatch> {
        let n_ids = self.identities.len();
        let mut order: Vec<usize> = (0..n_ids).collect();
        order.shuffle(&mut self.rng);
        let mut cursor = 0;
        let mut out = Vec::with_capacity(self.steps_per_epoch);
        for _ in 0..self.steps_per_epoch {
            let mut faces = Vec::with_capacity(self.batch_size * self.face_dim);
            let mut voices = Vec::with_capacity(self.batch_size * self.voice_dim);
            let mut labels = Vec::with_capacity(self.batch_size);
            for _ in 0..self.batch_size {
                if cursor == n_ids {
                    order.shuffle(&mut self.rng);
                    cursor = 0;
                }
                let id = order[cursor];
                cursor += 1;
                let f = self.rng.random_range(0..self.faces[id].len());
                let v = self.rng.random_range(0..self.voices[id].len());
                faces.extend_from_slice(&self.faces[id][f]);
                voices.extend_from_slice(&self.voices[id][v]);
                labels.push(id);
            }
            out.push(PairBatch {
                faces: Tensor::matrix(self.batch_size, self.face_dim, faces).expect("batch shape"),
                voices: Tensor::matrix(self.batch_size, self.voice_dim, voices).expect("batch shape"),
                labels,
            });
        }
        out
    }
}

/// One epoch of batches for a fresh sampler; see [`BatchSampler`].
pub fn make_batches(ds: &Dataset, split: &SplitSpec, batch_size: usize, seed: u64) -> Result<Vec<PairBatch>> {
    Ok(BatchSampler::new(ds, split, Part::Train, batch_size, seed)?.next_epoch())
}

// ----- synthetic data -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub num_identities: usize,
    pub samples_per_id: usize,
    pub face_dim: usize,
    pub voice_dim: usize,
    /// Weight of the shared identity latent in the voice vectors, in `[0, 1]`.
    pub coupling: f64,
    pub noise: f64,
    pub latent_dim: usize,
    pub demographics: bool,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            num_identities: 32,
            samples_per_id: 20,
            face_dim: 96,
            voice_dim: 80,
            coupling: 1.0,
            noise: 0.1,
            latent_dim: 16,
            demographics: false,
            seed: 0,
        }
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            scale * e
        })
        .collect()
}

fn apply(m: &[f64], rows: usize, z: &[f64]) -> Vec<f64> {
    let cols = z.len();
    (0..rows)
        .map(|r| m[r * cols..(r + 1) * cols].iter().zip(z).map(|(a, b)| a * b).sum())
        .collect()
}

/// Faces are `A_f z + noise`; voices are `rho A_v z + (1 - rho) A_v z' + noise`
/// with one shared latent `z` and one private latent `z'` per identity.
pub fn synth_generate(p: &SynthParams) -> Result<Dataset> {
    if p.num_identities < 2 || p.samples_per_id < 2 {
        return Err(Error::contract(format!(
            "synthetic data needs >= 2 identities and >= 2 samples each (got {} and {})",
            p.num_identities, p.samples_per_id
        )));
    }
    if !(0.0..=1.0).contains(&p.coupling) {
        return Err(Error::contract(format!("coupling must be in [0, 1], got {}", p.coupling)));
    }
    if !(p.noise >= 0.0 && p.noise.is_finite()) {
        return Err(Error::contract(format!("noise must be >= 0, got {}", p.noise)));
    }
    if p.face_dim == 0 || p.voice_dim == 0 || p.latent_dim == 0 {
        return Err(Error::contract("synthetic dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let ld = p.latent_dim;
    // entries N(0, 1/d) keep every output coordinate at unit variance
    let scale = 1.0 / (ld as f64).sqrt();
    let a_face = gaussian_matrix(&mut rng, p.face_dim, ld, scale);
    let a_voice = gaussian_matrix(&mut rng, p.voice_dim, ld, scale);

    let mut ds = Dataset::new(p.face_dim, p.voice_dim);
    let width = (p.num_identities - 1).to_string().len().max(4);
    let genders = ["f", "m"];
    let nationalities = ["n0", "n1", "n2", "n3"];
    let ages = ["a0", "a1", "a2"];
    for k in 0..p.num_identities {
        let z = gaussian_matrix(&mut rng, ld, 1, 1.0);
        let z_private = gaussian_matrix(&mut rng, ld, 1, 1.0);
        let face_mean = apply(&a_face, p.face_dim, &z);
        let shared = apply(&a_voice, p.voice_dim, &z);
        let private = apply(&a_voice, p.voice_dim, &z_private);
        let voice_mean: Vec<f64> = shared
            .iter()
            .zip(&private)
            .map(|(s, q)| p.coupling * s + (1.0 - p.coupling) * q)
            .collect();
        let demographics = if p.demographics {
            Demographics {
                gender: Some(genders[rng.random_range(0..genders.len())].into()),
                nationality: Some(nationalities[rng.random_range(0..nationalities.len())].into()),
                age_group: Some(ages[rng.random_range(0..ages.len())].into()),
            }
        } else {
            Demographics::default()
        };
        let identity_id = format!("id{k:0width$}");
        for s in 0..p.samples_per_id {
            let clip_id = format!("{identity_id}_c{s:03}");
            for (modality, mean) in [(Modality::Face, &face_mean), (Modality::Voice, &voice_mean)] {
                let vector = mean
                    .iter()
                    .map(|m| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        m + p.noise * e
                    })
                    .collect();
                ds.push(EmbeddingRecord {
                    identity_id: identity_id.clone(),
                    modality,
                    clip_id: clip_id.clone(),
                    demographics: demographics.clone(),
                    vector,
                })?;
            }
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, m: Modality, clip: &str, v: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord {
            identity_id: id.into(),
            modality: m,
            clip_id: clip.into(),
            demographics: Demographics::default(),
            vector: v,
        }
    }

    fn four_identity_fixture() -> Dataset {
        let mut ds = Dataset::new(2, 1);
        for (i, id) in ["a", "b", "c", "d"].iter().enumerate() {
            let x = i as f64;
            ds.push(rec(id, Modality::Face, &format!("{id}1"), vec![x, -x])).unwrap();
            ds.push(rec(id, Modality::Voice, &format!("{id}1"), vec![x])).unwrap();
        }
        ds
    }

    fn ids(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn header_only_is_empty() {
        let ds = Dataset::from_tsv("#fve v1 face=3 voice=2\n").unwrap();
        assert!(ds.is_empty());
        assert_eq!((ds.face_dim, ds.voice_dim), (3, 2));
    }

    #[test]
    fn two_record_fixture_round_trips() {
        let text = "#fve v1 face=2 voice=1\n\
                    alice\tface\tv1\tf\tnl\t30s\t1.0000000000000001e-1\t-2.5000000000000000e0\n\
                    alice\tvoice\tv1\t\t\t\t3.3333333333333331e-1\n";
        let ds = Dataset::from_tsv(text).unwrap();
        assert_eq!(ds.len(), 2);
        let r = &ds.records[0];
        assert_eq!(r.identity_id, "alice");
        assert_eq!(r.demographics.gender.as_deref(), Some("f"));
        assert_eq!(r.demographics.nationality.as_deref(), Some("nl"));
        assert_eq!(r.demographics.age_group.as_deref(), Some("30s"));
        assert_eq!(r.vector, vec![0.1, -2.5]);
        assert_eq!(ds.records[1].demographics, Demographics::default());
        assert_eq!(ds.records[1].vector, vec![1.0 / 3.0]);
        assert_eq!(ds.to_tsv().unwrap(), text);
    }

    #[test]
    fn nan_is_numeric_error() {
        let text = "#fve v1 face=1 voice=1\nx\tface\tc\t\t\t\tNaN\n";
        assert!(matches!(Dataset::from_tsv(text), Err(Error::Numeric(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "#fve v1 face=1 voice=1\nx\tface\tc\t\t\t\t1.0\nx\tface\tc\n";
        match Dataset::from_tsv(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "#fve v1 face=1 voice=1\nx\tface\tc\t\t\t\tabc\n";
        assert!(matches!(Dataset::from_tsv(text), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(Dataset::from_tsv("fve face=1"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn dimension_mismatch_is_data_error() {
        let text = "#fve v1 face=2 voice=1\nx\tface\tc\t\t\t\t1.0\n";
        assert!(matches!(Dataset::from_tsv(text), Err(Error::Data(_))));
    }

    #[test]
    fn four_identities_two_batches() {
        let ds = four_identity_fixture();
        let split = SplitSpec {
            mode: SplitMode::UnseenUnheard,
            train: ids(&["a", "b", "c", "d"]),
            val: BTreeSet::new(),
            test: ids(&["a"]),
        };
        let batches = make_batches(&ds, &split, 2, 1).unwrap();
        assert_eq!(batches.len(), 2);
        let seen: BTreeSet<usize> = batches.iter().flat_map(|b| b.labels.clone()).collect();
        assert_eq!(seen.len(), 4);
        for b in &batches {
            for (i, l) in b.labels.iter().enumerate() {
                // fixture encodes the identity index in the values
                assert_eq!(b.faces.row(i)[0], *l as f64);
                assert_eq!(b.voices.row(i)[0], *l as f64);
            }
        }
        assert_eq!(batches, make_batches(&ds, &split, 2, 1).unwrap());
    }

    #[test]
    fn missing_modality_lists_identities() {
        let mut ds = four_identity_fixture();
        ds.push(rec("e", Modality::Face, "e1", vec![0.0, 0.0])).unwrap();
        let split = SplitSpec {
            mode: SplitMode::UnseenUnheard,
            train: ids(&["a", "b", "e"]),
            val: BTreeSet::new(),
            test: ids(&["c"]),
        };
        let err = make_batches(&ds, &split, 2, 0).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains('e'));
    }

    #[test]
    fn unseen_split_never_trains_on_test_identities() {
        let ds = synth_generate(&SynthParams {
            num_identities: 10,
            samples_per_id: 3,
            face_dim: 4,
            voice_dim: 3,
            ..Default::default()
        })
        .unwrap();
        let split = SplitSpec::random(&ds, SplitMode::UnseenUnheard, 2, 3, 5).unwrap();
        split.validate(&ds).unwrap();
        let mut sampler = BatchSampler::new(&ds, &split, Part::Train, 4, 9).unwrap();
        let names = sampler.identities().to_vec();
        for _ in 0..3 {
            for b in sampler.next_epoch() {
                for l in b.labels {
                    assert!(split.train.contains(&names[l]));
                    assert!(!split.test.contains(&names[l]));
                }
            }
        }
    }

    #[test]
    fn seen_heard_split_invariants() {
        let ds = synth_generate(&SynthParams {
            num_identities: 4,
            samples_per_id: 6,
            face_dim: 3,
            voice_dim: 3,
            ..Default::default()
        })
        .unwrap();
        let split = SplitSpec::random(&ds, SplitMode::SeenHeard, 1, 2, 1).unwrap();
        split.validate(&ds).unwrap();
        assert_eq!(split.identities(&ds, Part::Train), split.identities(&ds, Part::Test));
        assert!(split.train.is_disjoint(&split.test));

        let mut broken = split.clone();
        let moved = broken.test.iter().next().unwrap().clone();
        broken.train.insert(moved);
        assert!(broken.validate(&ds).is_err());
    }

    #[test]
    fn synth_is_deterministic_and_coupled() {
        let p = SynthParams {
            num_identities: 3,
            samples_per_id: 2,
            face_dim: 5,
            voice_dim: 4,
            noise: 0.0,
            ..Default::default()
        };
        let a = synth_generate(&p).unwrap();
        assert_eq!(a, synth_generate(&p).unwrap());
        // with no noise every sample of an identity equals its latent image
        for pair in a.records.chunks(4) {
            assert_eq!(pair[0].vector, pair[2].vector);
            assert_eq!(pair[1].vector, pair[3].vector);
        }
        assert!(synth_generate(&SynthParams { coupling: 1.5, ..p.clone() }).is_err());
        assert!(synth_generate(&SynthParams { num_identities: 1, ..p }).is_err());
    }

    #[test]
    fn synth_round_trips_byte_identically() {
        let ds = synth_generate(&SynthParams {
            num_identities: 3,
            samples_per_id: 2,
            face_dim: 4,
            voice_dim: 2,
            demographics: true,
            ..Default::default()
        })
        .unwrap();
        let text = ds.to_tsv().unwrap();
        let back = Dataset::from_tsv(&text).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_tsv().unwrap(), text);
    }
}
