//! Cross-modal verification (EER, AUC), 1:n_c matching and demographic strata.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Demographics, Part, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{Modality, Model, ScoreSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationTrial {
    /// Higher means more likely the same identity.
    pub score: f64,
    pub is_match: bool,
    pub face_demographics: Demographics,
    pub voice_demographics: Demographics,
}

impl VerificationTrial {
    pub fn new(score: f64, is_match: bool) -> Self {
        VerificationTrial {
            score,
            is_match,
            face_demographics: Demographics::default(),
            voice_demographics: Demographics::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingTrial {
    pub probe_modality: Modality,
    pub probe: Vec<f64>,
    pub gallery: Vec<Vec<f64>>,
    pub correct_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

fn split_classes(trials: &[VerificationTrial]) -> Result<(usize, usize)> {
    if let Some(t) = trials.iter().find(|t| !t.score.is_finite()) {
        return Err(Error::numeric(format!("trial score {} is not finite", t.score)));
    }
    let p = trials.iter().filter(|t| t.is_match).count();
    let n = trials.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::contract(format!(
            "metrics need both classes; got {p} matches and {n} non-matches"
        )));
    }
    Ok((p, n))
}

/// One ROC operating point: a trial is accepted when `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Operating points at every distinct score, ascending, followed by `+inf`.
pub fn roc_points(trials: &[VerificationTrial]) -> Result<Vec<RocPoint>> {
    let (p, n) = split_classes(trials)?;
    let mut sorted: Vec<(f64, bool)> = trials.iter().map(|t| (t.score, t.is_match)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    // counts of trials strictly below the current threshold
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        out.push(RocPoint {
            threshold: t,
            far: (n - neg_below) as f64 / n as f64,
            frr: pos_below as f64 / p as f64,
        });
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
    }
    out.push(RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(out)
}

/// Equal error rate, linearly interpolated at the first sign change of FAR - FRR.
pub fn compute_eer(trials: &[VerificationTrial]) -> Result<Eer> {
    let pts = roc_points(trials)?;
    let i = pts
        .iter()
        .position(|q| q.far - q.frr <= 0.0)
        .expect("the +inf point always has FAR - FRR = -1");
    let (a, b) = (pts[i - 1], pts[i]);
    let (da, db) = (a.far - a.frr, b.far - b.frr);
    if db == 0.0 {
        return Ok(Eer {
            eer: b.far,
            threshold: b.threshold,
        });
    }
    let lambda = da / (da - db);
    let eer = a.far + lambda * (b.far - a.far);
    let threshold = if b.threshold.is_finite() {
        a.threshold + lambda * (b.threshold - a.threshold)
    } else {
        a.threshold
    };
    Ok(Eer { eer, threshold })
}

/// ROC AUC as the tie-aware rank statistic `(concordant + ties / 2) / (P N)`.
pub fn compute_auc(trials: &[VerificationTrial]) -> Result<f64> {
    let (p, n) = split_classes(trials)?;
    let mut sorted: Vec<(f64, bool)> = trials.iter().map(|t| (t.score, t.is_match)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos = sorted[i..j].iter().filter(|x| x.1).count();
        rank_sum += midrank * pos as f64;
        i = j;
    }
    let u = rank_sum - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p as f64 * n as f64))
}

/// Trapezoidal area under TPR against FAR.
pub fn trapezoid_auc(trials: &[VerificationTrial]) -> Result<f64> {
    let pts = roc_points(trials)?;
    Ok(pts
        .windows(2)
        .map(|w| {
            let (tpr_a, tpr_b) = (1.0 - w[0].frr, 1.0 - w[1].frr);
            (w[0].far - w[1].far) * (tpr_a + tpr_b) / 2.0
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingResult {
    pub n_c: usize,
    pub n_trials: usize,
    pub accuracy: f64,
    /// Trials whose best score was shared by several gallery items.
    pub ties: usize,
}

/// Argmax accuracy; `score(face, voice)` orders the arguments by modality.
pub fn matching_accuracy<F>(trials: &[MatchingTrial], score: F) -> Result<MatchingResult>
where
    F: Fn(&[f64], &[f64]) -> Result<f64>,
{
    let first = trials
        .first()
        .ok_or_else(|| Error::contract("matching needs at least one trial"))?;
    let n_c = first.gallery.len();
    let (mut correct, mut ties) = (0usize, 0usize);
    for t in trials {
        if t.gallery.len() != n_c || n_c < 2 || t.correct_index >= n_c {
            return Err(Error::contract(format!(
                "matching trials need one shared gallery size >= 2 with a valid correct index \
                 (got size {}, index {})",
                t.gallery.len(),
                t.correct_index
            )));
        }
        let mut best = (0usize, f64::NEG_INFINITY);
        let mut tied = false;
        for (i, g) in t.gallery.iter().enumerate() {
            let s = match t.probe_modality {
                Modality::Face => score(&t.probe, g)?,
                Modality::Voice => score(g, &t.probe)?,
            };
            if !s.is_finite() {
                return Err(Error::numeric(format!("gallery score {s} is not finite")));
            }
            if s > best.1 {
                best = (i, s);
                tied = false;
            } else if s == best.1 {
                tied = true;
            }
        }
        ties += tied as usize;
        correct += (best.0 == t.correct_index) as usize;
    }
    Ok(MatchingResult {
        n_c,
        n_trials: trials.len(),
        accuracy: correct as f64 / trials.len() as f64,
        ties,
    })
}

// ----- strata ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stratum {
    #[serde(rename = "random")]
    Random,
    G,
    N,
    A,
    #[serde(rename = "GNA")]
    Gna,
}

impl Stratum {
    pub const ALL: [Stratum; 5] = [Stratum::Random, Stratum::G, Stratum::N, Stratum::A, Stratum::Gna];

    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Random => "random",
            Stratum::G => "G",
            Stratum::N => "N",
            Stratum::A => "A",
            Stratum::Gna => "GNA",
        }
    }

    fn fields(self) -> &'static [fn(&Demographics) -> &Option<String>] {
        match self {
            Stratum::Random => &[],
            Stratum::G => &[|d| &d.gender],
            Stratum::N => &[|d| &d.nationality],
            Stratum::A => &[|d| &d.age_group],
            Stratum::Gna => &[|d| &d.gender, |d| &d.nationality, |d| &d.age_group],
        }
    }

    /// Whether a trial survives this stratum's restriction; matches always do.
    pub fn admits(self, t: &VerificationTrial) -> bool {
        t.is_match
            || self
                .fields()
                .iter()
                .all(|f| f(&t.face_demographics).is_some() && f(&t.face_demographics) == f(&t.voice_demographics))
    }

    fn tagged(self, t: &VerificationTrial) -> bool {
        self.fields()
            .iter()
            .all(|f| f(&t.face_demographics).is_some() && f(&t.voice_demographics).is_some())
    }
}

impl std::str::FromStr for Stratum {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" | "rand" => Ok(Stratum::Random),
            "g" => Ok(Stratum::G),
            "n" => Ok(Stratum::N),
            "a" => Ok(Stratum::A),
            "gna" => Ok(Stratum::Gna),
            _ => Err(Error::Config(format!("unknown stratum `{s}` (random, G, N, A, GNA)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRow {
    pub split: String,
    pub stratum: Stratum,
    pub n_trials: usize,
    pub eer: f64,
    pub auc: f64,
}

/// One row per stratum that keeps both classes; strata without non-matches are absent.
pub fn stratified_report(trials: &[VerificationTrial], strata: &[Stratum], split: &str) -> Result<Vec<VerificationRow>> {
    let mut rows = Vec::new();
    for &s in strata {
        if let Some(t) = trials.iter().find(|t| !s.tagged(t)) {
            let which = if t.is_match { "match" } else { "non-match" };
            return Err(Error::data(format!(
                "stratum {} needs demographic tags, but a {which} trial lacks them",
                s.as_str()
            )));
        }
        let kept: Vec<VerificationTrial> = trials.iter().filter(|t| s.admits(t)).cloned().collect();
        let pos = kept.iter().filter(|t| t.is_match).count();
        if pos == 0 || pos == kept.len() {
            continue;
        }
        rows.push(VerificationRow {
            split: split.to_string(),
            stratum: s,
            n_trials: kept.len(),
            eer: compute_eer(&kept)?.eer,
            auc: compute_auc(&kept)?,
        });
    }
    Ok(rows)
}

// ----- trial construction ---------------------------------------------------

/// A face record and a voice record of the dataset, by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrialPair {
    pub face: usize,
    pub voice: usize,
    pub is_match: bool,
}

struct PartIndex {
    faces: Vec<usize>,
    voices: Vec<usize>,
    /// identity -> (face record indices, voice record indices)
    by_id: BTreeMap<String, (Vec<usize>, Vec<usize>)>,
}

impl PartIndex {
    fn new(ds: &Dataset, split: &SplitSpec, part: Part) -> Self {
        let mut idx = PartIndex {
            faces: Vec::new(),
            voices: Vec::new(),
            by_id: BTreeMap::new(),
        };
        for (i, r) in ds.records.iter().enumerate() {
            if !split.contains(part, r) {
                continue;
            }
            let e = idx.by_id.entry(r.identity_id.clone()).or_default();
            match r.modality {
                Modality::Face => {
                    idx.faces.push(i);
                    e.0.push(i);
                }
                Modality::Voice => {
                    idx.voices.push(i);
                    e.1.push(i);
                }
            }
        }
        idx
    }
}

/// `k` distinct indices in `0..n` satisfying `keep`, in draw order.
fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, n_kept: usize, k: usize, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    if 2 * k > n_kept {
        let mut all: Vec<usize> = (0..n).filter(|&i| keep(i)).collect();
        all.shuffle(rng);
        all.truncate(k);
        return all;
    }
    let mut seen = HashSet::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let i = rng.random_range(0..n);
        if keep(i) && seen.insert(i) {
            out.push(i);
        }
    }
    out
}

/// Balanced match / non-match pairs drawn without replacement.
pub fn build_verification_trials(
    ds: &Dataset,
    split: &SplitSpec,
    part: Part,
    max_trials: usize,
    seed: u64,
) -> Result<Vec<TrialPair>> {
    let idx = PartIndex::new(ds, split, part);
    let n_pairs = idx.faces.len() * idx.voices.len();
    let is_match = |i: usize| {
        let (f, v) = (idx.faces[i / idx.voices.len()], idx.voices[i % idx.voices.len()]);
        ds.records[f].identity_id == ds.records[v].identity_id
    };
    let n_pos: usize = idx.by_id.values().map(|(f, v)| f.len() * v.len()).sum();
    let n_neg = n_pairs - n_pos;
    let each = (max_trials / 2).min(n_pos).min(n_neg);
    if each == 0 {
        return Err(Error::contract(format!(
            "cannot balance trials: {n_pos} match and {n_neg} non-match pairs available, max_trials {max_trials}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let to_pair = |i: usize, m: bool| TrialPair {
        face: idx.faces[i / idx.voices.len()],
        voice: idx.voices[i % idx.voices.len()],
        is_match: m,
    };
    let mut out: Vec<TrialPair> = sample_distinct(&mut rng, n_pairs, n_pos, each, is_match)
        .into_iter()
        .map(|i| to_pair(i, true))
        .collect();
    out.extend(
        sample_distinct(&mut rng, n_pairs, n_neg, each, |i| !is_match(i))
            .into_iter()
            .map(|i| to_pair(i, false)),
    );
    Ok(out)
}

/// Parses `clip_id_face \t clip_id_voice \t {0,1}` lines against the dataset.
pub fn parse_trial_list(text: &str, ds: &Dataset) -> Result<Vec<TrialPair>> {
    let mut faces = BTreeMap::new();
    let mut voices = BTreeMap::new();
    for (i, r) in ds.records.iter().enumerate() {
        let map = match r.modality {
            Modality::Face => &mut faces,
            Modality::Voice => &mut voices,
        };
        map.entry(r.clip_id.as_str()).or_insert(i);
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| Error::Parse { line: line_no, message: m };
        let cols: Vec<&str> = line.split('\t').collect();
        let [f, v, l] = cols[..] else {
            return Err(err(format!("expected 3 tab-separated columns, found {}", cols.len())));
        };
        let is_match = match l.trim() {
            "1" => true,
            "0" => false,
            other => return Err(err(format!("label must be 0 or 1, got `{other}`"))),
        };
        let face = *faces.get(f).ok_or_else(|| err(format!("unknown face clip `{f}`")))?;
        let voice = *voices.get(v).ok_or_else(|| err(format!("unknown voice clip `{v}`")))?;
        out.push(TrialPair { face, voice, is_match });
    }
    Ok(out)
}

pub fn format_trial_list(pairs: &[TrialPair], ds: &Dataset) -> String {
    let mut s = String::new();
    for p in pairs {
        let _ = writeln!(
            s,
            "{}\t{}\t{}",
            ds.records[p.face].clip_id,
            ds.records[p.voice].clip_id,
            p.is_match as u8
        );
    }
    s
}

/// Record indices for one matching trial; the gallery has exactly one item of the probe identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchingSpec {
    pub probe_modality: Modality,
    pub probe: usize,
    pub gallery: Vec<usize>,
    pub correct_index: usize,
}

/// Probes alternate face, voice, face, ... Distractor identities are distinct
/// while the part has enough of them and are reused cyclically otherwise.
pub fn build_matching_trials(
    ds: &Dataset,
    split: &SplitSpec,
    part: Part,
    n_c: usize,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<MatchingSpec>> {
    if n_c < 2 || n_trials == 0 {
        return Err(Error::contract(format!("matching needs n_c >= 2 and trials > 0 (n_c {n_c})")));
    }
    let idx = PartIndex::new(ds, split, part);
    let ids: Vec<&(Vec<usize>, Vec<usize>)> = idx
        .by_id
        .values()
        .filter(|(f, v)| !f.is_empty() && !v.is_empty())
        .collect();
    if ids.len() < 2 {
        return Err(Error::contract("matching needs at least two identities with both modalities"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, xs: &[usize]| xs[rng.random_range(0..xs.len())];
    let mut out = Vec::with_capacity(n_trials);
    for t in 0..n_trials {
        let probe_modality = if t % 2 == 0 { Modality::Face } else { Modality::Voice };
        let side = |e: &(Vec<usize>, Vec<usize>), m: Modality| -> Vec<usize> {
            match m {
                Modality::Face => e.0.clone(),
                Modality::Voice => e.1.clone(),
            }
        };
        let target = rng.random_range(0..ids.len());
        let probe = pick(&mut rng, &side(ids[target], probe_modality));
        let gallery_side = probe_modality.other();
        let mut others: Vec<usize> = (0..ids.len()).filter(|&i| i != target).collect();
        others.shuffle(&mut rng);
        let mut gallery: Vec<usize> = (0..n_c - 1)
            .map(|j| pick(&mut rng, &side(ids[others[j % others.len()]], gallery_side)))
            .collect();
        let correct_index = rng.random_range(0..n_c);
        gallery.insert(correct_index, pick(&mut rng, &side(ids[target], gallery_side)));
        out.push(MatchingSpec {
            probe_modality,
            probe,
            gallery,
            correct_index,
        });
    }
    Ok(out)
}

// ----- model-driven evaluation ----------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub max_trials: usize,
    pub gallery_sizes: Vec<usize>,
    pub matching_trials: usize,
    /// `None` means every stratum the data supports.
    pub strata: Option<Vec<Stratum>>,
    pub score_space: ScoreSpace,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            max_trials: 10_000,
            gallery_sizes: vec![2, 4, 6, 8, 10],
            matching_trials: 1000,
            strata: None,
            score_space: ScoreSpace::Aligned,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub verification: Vec<VerificationRow>,
    pub matching: Vec<MatchingResult>,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

/// Embeddings for every record of one part, keyed by record index.
pub fn embed_part(
    model: &Model,
    space: ScoreSpace,
    ds: &Dataset,
    split: &SplitSpec,
    part: Part,
) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for m in [Modality::Face, Modality::Voice] {
        let (ix, vs): (Vec<usize>, Vec<&[f64]>) = ds
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.modality == m && split.contains(part, r))
            .map(|(i, r)| (i, r.vector.as_slice()))
            .unzip();
        for (i, e) in ix.into_iter().zip(model.embed_in(space, m, &vs)?) {
            out.insert(i, e);
        }
    }
    Ok(out)
}

pub fn score_trials(
    model: &Model,
    space: ScoreSpace,
    ds: &Dataset,
    emb: &BTreeMap<usize, Vec<f64>>,
    pairs: &[TrialPair],
) -> Result<Vec<VerificationTrial>> {
    pairs
        .iter()
        .map(|p| {
            let get = |i: usize| {
                emb.get(&i)
                    .ok_or_else(|| Error::data(format!("trial clip {} is outside the evaluated split", ds.records[i].clip_id)))
            };
            Ok(VerificationTrial {
                score: model.similarity_in(space, get(p.face)?, get(p.voice)?)?,
                is_match: p.is_match,
                face_demographics: ds.records[p.face].demographics.clone(),
                voice_demographics: ds.records[p.voice].demographics.clone(),
            })
        })
        .collect()
}

fn has_demographics(ds: &Dataset) -> bool {
    let d = |r: &crate::data::EmbeddingRecord| {
        r.demographics.gender.is_some() && r.demographics.nationality.is_some() && r.demographics.age_group.is_some()
    };
    !ds.records.is_empty() && ds.records.iter().all(d)
}

/// Verification (optionally from an explicit trial list), strata, and matching for each gallery size.
pub fn evaluate(
    model: &Model,
    ds: &Dataset,
    split: &SplitSpec,
    part: Part,
    cfg: &EvalConfig,
    trial_list: Option<&[TrialPair]>,
) -> Result<EvalReport> {
    let emb = embed_part(model, cfg.score_space, ds, split, part)?;
    let pairs = match trial_list {
        Some(p) => p.to_vec(),
        None => build_verification_trials(ds, split, part, cfg.max_trials, cfg.seed)?,
    };
    let trials = score_trials(model, cfg.score_space, ds, &emb, &pairs)?;
    let strata = match &cfg.strata {
        Some(s) => s.clone(),
        None if has_demographics(ds) => Stratum::ALL.to_vec(),
        None => vec![Stratum::Random],
    };
    let name = match part {
        Part::Train => "train",
        Part::Val => "val",
        Part::Test => "test",
    };
    let verification = stratified_report(&trials, &strata, name)?;
    let roc = roc_points(&trials)?;
    let mut matching = Vec::new();
    for (k, &n_c) in cfg.gallery_sizes.iter().enumerate() {
        let specs = build_matching_trials(ds, split, part, n_c, cfg.matching_trials, cfg.seed.wrapping_add(1 + k as u64))?;
        let trials: Vec<MatchingTrial> = specs
            .iter()
            .map(|s| MatchingTrial {
                probe_modality: s.probe_modality,
                probe: emb[&s.probe].clone(),
                gallery: s.gallery.iter().map(|g| emb[g].clone()).collect(),
                correct_index: s.correct_index,
            })
            .collect();
        matching.push(matching_accuracy(&trials, |f, v| model.similarity_in(cfg.score_space, f, v))?);
    }
    Ok(EvalReport {
        verification,
        matching,
        roc,
    })
}

/// Verification EER and AUC only, for per-epoch validation.
pub fn quick_verification(model: &Model, ds: &Dataset, split: &SplitSpec, part: Part, max_trials: usize, seed: u64) -> Result<(f64, f64)> {
    let emb = embed_part(model, ScoreSpace::Aligned, ds, split, part)?;
    let pairs = build_verification_trials(ds, split, part, max_trials, seed)?;
    let trials = score_trials(model, ScoreSpace::Aligned, ds, &emb, &pairs)?;
    Ok((compute_eer(&trials)?.eer, compute_auc(&trials)?))
}

impl EvalReport {
    pub fn verification_csv(&self) -> String {
        let mut s = String::from("split,stratum,n_trials,eer,auc\n");
        for r in &self.verification {
            let _ = writeln!(s, "{},{},{},{},{}", r.split, r.stratum.as_str(), r.n_trials, r.eer, r.auc);
        }
        s
    }

    pub fn matching_csv(&self) -> String {
        let mut s = String::from("n_c,n_trials,accuracy,ties\n");
        for r in &self.matching {
            let _ = writeln!(s, "{},{},{},{}", r.n_c, r.n_trials, r.accuracy, r.ties);
        }
        s
    }

    pub fn roc_csv(&self) -> String {
        let mut s = String::from("threshold,far,frr\n");
        for p in &self.roc {
            let _ = writeln!(s, "{},{},{}", p.threshold, p.far, p.frr);
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes `verification.csv`, `matching.csv`, `roc.csv` and `report.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("verification.csv"), self.verification_csv())?;
        std::fs::write(dir.join("matching.csv"), self.matching_csv())?;
        std::fs::write(dir.join("roc.csv"), self.roc_csv())?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        Ok(())
    }

    pub fn row(&self, stratum: Stratum) -> Option<&VerificationRow> {
        self.verification.iter().find(|r| r.stratum == stratum)
    }

    pub fn matching_at(&self, n_c: usize) -> Option<&MatchingResult> {
        self.matching.iter().find(|r| r.n_c == n_c)
    }
}
