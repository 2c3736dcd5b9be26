//! Prompt pools built from material keywords, with per-prompt acceptance
//! tracking ("batting average") and promotion of the best prompts.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Sentence skeletons. Every skeleton carries `{syn}`, `{city}` and `{period}`;
/// some also take a `{style}` slot, which produces the deliberately odd prompts.
const SKELETONS: &[&str] = &[
    "A street view photo of a building facade made of {syn} in {city}{period}",
    "Street-level image of a house clad in {syn}, {city}{period}",
    "A residential building with a {syn} exterior on a quiet street in {city}{period}",
    "Photograph of a {syn} facade seen from the pavement in {city}{period}",
    "A {syn} building in {city}{period}, photographed at eye level on an overcast day",
    "The front elevation of an apartment block finished in {syn}, {city}{period}",
    "A corner shop with walls of {syn} in {city}{period}, wide angle",
    "A tall building wrapped in {syn} next to a parked car in {city}{period}",
    "A row of houses with {syn} walls under a grey sky in {city}{period}",
    "A weathered {syn} shopfront in {city}{period} at noon",
    "A {syn} house in {city}{period} as dreamed by {style}",
    "The facade of {syn} remembers {style} on a street in {city}{period}",
    "In {city}{period} a building of {syn} is performing {style}",
    "An ordinary {syn} facade in {city}{period}, in the manner of {style}",
];

const STYLES: &[&str] = &[
    "a synchronized swimming routine",
    "an orchestra tuning up",
    "a chess tournament",
    "a ballet rehearsal",
    "a thunderstorm over the sea",
    "a marching band",
    "a figure skating final",
    "an origami workshop",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub material: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub period: Option<String>,
    pub cities: Vec<String>,
}

impl KeywordSet {
    /// The material name (underscores as spaces) followed by the distinct extra synonyms.
    pub fn all_synonyms(&self) -> Vec<String> {
        let mut out = vec![self.material.replace('_', " ")];
        for s in &self.synonyms {
            if !out.contains(s) {
                out.push(s.clone());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.material.is_empty() {
            return Err(Error::Invalid("keyword set without material".into()));
        }
        if self.cities.is_empty() {
            return Err(Error::Invalid(format!(
                "keyword set for {} has no cities",
                self.material
            )));
        }
        if self.synonyms.iter().any(|s| s.trim().is_empty()) {
            return Err(Error::Invalid(format!(
                "keyword set for {} has an empty synonym",
                self.material
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accepted => "accepted",
            Verdict::Rejected => "rejected",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
    pub material: String,
    pub slots_used: BTreeMap<String, String>,
    pub generated_count: u64,
    pub accepted_count: u64,
    /// Outcomes recorded so far (accepted + rejected).
    pub decided_count: u64,
    pub promoted: bool,
}

impl PromptRecord {
    /// `accepted / generated`, or `None` ("no data") before the first generation.
    pub fn batting_average(&self) -> Option<f64> {
        (self.generated_count > 0).then(|| self.accepted_count as f64 / self.generated_count as f64)
    }

    pub fn rejected_count(&self) -> u64 {
        self.decided_count - self.accepted_count
    }
}

#[derive(Clone, Debug)]
pub struct PromptPool {
    prompts: Vec<PromptRecord>,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

impl PartialEq for PromptPool {
    fn eq(&self, other: &Self) -> bool {
        self.prompts == other.prompts && self.rng_seed == other.rng_seed
    }
}

struct Expansion {
    text: String,
    slots: BTreeMap<String, String>,
}

fn expand_all(k: &KeywordSet) -> Vec<Expansion> {
    let synonyms = k.all_synonyms();
    let period = k
        .period
        .as_deref()
        .map(|p| format!(" from the {p}"))
        .unwrap_or_default();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (si, skeleton) in SKELETONS.iter().enumerate() {
        let styles: Vec<Option<&str>> = if skeleton.contains("{style}") {
            STYLES.iter().map(|s| Some(*s)).collect()
        } else {
            vec![None]
        };
        for syn in &synonyms {
            for city in &k.cities {
                for style in &styles {
                    let mut text = skeleton
                        .replace("{syn}", syn)
                        .replace("{city}", city)
                        .replace("{period}", &period);
                    if let Some(style) = style {
                        text = text.replace("{style}", style);
                    }
                    // Only keep expansions where exactly one synonym is visible.
                    let hits = synonyms.iter().filter(|s| text.contains(s.as_str())).count();
                    if hits != 1 || !seen.insert(text.clone()) {
                        continue;
                    }
                    let mut slots = BTreeMap::new();
                    slots.insert("skeleton".to_string(), si.to_string());
                    slots.insert("synonym".to_string(), syn.clone());
                    slots.insert("city".to_string(), city.clone());
                    if let Some(p) = &k.period {
                        slots.insert("period".to_string(), p.clone());
                    }
                    if let Some(style) = style {
                        slots.insert("style".to_string(), style.to_string());
                    }
                    out.push(Expansion { text, slots });
                }
            }
        }
    }
    out
}

/// Number of distinct prompts the grammar can produce for `k`.
pub fn grammar_capacity(k: &KeywordSet) -> usize {
    expand_all(k).len()
}

/// Builds a pool of `n` distinct prompts for one material.
pub fn generate_prompts(k: &KeywordSet, n: usize, seed: u64) -> Result<PromptPool> {
    if n == 0 {
        return Err(Error::Invalid("prompt count must be at least 1".into()));
    }
    k.validate()?;
    let mut expansions = expand_all(k);
    if n > expansions.len() {
        return Err(Error::PromptCapacity {
            capacity: expansions.len(),
            requested: n,
        });
    }
    let mut rng = seed::rng(seed, &format!("prompts:{}", k.material));
    expansions.shuffle(&mut rng);
    let prompts = expansions
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, e)| PromptRecord {
            id: format!("{}-p{:03}", k.material, i),
            text: e.text,
            material: k.material.clone(),
            slots_used: e.slots,
            generated_count: 0,
            accepted_count: 0,
            decided_count: 0,
            promoted: false,
        })
        .collect();
    Ok(PromptPool::from_prompts(prompts, seed))
}

impl PromptPool {
    pub fn from_prompts(prompts: Vec<PromptRecord>, rng_seed: u64) -> Self {
        PromptPool {
            prompts,
            rng_seed,
            rng: seed::rng(rng_seed, "prompt-sampling"),
        }
    }

    pub fn empty(rng_seed: u64) -> Self {
        Self::from_prompts(Vec::new(), rng_seed)
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Restarts the sampling stream from a new seed.
    pub fn reseed(&mut self, rng_seed: u64) {
        self.rng_seed = rng_seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed::derive(rng_seed, "prompt-sampling"));
    }

    pub fn prompts(&self) -> &[PromptRecord] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PromptRecord> {
        self.prompts.iter().find(|p| p.id == id)
    }

    fn get_mut(&mut self, id: &str) -> Result<&mut PromptRecord> {
        self.prompts
            .iter_mut()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::UnknownPrompt(id.to_string()))
    }

    pub fn materials(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.prompts {
            if !out.contains(&p.material) {
                out.push(p.material.clone());
            }
        }
        out
    }

    /// Adds the prompts of `other`, skipping materials this pool already holds.
    pub fn merge(&mut self, other: PromptPool) -> Result<()> {
        let existing: HashSet<String> = self.prompts.iter().map(|p| p.id.clone()).collect();
        for p in other.prompts {
            if existing.contains(&p.id) {
                return Err(Error::Invalid(format!("duplicate prompt id {}", p.id)));
            }
            self.prompts.push(p);
        }
        Ok(())
    }

    /// Uniform draw over the whole pool, restricted to promoted prompts once any exist.
    pub fn sample_prompt(&mut self) -> Result<&PromptRecord> {
        self.sample_where(|_| true)
    }

    /// As [`sample_prompt`](Self::sample_prompt), scoped to one material.
    pub fn sample_for(&mut self, material: &str) -> Result<&PromptRecord> {
        self.sample_where(|p| p.material == material)
    }

    fn sample_where(&mut self, scope: impl Fn(&PromptRecord) -> bool) -> Result<&PromptRecord> {
        let in_scope: Vec<usize> = (0..self.prompts.len())
            .filter(|&i| scope(&self.prompts[i]))
            .collect();
        if in_scope.is_empty() {
            return Err(Error::EmptyPool);
        }
        let promoted: Vec<usize> = in_scope
            .iter()
            .copied()
            .filter(|&i| self.prompts[i].promoted)
            .collect();
        let candidates = if promoted.is_empty() { &in_scope } else { &promoted };
        let pick = candidates[self.rng.random_range(0..candidates.len())];
        Ok(&self.prompts[pick])
    }

    /// Attributes one generated image to `id`.
    pub fn record_generation(&mut self, id: &str) -> Result<()> {
        self.get_mut(id)?.generated_count += 1;
        Ok(())
    }

    pub fn record_outcome(&mut self, id: &str, verdict: Verdict) -> Result<()> {
        let p = self.get_mut(id)?;
        if p.decided_count >= p.generated_count {
            return Err(Error::OutcomeWithoutGeneration(id.to_string()));
        }
        p.decided_count += 1;
        if verdict == Verdict::Accepted {
            p.accepted_count += 1;
        }
        debug_assert!(p.accepted_count <= p.decided_count && p.decided_count <= p.generated_count);
        Ok(())
    }

    pub fn batting_average(&self, id: &str) -> Result<Option<f64>> {
        self.get(id)
            .map(PromptRecord::batting_average)
            .ok_or_else(|| Error::UnknownPrompt(id.to_string()))
    }

    /// Rejected share of decided images for one material, `None` without decisions.
    pub fn irrelevance_rate(&self, material: &str) -> Option<f64> {
        let (decided, rejected) = self
            .prompts
            .iter()
            .filter(|p| p.material == material)
            .fold((0u64, 0u64), |(d, r), p| (d + p.decided_count, r + p.rejected_count()));
        (decided > 0).then(|| rejected as f64 / decided as f64)
    }

    /// Marks exactly the prompts with `generated >= min_samples` and
    /// batting average `>= threshold` as promoted; returns their ids.
    pub fn promote(&mut self, min_samples: u64, threshold: f64) -> Result<Vec<String>> {
        if min_samples == 0 {
            return Err(Error::Invalid("min_samples must be at least 1".into()));
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::Invalid(format!("threshold {threshold} outside (0, 1]")));
        }
        let mut out = Vec::new();
        for p in &mut self.prompts {
            p.promoted = p.generated_count >= min_samples
                && p.batting_average().is_some_and(|avg| avg >= threshold);
            if p.promoted {
                out.push(p.id.clone());
            }
        }
        Ok(out)
    }

    /// Zeroes all counters (used before replaying a decision log).
    pub fn reset_counters(&mut self) {
        for p in &mut self.prompts {
            p.generated_count = 0;
            p.accepted_count = 0;
            p.decided_count = 0;
        }
    }

    /// Writes the `id,material,text,generated,accepted,promoted` sidecar.
    pub fn save_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::parse("prompt sidecar", e);
        writer
            .write_record(["id", "material", "text", "generated", "accepted", "promoted"])
            .map_err(csv_err)?;
        for p in &self.prompts {
            writer
                .write_record([
                    p.id.as_str(),
                    &p.material,
                    &p.text,
                    &p.generated_count.to_string(),
                    &p.accepted_count.to_string(),
                    if p.promoted { "true" } else { "false" },
                ])
                .map_err(csv_err)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::parse("prompt sidecar", e.to_string()))?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Reads a sidecar. Rejections are not stored there, so `decided_count`
    /// starts equal to `accepted_count`; replay the decision log for exact counters.
    pub fn load_sidecar(path: impl AsRef<Path>, rng_seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path.display().to_string(), format!("{other:?}")),
        })?;
        let mut prompts = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let location = format!("{} row {}", path.display(), i + 2);
            let row = row.map_err(|e| Error::parse(location.clone(), e))?;
            if row.len() != 6 {
                return Err(Error::parse(location, "expected 6 fields"));
            }
            let num = |s: &str| {
                s.parse::<u64>()
                    .map_err(|e| Error::parse(location.clone(), format!("{s:?}: {e}")))
            };
            let generated = num(&row[3])?;
            let accepted = num(&row[4])?;
            if accepted > generated {
                return Err(Error::parse(location, "accepted exceeds generated"));
            }
            prompts.push(PromptRecord {
                id: row[0].to_string(),
                material: row[1].to_string(),
                text: row[2].to_string(),
                slots_used: BTreeMap::new(),
                generated_count: generated,
                accepted_count: accepted,
                decided_count: accepted,
                promoted: match &row[5] {
                    "true" => true,
                    "false" => false,
                    other => return Err(Error::parse(location, format!("bad flag {other:?}"))),
                },
            });
        }
        Ok(PromptPool::from_prompts(prompts, rng_seed))
    }
}
