//! The thirteen prediction strategies: routed single-model configurations
//! M1..M7 and the ensembles E1..E6 built on top of them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::backends::{predict_labels, PredictionRecord, ScoreVector, TrainedModel};
use crate::corpus::{Dataset, Example};
use crate::error::{Error, Result};
use crate::labels::{string_enum, LabelSpace, Language};
use crate::textprep::{translate_test_set, TranslateOptions, TranslationCache, TranslationProvider};
use crate::tsv;

string_enum!(
    ModelId {
        M1 => "M1",
        M2 => "M2",
        M3 => "M3",
        M4 => "M4",
        M5 => "M5",
        M6 => "M6",
        M7 => "M7",
    }
);

string_enum!(
    EnsembleId {
        E1 => "E1",
        E2 => "E2",
        E3 => "E3",
        E4 => "E4",
        E5 => "E5",
        E6 => "E6",
    }
);

/// Any row of the final comparison: a model configuration or an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyId {
    Model(ModelId),
    Ensemble(EnsembleId),
}

impl StrategyId {
    pub fn all() -> Vec<StrategyId> {
        ModelId::ALL
            .iter()
            .map(|m| StrategyId::Model(*m))
            .chain(EnsembleId::ALL.iter().map(|e| StrategyId::Ensemble(*e)))
            .collect()
    }

    /// Row index in the comparison tables (M1 first, E6 last).
    pub fn table_position(self) -> usize {
        match self {
            StrategyId::Model(m) => m as usize,
            StrategyId::Ensemble(e) => ModelId::ALL.len() + e as usize,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::Model(m) => m.as_str(),
            StrategyId::Ensemble(e) => e.as_str(),
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(m) = s.parse::<ModelId>() {
            return Ok(StrategyId::Model(m));
        }
        s.parse::<EnsembleId>()
            .map(StrategyId::Ensemble)
            .map_err(|_| Error::Validation(format!("unknown strategy {s:?}")))
    }
}

/// One trained classifier that strategies draw on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaseModel {
    /// Multilingual encoder on the whole training set.
    Multilingual,
    /// Monolingual encoder on one language's original examples.
    Monolingual(Language),
    /// Monolingual encoder on one language plus translations of the other.
    Augmented(Language),
}

impl BaseModel {
    pub const ALL: [BaseModel; 5] = [
        BaseModel::Multilingual,
        BaseModel::Monolingual(Language::En),
        BaseModel::Monolingual(Language::Es),
        BaseModel::Augmented(Language::En),
        BaseModel::Augmented(Language::Es),
    ];

    /// `M1`, `M2-en`, `M2-es`, `M3-en`, `M3-es`.
    pub fn name(self) -> String {
        match self {
            BaseModel::Multilingual => "M1".into(),
            BaseModel::Monolingual(l) => format!("M2-{l}"),
            BaseModel::Augmented(l) => format!("M3-{l}"),
        }
    }

    pub fn language(self) -> Option<Language> {
        match self {
            BaseModel::Multilingual => None,
            BaseModel::Monolingual(l) | BaseModel::Augmented(l) => Some(l),
        }
    }
}

impl FromStr for BaseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaseModel::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown base model {s:?}")))
    }
}

/// Translation and routing semantics of one model configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub id: ModelId,
    pub multilingual: bool,
    pub translate_train: bool,
    pub translate_test: bool,
    /// Language every test example is translated into before scoring.
    pub target_language: Option<Language>,
}

impl ModelSpec {
    pub fn of(id: ModelId) -> Self {
        let (multilingual, translate_train, translate_test, target_language) = match id {
            ModelId::M1 => (true, false, false, None),
            ModelId::M2 => (false, false, false, None),
            ModelId::M3 => (false, true, false, None),
            ModelId::M4 => (false, false, true, Some(Language::En)),
            ModelId::M5 => (false, true, true, Some(Language::En)),
            ModelId::M6 => (false, false, true, Some(Language::Es)),
            ModelId::M7 => (false, true, true, Some(Language::Es)),
        };
        Self {
            id,
            multilingual,
            translate_train,
            translate_test,
            target_language,
        }
    }

    pub fn catalog() -> Vec<ModelSpec> {
        ModelId::ALL.iter().map(|&m| Self::of(m)).collect()
    }

    fn base(&self, language: Language) -> BaseModel {
        if self.multilingual {
            BaseModel::Multilingual
        } else if self.translate_train {
            BaseModel::Augmented(language)
        } else {
            BaseModel::Monolingual(language)
        }
    }

    /// Base models this configuration needs at prediction time.
    pub fn required_models(&self) -> Vec<BaseModel> {
        match (self.multilingual, self.target_language) {
            (true, _) => vec![BaseModel::Multilingual],
            (false, Some(l)) => vec![self.base(l)],
            (false, None) => Language::ALL.iter().map(|&l| self.base(l)).collect(),
        }
    }
}

/// Trained base models keyed by role.
#[derive(Debug, Default)]
pub struct ModelBank {
    models: BTreeMap<BaseModel, TrainedModel>,
}

impl ModelBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: BaseModel, model: TrainedModel) {
        self.models.insert(key, model);
    }

    pub fn get(&self, key: BaseModel) -> Option<&TrainedModel> {
        self.models.get(&key)
    }

    pub fn keys(&self) -> impl Iterator<Item = BaseModel> + '_ {
        self.models.keys().copied()
    }

    fn require(&self, key: BaseModel, spec: ModelId) -> Result<&TrainedModel> {
        self.get(key)
            .ok_or_else(|| Error::Routing(format!("{spec} needs base model {} which is not available", key.name())))
    }
}

/// Translation resources needed by the test-translating configurations.
pub struct TranslationContext<'a> {
    pub provider: &'a dyn TranslationProvider,
    pub cache: &'a TranslationCache,
    pub options: TranslateOptions,
}

/// Scores every test example with the configuration `spec`, in test order.
pub fn predict_with_model_spec(
    spec: &ModelSpec,
    bank: &ModelBank,
    test: &Dataset,
    translation: Option<&TranslationContext<'_>>,
) -> Result<Vec<PredictionRecord>> {
    let model_id = spec.id.as_str();
    if spec.multilingual {
        return predict_labels(
            bank.require(BaseModel::Multilingual, spec.id)?,
            test.examples(),
            model_id,
        );
    }
    if let Some(target) = spec.target_language {
        let model = bank.require(spec.base(target), spec.id)?;
        let needs_translation = test.examples().iter().any(|e| e.language != target);
        if !needs_translation {
            return predict_labels(model, test.examples(), model_id);
        }
        let ctx = translation.ok_or_else(|| {
            Error::Config(format!(
                "{} translates the test set but no translation provider is configured",
                spec.id
            ))
        })?;
        let translated = translate_test_set(test, target, ctx.provider, ctx.cache, &ctx.options)?;
        return predict_labels(model, translated.examples(), model_id);
    }
    // Route each example to the monolingual model of its own language.
    let mut groups: BTreeMap<BaseModel, Vec<(usize, Example)>> = BTreeMap::new();
    for (i, e) in test.examples().iter().enumerate() {
        groups.entry(spec.base(e.language)).or_default().push((i, e.clone()));
    }
    let mut out: Vec<Option<PredictionRecord>> = vec![None; test.len()];
    for (key, items) in groups {
        let model = bank.get(key).ok_or_else(|| {
            Error::Routing(format!(
                "no {} model for language {} (example {})",
                spec.id,
                key.language().map(|l| l.as_str()).unwrap_or("?"),
                items[0].1.id
            ))
        })?;
        let batch: Vec<Example> = items.iter().map(|(_, e)| e.clone()).collect();
        for ((i, _), r) in items.iter().zip(predict_labels(model, &batch, model_id)?) {
            out[*i] = Some(r);
        }
    }
    Ok(out.into_iter().map(|r| r.expect("every example routed")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnsembleRule {
    Majority,
    MaxRaw,
    MaxStandardized,
}

impl EnsembleRule {
    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleRule::Majority => "majority",
            EnsembleRule::MaxRaw => "max_raw",
            EnsembleRule::MaxStandardized => "max_standardized",
        }
    }
}

/// How the max-value rules combine members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FusionMode {
    /// The single most confident member decides.
    #[default]
    WinnerTakeAll,
    /// Per-class scores are summed over members and the argmax wins.
    ScoreSum,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleSpec {
    pub id: EnsembleId,
    pub members: Vec<ModelId>,
    pub rule: EnsembleRule,
    pub mode: FusionMode,
}

pub const DEFAULT_BEST_MEMBERS: [ModelId; 2] = [ModelId::M2, ModelId::M3];

impl EnsembleSpec {
    pub fn of(id: EnsembleId, best_members: &[ModelId]) -> Self {
        let rule = match id {
            EnsembleId::E1 | EnsembleId::E4 => EnsembleRule::Majority,
            EnsembleId::E2 | EnsembleId::E5 => EnsembleRule::MaxRaw,
            EnsembleId::E3 | EnsembleId::E6 => EnsembleRule::MaxStandardized,
        };
        let members = match id {
            EnsembleId::E1 | EnsembleId::E2 | EnsembleId::E3 => best_members.to_vec(),
            _ => ModelId::ALL.to_vec(),
        };
        Self {
            id,
            members,
            rule,
            mode: FusionMode::WinnerTakeAll,
        }
    }

    pub fn catalog(best_members: &[ModelId]) -> Vec<EnsembleSpec> {
        EnsembleId::ALL.iter().map(|&e| Self::of(e, best_members)).collect()
    }
}

/// Mean and population standard deviation of one model's scores, per label.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelStats {
    pub label_space: LabelSpace,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ModelStats {
    /// Identity standardization (mean 0, std 1).
    pub fn identity(label_space: LabelSpace) -> Self {
        let n = label_space.len();
        Self {
            label_space,
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// `(score - mean) / std`, or 0 when the std is 0.
    pub fn z(&self, label: usize, score: f64) -> f64 {
        if self.std[label] == 0.0 {
            0.0
        } else {
            (score - self.mean[label]) / self.std[label]
        }
    }

    pub fn standardize(&self, scores: &ScoreVector) -> Vec<f64> {
        scores.scores.iter().enumerate().map(|(i, &s)| self.z(i, s)).collect()
    }
}

pub type StandardizationStats = BTreeMap<String, ModelStats>;

fn common_label_space<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> Result<Option<LabelSpace>> {
    let mut space: Option<&LabelSpace> = None;
    for r in records {
        match space {
            None => space = Some(&r.scores.label_space),
            Some(s) if *s != r.scores.label_space => {
                return Err(Error::Config(format!(
                    "label spaces disagree: [{s}] vs [{}] ({})",
                    r.scores.label_space, r.model_id
                )))
            }
            Some(_) => {}
        }
    }
    Ok(space.cloned())
}

/// Per-label score statistics over all of one model's records.
pub fn compute_standardization(records: &[PredictionRecord]) -> Result<ModelStats> {
    if records.len() < 2 {
        return Err(Error::Statistics(format!(
            "standardization needs at least 2 records, got {}",
            records.len()
        )));
    }
    let space = common_label_space(records)?.expect("non-empty records");
    let n = records.len() as f64;
    let k = space.len();
    let mut mean = vec![0.0; k];
    for r in records {
        for (m, s) in mean.iter_mut().zip(&r.scores.scores) {
            *m += s;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; k];
    for r in records {
        for ((v, s), m) in var.iter_mut().zip(&r.scores.scores).zip(&mean) {
            *v += (s - m) * (s - m);
        }
    }
    let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
    Ok(ModelStats {
        label_space: space,
        mean,
        std,
    })
}

/// Statistics for every model in `member_records`.
pub fn standardization_for(member_records: &BTreeMap<String, Vec<PredictionRecord>>) -> Result<StandardizationStats> {
    member_records
        .iter()
        .map(|(id, recs)| {
            compute_standardization(recs)
                .map(|s| (id.clone(), s))
                .map_err(|e| Error::Statistics(format!("{id}: {e}")))
        })
        .collect()
}

/// Outcome of fusing the member records of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub label: String,
    /// Member that decided the label (for majority: the first member voting for it).
    pub winner: String,
    /// Audit scores: vote shares, or the winner's raw / standardized scores.
    pub scores: ScoreVector,
}

fn check_members(records: &[&PredictionRecord]) -> Result<LabelSpace> {
    if records.is_empty() {
        return Err(Error::Argument("fusion needs at least one member record".into()));
    }
    Ok(common_label_space(records.iter().copied())?.expect("non-empty"))
}

fn member_stats<'a>(stats: &'a StandardizationStats, r: &PredictionRecord) -> Result<&'a ModelStats> {
    let s = stats
        .get(&r.model_id)
        .ok_or_else(|| Error::Config(format!("no standardization statistics for member {}", r.model_id)))?;
    if s.label_space != r.scores.label_space {
        return Err(Error::Config(format!(
            "statistics for {} use another label space",
            r.model_id
        )));
    }
    Ok(s)
}

fn label_index(space: &LabelSpace, r: &PredictionRecord) -> Result<usize> {
    space.index_of(&r.predicted_label).ok_or_else(|| {
        Error::Validation(format!(
            "{}: label {:?} outside [{space}]",
            r.model_id, r.predicted_label
        ))
    })
}

/// Most-voted label; ties go to the highest summed standardized score among
/// the tied labels, then to label-space order.
pub fn majority_vote(records: &[&PredictionRecord], stats: &StandardizationStats) -> Result<Selection> {
    let space = check_members(records)?;
    let mut votes = vec![0usize; space.len()];
    for r in records {
        votes[label_index(&space, r)?] += 1;
    }
    let top = *votes.iter().max().expect("non-empty label space");
    let tied: Vec<usize> = (0..space.len()).filter(|&i| votes[i] == top).collect();
    let chosen = if tied.len() == 1 {
        tied[0]
    } else {
        let mut sums = vec![0.0; space.len()];
        for r in records {
            let s = member_stats(stats, r)?;
            for &i in &tied {
                sums[i] += s.z(i, r.scores.scores[i]);
            }
        }
        let mut best = tied[0];
        for &i in &tied[1..] {
            if sums[i] > sums[best] {
                best = i;
            }
        }
        best
    };
    let label = space.label(chosen).to_string();
    let winner = records
        .iter()
        .find(|r| r.predicted_label == label)
        .map(|r| r.model_id.clone())
        .unwrap_or_default();
    let shares = votes.iter().map(|&v| v as f64 / records.len() as f64).collect();
    Ok(Selection {
        label,
        winner,
        scores: ScoreVector::new(space, shares)?,
    })
}

/// Winner-take-all over `confidence(member)`; ties keep the earlier member.
fn winner_take_all(
    records: &[&PredictionRecord],
    confidence: impl Fn(&PredictionRecord) -> Result<f64>,
) -> Result<usize> {
    let mut best = 0;
    let mut best_value = confidence(records[0])?;
    for (i, r) in records.iter().enumerate().skip(1) {
        let v = confidence(r)?;
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    Ok(best)
}

/// Label of the member whose highest class score is largest.
pub fn max_raw_select(records: &[&PredictionRecord]) -> Result<Selection> {
    check_members(records)?;
    let w = winner_take_all(records, |r| Ok(r.scores.max_score()))?;
    Ok(Selection {
        label: records[w].predicted_label.clone(),
        winner: records[w].model_id.clone(),
        scores: records[w].scores.clone(),
    })
}

/// Label of the member whose standardized confidence in its own prediction
/// is largest.
pub fn max_standardized_select(records: &[&PredictionRecord], stats: &StandardizationStats) -> Result<Selection> {
    let space = check_members(records)?;
    let w = winner_take_all(records, |r| {
        let i = label_index(&space, r)?;
        Ok(member_stats(stats, r)?.z(i, r.scores.scores[i]))
    })?;
    let z = member_stats(stats, records[w])?.standardize(&records[w].scores);
    Ok(Selection {
        label: records[w].predicted_label.clone(),
        winner: records[w].model_id.clone(),
        scores: ScoreVector::new(space, z)?,
    })
}

/// Argmax of per-class scores summed over members (raw or standardized).
pub fn score_sum_select(records: &[&PredictionRecord], stats: Option<&StandardizationStats>) -> Result<Selection> {
    let space = check_members(records)?;
    let mut sums = vec![0.0; space.len()];
    for r in records {
        let values = match stats {
            Some(st) => member_stats(st, r)?.standardize(&r.scores),
            None => r.scores.scores.clone(),
        };
        for (s, v) in sums.iter_mut().zip(values) {
            *s += v;
        }
    }
    let scores = ScoreVector::new(space, sums)?;
    let label = scores.argmax_label().to_string();
    Ok(Selection {
        label,
        winner: "sum".into(),
        scores,
    })
}

/// Fused predictions of an ensemble, with the deciding member per example.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub records: Vec<PredictionRecord>,
    pub winners: Vec<String>,
}

/// Applies `spec` example by example. Output follows the first member's order.
pub fn run_ensemble(
    spec: &EnsembleSpec,
    member_records: &BTreeMap<String, Vec<PredictionRecord>>,
    stats: &StandardizationStats,
) -> Result<EnsembleOutput> {
    if spec.members.is_empty() {
        return Err(Error::Config(format!("{} has no members", spec.id)));
    }
    let mut indexed: Vec<(&str, HashMap<&str, &PredictionRecord>)> = Vec::new();
    for m in &spec.members {
        let recs = member_records
            .get(m.as_str())
            .ok_or_else(|| Error::Config(format!("{}: no predictions for member {m}", spec.id)))?;
        let mut map = HashMap::with_capacity(recs.len());
        for r in recs {
            if map.insert(r.example_id.as_str(), r).is_some() {
                return Err(Error::Validation(format!(
                    "{m}: duplicate prediction for {}",
                    r.example_id
                )));
            }
        }
        indexed.push((m.as_str(), map));
    }
    let order: Vec<&str> = member_records[spec.members[0].as_str()]
        .iter()
        .map(|r| r.example_id.as_str())
        .collect();
    let all_ids: BTreeSet<&str> = indexed.iter().flat_map(|(_, m)| m.keys().copied()).collect();
    let missing: Vec<String> = indexed
        .iter()
        .flat_map(|(member, m)| {
            all_ids
                .iter()
                .filter(|id| !m.contains_key(*id))
                .map(move |id| format!("{member}:{id}"))
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage(missing));
    }

    let mut out = EnsembleOutput {
        records: Vec::with_capacity(order.len()),
        winners: Vec::with_capacity(order.len()),
    };
    for id in order {
        let recs: Vec<&PredictionRecord> = indexed.iter().map(|(_, m)| m[id]).collect();
        let sel = match (spec.rule, spec.mode) {
            (EnsembleRule::Majority, _) => majority_vote(&recs, stats)?,
            (EnsembleRule::MaxRaw, FusionMode::WinnerTakeAll) => max_raw_select(&recs)?,
            (EnsembleRule::MaxRaw, FusionMode::ScoreSum) => score_sum_select(&recs, None)?,
            (EnsembleRule::MaxStandardized, FusionMode::WinnerTakeAll) => max_standardized_select(&recs, stats)?,
            (EnsembleRule::MaxStandardized, FusionMode::ScoreSum) => score_sum_select(&recs, Some(stats))?,
        };
        out.records.push(PredictionRecord {
            example_id: id.to_string(),
            model_id: spec.id.to_string(),
            scores: sel.scores,
            predicted_label: sel.label,
        });
        out.winners.push(sel.winner);
    }
    Ok(out)
}

pub const WINNER_COLUMN: &str = "winner";

/// TSV with `example_id, model_id, label`, one score column per class and,
/// when `winners` is given, the deciding member.
pub fn predictions_to_tsv(records: &[PredictionRecord], winners: Option<&[String]>) -> Result<String> {
    let space = match records.first() {
        Some(r) => r.scores.label_space.clone(),
        None => return Ok(tsv::line(&["example_id", "model_id", "label"])),
    };
    common_label_space(records)?;
    let mut header: Vec<String> = ["example_id", "model_id", "label"].map(String::from).to_vec();
    header.extend(space.iter().map(String::from));
    if winners.is_some() {
        header.push(WINNER_COLUMN.into());
    }
    let rows = records.iter().enumerate().map(|(i, r)| {
        let mut row = vec![r.example_id.clone(), r.model_id.clone(), r.predicted_label.clone()];
        row.extend(r.scores.scores.iter().map(|s| s.to_string()));
        if let Some(w) = winners {
            row.push(w.get(i).cloned().unwrap_or_default());
        }
        row
    });
    Ok(tsv::render(&header, rows))
}

pub fn write_predictions(records: &[PredictionRecord], winners: Option<&[String]>, path: &Path) -> Result<()> {
    tsv::write(path, &predictions_to_tsv(records, winners)?)
}

/// Reads a prediction file written by [`write_predictions`].
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let table = tsv::read(path)?;
    let origin = path.display().to_string();
    if table.header.len() < 4 || table.header[..3] != ["example_id", "model_id", "label"] {
        return Err(Error::format(
            &origin,
            1,
            "expected example_id, model_id, label and score columns",
        ));
    }
    let end = if table.header.last().map(String::as_str) == Some(WINNER_COLUMN) {
        table.header.len() - 1
    } else {
        table.header.len()
    };
    let space =
        LabelSpace::new(table.header[3..end].iter().cloned()).map_err(|e| Error::format(&origin, 1, e.to_string()))?;
    table
        .rows
        .iter()
        .map(|row| {
            let scores = row.fields[3..end]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(&origin, row.line, format!("bad score: {e}")))?;
            let scores =
                ScoreVector::new(space.clone(), scores).map_err(|e| Error::format(&origin, row.line, e.to_string()))?;
            if !space.contains(&row.fields[2]) {
                return Err(Error::format(
                    &origin,
                    row.line,
                    format!("unknown label {:?}", row.fields[2]),
                ));
            }
            Ok(PredictionRecord {
                example_id: row.fields[0].clone(),
                model_id: row.fields[1].clone(),
                scores,
                predicted_label: row.fields[2].clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(model: &str, id: &str, p_sexist: f64) -> PredictionRecord {
        let s = ScoreVector::new(LabelSpace::task1(), vec![1.0 - p_sexist, p_sexist]).unwrap();
        PredictionRecord::from_scores(id, model, s)
    }

    #[test]
    fn strategy_ids_parse_and_order() {
        let all = StrategyId::all();
        assert_eq!(all.len(), 13);
        for (i, s) in all.iter().enumerate() {
            assert_eq!(s.table_position(), i);
            assert_eq!(s.as_str().parse::<StrategyId>().unwrap(), *s);
        }
        assert!("E7".parse::<StrategyId>().is_err());
    }

    #[test]
    fn table_one_flags() {
        let m4 = ModelSpec::of(ModelId::M4);
        assert!(!m4.translate_train && m4.translate_test);
        assert_eq!(m4.required_models(), [BaseModel::Monolingual(Language::En)]);
        assert_eq!(
            ModelSpec::of(ModelId::M7).required_models(),
            [BaseModel::Augmented(Language::Es)]
        );
        assert_eq!(ModelSpec::of(ModelId::M3).required_models().len(), 2);
        assert_eq!(ModelSpec::of(ModelId::M1).required_models(), [BaseModel::Multilingual]);
        assert_eq!(
            "M3-es".parse::<BaseModel>().unwrap(),
            BaseModel::Augmented(Language::Es)
        );
    }

    #[test]
    fn ensemble_catalog() {
        let cat = EnsembleSpec::catalog(&DEFAULT_BEST_MEMBERS);
        assert_eq!(cat[0].members, [ModelId::M2, ModelId::M3]);
        assert_eq!(cat[3].members.len(), 7);
        assert_eq!(cat[5].rule, EnsembleRule::MaxStandardized);
    }

    #[test]
    fn population_std() {
        let recs: Vec<_> = [0.2, 0.4, 0.6].iter().map(|&p| rec("A", "x", p)).collect();
        let s = compute_standardization(&recs).unwrap();
        assert!((s.mean[1] - 0.4).abs() < 1e-12);
        assert!((s.std[1] - (0.08f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.std[1] - 0.1633).abs() < 1e-4);
        let constant: Vec<_> = (0..3).map(|_| rec("A", "x", 0.5)).collect();
        let c = compute_standardization(&constant).unwrap();
        assert_eq!(c.z(1, 0.9), 0.0);
        assert_eq!(
            compute_standardization(&recs[..1]).unwrap_err().category(),
            "statistics"
        );
    }

    #[test]
    fn standardization_can_flip_the_winner() {
        // A: raw 0.9 sexist, but its scores usually run high. B: raw 0.7 non-sexist, unusually confident.
        let a = rec("A", "x", 0.9);
        let b = rec("B", "x", 0.3);
        let mut stats = StandardizationStats::new();
        stats.insert(
            "A".into(),
            ModelStats {
                label_space: LabelSpace::task1(),
                mean: vec![0.15, 0.85],
                std: vec![0.1, 0.1],
            },
        );
        stats.insert(
            "B".into(),
            ModelStats {
                label_space: LabelSpace::task1(),
                mean: vec![0.5, 0.5],
                std: vec![0.1, 0.1],
            },
        );
        assert!((stats["A"].z(1, 0.9) - 0.5).abs() < 1e-9);
        assert!((stats["B"].z(0, 0.7) - 2.0).abs() < 1e-9);
        assert_eq!(max_raw_select(&[&a, &b]).unwrap().label, "sexist");
        let s = max_standardized_select(&[&a, &b], &stats).unwrap();
        assert_eq!((s.label.as_str(), s.winner.as_str()), ("non-sexist", "B"));
    }

    #[test]
    fn majority_and_ties() {
        let stats: StandardizationStats = ["A", "B", "C"]
            .iter()
            .map(|m| (m.to_string(), ModelStats::identity(LabelSpace::task1())))
            .collect();
        let (a, b, c) = (rec("A", "x", 0.8), rec("B", "x", 0.6), rec("C", "x", 0.1));
        assert_eq!(majority_vote(&[&a, &b, &c], &stats).unwrap().label, "sexist");
        // 1-1 tie: summed z of non-sexist (0.2 + 0.9) beats sexist (0.8 + 0.1).
        assert_eq!(majority_vote(&[&a, &c], &stats).unwrap().label, "non-sexist");
        // exact tie on every criterion falls back to declaration order.
        let (d, e) = (rec("A", "x", 0.75), rec("B", "x", 0.25));
        assert_eq!(majority_vote(&[&d, &e], &stats).unwrap().label, "non-sexist");
        assert_eq!(max_raw_select(&[&rec("A", "x", 0.6)]).unwrap().label, "sexist");
    }

    #[test]
    fn mismatched_label_spaces_are_rejected() {
        let a = rec("A", "x", 0.8);
        let s = ScoreVector::new(LabelSpace::new(["u", "v"]).unwrap(), vec![0.5, 0.5]).unwrap();
        let b = PredictionRecord::from_scores("x", "B", s);
        assert_eq!(max_raw_select(&[&a, &b]).unwrap_err().category(), "config");
    }

    #[test]
    fn coverage_errors_list_ids() {
        let spec = EnsembleSpec::of(EnsembleId::E2, &DEFAULT_BEST_MEMBERS);
        let mut members = BTreeMap::new();
        members.insert("M2".to_string(), vec![rec("M2", "a", 0.9), rec("M2", "b", 0.2)]);
        members.insert("M3".to_string(), vec![rec("M3", "a", 0.4)]);
        match run_ensemble(&spec, &members, &StandardizationStats::new()).unwrap_err() {
            Error::Coverage(ids) => assert_eq!(ids, ["M3:b"]),
            e => panic!("unexpected {e}"),
        }
        members.get_mut("M3").unwrap().push(rec("M3", "b", 0.45));
        let out = run_ensemble(&spec, &members, &StandardizationStats::new()).unwrap();
        assert_eq!(out.winners, ["M2", "M2"]);
        assert_eq!(out.records[1].predicted_label, "non-sexist");
    }

    #[test]
    fn prediction_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![rec("M1", "a", 0.125), rec("M1", "b", 1.0 / 3.0)];
        let path = dir.path().join("p.tsv");
        write_predictions(&recs, Some(&["M1".into(), "M1".into()]), &path).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), recs);
    }
}
