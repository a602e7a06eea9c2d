//! Answer normalization, per-item scorers, and chance floors.
//!
//! Normalization: lowercase, trim, collapse internal whitespace, strip a
//! trailing run of sentence punctuation (. , ! ?), then drop leading articles
//! (a, an, the) while more than one token remains. Scorers apply it to both
//! sides, so "The  Dog." and "dog" agree.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::manifest::{self, BenchmarkManifest, LabelStats, SampleRecord, TaskType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScorerId {
    McqExact,
    YesNo,
    OpenExact,
    OpenConsensus,
    RelaxedNumeric,
}

impl ScorerId {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerId::McqExact => "MCQ_EXACT",
            ScorerId::YesNo => "YES_NO",
            ScorerId::OpenExact => "OPEN_EXACT",
            ScorerId::OpenConsensus => "OPEN_CONSENSUS",
            ScorerId::RelaxedNumeric => "RELAXED_NUMERIC",
        }
    }

    pub fn compatible_with(self, task: TaskType) -> bool {
        matches!(
            (self, task),
            (ScorerId::McqExact, TaskType::Mcq)
                | (ScorerId::YesNo, TaskType::YesNo)
                | (ScorerId::OpenExact, TaskType::OpenEnded)
                | (ScorerId::OpenConsensus, TaskType::OpenEnded)
                | (ScorerId::RelaxedNumeric, TaskType::OpenEnded)
        )
    }
}

impl fmt::Display for ScorerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScorerId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MCQ_EXACT" => Ok(ScorerId::McqExact),
            "YES_NO" => Ok(ScorerId::YesNo),
            "OPEN_EXACT" => Ok(ScorerId::OpenExact),
            "OPEN_CONSENSUS" => Ok(ScorerId::OpenConsensus),
            "RELAXED_NUMERIC" => Ok(ScorerId::RelaxedNumeric),
            other => Err(format!("unknown scorer {other:?}")),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScoringError {
    #[error("cannot aggregate an empty score list")]
    EmptyInput,
    #[error("score {value} outside [0, 1]")]
    OutOfRange { value: f64 },
    #[error("scorer {scorer} is incompatible with task type {task}")]
    Incompatible { scorer: ScorerId, task: TaskType },
    #[error("sample {sample_id:?}: {detail}")]
    BadGroundTruth { sample_id: String, detail: String },
}

/// Per-item score, a fraction in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemScore(f64);

impl ItemScore {
    pub fn new(value: f64) -> Result<Self, ScoringError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(ScoringError::OutOfRange { value });
        }
        Ok(ItemScore(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let stripped = collapsed.trim_end_matches(['.', ',', '!', '?']).trim_end();
    let mut tokens: Vec<&str> = stripped.split(' ').filter(|t| !t.is_empty()).collect();
    while tokens.len() > 1 && matches!(tokens[0], "a" | "an" | "the") {
        tokens.remove(0);
    }
    tokens.join(" ")
}

/// Scores one model answer against one sample. Binary for MCQ_EXACT, YES_NO,
/// OPEN_EXACT, and RELAXED_NUMERIC; OPEN_CONSENSUS grades in thirds.
pub fn score_item(
    prediction: &str,
    sample: &SampleRecord,
    scorer: ScorerId,
) -> Result<ItemScore, ScoringError> {
    let value = match scorer {
        ScorerId::McqExact => score_mcq(prediction, sample)?,
        ScorerId::YesNo => score_yes_no(prediction, sample)?,
        ScorerId::OpenExact => score_open_exact(prediction, sample),
        ScorerId::OpenConsensus => score_open_consensus(prediction, sample),
        ScorerId::RelaxedNumeric => score_relaxed_numeric(prediction, sample),
    };
    ItemScore::new(value)
}

pub fn aggregate_mean(scores: &[ItemScore]) -> Result<f64, ScoringError> {
    if scores.is_empty() {
        return Err(ScoringError::EmptyInput);
    }
    Ok(scores.iter().map(|s| s.0).sum::<f64>() / scores.len() as f64)
}

fn score_mcq(prediction: &str, sample: &SampleRecord) -> Result<f64, ScoringError> {
    let gt = sample
        .ground_truths
        .first()
        .ok_or_else(|| ScoringError::BadGroundTruth {
            sample_id: sample.id.clone(),
            detail: "no ground truth".to_string(),
        })?;
    let gt_label = manifest::canonical_mcq_label(gt, &sample.options).ok_or_else(|| {
        ScoringError::BadGroundTruth {
            sample_id: sample.id.clone(),
            detail: format!("ground truth {gt:?} matches no option"),
        }
    })?;

    let predicted = extract_option_label(prediction, sample.options.len()).or_else(|| {
        let normalized = normalize_answer(prediction);
        sample
            .options
            .iter()
            .position(|o| normalize_answer(o) == normalized)
            .map(manifest::label_for)
    });
    Ok(if predicted == Some(gt_label) {
        1.0
    } else {
        0.0
    })
}

/// First standalone capital letter that is a valid option label. Standalone
/// means no alphanumeric neighbor, so the B in "Answer: B." counts and the
/// one in "Banana" does not.
fn extract_option_label(prediction: &str, option_count: usize) -> Option<char> {
    let chars: Vec<char> = prediction.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_ascii_uppercase() {
            continue;
        }
        if ((c as usize) - ('A' as usize)) >= option_count {
            continue;
        }
        let prev_ok = i == 0 || !chars[i - 1].is_alphanumeric();
        let next_ok = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
        if prev_ok && next_ok {
            return Some(c);
        }
    }
    None
}

fn score_yes_no(prediction: &str, sample: &SampleRecord) -> Result<f64, ScoringError> {
    let gt = sample
        .ground_truths
        .first()
        .ok_or_else(|| ScoringError::BadGroundTruth {
            sample_id: sample.id.clone(),
            detail: "no ground truth".to_string(),
        })?;
    let gt_token = normalize_answer(gt);
    if gt_token != "yes" && gt_token != "no" {
        return Err(ScoringError::BadGroundTruth {
            sample_id: sample.id.clone(),
            detail: format!("ground truth {gt:?} does not normalize to yes or no"),
        });
    }
    let normalized = normalize_answer(prediction);
    Ok(if starts_with_token(&normalized, &gt_token) {
        1.0
    } else {
        0.0
    })
}

/// Prefix match on a token boundary: "yes, it is" starts with "yes",
/// "yesterday" does not.
fn starts_with_token(haystack: &str, token: &str) -> bool {
    haystack.starts_with(token)
        && haystack[token.len()..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric())
}

fn score_open_exact(prediction: &str, sample: &SampleRecord) -> f64 {
    let normalized = normalize_answer(prediction);
    let hit = sample
        .ground_truths
        .iter()
        .any(|gt| normalize_answer(gt) == normalized);
    if hit {
        1.0
    } else {
        0.0
    }
}

fn score_open_consensus(prediction: &str, sample: &SampleRecord) -> f64 {
    let normalized = normalize_answer(prediction);
    let matches = sample
        .ground_truths
        .iter()
        .filter(|gt| normalize_answer(gt) == normalized)
        .count();
    (matches as f64 / 3.0).min(1.0)
}

/// Numeric comparison with 5% relative tolerance (exact when the ground truth
/// is zero); non-numeric pairs fall back to exact normalized equality. A
/// single trailing percent sign is ignored for parsing, so "42%" and "42"
/// compare numerically.
fn score_relaxed_numeric(prediction: &str, sample: &SampleRecord) -> f64 {
    let normalized = normalize_answer(prediction);
    let predicted = parse_numeric(&normalized);
    let hit = sample.ground_truths.iter().any(|gt| {
        let gt_norm = normalize_answer(gt);
        match (predicted, parse_numeric(&gt_norm)) {
            (Some(p), Some(g)) => {
                if g == 0.0 {
                    p == 0.0
                } else {
                    (p - g).abs() <= 0.05 * g.abs()
                }
            }
            _ => normalized == gt_norm,
        }
    });
    if hit {
        1.0
    } else {
        0.0
    }
}

fn parse_numeric(text: &str) -> Option<f64> {
    let trimmed = text.strip_suffix('%').map(str::trim_end).unwrap_or(text);
    trimmed.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChanceMethod {
    #[serde(rename = "uniform_mcq")]
    UniformMcq,
    #[serde(rename = "majority_yesno")]
    MajorityYesNo,
    #[serde(rename = "majority_open")]
    MajorityOpen,
    #[serde(rename = "declared_override")]
    DeclaredOverride,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChanceFloor {
    pub value: f64,
    pub method: ChanceMethod,
}

/// Dataset chance floor. A declared override wins; otherwise MCQ uses the
/// mean inverse option count, YES_NO uses max(0.5, majority fraction), and
/// open-ended tasks replay the majority answer through the manifest's scorer.
pub fn chance_floor(
    manifest: &BenchmarkManifest,
    stats: &LabelStats,
) -> Result<ChanceFloor, ScoringError> {
    if let Some(value) = manifest.declared_chance {
        return Ok(ChanceFloor {
            value,
            method: ChanceMethod::DeclaredOverride,
        });
    }
    match manifest.task_type {
        TaskType::Mcq => {
            let value = stats.mean_inverse_option_count.unwrap_or(0.0);
            Ok(ChanceFloor {
                value,
                method: ChanceMethod::UniformMcq,
            })
        }
        TaskType::YesNo => Ok(ChanceFloor {
            value: stats.majority_fraction.max(0.5),
            method: ChanceMethod::MajorityYesNo,
        }),
        TaskType::OpenEnded => {
            let mut scores = Vec::with_capacity(manifest.samples.len());
            for sample in &manifest.samples {
                scores.push(score_item(&stats.majority_answer, sample, manifest.scorer)?);
            }
            Ok(ChanceFloor {
                value: aggregate_mean(&scores)?,
                method: ChanceMethod::MajorityOpen,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sample(options: &[&str], gts: &[&str]) -> SampleRecord {
        SampleRecord {
            id: "s1".into(),
            image_ref: "s1.png".into(),
            question: "?".into(),
            options: options.iter().map(|s| s.to_string()).collect(),
            ground_truths: gts.iter().map(|s| s.to_string()).collect(),
            meta: BTreeMap::new(),
        }
    }

    fn open_manifest(scorer: ScorerId, gts: &[&str]) -> BenchmarkManifest {
        BenchmarkManifest {
            name: "open".into(),
            task_type: TaskType::OpenEnded,
            scorer,
            image_root: "images".into(),
            declared_chance: None,
            samples: gts
                .iter()
                .enumerate()
                .map(|(i, gt)| SampleRecord {
                    id: format!("q{i}"),
                    image_ref: format!("q{i}.png"),
                    question: "?".into(),
                    options: vec![],
                    ground_truths: vec![gt.to_string()],
                    meta: BTreeMap::new(),
                })
                .collect(),
            base_dir: ".".into(),
        }
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The  Dog."), "dog");
        assert_eq!(normalize_answer("Yes."), "yes");
        assert_eq!(normalize_answer("42%"), "42%");
        assert_eq!(normalize_answer("  An Apple!! "), "apple");
        assert_eq!(normalize_answer("a"), "a");
        assert_eq!(normalize_answer("A, B, C"), "a, b, c");
    }

    #[test]
    fn normalization_is_idempotent() {
        for text in [
            "The  Dog.",
            "Yes.",
            "42%",
            "THE THE cat",
            "an outlier?!",
            "",
        ] {
            let once = normalize_answer(text);
            assert_eq!(normalize_answer(&once), once, "input {text:?}");
        }
    }

    #[test]
    fn mcq_letter_extraction() {
        let s = sample(&["red", "blue", "green", "grey"], &["B"]);
        assert_eq!(
            score_item("Answer: B.", &s, ScorerId::McqExact)
                .unwrap()
                .value(),
            1.0
        );
        assert_eq!(
            score_item("(B)", &s, ScorerId::McqExact).unwrap().value(),
            1.0
        );
        assert_eq!(
            score_item("Banana", &s, ScorerId::McqExact)
                .unwrap()
                .value(),
            0.0
        );
        assert_eq!(
            score_item("C", &s, ScorerId::McqExact).unwrap().value(),
            0.0
        );
        // X is standalone but not a valid label for 4 options
        assert_eq!(
            score_item("X then B", &s, ScorerId::McqExact)
                .unwrap()
                .value(),
            1.0
        );
    }

    #[test]
    fn mcq_full_text_fallback() {
        let s = sample(&["red", "blue"], &["B"]);
        assert_eq!(
            score_item("blue", &s, ScorerId::McqExact).unwrap().value(),
            1.0
        );
        assert_eq!(
            score_item("The Blue.", &s, ScorerId::McqExact)
                .unwrap()
                .value(),
            1.0
        );
        assert_eq!(
            score_item("red", &s, ScorerId::McqExact).unwrap().value(),
            0.0
        );
        assert_eq!(
            score_item("turquoise", &s, ScorerId::McqExact)
                .unwrap()
                .value(),
            0.0
        );
    }

    #[test]
    fn mcq_ground_truth_as_text() {
        let s = sample(&["red", "blue"], &["blue"]);
        assert_eq!(
            score_item("B", &s, ScorerId::McqExact).unwrap().value(),
            1.0
        );
    }

    #[test]
    fn yes_no_token_prefix() {
        let s = sample(&[], &["yes"]);
        assert_eq!(
            score_item("Yes, it is.", &s, ScorerId::YesNo)
                .unwrap()
                .value(),
            1.0
        );
        assert_eq!(score_item("yes", &s, ScorerId::YesNo).unwrap().value(), 1.0);
        assert_eq!(
            score_item("yesterday it was", &s, ScorerId::YesNo)
                .unwrap()
                .value(),
            0.0
        );
        assert_eq!(score_item("No.", &s, ScorerId::YesNo).unwrap().value(), 0.0);

        let neg = sample(&[], &["No."]);
        assert_eq!(
            score_item("no way", &neg, ScorerId::YesNo).unwrap().value(),
            1.0
        );
    }

    #[test]
    fn yes_no_bad_ground_truth_errors() {
        let s = sample(&[], &["maybe"]);
        assert!(matches!(
            score_item("yes", &s, ScorerId::YesNo),
            Err(ScoringError::BadGroundTruth { .. })
        ));
    }

    #[test]
    fn open_exact_matches_any_ground_truth() {
        let s = sample(&[], &["The Dog.", "puppy"]);
        assert_eq!(
            score_item("dog", &s, ScorerId::OpenExact).unwrap().value(),
            1.0
        );
        assert_eq!(
            score_item("a puppy", &s, ScorerId::OpenExact)
                .unwrap()
                .value(),
            1.0
        );
        assert_eq!(
            score_item("cat", &s, ScorerId::OpenExact).unwrap().value(),
            0.0
        );
    }

    #[test]
    fn open_consensus_thirds() {
        let s = sample(
            &[],
            &["dog", "Dog", "cat", "dog.", "bird", "fish", "dog", "dog"],
        );
        // 5 of the entries normalize to "dog": min(5/3, 1) = 1
        assert_eq!(
            score_item("dog", &s, ScorerId::OpenConsensus)
                .unwrap()
                .value(),
            1.0
        );
        // exactly one match
        let got = score_item("cat", &s, ScorerId::OpenConsensus)
            .unwrap()
            .value();
        assert!((got - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            score_item("cow", &s, ScorerId::OpenConsensus)
                .unwrap()
                .value(),
            0.0
        );

        let two = sample(&[], &["cat", "cat", "dog"]);
        let got = score_item("cat", &two, ScorerId::OpenConsensus)
            .unwrap()
            .value();
        assert!((got - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn relaxed_numeric_tolerance() {
        let s = sample(&[], &["36"]);
        // |37 - 36| = 1 <= 0.05 * 36 = 1.8
        assert_eq!(
            score_item("37", &s, ScorerId::RelaxedNumeric)
                .unwrap()
                .value(),
            1.0
        );
        assert_eq!(
            score_item("38", &s, ScorerId::RelaxedNumeric)
                .unwrap()
                .value(),
            0.0
        );
        assert_eq!(
            score_item("36.5", &s, ScorerId::RelaxedNumeric)
                .unwrap()
                .value(),
            1.0
        );

        let zero = sample(&[], &["0"]);
        assert_eq!(
            score_item("0.0", &zero, ScorerId::RelaxedNumeric)
                .unwrap()
                .value(),
            1.0
        );
        assert_eq!(
            score_item("0.001", &zero, ScorerId::RelaxedNumeric)
                .unwrap()
                .value(),
            0.0
        );

        let pct = sample(&[], &["42%"]);
        assert_eq!(
            score_item("42", &pct, ScorerId::RelaxedNumeric)
                .unwrap()
                .value(),
            1.0
        );
        assert_eq!(
            score_item("41", &pct, ScorerId::RelaxedNumeric)
                .unwrap()
                .value(),
            1.0
        );

        // non-numeric falls back to exact normalized equality
        let words = sample(&[], &["about half"]);
        assert_eq!(
            score_item("About Half.", &words, ScorerId::RelaxedNumeric)
                .unwrap()
                .value(),
            1.0
        );
        assert_eq!(
            score_item("half", &words, ScorerId::RelaxedNumeric)
                .unwrap()
                .value(),
            0.0
        );
    }

    #[test]
    fn aggregate_mean_rejects_empty() {
        assert_eq!(aggregate_mean(&[]), Err(ScoringError::EmptyInput));
        let scores = [ItemScore::new(1.0).unwrap(), ItemScore::new(0.0).unwrap()];
        assert_eq!(aggregate_mean(&scores).unwrap(), 0.5);
    }

    #[test]
    fn item_score_range() {
        assert!(ItemScore::new(-0.1).is_err());
        assert!(ItemScore::new(1.1).is_err());
        assert!(ItemScore::new(0.0).is_ok());
        assert!(ItemScore::new(1.0).is_ok());
    }

    #[test]
    fn chance_floor_mcq_uniform() {
        let mut m = open_manifest(ScorerId::McqExact, &["A", "B"]);
        m.task_type = TaskType::Mcq;
        for s in &mut m.samples {
            s.options = vec!["w".into(), "x".into(), "y".into(), "z".into()];
        }
        let stats = manifest::label_stats(&m);
        let floor = chance_floor(&m, &stats).unwrap();
        assert_eq!(floor.method, ChanceMethod::UniformMcq);
        assert!((floor.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn chance_floor_yes_no_majority() {
        let mut m = open_manifest(ScorerId::YesNo, &["yes", "yes", "yes", "no"]);
        m.task_type = TaskType::YesNo;
        let stats = manifest::label_stats(&m);
        let floor = chance_floor(&m, &stats).unwrap();
        assert_eq!(floor.method, ChanceMethod::MajorityYesNo);
        assert_eq!(floor.value, 0.75);

        // a minority-heavy split still floors at 0.5
        let mut even = open_manifest(ScorerId::YesNo, &["yes", "no"]);
        even.task_type = TaskType::YesNo;
        let stats = manifest::label_stats(&even);
        assert_eq!(chance_floor(&even, &stats).unwrap().value, 0.5);
    }

    #[test]
    fn chance_floor_open_majority_replay() {
        // all answers distinct: the majority answer matches exactly one item
        let gts: Vec<String> = (0..10).map(|i| format!("object-{i:02}")).collect();
        let refs: Vec<&str> = gts.iter().map(String::as_str).collect();
        let m = open_manifest(ScorerId::OpenExact, &refs);
        let stats = manifest::label_stats(&m);
        let floor = chance_floor(&m, &stats).unwrap();
        assert_eq!(floor.method, ChanceMethod::MajorityOpen);
        assert!((floor.value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn chance_floor_declared_override() {
        let mut m = open_manifest(ScorerId::OpenExact, &["a", "b"]);
        m.declared_chance = Some(0.2);
        let stats = manifest::label_stats(&m);
        let floor = chance_floor(&m, &stats).unwrap();
        assert_eq!(floor.method, ChanceMethod::DeclaredOverride);
        assert_eq!(floor.value, 0.2);
    }

    #[test]
    fn scorer_compatibility_matrix() {
        assert!(ScorerId::McqExact.compatible_with(TaskType::Mcq));
        assert!(!ScorerId::McqExact.compatible_with(TaskType::OpenEnded));
        assert!(ScorerId::YesNo.compatible_with(TaskType::YesNo));
        assert!(!ScorerId::YesNo.compatible_with(TaskType::Mcq));
        for open in [
            ScorerId::OpenExact,
            ScorerId::OpenConsensus,
            ScorerId::RelaxedNumeric,
        ] {
            assert!(open.compatible_with(TaskType::OpenEnded));
            assert!(!open.compatible_with(TaskType::YesNo));
        }
    }
}
