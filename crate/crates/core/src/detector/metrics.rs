use serde::{Deserialize, Serialize};

use super::{detect, Decision, DetectorBank, Outcome};
use crate::error::{Error, Result};
use crate::nn::MlpModel;

/// Ground truth for an evaluation sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Truth {
    Known(usize),
    Unknown,
}

/// How many decisions fell into each indicator case.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseCounts {
    pub none_accepted: usize,
    pub one_accepted: usize,
    pub several_accepted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub n_known: usize,
    pub n_unknown: usize,
    /// Unknown samples flagged unknown, over unknown samples.
    pub unknown_recall: Option<f64>,
    /// Known samples flagged unknown, over known samples.
    pub false_alarm_rate: Option<f64>,
    /// Known samples assigned their true class, over known samples.
    pub known_accuracy: Option<f64>,
    /// Correct outcomes over all samples.
    pub overall_accuracy: f64,
    pub cases: CaseCounts,
}

impl DetectionMetrics {
    pub fn from_decisions(pairs: &[(Truth, Decision)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::data("cannot evaluate detection on an empty test set"));
        }
        let mut cases = CaseCounts::default();
        let (mut n_known, mut n_unknown) = (0, 0);
        let (mut flagged_unknown, mut false_alarms, mut known_correct) = (0, 0, 0);
        for (truth, d) in pairs {
            match d.outcome {
                Outcome::Unknown => cases.none_accepted += 1,
                Outcome::Known(_) => cases.one_accepted += 1,
                Outcome::SoftmaxResolved(_) => cases.several_accepted += 1,
            }
            match *truth {
                Truth::Unknown => {
                    n_unknown += 1;
                    if d.outcome.is_unknown() {
                        flagged_unknown += 1;
                    }
                }
                Truth::Known(c) => {
                    n_known += 1;
                    if d.outcome.is_unknown() {
                        false_alarms += 1;
                    } else if d.outcome.class() == Some(c) {
                        known_correct += 1;
                    }
                }
            }
        }
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        Ok(DetectionMetrics {
            n_known,
            n_unknown,
            unknown_recall: ratio(flagged_unknown, n_unknown),
            false_alarm_rate: ratio(false_alarms, n_known),
            known_accuracy: ratio(known_correct, n_known),
            overall_accuracy: (flagged_unknown + known_correct) as f64 / pairs.len() as f64,
            cases,
        })
    }
}

/// Runs detection over `test` and summarizes it.
pub fn evaluate_detection(bank: &DetectorBank, model: &MlpModel, test: &[(Vec<f64>, Truth)]) -> Result<DetectionMetrics> {
    if test.is_empty() {
        return Err(Error::data("cannot evaluate detection on an empty test set"));
    }
    let pairs = test
        .iter()
        .map(|(x, t)| detect(bank, model, x).map(|d| (*t, d)))
        .collect::<Result<Vec<_>>>()?;
    DetectionMetrics::from_decisions(&pairs)
}
