/// Validation/test metric used for model selection and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    MacroF1,
    Accuracy,
}

impl std::str::FromStr for Metric {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "macrof1" => Ok(Self::MacroF1),
            "accuracy" | "acc" => Ok(Self::Accuracy),
            other => Err(crate::Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MacroF1 => "macro_f1",
            Self::Accuracy => "accuracy",
        })
    }
}

impl Metric {
    /// Score in `[0, 1]`.
    pub fn score(self, predicted: &[usize], gold: &[usize], labels: usize) -> f64 {
        match self {
            Self::Accuracy => accuracy(predicted, gold),
            Self::MacroF1 => macro_f1(predicted, gold, labels),
        }
    }
}

pub fn accuracy(predicted: &[usize], gold: &[usize]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    hits as f64 / gold.len() as f64
}

/// Unweighted mean of per-class F1; a class with no gold and no predicted
/// items scores 0.
pub fn macro_f1(predicted: &[usize], gold: &[usize], labels: usize) -> f64 {
    if labels == 0 {
        return 0.0;
    }
    let mut tp = vec![0usize; labels];
    let mut pred_n = vec![0usize; labels];
    let mut gold_n = vec![0usize; labels];
    for (&p, &g) in predicted.iter().zip(gold) {
        pred_n[p] += 1;
        gold_n[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let f1: f64 = (0..labels)
        .map(|c| {
            let denom = pred_n[c] + gold_n[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    f1 / labels as f64
}
