use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Categorical control with integer codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffect {
    pub name: String,
    pub codes: Vec<i64>,
}

/// Columns for a kink regression; all columns have the same length.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RkdData {
    pub running: Vec<f64>,
    pub outcome: Vec<f64>,
    /// Observed treatment, required for fuzzy fits.
    pub treatment: Option<Vec<f64>>,
    /// Regime indicator (1 = later regime), required for pooled fits.
    pub regime_post: Option<Vec<bool>>,
    pub controls: Vec<(String, Vec<f64>)>,
    pub fixed_effects: Vec<FixedEffect>,
    /// Censored spells removed while building the data.
    #[serde(default)]
    pub censored_excluded: usize,
}

impl RkdData {
    pub fn new(running: Vec<f64>, outcome: Vec<f64>) -> Self {
        RkdData { running, outcome, ..Default::default() }
    }

    pub fn with_treatment(mut self, treatment: Vec<f64>) -> Self {
        self.treatment = Some(treatment);
        self
    }

    pub fn with_regime(mut self, post: Vec<bool>) -> Self {
        self.regime_post = Some(post);
        self
    }

    pub fn with_control(mut self, name: &str, values: Vec<f64>) -> Self {
        self.controls.push((name.to_string(), values));
        self
    }

    pub fn with_fixed_effect(mut self, name: &str, codes: Vec<i64>) -> Self {
        self.fixed_effects.push(FixedEffect { name: name.to_string(), codes });
        self
    }

    pub fn len(&self) -> usize {
        self.running.len()
    }

    pub fn is_empty(&self) -> bool {
        self.running.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let check = |what: &str, len: usize| {
            if len != n {
                Err(Error::Mismatch(format!("{what} has {len} rows, running variable has {n}")))
            } else {
                Ok(())
            }
        };
        check("outcome", self.outcome.len())?;
        if let Some(t) = &self.treatment {
            check("treatment", t.len())?;
        }
        if let Some(r) = &self.regime_post {
            check("regime", r.len())?;
        }
        for (name, v) in &self.controls {
            check(name, v.len())?;
        }
        for fe in &self.fixed_effects {
            check(&fe.name, fe.codes.len())?;
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.running) || !finite(&self.outcome) {
            return domain("running variable and outcome must be finite");
        }
        if let Some(t) = &self.treatment {
            if !finite(t) {
                return domain("treatment must be finite");
            }
        }
        if self.controls.iter().any(|(_, v)| !finite(v)) {
            return domain("controls must be finite");
        }
        Ok(())
    }

    pub fn control(&self, name: &str) -> Result<&[f64]> {
        self.controls
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Schema(format!("unknown control `{name}`")))
    }

    pub fn fixed_effect(&self, name: &str) -> Result<&[i64]> {
        self.fixed_effects
            .iter()
            .find(|fe| fe.name == name)
            .map(|fe| fe.codes.as_slice())
            .ok_or_else(|| Error::Schema(format!("unknown fixed effect `{name}`")))
    }

    /// Rows selected by index, in order.
    pub fn subset(&self, rows: &[usize]) -> RkdData {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        RkdData {
            running: pick(&self.running),
            outcome: pick(&self.outcome),
            treatment: self.treatment.as_deref().map(pick),
            regime_post: self.regime_post.as_ref().map(|r| rows.iter().map(|&i| r[i]).collect()),
            controls: self.controls.iter().map(|(n, v)| (n.clone(), pick(v))).collect(),
            fixed_effects: self
                .fixed_effects
                .iter()
                .map(|fe| FixedEffect {
                    name: fe.name.clone(),
                    codes: rows.iter().map(|&i| fe.codes[i]).collect(),
                })
                .collect(),
            censored_excluded: self.censored_excluded,
        }
    }

    /// Same data with the outcome replaced.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> RkdData {
        RkdData { outcome, ..self.clone() }
    }
}
