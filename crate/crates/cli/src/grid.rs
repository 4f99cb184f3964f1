//! Estimation grids: each cell names a kink, a regime and an estimator, and
//! is run once per outcome.

use std::fmt;
use std::str::FromStr;

use anyhow::bail;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use ui_rkd::rkd::{
    estimate, pooled_two_kink_rkd, spell_data, Bandwidth, Kernel, Method, PolyOrder, PooledKinks, RkdFit,
    RkdSpec, SpellDataReport, SpellOutcome, COVARIATE_NAMES,
};
use ui_rkd::schedule::{KinkSide, Policy, Regime, WageConversion};
use ui_rkd::synth::SpellRecord;

/// Fixed effects added by `--controls`.
pub const CONTROL_FIXED_EFFECTS: [&str; 3] = ["region_code", "industry_code", "layoff_year"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RegimeChoice {
    Pre,
    Post,
    /// Both regimes, each centered at its own kink.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KinkChoice {
    Low,
    High,
}

impl From<KinkChoice> for KinkSide {
    fn from(k: KinkChoice) -> Self {
        match k {
            KinkChoice::Low => KinkSide::Low,
            KinkChoice::High => KinkSide::High,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Sharp,
    Fuzzy,
}

/// `fg`, `mse` or a fixed positive width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthChoice {
    Fg,
    Mse,
    Fixed(f64),
}

impl FromStr for BandwidthChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fg" => Ok(BandwidthChoice::Fg),
            "mse" => Ok(BandwidthChoice::Mse),
            other => match other.parse::<f64>() {
                Ok(h) if h > 0.0 && h.is_finite() => Ok(BandwidthChoice::Fixed(h)),
                _ => Err(format!("bandwidth must be fg, mse or a positive number, got `{s}`")),
            },
        }
    }
}

impl fmt::Display for BandwidthChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthChoice::Fg => f.write_str("fg"),
            BandwidthChoice::Mse => f.write_str("mse"),
            BandwidthChoice::Fixed(h) => write!(f, "{h}"),
        }
    }
}

impl Serialize for BandwidthChoice {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BandwidthChoice::Fixed(h) => s.serialize_f64(*h),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for BandwidthChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Number(h) => h.to_string(),
            Raw::Text(t) => t,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl From<BandwidthChoice> for Bandwidth {
    fn from(b: BandwidthChoice) -> Self {
        match b {
            BandwidthChoice::Fg => Bandwidth::Fg,
            BandwidthChoice::Mse => Bandwidth::Mse,
            BandwidthChoice::Fixed(h) => Bandwidth::Fixed(h),
        }
    }
}

fn default_outcomes() -> Vec<SpellOutcome> {
    vec![SpellOutcome::LogReemploymentWage, SpellOutcome::TotalUiPaid]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridCell {
    /// Identifies the cell in outputs; fits sharing a label are paired for
    /// calibration. Empty labels are derived from the other fields.
    pub label: String,
    pub outcomes: Vec<SpellOutcome>,
    pub regime: RegimeChoice,
    pub kink: KinkChoice,
    pub method: MethodChoice,
    pub bandwidth: BandwidthChoice,
    pub poly: usize,
    pub kernel: Kernel,
    pub controls: Vec<String>,
    pub fixed_effects: Vec<String>,
    /// Admissible range of the running variable (normalized for pooled cells).
    pub sample_window: Option<(f64, f64)>,
    pub weak_f_threshold: f64,
}

impl Default for GridCell {
    fn default() -> Self {
        GridCell {
            label: String::new(),
            outcomes: default_outcomes(),
            regime: RegimeChoice::Post,
            kink: KinkChoice::High,
            method: MethodChoice::Fuzzy,
            bandwidth: BandwidthChoice::Fg,
            poly: 1,
            kernel: Kernel::Uniform,
            controls: Vec::new(),
            fixed_effects: Vec::new(),
            sample_window: None,
            weak_f_threshold: 10.0,
        }
    }
}

/// Command-line overrides applied to every cell.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub kink: Option<KinkChoice>,
    pub regime: Option<RegimeChoice>,
    pub bandwidth: Option<BandwidthChoice>,
    pub poly: Option<usize>,
    pub controls: bool,
    pub method: Option<MethodChoice>,
}

impl GridCell {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(k) = o.kink {
            self.kink = k;
        }
        if let Some(r) = o.regime {
            self.regime = r;
        }
        if let Some(b) = o.bandwidth {
            self.bandwidth = b;
        }
        if let Some(p) = o.poly {
            self.poly = p;
        }
        if let Some(m) = o.method {
            self.method = m;
        }
        if o.controls {
            self.controls = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
            self.fixed_effects = CONTROL_FIXED_EFFECTS.iter().map(|s| s.to_string()).collect();
        }
    }

    pub fn display_label(&self) -> String {
        if !self.label.is_empty() {
            return self.label.clone();
        }
        let regime = plain(&self.regime);
        let kink = plain(&self.kink);
        let method = plain(&self.method);
        let controls = if self.controls.is_empty() && self.fixed_effects.is_empty() { "" } else { "-controls" };
        format!("{regime}-{kink}-{method}-p{}-h{}{controls}", self.poly, self.bandwidth)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.outcomes.is_empty() {
            bail!("grid cell `{}` lists no outcomes", self.display_label());
        }
        PolyOrder::from_degree(self.poly)?;
        Ok(())
    }
}

/// Serde name of a unit enum variant.
pub fn plain<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// One fitted (or failed) grid cell for one outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub label: String,
    pub outcome: SpellOutcome,
    pub regime: RegimeChoice,
    pub kink: KinkChoice,
    pub ok: bool,
    pub spec: Option<RkdSpec>,
    pub data: Option<SpellDataReport>,
    pub fit: Option<RkdFit>,
    pub error: Option<String>,
}

/// The unit of work: a cell paired with one of its outcomes.
#[derive(Debug, Clone)]
pub struct Task {
    pub cell: GridCell,
    pub outcome: SpellOutcome,
}

pub fn expand(cells: &[GridCell], overrides: &Overrides) -> anyhow::Result<Vec<Task>> {
    let mut cells: Vec<GridCell> = if cells.is_empty() { vec![GridCell::default()] } else { cells.to_vec() };
    let mut tasks = Vec::new();
    for cell in &mut cells {
        cell.apply(overrides);
        cell.validate()?;
        for &outcome in &cell.outcomes {
            tasks.push(Task { cell: cell.clone(), outcome });
        }
    }
    Ok(tasks)
}

/// Builds the kink spec for a task; for pooled cells the kink point is the
/// normalized zero.
pub fn task_spec(task: &Task, policy: &Policy, conv: &WageConversion) -> anyhow::Result<RkdSpec> {
    let cell = &task.cell;
    let side = KinkSide::from(cell.kink);
    let reference = match cell.regime {
        RegimeChoice::Pre => Regime::Pre,
        RegimeChoice::Post | RegimeChoice::Pooled => Regime::Post,
    };
    let rule = policy.rule(reference);
    let slope = match side {
        KinkSide::High => -rule.beta * conv.net_over_gross,
        KinkSide::Low => rule.beta * conv.net_over_gross,
    };
    let method = match cell.method {
        MethodChoice::Sharp => Method::Sharp { slope_change: slope },
        MethodChoice::Fuzzy => Method::Fuzzy,
    };
    let (kink_point, benefit) = match cell.regime {
        RegimeChoice::Pooled => (0.0, None),
        _ => {
            let b = match side {
                KinkSide::High => rule.b_high,
                KinkSide::Low => rule.b_low,
            };
            (rule.kink_locations(conv).gross(side), Some(b))
        }
    };
    let mut spec = RkdSpec::new(kink_point, method, cell.bandwidth.into());
    spec.poly_order = PolyOrder::from_degree(cell.poly)?;
    spec.kernel = cell.kernel;
    spec.controls = cell.controls.clone();
    spec.fixed_effects = cell.fixed_effects.clone();
    spec.sample_window = cell.sample_window;
    spec.weak_f_threshold = cell.weak_f_threshold;
    spec.benefit_at_kink = benefit;
    spec.log_outcome = task.outcome.is_log();
    Ok(spec)
}

fn fit_task(task: &Task, spec: &RkdSpec, records: &[SpellRecord], policy: &Policy, conv: &WageConversion) -> anyhow::Result<(RkdFit, SpellDataReport)> {
    let cell = &task.cell;
    let regime = match cell.regime {
        RegimeChoice::Pre => Some(Regime::Pre),
        RegimeChoice::Post => Some(Regime::Post),
        RegimeChoice::Pooled => None,
    };
    let drop_censored = cell.fixed_effects.iter().any(|f| f == "duration_group");
    let (data, report) = spell_data(records, task.outcome, policy, regime, drop_censored)?;
    let fit = match cell.regime {
        RegimeChoice::Pooled => {
            let side = KinkSide::from(cell.kink);
            let kinks = PooledKinks {
                pre: policy.pre.kink_locations(conv).gross(side),
                post: policy.post.kink_locations(conv).gross(side),
            };
            pooled_two_kink_rkd(&data, &kinks, spec)?
        }
        _ => estimate(&data, spec)?,
    };
    Ok((fit, report))
}

/// Runs one task; failures are recorded in the result, never raised.
pub fn run_task(task: &Task, records: &[SpellRecord], policy: &Policy, conv: &WageConversion) -> CellResult {
    let mut out = CellResult {
        label: task.cell.display_label(),
        outcome: task.outcome,
        regime: task.cell.regime,
        kink: task.cell.kink,
        ok: false,
        spec: None,
        data: None,
        fit: None,
        error: None,
    };
    let spec = match task_spec(task, policy, conv) {
        Ok(s) => s,
        Err(e) => {
            out.error = Some(format!("{e:#}"));
            return out;
        }
    };
    match fit_task(task, &spec, records, policy, conv) {
        Ok((fit, report)) => {
            out.ok = true;
            out.fit = Some(fit);
            out.data = Some(report);
        }
        Err(e) => out.error = Some(format!("{e:#}")),
    }
    out.spec = Some(spec);
    out
}
