use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{ArchSpec, GradSpace, HiddenActivation, InitScheme, Loss, OutputActivation};
use crate::optim::{LrSchedule, OptimConfig, OptimKind};
use crate::smoother::{buffers_needed, DEFAULT_BUDGET};
use crate::train::{Tracking, TrainSpec};

/// Environment variable naming the root for relative dataset paths.
pub const DATA_DIR_ENV: &str = "TLENS_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ApproxError,
    DoubleDescent,
    Grokking,
    GbtCompare,
    Lmc,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ApproxError => "approx-error",
            ExperimentKind::DoubleDescent => "double-descent",
            ExperimentKind::Grokking => "grokking",
            ExperimentKind::GbtCompare => "gbt-compare",
            ExperimentKind::Lmc => "lmc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Steps at which full run checkpoints are written.
    #[serde(default)]
    pub checkpoint_steps: Vec<usize>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_steps() -> usize {
    1000
}

fn default_log_every() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// Built-in rendered 28×28 digits.
    SyntheticDigits,
    /// IDX image and label files.
    Idx,
    /// Built-in 1-D digit-template signals.
    Mnist1d,
    /// Quadratic single-index regression.
    Polynomial,
    /// Numeric CSV with a header row.
    Csv,
    /// Built-in heavy-tailed regression.
    HeavyTailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub source: DataSource,
    pub classes: [u8; 2],
    pub n_train: usize,
    pub n_test: usize,
    pub downsample: [usize; 2],
    pub label_noise: f64,
    pub seed: u64,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub path: Option<PathBuf>,
    pub target: Option<String>,
    /// CSV columns passed through `ln(1 + v)` before standardization.
    pub log_columns: Vec<String>,
    /// Input dimension of the generated regression tasks.
    pub dim: usize,
    /// Rows drawn by the heavy-tailed generator before splitting.
    pub n_total: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            source: DataSource::SyntheticDigits,
            classes: [3, 5],
            n_train: 1000,
            n_test: 1000,
            downsample: [8, 8],
            label_noise: 0.0,
            seed: 0,
            images: None,
            labels: None,
            path: None,
            target: None,
            log_columns: Vec::new(),
            dim: 100,
            n_total: 25_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    Relu,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSection {
    pub hidden: Vec<usize>,
    pub activation: ActivationName,
    /// Curvature of the quadratic activation.
    pub eps: f64,
    pub output: OutputActivation,
    pub final_layer_trainable: bool,
    pub init: Option<InitScheme>,
    pub init_scale: f64,
}

impl Default for ArchSection {
    fn default() -> Self {
        ArchSection {
            hidden: vec![200, 200],
            activation: ActivationName::Relu,
            eps: 0.0,
            output: OutputActivation::Identity,
            final_layer_trainable: true,
            init: None,
            init_scale: 1.0,
        }
    }
}

impl ArchSection {
    pub fn spec(&self, input_dim: usize) -> ArchSpec {
        let mut spec = match self.activation {
            ActivationName::Relu => ArchSpec::relu_mlp(input_dim, &self.hidden),
            ActivationName::Quadratic => ArchSpec {
                hidden_activation: HiddenActivation::CustomQuadratic { eps: self.eps },
                init: InitScheme::StandardNormal,
                ..ArchSpec::relu_mlp(input_dim, &self.hidden)
            },
        };
        spec.final_layer_trainable = self.final_layer_trainable;
        spec.output_activation = self.output;
        if let Some(init) = self.init {
            spec.init = init;
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    pub kind: OptimKind,
    /// Base step size.
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    pub decay_milestones: Vec<usize>,
    pub decay_factor: f64,
    pub loss: Loss,
    /// Rows per step; 0 means full batch.
    pub batch_size: usize,
}

impl Default for OptimSection {
    fn default() -> Self {
        OptimSection {
            kind: OptimKind::Sgd,
            gamma: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            lambda: 0.0,
            eps: 1e-8,
            warmup_steps: 0,
            decay_milestones: Vec::new(),
            decay_factor: 1.0,
            loss: Loss::Squared,
            batch_size: 100,
        }
    }
}

impl OptimSection {
    pub fn config(&self, gamma: f64) -> OptimConfig {
        OptimConfig {
            kind: self.kind,
            lr: LrSchedule {
                base: gamma,
                warmup_steps: self.warmup_steps,
                decay_milestones: self.decay_milestones.clone(),
                decay_factor: self.decay_factor,
            },
            beta1: self.beta1,
            beta2: self.beta2,
            lambda: self.lambda,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingSection {
    pub telescope: bool,
    pub smoother: bool,
    pub test_rows: usize,
    pub space: GradSpace,
    pub invariant_tol: f64,
    pub budget: usize,
}

impl Default for TrackingSection {
    fn default() -> Self {
        let t = Tracking::default();
        TrackingSection {
            telescope: t.telescope,
            smoother: t.smoother,
            test_rows: t.test_rows,
            space: t.space,
            invariant_tol: t.invariant_tol,
            budget: DEFAULT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Hidden widths of a single-hidden-layer sweep.
    pub widths: Vec<usize>,
    /// Step sizes, one run each.
    pub gammas: Vec<f64>,
    /// Stop a cell once every training label is fit.
    pub stop_at_zero_train_err: bool,
    /// Stop when train loss improves by less than `min_delta` over this many epochs (0 disables).
    pub patience_epochs: usize,
    pub min_delta: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            widths: Vec::new(),
            gammas: Vec::new(),
            stop_at_zero_train_err: false,
            patience_epochs: 0,
            min_delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmcSection {
    pub spawn_steps: Vec<usize>,
    pub child_seeds: [u64; 2],
    pub alpha_points: usize,
    pub drift_subset: usize,
    /// Steps between the two drift checkpoints; 0 means one epoch.
    pub horizon: usize,
    /// Initialize from a run trained on this class pair.
    pub pretrain_classes: Option<[u8; 2]>,
    pub pretrain_steps: usize,
}

impl Default for LmcSection {
    fn default() -> Self {
        LmcSection {
            spawn_steps: vec![0],
            child_seeds: [101, 202],
            alpha_points: 30,
            drift_subset: 256,
            horizon: 0,
            pretrain_classes: None,
            pretrain_steps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtSection {
    pub n_stages: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Share of rows, by irregularity rank, set aside as the irregular pool.
    pub irregular_fraction: f64,
    pub mixture_size: usize,
    pub proportions: Vec<f64>,
    /// Training steps at which the network's kernel rows are measured.
    pub kernel_snapshots: usize,
}

impl Default for GbtSection {
    fn default() -> Self {
        GbtSection {
            n_stages: 200,
            max_depth: 3,
            learning_rate: 0.1,
            irregular_fraction: 0.1,
            mixture_size: 4000,
            proportions: vec![0.0, 0.1, 0.25, 0.5],
            kernel_snapshots: 20,
        }
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub arch: ArchSection,
    #[serde(default)]
    pub optim: OptimSection,
    #[serde(default)]
    pub tracking: TrackingSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub lmc: LmcSection,
    #[serde(default)]
    pub gbt: GbtSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Resolves a dataset path against `TLENS_DATA_DIR` when it is relative.
    pub fn data_path(p: &Path) -> PathBuf {
        if p.is_absolute() {
            return p.to_path_buf();
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(root) => PathBuf::from(root).join(p),
            None => p.to_path_buf(),
        }
    }

    /// Input dimension implied by the dataset block.
    pub fn input_dim(&self) -> usize {
        let d = &self.dataset;
        match d.source {
            DataSource::SyntheticDigits | DataSource::Idx => d.downsample[0] * d.downsample[1],
            DataSource::Mnist1d => 40,
            DataSource::Polynomial | DataSource::HeavyTailed => d.dim,
            DataSource::Csv => 0,
        }
    }

    /// Architecture for one sweep cell (`width` replaces the hidden layers).
    pub fn arch_spec(&self, input_dim: usize, width: Option<usize>) -> ArchSpec {
        let mut a = self.arch.clone();
        if let Some(w) = width {
            a.hidden = vec![w];
        }
        a.spec(input_dim)
    }

    pub fn train_spec(
        &self,
        input_dim: usize,
        seed: u64,
        width: Option<usize>,
        gamma: Option<f64>,
    ) -> TrainSpec {
        TrainSpec {
            arch: self.arch_spec(input_dim, width),
            init_seed: seed,
            init_scale: self.arch.init_scale,
            optim: self.optim.config(gamma.unwrap_or(self.optim.gamma)),
            loss: self.optim.loss,
            batch_size: self.optim.batch_size,
            batch_seed: batch_seed(seed),
            tracking: Tracking {
                telescope: self.tracking.telescope,
                smoother: self.tracking.smoother,
                test_rows: self.tracking.test_rows,
                space: self.tracking.space,
                invariant_tol: self.tracking.invariant_tol,
                smoother_budget: self.tracking.budget,
            },
        }
    }

    /// Checks everything that can be checked without loading data or training.
    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let bad = |m: String| Err(Error::Config(m));
        if e.seeds.is_empty() {
            return bad("experiment.seeds must list at least one seed".into());
        }
        let mut seeds = e.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return bad("experiment.seeds contains duplicates".into());
        }
        if e.steps == 0 {
            return bad("experiment.steps must be positive".into());
        }
        if e.log_every == 0 {
            return bad("experiment.log_every must be positive".into());
        }
        let d = &self.dataset;
        if !(0.0..=1.0).contains(&d.label_noise) {
            return bad(format!(
                "dataset.label_noise must lie in [0, 1], got {}",
                d.label_noise
            ));
        }
        let allowed: &[DataSource] = match e.kind {
            ExperimentKind::ApproxError | ExperimentKind::Lmc => &[
                DataSource::SyntheticDigits,
                DataSource::Idx,
                DataSource::Mnist1d,
            ],
            ExperimentKind::DoubleDescent => &[
                DataSource::SyntheticDigits,
                DataSource::Idx,
                DataSource::Mnist1d,
            ],
            ExperimentKind::Grokking => &[DataSource::Polynomial],
            ExperimentKind::GbtCompare => &[DataSource::Csv, DataSource::HeavyTailed],
        };
        if !allowed.contains(&d.source) {
            return bad(format!(
                "dataset.source {:?} is not usable by the {} experiment",
                d.source,
                e.kind.name()
            ));
        }
        match d.source {
            DataSource::Idx => {
                for (key, p) in [("images", &d.images), ("labels", &d.labels)] {
                    let p = p.as_ref().ok_or_else(|| {
                        Error::Config(format!("dataset.{key} is required for IDX data"))
                    })?;
                    let full = Self::data_path(p);
                    if !full.is_file() {
                        return bad(format!(
                            "dataset file {} not found (set {DATA_DIR_ENV})",
                            full.display()
                        ));
                    }
                }
            }
            DataSource::Csv => {
                let p = d
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("dataset.path is required for CSV data".into()))?;
                if d.target.is_none() {
                    return bad("dataset.target is required for CSV data".into());
                }
                let full = Self::data_path(p);
                if !full.is_file() {
                    return bad(format!(
                        "dataset file {} not found (set {DATA_DIR_ENV})",
                        full.display()
                    ));
                }
            }
            _ => {}
        }
        if d.classes[0] == d.classes[1] {
            return bad("dataset.classes must name two different classes".into());
        }
        let widths: Vec<Option<usize>> = match e.kind {
            ExperimentKind::DoubleDescent => {
                if self.sweep.widths.is_empty() {
                    return bad("sweep.widths must be non-empty for double-descent".into());
                }
                self.sweep.widths.iter().map(|&w| Some(w)).collect()
            }
            _ => vec![None],
        };
        let gammas: Vec<f64> = if self.sweep.gammas.is_empty() {
            vec![self.optim.gamma]
        } else {
            self.sweep.gammas.clone()
        };
        let input_dim = self.input_dim().max(1);
        for w in &widths {
            for &g in &gammas {
                let spec = self.train_spec(input_dim, e.seeds[0], *w, Some(g));
                spec.validate()
                    .map_err(|err| Error::Config(err.to_string()))?;
                if spec.tracking.smoother {
                    let p = spec.arch.param_count()?;
                    let required = buffers_needed(spec.optim.kind)
                        .saturating_mul(p)
                        .saturating_mul(d.n_train);
                    if required > self.tracking.budget {
                        return Err(Error::MemoryBudget {
                            required,
                            budget: self.tracking.budget,
                        });
                    }
                }
            }
        }
        match e.kind {
            ExperimentKind::Grokking | ExperimentKind::DoubleDescent if !self.tracking.smoother => {
                return bad(format!(
                    "the {} experiment needs tracking.smoother = true",
                    e.kind.name()
                ));
            }
            ExperimentKind::ApproxError if !self.tracking.telescope => {
                return bad("the approx-error experiment needs tracking.telescope = true".into());
            }
            ExperimentKind::Lmc => {
                let l = &self.lmc;
                if l.spawn_steps.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("lmc.spawn_steps must be strictly increasing".into());
                }
                if l.spawn_steps.iter().any(|&t| t > e.steps) {
                    return bad("lmc.spawn_steps must not exceed experiment.steps".into());
                }
                if l.alpha_points < 2 {
                    return bad("lmc.alpha_points must be at least 2".into());
                }
                if l.pretrain_classes
                    .is_some_and(|c| c.contains(&d.classes[0]) || c.contains(&d.classes[1]))
                {
                    return bad("lmc.pretrain_classes must be disjoint from dataset.classes".into());
                }
            }
            ExperimentKind::GbtCompare => {
                let g = &self.gbt;
                if g.n_stages == 0 {
                    return bad("gbt.n_stages must be positive".into());
                }
                if !(g.learning_rate >= 0.0) {
                    return bad("gbt.learning_rate must be non-negative".into());
                }
                if !(0.0 < g.irregular_fraction && g.irregular_fraction < 1.0) {
                    return bad("gbt.irregular_fraction must lie in (0, 1)".into());
                }
                if g.proportions.is_empty() || g.proportions[0] != 0.0 {
                    return bad(
                        "gbt.proportions must start with 0 (the normalizing baseline)".into(),
                    );
                }
                if g.proportions.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return bad("gbt.proportions must lie in [0, 1]".into());
                }
                if g.kernel_snapshots == 0 {
                    return bad("gbt.kernel_snapshots must be positive".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Batch-order seed used for run seed `seed`.
pub fn batch_seed(seed: u64) -> u64 {
    seed ^ 0x5DEE_CE66_D1CE_4E5B
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[experiment]
kind = "approx-error"
output_dir = "out"

[tracking]
telescope = true
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.experiment.kind, ExperimentKind::ApproxError);
        assert_eq!(c.experiment.seeds, vec![0]);
        assert_eq!(c.arch.hidden, vec![200, 200]);
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[optim]\nlr = 0.1\n");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("lr"), "{err}");
        let text = format!("{MINIMAL}\n[bogus]\nx = 1\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn semantic_checks() {
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.experiment.seeds = vec![1, 1];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.dataset.source = DataSource::Polynomial;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.tracking.smoother = true;
        c.optim.kind = OptimKind::Adamw;
        c.tracking.budget = 1000;
        assert!(matches!(c.validate(), Err(Error::MemoryBudget { .. })));
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.dataset.source = DataSource::Idx;
        c.dataset.images = Some("definitely/missing".into());
        c.dataset.labels = Some("definitely/missing".into());
        assert!(c.validate().unwrap_err().to_string().contains("not found"));
    }
}
