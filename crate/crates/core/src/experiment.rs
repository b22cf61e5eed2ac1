//! Seeded sweeps over the ring-anomaly experiment.
//!
//! A sweep is described by a JSON document (see `docs/sweep-config.md`):
//!
//! ```json
//! { "radii": [15, 35, 55, 75], "corruption": [0.2], "seeds": [1, 2, 3],
//!   "methods": ["gemmed", "svm", "two-stage"] }
//! ```
//!
//! Every (method, R, r_a, seed) cell regenerates its data from the seed, so
//! results are reproducible cell by cell.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::baselines::{train_svm, train_two_stage};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::{
    auc, detection_accuracy, detection_rates, misclassification_error, precision_recall_curve,
};
use crate::gem::GemConfig;
use crate::gemmed::{train_with_gram, Detection, HyperParams};
use crate::kernels::{gram_matrix, median_heuristic_gamma, KernelKind, KernelSpec, DEFAULT_JITTER};
use crate::model::ModelDocument;
use crate::synthdata::{generate, ring_points, RingExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gemmed,
    Svm,
    TwoStage,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gemmed => "gemmed",
            Method::Svm => "svm",
            Method::TwoStage => "two-stage",
        }
    }
}

/// Kernel selection; an absent `gamma` picks the median heuristic per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelChoice {
    pub kind: KernelKind,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    DEFAULT_JITTER
}

impl Default for KernelChoice {
    fn default() -> Self {
        Self {
            kind: KernelKind::Linear,
            gamma: None,
            jitter: DEFAULT_JITTER,
        }
    }
}

impl KernelChoice {
    pub fn resolve(&self, xs: &[Vec<f64>]) -> Result<KernelSpec> {
        let gamma = match (self.kind, self.gamma) {
            (KernelKind::Rbf, None) => median_heuristic_gamma(xs)?,
            (_, Some(g)) => g,
            (KernelKind::Linear, None) => 1.0,
        };
        let spec = KernelSpec {
            kind: self.kind,
            gamma,
            jitter: self.jitter,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Per-cell settings shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    /// Clean test points (taken from the front of the shuffled test set) in the detection set.
    pub detection_clean: usize,
    /// Held-out ring points appended to them.
    pub detection_anomalies: usize,
    pub kernel: KernelChoice,
    pub hyper: HyperParams,
    pub gem: GemConfig,
    /// Coverage used by GEM; `None` means `1 − r_a` for each cell.
    pub target_coverage: Option<f64>,
    pub svm_c: f64,
    pub svm_max_iter: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            n_train_per_class: 100,
            n_test_per_class: 2000,
            detection_clean: 2000,
            detection_anomalies: 200,
            kernel: KernelChoice::default(),
            hyper: HyperParams::default(),
            gem: GemConfig::default(),
            target_coverage: None,
            svm_c: 1.0,
            svm_max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub radii: Vec<f64>,
    pub corruption: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub settings: ExperimentSettings,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Input(format!("sweep config: {e}")))?;
        for (key, empty) in [
            ("radii", cfg.radii.is_empty()),
            ("corruption", cfg.corruption.is_empty()),
            ("seeds", cfg.seeds.is_empty()),
            ("methods", cfg.methods.is_empty()),
        ] {
            if empty {
                return Err(Error::Input(format!(
                    "sweep config: `{key}` must be a nonempty list"
                )));
            }
        }
        Ok(cfg)
    }
}

/// Everything measured for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub radius: f64,
    pub corruption: f64,
    pub seed: u64,
    pub error: f64,
    /// Precision-recall AUC of the training anomaly ranking.
    pub auc: Option<f64>,
    pub detection_accuracy: Option<f64>,
    pub true_positive_rate: Option<f64>,
    pub false_alarm_rate: Option<f64>,
}

/// Data for one cell: training set, clean test set and the detection set.
pub struct CellData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub detection: LabeledDataset,
}

pub fn cell_data(
    radius: f64,
    corruption: f64,
    seed: u64,
    s: &ExperimentSettings,
) -> Result<CellData> {
    let cfg = RingExperimentConfig {
        radius,
        corruption,
        n_train_per_class: s.n_train_per_class,
        n_test_per_class: s.n_test_per_class,
        seed,
    };
    let (train, test) = generate(&cfg)?;
    let ring = ring_points(
        radius,
        s.detection_anomalies,
        seed.wrapping_add(0x5eed_0000_0000),
    );
    let clean: Vec<usize> = (0..s.detection_clean.min(test.len())).collect();
    let mut detection = test.subset(&clean);
    detection.anomaly = Some(vec![false; clean.len()]);
    detection.features.extend(ring.features);
    detection.labels.extend(ring.labels);
    detection
        .anomaly
        .as_mut()
        .unwrap()
        .extend(ring.anomaly.unwrap());
    Ok(CellData {
        train,
        test,
        detection,
    })
}

/// Fits one method on a cell and returns the persisted form of the model
/// along with the training anomaly scores (low = anomalous), if any.
pub fn fit_method(
    method: Method,
    train: &LabeledDataset,
    corruption: f64,
    s: &ExperimentSettings,
    seed: u64,
) -> Result<(ModelDocument, Option<Vec<f64>>)> {
    let kernel = s.kernel.resolve(&train.features)?;
    let gem = GemConfig {
        target_coverage: s.target_coverage.unwrap_or(1.0 - corruption),
        seed,
        ..s.gem.clone()
    };
    match method {
        Method::Gemmed => {
            let hyper = HyperParams {
                seed,
                svm_c: s.svm_c,
                svm_max_iter: s.svm_max_iter,
                ..s.hyper.clone()
            };
            let gram = gram_matrix(&kernel, &train.features)?;
            let model = train_with_gram(train, &kernel, gram, &gem, &hyper)?;
            let scores = model.eta_hat.clone();
            Ok((ModelDocument::from(&model), Some(scores)))
        }
        Method::Svm => {
            let svm = train_svm(train, &kernel, s.svm_c, s.svm_max_iter)?;
            Ok((ModelDocument::from(&svm), None))
        }
        Method::TwoStage => {
            let two = train_two_stage(train, &kernel, &gem, s.svm_c, s.svm_max_iter)?;
            let max_d = two.gem.d.iter().copied().fold(0.0, f64::max);
            let scores = two.gem.d.iter().map(|d| 1.0 - d / max_d).collect();
            Ok((
                ModelDocument::from_two_stage(&two, gem.k, gem.alpha)?,
                Some(scores),
            ))
        }
    }
}

pub fn run_cell(
    method: Method,
    radius: f64,
    corruption: f64,
    seed: u64,
    s: &ExperimentSettings,
) -> Result<CellResult> {
    let data = cell_data(radius, corruption, seed, s)?;
    let (doc, scores) = fit_method(method, &data.train, corruption, s, seed)?;
    let error = misclassification_error(&doc.predict_all(&data.test.features)?, &data.test.labels)?;

    let flags = data.train.anomaly.as_deref().unwrap_or(&[]);
    let auc_value = match scores {
        Some(sc) if flags.iter().any(|&a| a) => Some(auc(&precision_recall_curve(&sc, flags)?)?),
        _ => None,
    };

    let (mut det_acc, mut tpr, mut far) = (None, None, None);
    if doc.theta.is_some() {
        let calls: Vec<bool> = doc
            .detect_all(&data.detection.features)?
            .into_iter()
            .map(|(_, d)| d == Detection::Anomaly)
            .collect();
        let truth = data.detection.anomaly.as_deref().unwrap();
        det_acc = Some(detection_accuracy(&calls, truth)?);
        if truth.iter().any(|&t| t) {
            let (t, f) = detection_rates(&calls, truth)?;
            tpr = Some(t);
            far = Some(f);
        }
    }
    Ok(CellResult {
        method,
        radius,
        corruption,
        seed,
        error,
        auc: auc_value,
        detection_accuracy: det_acc,
        true_positive_rate: tpr,
        false_alarm_rate: far,
    })
}

/// Runs every cell in (method, R, r_a, seed) order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<CellResult>> {
    let mut out = Vec::new();
    for &method in &cfg.methods {
        for &r in &cfg.radii {
            for &ra in &cfg.corruption {
                for &seed in &cfg.seeds {
                    out.push(run_cell(method, r, ra, seed, &cfg.settings)?);
                }
            }
        }
    }
    Ok(out)
}

/// Tidy CSV: `method,R,r_a,seed,error,auc,det_acc`; missing metrics are empty.
pub fn write_sweep_csv<W: Write>(rows: &[CellResult], writer: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "R", "r_a", "seed", "error", "auc", "det_acc"])?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.radius.to_string(),
            r.corruption.to_string(),
            r.seed.to_string(),
            r.error.to_string(),
            opt(r.auc),
            opt(r.detection_accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean test error of the Bayes rule for the two-Gaussian experiment.
///
/// Both classes share the covariance, and the mean difference is an
/// eigenvector of it, so the optimal boundary is `x1 + x2 = 0`.
pub fn bayes_error() -> f64 {
    // half the Mahalanobis distance between the class means
    let half = 0.5 * (72.0f64 / 36.0).sqrt();
    0.5 * statrs::function::erf::erfc(half / std::f64::consts::SQRT_2)
}
