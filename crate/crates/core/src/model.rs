//! Versioned JSON persistence for trained classifiers.
//!
//! All model kinds share one document layout; baselines carry unit indicators
//! and omit the fields they do not have.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{KernelExpansion, SvmModel, TwoStageModel};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::gem::{knn_distance_sum, loo_threshold, GemStats};
use crate::gemmed::{Detection, HyperParams, TrainedModel};
use crate::kernels::KernelSpec;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Gemmed,
    Svm,
    TwoStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub kernel: KernelSpec,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub lambda: Vec<f64>,
    pub eta_hat: Vec<f64>,
    pub gamma_hat: Option<[f64; 2]>,
    pub theta: Option<f64>,
    pub k: Option<usize>,
    pub mu: Option<[f64; 2]>,
    pub kappa: Option<[f64; 2]>,
    pub hyper: Option<HyperParams>,
    pub gem: Option<GemStats>,
    #[serde(default)]
    pub trace: Vec<f64>,
    #[serde(default)]
    pub steps_run: usize,
}

impl ModelDocument {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Input(format!(
                "unsupported model format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let n = self.labels.len();
        if self.features.len() != n || self.lambda.len() != n || self.eta_hat.len() != n {
            return Err(Error::Input(
                "model arrays have inconsistent lengths".into(),
            ));
        }
        if n == 0 {
            return Err(Error::Input("model has no support points".into()));
        }
        let dim = self.features[0].len();
        if self.features.iter().any(|f| f.len() != dim) {
            return Err(Error::Input(
                "model support points have inconsistent dimensions".into(),
            ));
        }
        self.kernel.validate()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn rule(&self) -> KernelExpansion {
        KernelExpansion {
            kernel: self.kernel,
            support: self.features.clone(),
            labels: self.labels.clone(),
            weights: self
                .eta_hat
                .iter()
                .zip(&self.lambda)
                .map(|(e, l)| e * l)
                .collect(),
        }
    }

    fn check_dim(&self, xs: &[Vec<f64>]) -> Result<()> {
        let dim = self.dim();
        if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
            return Err(Error::Input(format!(
                "model expects {dim} features, input row has {}",
                bad.len()
            )));
        }
        Ok(())
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Result<Vec<Label>> {
        self.check_dim(xs)?;
        Ok(self.rule().predict_all(xs))
    }

    /// Anomaly scores and calls against the stored nominal set (`η̂ > ½`).
    pub fn detect_all(&self, xs: &[Vec<f64>]) -> Result<Vec<(f64, Detection)>> {
        self.check_dim(xs)?;
        let (theta, k) = match (self.theta, self.k) {
            (Some(t), Some(k)) => (t, k),
            _ => return Err(Error::Config("model carries no detection threshold".into())),
        };
        let nominal: Vec<Vec<f64>> = (0..self.labels.len())
            .filter(|&i| self.eta_hat[i] > 0.5)
            .map(|i| self.features[i].clone())
            .collect();
        if nominal.len() < k {
            return Err(Error::Config(format!(
                "nominal set has {} points, fewer than k = {k}",
                nominal.len()
            )));
        }
        xs.iter()
            .map(|x| {
                let s = knn_distance_sum(x, &nominal, k)?;
                Ok((
                    s,
                    if s > theta {
                        Detection::Anomaly
                    } else {
                        Detection::Nominal
                    },
                ))
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Rebuilds the trained model; only valid for `gemmed` documents.
    pub fn into_trained(self) -> Result<TrainedModel> {
        if self.model_kind != ModelKind::Gemmed {
            return Err(Error::Input(format!(
                "document holds a {:?} model",
                self.model_kind
            )));
        }
        let missing = |what: &str| Error::Input(format!("gemmed model document lacks `{what}`"));
        Ok(TrainedModel {
            kernel: self.kernel,
            features: self.features,
            labels: self.labels,
            lambda_star: self.lambda,
            mu: self.mu.ok_or_else(|| missing("mu"))?,
            kappa: self.kappa.ok_or_else(|| missing("kappa"))?,
            eta_hat: self.eta_hat,
            gem: self.gem.ok_or_else(|| missing("gem"))?,
            theta: self.theta.ok_or_else(|| missing("theta"))?,
            k: self.k.ok_or_else(|| missing("k"))?,
            hyper: self.hyper.ok_or_else(|| missing("hyper"))?,
            trace: self.trace,
            steps_run: self.steps_run,
        })
    }
}

impl From<&TrainedModel> for ModelDocument {
    fn from(m: &TrainedModel) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model_kind: ModelKind::Gemmed,
            kernel: m.kernel,
            features: m.features.clone(),
            labels: m.labels.clone(),
            lambda: m.lambda_star.clone(),
            eta_hat: m.eta_hat.clone(),
            gamma_hat: Some(m.gem.gamma_hat),
            theta: Some(m.theta),
            k: Some(m.k),
            mu: Some(m.mu),
            kappa: Some(m.kappa),
            hyper: Some(m.hyper.clone()),
            gem: Some(m.gem.clone()),
            trace: m.trace.clone(),
            steps_run: m.steps_run,
        }
    }
}

impl From<&SvmModel> for ModelDocument {
    fn from(m: &SvmModel) -> Self {
        let n = m.rule.labels.len();
        Self {
            format_version: FORMAT_VERSION,
            model_kind: ModelKind::Svm,
            kernel: m.rule.kernel,
            features: m.rule.support.clone(),
            labels: m.rule.labels.clone(),
            lambda: m.rule.weights.clone(),
            eta_hat: vec![1.0; n],
            gamma_hat: None,
            theta: None,
            k: None,
            mu: None,
            kappa: None,
            hyper: None,
            gem: None,
            trace: m.objective_trace.clone(),
            steps_run: m.iterations,
        }
    }
}

impl ModelDocument {
    /// Two-stage document; the survivors form the nominal set and the
    /// detection threshold is their leave-one-out quantile.
    pub fn from_two_stage(m: &TwoStageModel, k: usize, alpha: f64) -> Result<Self> {
        let mut doc = ModelDocument::from(&m.svm);
        doc.model_kind = ModelKind::TwoStage;
        doc.gamma_hat = Some(m.gem.gamma_hat);
        doc.theta = Some(loo_threshold(&m.svm.rule.support, k, alpha)?);
        doc.k = Some(k);
        doc.gem = Some(m.gem.clone());
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::train_svm;
    use crate::gem::GemConfig;
    use crate::gemmed::train;
    use crate::synthdata::{generate, RingExperimentConfig};

    fn data() -> (crate::LabeledDataset, crate::LabeledDataset) {
        generate(&RingExperimentConfig {
            radius: 35.0,
            corruption: 0.2,
            n_train_per_class: 40,
            n_test_per_class: 100,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let (train_set, test) = data();
        let hyper = HyperParams {
            steps: 10,
            ..HyperParams::default()
        };
        let model = train(
            &train_set,
            &KernelSpec::linear(),
            &GemConfig::default(),
            &hyper,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ModelDocument::from(&model).save(&path).unwrap();
        let back = ModelDocument::load(&path).unwrap();
        let restored = back.clone().into_trained().unwrap();
        assert_eq!(restored, model);
        for x in &test.features {
            assert_eq!(model.decision(x).to_bits(), restored.decision(x).to_bits());
        }
        assert_eq!(
            back.predict_all(&test.features).unwrap(),
            model.predict_all(&test.features)
        );
        let a: Vec<_> = back.detect_all(&test.features).unwrap();
        let b = model.detect_all(&test.features).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn version_and_shape_are_checked() {
        let (train_set, _) = data();
        let svm = train_svm(&train_set, &KernelSpec::linear(), 1.0, 500).unwrap();
        let mut doc = ModelDocument::from(&svm);
        doc.format_version = FORMAT_VERSION + 1;
        assert!(ModelDocument::from_json(&doc.to_json().unwrap()).is_err());
        doc.format_version = FORMAT_VERSION;
        doc.lambda.pop();
        assert!(ModelDocument::from_json(&doc.to_json().unwrap()).is_err());
    }

    #[test]
    fn svm_documents_have_no_detector() {
        let (train_set, test) = data();
        let svm = train_svm(&train_set, &KernelSpec::linear(), 1.0, 500).unwrap();
        let doc = ModelDocument::from(&svm);
        assert_eq!(
            doc.predict_all(&test.features).unwrap(),
            svm.predict_all(&test.features)
        );
        assert!(matches!(
            doc.detect_all(&test.features),
            Err(Error::Config(_))
        ));
        assert!(doc.clone().into_trained().is_err());
        assert!(doc.predict_all(&[vec![1.0, 2.0, 3.0]]).is_err());
    }
}
