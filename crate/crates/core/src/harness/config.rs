//! Scenario configuration: one JSON schema shared by every workflow.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::channels::ChannelKind;
use crate::deepsic::{DeepSicTrainConfig, LossLayers};
use crate::detect::{SerBudget, SicConfig};
use crate::error::{Error, Result};
use crate::gan::{GanConfig, GanShape, GeneratorObjective};
use crate::nn::AdamConfig;
use crate::online::{JointStepConfig, OnlineConfig, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Map,
    Sic,
    DeepsicStatic,
    DeepsicDynamic,
    GansicInitial,
    GansicJoint,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Map,
        Method::Sic,
        Method::DeepsicStatic,
        Method::DeepsicDynamic,
        Method::GansicInitial,
        Method::GansicJoint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Map => "map",
            Method::Sic => "sic",
            Method::DeepsicStatic => "deepsic_static",
            Method::DeepsicDynamic => "deepsic_dynamic",
            Method::GansicInitial => "gansic_initial",
            Method::GansicJoint => "gansic_joint",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub kind: ChannelKind,
    pub users: usize,
    pub antennas: usize,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            kind: ChannelKind::LinearGaussian,
            users: 4,
            antennas: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Transmitted vectors per (method, SNR) cell.
    pub max_vectors: usize,
    /// Early stop once this many symbol errors are counted.
    pub min_errors: usize,
    /// Symbols evaluated before early stopping is allowed.
    pub min_symbols: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            max_vectors: 100_000,
            min_errors: 200,
            min_symbols: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeepSicSection {
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub loss_layers: LossLayers,
}

impl Default for DeepSicSection {
    fn default() -> Self {
        Self {
            layers: crate::deepsic::DEFAULT_LAYERS,
            hidden: crate::deepsic::DEFAULT_HIDDEN,
            epochs: 50,
            batch: 64,
            lr: 1e-4,
            loss_layers: LossLayers::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanSection {
    pub hidden: usize,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub objective: GeneratorObjective,
}

impl Default for GanSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            hidden: crate::gan::HIDDEN_UNITS,
            batch: 64,
            lr_g: adam.alpha,
            lr_d: adam.alpha,
            beta1: adam.beta1,
            beta2: adam.beta2,
            objective: GeneratorObjective::Minimax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineSection {
    pub train_gan_steps: usize,
    pub update_detector_steps: usize,
    pub detector_batch: usize,
    pub detector_lr: f64,
    pub schedule: Schedule,
    pub probe_every: usize,
    pub probe_symbols: usize,
    pub lambda_det: f64,
    pub detector_grad_into_g: bool,
    /// Passes over the SNR schedule; SER is measured on the last pass.
    pub cycles: usize,
}

impl Default for OnlineSection {
    fn default() -> Self {
        Self {
            train_gan_steps: 2000,
            update_detector_steps: 2000,
            detector_batch: 64,
            detector_lr: 1e-4,
            schedule: Schedule::Alternating,
            probe_every: 0,
            probe_symbols: 10_000,
            lambda_det: 1.0,
            detector_grad_into_g: false,
            cycles: 1,
        }
    }
}

/// Settings for the standalone `train-gan` workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainGanSection {
    pub snr_db: f64,
    pub steps: usize,
    /// Generated samples used for the moment report.
    pub fidelity_samples: usize,
}

impl Default for TrainGanSection {
    fn default() -> Self {
        Self {
            snr_db: 8.0,
            steps: 2000,
            fidelity_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub channel: ChannelSection,
    pub snr_db: Vec<f64>,
    pub methods: Vec<Method>,
    pub train_pairs_per_snr: usize,
    pub eval: EvalSection,
    pub sic: SicConfig,
    pub deepsic: DeepSicSection,
    pub gan: GanSection,
    pub online: OnlineSection,
    pub train_gan: TrainGanSection,
    /// Record wall-clock columns; off by default so outputs are reproducible.
    pub record_wallclock: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            channel: ChannelSection::default(),
            snr_db: (0..8).map(|i| 2.0 * i as f64).collect(),
            methods: vec![Method::Map, Method::Sic, Method::DeepsicStatic],
            train_pairs_per_snr: 5000,
            eval: EvalSection::default(),
            sic: SicConfig::default(),
            deepsic: DeepSicSection::default(),
            gan: GanSection::default(),
            online: OnlineSection::default(),
            train_gan: TrainGanSection::default(),
            record_wallclock: false,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` with a dotted key path. The value is read as JSON
    /// when it parses, otherwise as a string. Unknown keys are errors.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not KEY=VALUE")))?;
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        *slot = parse_value(raw, slot);
        let next: Self = serde_json::from_value(doc)
            .map_err(|e| Error::Config(format!("bad value for {key}: {e}")))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.snr_db.is_empty() {
            return bad("snr_db must list at least one SNR".into());
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return bad("snr_db entries must be finite".into());
        }
        if self.methods.is_empty() {
            return bad("methods must name at least one method".into());
        }
        if self.channel.users == 0 || self.channel.antennas == 0 {
            return bad("channel.users and channel.antennas must be >= 1".into());
        }
        if self.eval.max_vectors * self.channel.users < 1000 {
            return bad("eval.max_vectors must cover at least 1000 symbols".into());
        }
        if self.eval.min_symbols < 1000 {
            return bad("eval.min_symbols must be >= 1000".into());
        }
        if self.train_pairs_per_snr == 0 {
            return bad("train_pairs_per_snr must be >= 1".into());
        }
        if self.sic.iterations == 0 {
            return bad("sic.iterations must be >= 1".into());
        }
        let d = &self.deepsic;
        if d.layers == 0 || d.hidden == 0 || d.batch == 0 {
            return bad("deepsic.layers, hidden and batch must be >= 1".into());
        }
        if self.gan.hidden == 0 || self.gan.batch == 0 {
            return bad("gan.hidden and gan.batch must be >= 1".into());
        }
        if self.online.detector_batch == 0 || self.online.cycles == 0 {
            return bad("online.detector_batch and online.cycles must be >= 1".into());
        }
        if !(self.online.lambda_det >= 0.0) {
            return bad("online.lambda_det must be >= 0".into());
        }
        let rates = [d.lr, self.gan.lr_g, self.gan.lr_d, self.online.detector_lr];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("learning rates must be finite and >= 0".into());
        }
        if !(0.0..1.0).contains(&self.gan.beta1) || !(0.0..1.0).contains(&self.gan.beta2) {
            return bad("gan.beta1 and gan.beta2 must lie in [0, 1)".into());
        }
        if self.train_gan.fidelity_samples == 0 {
            return bad("train_gan.fidelity_samples must be >= 1".into());
        }
        Ok(())
    }

    pub fn eval_budget(&self) -> SerBudget {
        SerBudget::early_stop(self.eval.max_vectors, self.eval.min_errors, self.eval.min_symbols)
    }

    pub fn deepsic_train(&self) -> DeepSicTrainConfig {
        DeepSicTrainConfig {
            epochs: self.deepsic.epochs,
            batch: self.deepsic.batch,
            adam: AdamConfig::default().with_alpha(self.deepsic.lr),
            loss_layers: self.deepsic.loss_layers,
        }
    }

    pub fn gan_shape(&self) -> GanShape {
        GanShape::new(self.channel.users, self.channel.antennas).with_hidden(self.gan.hidden)
    }

    pub fn gan_config(&self) -> GanConfig {
        let adam = |alpha| AdamConfig {
            alpha,
            beta1: self.gan.beta1,
            beta2: self.gan.beta2,
            ..AdamConfig::default()
        };
        GanConfig {
            batch: self.gan.batch,
            adam_g: adam(self.gan.lr_g),
            adam_d: adam(self.gan.lr_d),
            objective: self.gan.objective,
        }
    }

    pub fn online_config(&self) -> OnlineConfig {
        OnlineConfig {
            gan: self.gan_config(),
            detector_batch: self.online.detector_batch,
            detector_adam: AdamConfig::default().with_alpha(self.online.detector_lr),
            loss_layers: self.deepsic.loss_layers,
            train_gan_steps: self.online.train_gan_steps,
            update_detector_steps: self.online.update_detector_steps,
            schedule: self.online.schedule,
            probe_every: self.online.probe_every,
            probe_symbols: self.online.probe_symbols,
            record_wallclock: self.record_wallclock,
        }
    }

    pub fn joint_config(&self) -> JointStepConfig {
        JointStepConfig {
            lambda_det: self.online.lambda_det,
            detector_grad_into_g: self.online.detector_grad_into_g,
        }
    }

    /// Every leaf key with its default value, in schema order.
    pub fn documented_keys() -> Vec<(String, String)> {
        let doc = serde_json::to_value(ScenarioConfig::default()).expect("config serializes");
        let mut out = Vec::new();
        flatten("", &doc, &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => out.push((prefix.to_string(), leaf.to_string())),
    }
}

fn parse_value(raw: &str, current: &Value) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if let Value::Array(_) = current {
        let items = raw
            .split(',')
            .map(|item| {
                let item = item.trim();
                serde_json::from_str(item).unwrap_or_else(|_| Value::String(item.to_string()))
            })
            .collect();
        return Value::Array(items);
    }
    Value::String(raw.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = ScenarioConfig::default();
        assert_eq!(c.snr_db, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0]);
        assert_eq!(c.train_pairs_per_snr, 5000);
        assert_eq!(c.eval.max_vectors, 100_000);
        assert_eq!(c.eval.min_errors, 200);
        assert_eq!(c.online.train_gan_steps, 2000);
        assert_eq!(c.gan.batch, 64);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn dotted_overrides() {
        let mut c = ScenarioConfig::default();
        c.apply_override("channel.kind=poisson").unwrap();
        assert_eq!(c.channel.kind, ChannelKind::Poisson);
        c.apply_override("online.lambda_det=0.5").unwrap();
        assert_eq!(c.online.lambda_det, 0.5);
        c.apply_override("methods=map,sic").unwrap();
        assert_eq!(c.methods, vec![Method::Map, Method::Sic]);
        c.apply_override("snr_db=[4,8]").unwrap();
        assert_eq!(c.snr_db, vec![4.0, 8.0]);
        c.apply_override("snr_db=6").unwrap_err();
    }

    #[test]
    fn unknown_and_malformed_overrides_are_rejected() {
        let mut c = ScenarioConfig::default();
        assert!(matches!(c.apply_override("channel.colour=red"), Err(Error::Config(_))));
        assert!(c.apply_override("nonsense").is_err());
        assert!(c.apply_override("gan.batch=many").is_err());
        assert!(c.apply_override("methods=map,telepathy").is_err());
        assert_eq!(c, ScenarioConfig::default());
    }

    #[test]
    fn unknown_json_fields_are_rejected() {
        assert!(ScenarioConfig::from_json(r#"{"seed": 3, "colour": 1}"#).is_err());
        let c = ScenarioConfig::from_json(r#"{"seed": 3, "channel": {"kind": "quantized"}}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.channel.kind, ChannelKind::QuantizedGaussian);
        assert_eq!(c.channel.users, 4);
    }

    #[test]
    fn validation_failures() {
        assert!(ScenarioConfig::from_json(r#"{"methods": []}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"snr_db": []}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"eval": {"max_vectors": 10}}"#).is_err());
    }

    #[test]
    fn documented_keys_cover_nested_leaves() {
        let keys = ScenarioConfig::documented_keys();
        assert!(keys.iter().any(|(k, v)| k == "online.lambda_det" && v == "1.0"));
        assert!(keys.iter().any(|(k, _)| k == "channel.kind"));
        assert!(keys.iter().all(|(k, _)| !k.is_empty()));
    }
}
