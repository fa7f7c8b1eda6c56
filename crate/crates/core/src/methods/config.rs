use serde::{Deserialize, Serialize};

use crate::error::{LnmError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodKind {
    #[serde(rename = "ce")]
    Ce,
    #[serde(rename = "ls")]
    LabelSmoothing,
    #[serde(rename = "sce")]
    Sce,
    #[serde(rename = "cdr")]
    Cdr,
    #[serde(rename = "coteaching")]
    CoTeaching,
    #[serde(rename = "coteaching_plus")]
    CoTeachingPlus,
    #[serde(rename = "codis")]
    CoDis,
    #[serde(rename = "jocor")]
    JoCoR,
    #[serde(rename = "trevision")]
    TRevision,
    #[serde(rename = "volminnet")]
    VolMinNet,
    #[serde(rename = "dividemix")]
    DivideMix,
    #[serde(rename = "disc")]
    Disc,
}

impl MethodKind {
    pub const ALL: [MethodKind; 12] = [
        MethodKind::Ce,
        MethodKind::LabelSmoothing,
        MethodKind::Sce,
        MethodKind::Cdr,
        MethodKind::CoTeaching,
        MethodKind::CoTeachingPlus,
        MethodKind::CoDis,
        MethodKind::JoCoR,
        MethodKind::TRevision,
        MethodKind::VolMinNet,
        MethodKind::DivideMix,
        MethodKind::Disc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Ce => "ce",
            MethodKind::LabelSmoothing => "ls",
            MethodKind::Sce => "sce",
            MethodKind::Cdr => "cdr",
            MethodKind::CoTeaching => "coteaching",
            MethodKind::CoTeachingPlus => "coteaching_plus",
            MethodKind::CoDis => "codis",
            MethodKind::JoCoR => "jocor",
            MethodKind::TRevision => "trevision",
            MethodKind::VolMinNet => "volminnet",
            MethodKind::DivideMix => "dividemix",
            MethodKind::Disc => "disc",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == name)
            .ok_or_else(|| LnmError::config(format!("unknown method {name:?}")))
    }

    pub fn dual_network(self) -> bool {
        matches!(
            self,
            MethodKind::CoTeaching
                | MethodKind::CoTeachingPlus
                | MethodKind::CoDis
                | MethodKind::JoCoR
                | MethodKind::DivideMix
        )
    }

    pub fn selects(self) -> bool {
        self.dual_network() || self == MethodKind::Disc
    }
}

/// Tunable constants of every strategy. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub sce_alpha: f64,
    pub sce_beta: f64,
    pub rce_log_floor: f64,
    pub ls_epsilon: f64,
    /// Epochs over which the small-loss keep fraction ramps down.
    pub keep_ramp_epochs: f64,
    pub codis_lambda: f64,
    pub jocor_lambda: f64,
    pub sharpen_temperature: f64,
    pub mixup_alpha: f64,
    pub lambda_u: f64,
    pub lambda_u_ramp_epochs: f64,
    pub gmm_clean_threshold: f64,
    pub disc_momentum: f64,
    pub disc_hard_epsilon: f64,
    /// View jitter std as a multiple of the per-feature std.
    pub jitter_scale: f64,
    /// Fraction of parameters CDR treats as critical; `1 − η` when unset.
    pub cdr_rho: Option<f64>,
    pub volmin_lambda: f64,
    pub transition_lr: f64,
    pub transition_momentum: f64,
    pub transition_init_bias: f64,
    pub trevision_percentile: f64,
    pub lambda_head: f64,
    pub lambda_tail: f64,
    pub threshold_epsilon: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            sce_alpha: 0.1,
            sce_beta: 1.0,
            rce_log_floor: -4.0,
            ls_epsilon: 0.1,
            keep_ramp_epochs: 10.0,
            codis_lambda: 1.0,
            jocor_lambda: 0.3,
            sharpen_temperature: 0.5,
            mixup_alpha: 4.0,
            lambda_u: 25.0,
            lambda_u_ramp_epochs: 16.0,
            gmm_clean_threshold: 0.5,
            disc_momentum: 0.9,
            disc_hard_epsilon: 0.2,
            jitter_scale: 0.05,
            cdr_rho: None,
            volmin_lambda: 1e-4,
            transition_lr: 0.01,
            transition_momentum: 0.9,
            transition_init_bias: 4.0,
            trevision_percentile: 97.0,
            lambda_head: 0.9,
            lambda_tail: 0.6,
            threshold_epsilon: 1e-12,
        }
    }
}

impl Hyperparams {
    /// Sets one field by name from a textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut map = match serde_json::to_value(&*self)? {
            serde_json::Value::Object(m) => m,
            _ => unreachable!("struct serializes to an object"),
        };
        if !map.contains_key(key) {
            return Err(LnmError::config(format!("unknown hyperparameter {key:?}")));
        }
        let parsed: f64 = value
            .trim()
            .parse()
            .map_err(|_| LnmError::config(format!("hyperparameter {key} expects a number, got {value:?}")))?;
        map.insert(key.to_string(), serde_json::json!(parsed));
        *self = serde_json::from_value(serde_json::Value::Object(map))
            .map_err(|e| LnmError::config(format!("hyperparameter {key}: {e}")))?;
        Ok(())
    }
}

/// The three switchable modifications for semi-supervised methods.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MedSslToggles {
    /// Label smoothing replaces the warm-up regularizer.
    pub ls_warmup: bool,
    /// Clean-set objective becomes CE + RCE.
    pub rce_clean: bool,
    /// Per-class thresholds from class frequencies replace the unified one.
    pub class_thresholds: bool,
}

impl MedSslToggles {
    pub fn all() -> Self {
        Self {
            ls_warmup: true,
            rce_clean: true,
            class_thresholds: true,
        }
    }

    pub fn any(&self) -> bool {
        self.ls_warmup || self.rce_clean || self.class_thresholds
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: MethodKind,
    #[serde(default)]
    pub hyper: Hyperparams,
    #[serde(default = "default_warm_up")]
    pub warm_up_epochs: usize,
    /// Noise rate assumed by small-loss schedules and CDR. The harness fills
    /// it from the noise spec when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumed_noise_rate: Option<f64>,
    #[serde(default)]
    pub medssl: MedSslToggles,
}

fn default_warm_up() -> usize {
    5
}

impl MethodConfig {
    pub fn new(kind: MethodKind) -> Self {
        Self {
            kind,
            hyper: Hyperparams::default(),
            warm_up_epochs: default_warm_up(),
            assumed_noise_rate: None,
            medssl: MedSslToggles::default(),
        }
    }

    pub fn with_noise_rate(mut self, rate: f64) -> Self {
        self.assumed_noise_rate = Some(rate);
        self
    }

    /// Display name, with a `+medssl` suffix when any toggle is on.
    pub fn label(&self) -> String {
        if self.medssl.any() {
            format!("{}+medssl", self.kind.as_str())
        } else {
            self.kind.as_str().to_string()
        }
    }

    pub fn noise_rate(&self) -> f64 {
        self.assumed_noise_rate.unwrap_or(0.0)
    }

    pub fn cdr_rho(&self) -> f64 {
        self.hyper.cdr_rho.unwrap_or(1.0 - self.noise_rate())
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        if !(0.0..=1.0).contains(&self.noise_rate()) {
            return Err(LnmError::config(format!(
                "assumed_noise_rate {} outside [0, 1]",
                self.noise_rate()
            )));
        }
        for (name, v) in [("lambda_head", h.lambda_head), ("lambda_tail", h.lambda_tail)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(LnmError::config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(0.0..1.0).contains(&h.ls_epsilon) || !(0.0..1.0).contains(&h.disc_hard_epsilon) {
            return Err(LnmError::config("label smoothing epsilons must lie in [0, 1)"));
        }
        if self.kind == MethodKind::Cdr {
            let rho = self.cdr_rho();
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(LnmError::config(format!("CDR critical fraction {rho} outside (0, 1]")));
            }
        }
        if !(h.trevision_percentile > 90.0 && h.trevision_percentile < 100.0) {
            return Err(LnmError::config("trevision_percentile must lie in (90, 100)"));
        }
        let positive = [
            ("keep_ramp_epochs", h.keep_ramp_epochs),
            ("sharpen_temperature", h.sharpen_temperature),
            ("mixup_alpha", h.mixup_alpha),
            ("lambda_u_ramp_epochs", h.lambda_u_ramp_epochs),
            ("threshold_epsilon", h.threshold_epsilon),
            ("transition_lr", h.transition_lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LnmError::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&h.disc_momentum) || !(0.0..1.0).contains(&h.transition_momentum) {
            return Err(LnmError::config("momentum values must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in MethodKind::ALL {
            assert_eq!(MethodKind::parse(k.as_str()).unwrap(), k);
        }
        assert!(MethodKind::parse("mixmatch").is_err());
    }

    #[test]
    fn hyper_set_known_and_unknown() {
        let mut h = Hyperparams::default();
        h.set("jocor_lambda", "0.5").unwrap();
        assert_eq!(h.jocor_lambda, 0.5);
        h.set("cdr_rho", "0.7").unwrap();
        assert_eq!(h.cdr_rho, Some(0.7));
        assert!(h.set("momentum_of_doom", "1").is_err());
        assert!(h.set("jocor_lambda", "abc").is_err());
    }

    #[test]
    fn unknown_toml_keys_rejected() {
        let ok: MethodConfig = toml::from_str("kind = \"disc\"\n[medssl]\nrce_clean = true\n").unwrap();
        assert!(ok.medssl.rce_clean);
        assert_eq!(ok.warm_up_epochs, 5);
        assert!(toml::from_str::<MethodConfig>("kind = \"disc\"\nfoo = 1\n").is_err());
        assert!(toml::from_str::<MethodConfig>("kind = \"disc\"\n[hyper]\nbar = 1\n").is_err());
    }

    #[test]
    fn validation_bounds() {
        let mut c = MethodConfig::new(MethodKind::Disc);
        assert!(c.validate().is_ok());
        c.hyper.lambda_tail = 1.0;
        assert!(c.validate().is_err());
        let mut cdr = MethodConfig::new(MethodKind::Cdr).with_noise_rate(1.0);
        assert!(cdr.validate().is_err());
        cdr.assumed_noise_rate = Some(0.4);
        assert!(cdr.validate().is_ok());
        assert!((cdr.cdr_rho() - 0.6).abs() < 1e-15);
    }
}
