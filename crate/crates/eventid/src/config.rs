//! Pipeline configuration: a flat `section.key = value` file format plus
//! programmatic overrides. Unknown keys and malformed values are rejected
//! so typos fail fast with a usage-class error.

use crate::core::ChannelKind;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::learn::{LearnerConfig, ModelKind};
use crate::modal::PencilConfig;
use crate::select::{Measure, SelectionConfig};
use crate::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

/// Everything the pipeline stages need, with working defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub pencil: PencilConfig,
    pub features: FeatureConfig,
    pub selection: SelectionConfig,
    pub learner: LearnerConfig,
    pub synth: SynthConfig,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("bad value {value:?} for {key}")))
}

fn parse_channels(key: &str, value: &str) -> Result<Vec<ChannelKind>> {
    let channels: Vec<ChannelKind> = value
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_>>()
        .map_err(|_| Error::config(format!("bad channel list {value:?} for {key}")))?;
    if channels.is_empty() {
        return Err(Error::config(format!("empty channel list for {key}")));
    }
    Ok(channels)
}

impl PipelineConfig {
    /// Applies one `section.key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "pencil.order_p" => self.pencil.order_p = parse_value(key, value)?,
            "pencil.pencil_l" => self.pencil.pencil_l = Some(parse_value(key, value)?),
            "pencil.error_threshold" => {
                self.pencil.error_threshold = parse_value(key, value)?
            }
            "pencil.p_max" => self.pencil.p_max = parse_value(key, value)?,
            "features.p_prime" => self.features.p_prime = parse_value(key, value)?,
            "features.m_prime" => self.features.m_prime = parse_value(key, value)?,
            "features.channels" => {
                self.features = FeatureConfig::new(
                    self.features.p_prime,
                    self.features.m_prime,
                    parse_channels(key, value)?,
                )?
            }
            "selection.measure" => {
                self.selection.measure = value.parse::<Measure>()?
            }
            "selection.d_prime" => self.selection.d_prime = parse_value(key, value)?,
            "selection.bootstraps" => {
                self.selection.bootstraps_b_s = parse_value(key, value)?
            }
            "selection.percentile" => {
                self.selection.percentile = parse_value(key, value)?
            }
            "selection.knn_k" => self.selection.knn_k = parse_value(key, value)?,
            "learner.model" => self.learner.model = value.parse::<ModelKind>()?,
            "learner.lr_lambda" => self.learner.lr_lambda = parse_value(key, value)?,
            "learner.lr_max_iters" => {
                self.learner.lr_max_iters = parse_value(key, value)?
            }
            "learner.lr_tol" => self.learner.lr_tol = parse_value(key, value)?,
            "learner.svm_c" => self.learner.svm_c = parse_value(key, value)?,
            "learner.svm_gamma" => {
                self.learner.svm_gamma = Some(parse_value(key, value)?)
            }
            "learner.svm_max_iters" => {
                self.learner.svm_max_iters = parse_value(key, value)?
            }
            "learner.svm_tol" => self.learner.svm_tol = parse_value(key, value)?,
            "learner.threshold" => self.learner.threshold = parse_value(key, value)?,
            "synth.n_samples" => self.synth.n_samples = parse_value(key, value)?,
            "synth.sample_rate_hz" => {
                self.synth.sample_rate_hz = parse_value(key, value)?
            }
            "synth.streams_per_channel" => {
                self.synth.streams_per_channel = parse_value(key, value)?
            }
            "synth.channels" => self.synth.channels = parse_channels(key, value)?,
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = PipelineConfig::parse("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.pencil.order_p, 6);
        assert_eq!(cfg.features.p_prime, 3);
        assert_eq!(cfg.selection.bootstraps_b_s, 200);
    }

    #[test]
    fn full_file_overrides_every_section() {
        let text = "
            # pipeline overrides
            pencil.order_p = 8
            pencil.error_threshold = 0.02
            features.p_prime = 2
            features.m_prime = 10
            features.channels = VPM, F
            selection.measure = F
            selection.d_prime = 25
            selection.bootstraps = 50
            learner.model = svm
            learner.svm_c = 2.5
            synth.n_samples = 120   # inline comment
            synth.channels = VPM,VPA,IPM,IPA,F
        ";
        let cfg = PipelineConfig::parse(text).unwrap();
        assert_eq!(cfg.pencil.order_p, 8);
        assert_eq!(cfg.pencil.error_threshold, 0.02);
        assert_eq!(cfg.features.p_prime, 2);
        assert_eq!(
            cfg.features.channels,
            vec![ChannelKind::Vpm, ChannelKind::F]
        );
        assert_eq!(cfg.selection.measure, Measure::F);
        assert_eq!(cfg.selection.d_prime, 25);
        assert_eq!(cfg.learner.model, ModelKind::SvmRbf);
        assert_eq!(cfg.learner.svm_c, 2.5);
        assert_eq!(cfg.synth.n_samples, 120);
        assert_eq!(cfg.synth.channels.len(), 5);
    }

    #[test]
    fn unknown_key_is_config_error_with_exit_code_2() {
        let err = PipelineConfig::parse("pencil.orderp = 6").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bad_value_is_config_error() {
        assert!(PipelineConfig::parse("pencil.order_p = six").is_err());
        assert!(PipelineConfig::parse("selection.measure = Q").is_err());
        assert!(PipelineConfig::parse("features.channels = VPM,XYZ").is_err());
    }

    #[test]
    fn missing_equals_is_rejected_with_line_number() {
        let err = PipelineConfig::parse("pencil.order_p 6").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
