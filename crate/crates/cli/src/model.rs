//! The on-disk model: preprocessing, learned metric and the configuration
//! that produced them.
//!
//! Files are pretty-printed JSON with fields in declaration order and every
//! float written with 17 significant digits, so loading and saving a model
//! reproduces it byte for byte.

use std::io::{self, Write};
use std::path::Path;

use ccml_core::pipeline::FittedModel;
use ccml_core::{Embedding, Learner, LinearMetric, PipelineConfig, Preprocessor, TrainTrace};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u64 = 1;

/// Training settings as used, plus the names of settings the learner ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEcho {
    #[serde(flatten)]
    pub config: PipelineConfig,
    pub ignored: Vec<String>,
}

impl TrainEcho {
    pub fn new(config: PipelineConfig) -> Self {
        let ignored: &[&str] = match config.learner {
            Learner::Ccml => &[],
            Learner::CcmlLocal => &["variant"],
            Learner::Nca => &["k", "variant", "gradient_mode"],
            Learner::Identity => &[
                "output_dim",
                "k",
                "variant",
                "gradient_mode",
                "learning_rate",
                "epochs",
                "batch_size",
                "weight_decay",
                "init",
                "seed",
            ],
        };
        Self {
            config,
            ignored: ignored.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u64,
    pub class_names: Vec<String>,
    /// SHA-256 of the training CSV bytes, hex encoded.
    pub dataset_fingerprint: String,
    pub train_config: TrainEcho,
    pub preprocess: Preprocessor,
    pub metric: LinearMetric,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u64,
}

impl ModelFile {
    pub fn new(
        fitted: &FittedModel,
        config: PipelineConfig,
        class_names: Vec<String>,
        dataset_fingerprint: String,
    ) -> Self {
        let mut config = config;
        config.train = fitted.train_config.clone();
        config.output_dim = Some(fitted.metric.output_dim());
        Self {
            format_version: FORMAT_VERSION,
            class_names,
            dataset_fingerprint,
            train_config: TrainEcho::new(config),
            preprocess: fitted.preprocessor.clone(),
            metric: fitted.metric.clone(),
        }
    }

    pub fn fitted(&self) -> FittedModel {
        FittedModel {
            preprocessor: self.preprocess.clone(),
            metric: self.metric.clone(),
            trace: TrainTrace::default(),
            train_config: self.train_config.config.train.clone(),
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.train_config.config
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut ser = serde_json::Serializer::with_formatter(writer, ModelFormatter::new());
        self.serialize(&mut ser)?;
        let mut writer = ser.into_inner();
        writer
            .write_all(b"\n")
            .map_err(|e| CliError::io(Path::new("<model>"), e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf)?;
        Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.format_version != FORMAT_VERSION {
            return Err(CliError::Version {
                found: probe.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}

pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Pretty JSON with floats in `{:.16e}` form.
struct ModelFormatter {
    pretty: PrettyFormatter<'static>,
}

impl ModelFormatter {
    fn new() -> Self {
        Self {
            pretty: PrettyFormatter::with_indent(b"  "),
        }
    }
}

impl Formatter for ModelFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_object_value(writer)
    }
}
