//! Run configuration: a TOML file whose sections overlay the library
//! defaults, then command-line overrides.
//!
//! ```toml
//! seed = 1
//! jobs = 4
//!
//! [convert]
//! mode = "rbc2"
//! governor_exceptions = ["vocative", "discourse", "root"]
//!
//! [prop]
//! kind = "kernel"
//! features = "instance,token,tree"
//! [prop.kernel]
//! c = 1.0
//!
//! [apply]
//! iterate = true
//!
//! [parser]
//! hidden = 256
//! epochs = 30
//!
//! [embeddings]
//! hash = { layers = 4, dim = 64, seed = 1 }
//!
//! [eval]
//! exclude_ids = "excluded.txt"
//! listed_labels = ["nmod:poss", "obl:npmod"]
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use conjprop::classify::{ApplyConfig, FeatureGroups, ModelKind, TrainConfig as PropConfig};
use conjprop::convert::{ConverterConfig, Mode};
use conjprop::parser::TrainConfig as ParserConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const CONFIG_ENV: &str = "CONJPROP_CONFIG";

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    jobs: Option<usize>,
    convert: Table,
    prop: Table,
    apply: Table,
    parser: Table,
    embeddings: Option<EmbeddingSpec>,
    eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashSpec {
    pub layers: usize,
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSpec {
    pub sidecar: Option<PathBuf>,
    pub hash: Option<HashSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// File with one sentence id per line to leave out of every count.
    pub exclude_ids: Option<PathBuf>,
    /// Subtypes kept separate in the coarse rollup view.
    pub listed_labels: BTreeSet<String>,
}

/// Fully resolved settings of one run, logged before any work starts.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub mode: Mode,
    pub convert: ConverterConfig,
    pub prop: PropConfig,
    pub apply: ApplyConfig,
    pub parser: ParserConfig,
    pub embeddings: EmbeddingSpec,
    pub eval: EvalConfig,
}

/// Values given on the command line; `None` leaves the file/default value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub mode: Option<Mode>,
    pub kind: Option<ModelKind>,
    pub features: Option<String>,
    pub epochs: Option<usize>,
    pub iterate: Option<bool>,
    pub relabel_subjects: Option<bool>,
    pub embeddings: Option<EmbeddingSpec>,
    pub exclude_ids: Option<PathBuf>,
}

fn merge(base: &mut Table, over: &Table, section: &str) -> Result<()> {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o, &format!("{}.{}", section, k))?,
            (Some(slot), _) => *slot = v.clone(),
            (None, _) => bail!("unknown key `{}` in section [{}]", k, section),
        }
    }
    Ok(())
}

fn overlay<T: Serialize + DeserializeOwned>(base: &T, over: &Table, section: &str) -> Result<T> {
    let mut table = Table::try_from(base).with_context(|| format!("serializing defaults of [{}]", section))?;
    merge(&mut table, over, section)?;
    Value::Table(table)
        .try_into()
        .with_context(|| format!("invalid value in section [{}]", section))
}

fn take_string(table: &mut Table, key: &str, section: &str) -> Result<Option<String>> {
    match table.remove(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => bail!("[{}] {} must be a string, found {}", section, key, other.type_str()),
    }
}

impl RunConfig {
    /// Read the config file, if any, and apply overrides.
    pub fn load(path: Option<&Path>, over: &Overrides) -> Result<RunConfig> {
        let file: FileConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("config {}", p.display()))?
            }
            None => FileConfig::default(),
        };
        Self::resolve(file, over)
    }

    #[cfg(test)]
    pub fn from_toml(text: &str, over: &Overrides) -> Result<RunConfig> {
        Self::resolve(toml::from_str(text)?, over)
    }

    fn resolve(mut file: FileConfig, over: &Overrides) -> Result<RunConfig> {
        let seed = over.seed.or(file.seed).unwrap_or(1);

        let file_mode = take_string(&mut file.convert, "mode", "convert")?
            .map(|m| m.parse::<Mode>().map_err(anyhow::Error::msg))
            .transpose()?;
        let mode = over.mode.or(file_mode).unwrap_or(Mode::Rbc);
        let preset = mode.converter_config().unwrap_or_default();
        let convert = overlay(&preset, &file.convert, "convert")?;

        let file_kind = take_string(&mut file.prop, "kind", "prop")?
            .map(|k| k.parse::<ModelKind>().map_err(anyhow::Error::msg))
            .transpose()?;
        let file_features = take_string(&mut file.prop, "features", "prop")?;
        let mut prop: PropConfig = overlay(&PropConfig::default(), &file.prop, "prop")?;
        prop.kind = over.kind.or(file_kind).unwrap_or(prop.kind);
        if let Some(list) = over.features.as_ref().or(file_features.as_ref()) {
            prop.groups = Some(FeatureGroups::parse(list, prop.kind).map_err(anyhow::Error::msg)?);
        }
        prop.groups = Some(prop.groups());
        prop.mlp.seed = seed;

        let mut apply: ApplyConfig = overlay(&ApplyConfig::default(), &file.apply, "apply")?;
        if let Some(v) = over.iterate {
            apply.iterate = v;
        }
        if let Some(v) = over.relabel_subjects {
            apply.relabel_subjects = v;
        }

        let mut parser: ParserConfig = overlay(&ParserConfig::default(), &file.parser, "parser")?;
        parser.seed = seed;
        if let Some(e) = over.epochs {
            parser.epochs = e;
            prop.mlp.max_epochs = e;
        }

        let embeddings = over.embeddings.clone().or(file.embeddings).unwrap_or_default();
        if embeddings.sidecar.is_some() && embeddings.hash.is_some() {
            bail!("embeddings: give either a sidecar file or hash settings, not both");
        }
        let mut eval = file.eval;
        if over.exclude_ids.is_some() {
            eval.exclude_ids = over.exclude_ids.clone();
        }

        Ok(RunConfig {
            seed,
            jobs: over.jobs.or(file.jobs).unwrap_or(1).max(1),
            mode,
            convert,
            prop,
            apply,
            parser,
            embeddings,
            eval,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# unprintable config: {}", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = RunConfig::from_toml("", &Overrides::default()).unwrap();
        assert_eq!(cfg.mode, Mode::Rbc);
        assert_eq!(cfg.convert, ConverterConfig::rbc());
        assert_eq!(cfg.prop.groups, Some(FeatureGroups::defaults(ModelKind::Kernel)));
        assert_eq!(cfg.jobs, 1);
        assert!(cfg.to_toml().contains("[convert]"));
    }

    #[test]
    fn sections_overlay_presets() {
        let text = "seed = 9\n[convert]\nmode = \"rbc2\"\nnon_core = [\"obl\"]\n[parser]\nhidden = 8\n[parser.optimizer]\nlr = 0.5\n";
        let cfg = RunConfig::from_toml(text, &Overrides::default()).unwrap();
        assert!(cfg.convert.iterate_to_fixpoint);
        assert_eq!(cfg.convert.non_core.len(), 1);
        assert_eq!(cfg.parser.hidden, 8);
        assert_eq!(cfg.parser.optimizer.lr, 0.5);
        assert_eq!(cfg.parser.optimizer.beta2, 0.999);
        assert_eq!(cfg.parser.seed, 9);
    }

    #[test]
    fn command_line_wins() {
        let over = Overrides {
            seed: Some(3),
            mode: Some(Mode::Rbc2Fix),
            epochs: Some(2),
            features: Some("instance".into()),
            ..Overrides::default()
        };
        let cfg = RunConfig::from_toml("seed = 9\n[convert]\nmode = \"rbc\"\n", &over).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.convert, ConverterConfig::rbc2_fix());
        assert_eq!(cfg.parser.epochs, 2);
        assert_eq!(cfg.prop.groups, Some(FeatureGroups::none()));
    }

    #[test]
    fn bad_values_are_reported() {
        let err = RunConfig::from_toml("[convert]\nmode = \"fast\"\n", &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("unknown mode"));
        let err = RunConfig::from_toml("[parser]\nhidden = \"x\"\n", &Overrides::default()).unwrap_err();
        assert!(format!("{:#}", err).contains("[parser]"));
        assert!(RunConfig::from_toml("colour = 1\n", &Overrides::default()).is_err());
        let err = RunConfig::from_toml("[prop.kernel]\ncc = 2\n", &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("unknown key `cc` in section [prop.kernel]"));
    }
}
