//! Experiment configuration: a flat INI-style text format with strict
//! validation (unknown sections, unknown keys, and duplicate keys are
//! errors) plus a canonical rendering used to fingerprint runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::attack::{AttackKind, AttackSpec, Knowledge};
use crate::client::LocalConfig;
use crate::data::{DatasetSpec, PartitionPlan, PartitionScheme};
use crate::error::{Error, Result};
use crate::metrics::ModelChoice;
use crate::model::ModelArch;
use crate::server::CustomizationParams;

/// Server aggregation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    FedCap,
    Mean,
    Median,
    Trimmed,
    MultiKrum,
    Rfa,
    ClusteredFl,
    FlTrust,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::FedCap => "fedcap",
            Method::Mean => "mean",
            Method::Median => "median",
            Method::Trimmed => "trimmed",
            Method::MultiKrum => "multikrum",
            Method::Rfa => "rfa",
            Method::ClusteredFl => "clusteredfl",
            Method::FlTrust => "fltrust",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "fedcap" => Method::FedCap,
            "mean" => Method::Mean,
            "median" => Method::Median,
            "trimmed" | "trimmed_mean" => Method::Trimmed,
            "multikrum" | "multi_krum" | "krum" => Method::MultiKrum,
            "rfa" => Method::Rfa,
            "clusteredfl" | "clustered_fl" => Method::ClusteredFl,
            "fltrust" | "fl_trust" => Method::FlTrust,
            other => return Err(Error::config(format!("unknown method '{other}'"))),
        })
    }
}

/// Optional non-IID defense wrapper around a baseline method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrapper {
    None,
    Bucketing { s: usize },
    Gas { p: usize },
}

impl Wrapper {
    pub fn as_str(&self) -> &'static str {
        match self {
            Wrapper::None => "none",
            Wrapper::Bucketing { .. } => "bucketing",
            Wrapper::Gas { .. } => "gas",
        }
    }
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub plan: PartitionPlan,
    pub hidden_dim: usize,
    pub rounds: usize,
    pub participation: f64,
    pub local: LocalConfig,
    pub method: Method,
    pub wrapper: Wrapper,
    /// Trim count for the trimmed mean; derived from the assumed malicious
    /// count when unset.
    pub trim_q: Option<usize>,
    /// Assumed malicious count M̂ for Multi-Krum; derived from the attack
    /// fraction when unset.
    pub assumed_malicious: Option<usize>,
    /// Evaluate a locally fine-tuned copy of the final global model.
    pub fine_tune: bool,
    pub custom: CustomizationParams,
    pub attack: AttackSpec,
    /// Overrides the derived malicious-selection seed when set.
    pub attack_seed: Option<u64>,
    pub seed: u64,
    pub model_choice: ModelChoice,
    pub r2acc_target: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec {
                num_classes: 10,
                input_dim: 16,
                samples_per_client: 100,
                class_separation: 4.0,
                noise_std: 2.0,
            },
            plan: PartitionPlan {
                scheme: PartitionScheme::Pathological {
                    classes_per_client: 2,
                },
                num_clients: 20,
                split_ratio: 0.75,
            },
            hidden_dim: 16,
            rounds: 50,
            participation: 1.0,
            local: LocalConfig {
                epochs: 5,
                batch_size: 10,
                lr: 0.01,
                lambda: 0.5,
            },
            method: Method::FedCap,
            wrapper: Wrapper::None,
            trim_q: None,
            assumed_malicious: None,
            fine_tune: false,
            custom: CustomizationParams {
                alpha: 10.0,
                phi: 0.1,
                t_norm: 10.0,
            },
            attack: AttackSpec {
                kind: AttackKind::None,
                malicious_fraction: 0.3,
                mr_scale: None,
                ipm_epsilon: None,
                knowledge: Knowledge::Partial,
            },
            attack_seed: None,
            seed: 1,
            model_choice: ModelChoice::BestOfBoth,
            r2acc_target: 0.8,
        }
    }
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let map = parse_ini(text)?;
        Self::from_map(&map)
    }

    /// Builds a config from parsed sections, starting at the defaults.
    pub fn from_map(map: &IniMap) -> Result<Self> {
        check_known_keys(map)?;
        let mut cfg = ExperimentConfig::default();
        let get = |section: &str, key: &str| -> Option<&str> {
            map.get(section).and_then(|s| s.get(key)).map(|v| v.as_str())
        };

        set(&mut cfg.dataset.num_classes, get("dataset", "num_classes"))?;
        set(&mut cfg.dataset.input_dim, get("dataset", "input_dim"))?;
        set(
            &mut cfg.dataset.samples_per_client,
            get("dataset", "samples_per_client"),
        )?;
        set(
            &mut cfg.dataset.class_separation,
            get("dataset", "class_separation"),
        )?;
        set(&mut cfg.dataset.noise_std, get("dataset", "noise_std"))?;

        let mut classes_per_client = 2usize;
        let mut dominant_fraction = 0.8f64;
        if let PartitionScheme::Pathological { classes_per_client: c } = cfg.plan.scheme {
            classes_per_client = c;
        }
        set(&mut classes_per_client, get("partition", "classes_per_client"))?;
        set(&mut dominant_fraction, get("partition", "dominant_fraction"))?;
        if let Some(scheme) = get("partition", "scheme") {
            cfg.plan.scheme = match scheme {
                "pathological" => PartitionScheme::Pathological { classes_per_client },
                "dominant_mix" => PartitionScheme::DominantMix { dominant_fraction },
                "iid" => PartitionScheme::Iid,
                other => {
                    return Err(Error::config(format!(
                        "unknown partition scheme '{other}'"
                    )))
                }
            };
        } else {
            cfg.plan.scheme = PartitionScheme::Pathological { classes_per_client };
        }
        set(&mut cfg.plan.num_clients, get("partition", "num_clients"))?;
        set(&mut cfg.plan.split_ratio, get("partition", "split_ratio"))?;

        set(&mut cfg.hidden_dim, get("model", "hidden_dim"))?;

        set(&mut cfg.rounds, get("training", "rounds"))?;
        set(&mut cfg.participation, get("training", "participation"))?;
        set(&mut cfg.local.epochs, get("training", "epochs"))?;
        set(&mut cfg.local.batch_size, get("training", "batch_size"))?;
        set(&mut cfg.local.lr, get("training", "lr"))?;
        set(&mut cfg.local.lambda, get("training", "lambda"))?;

        if let Some(name) = get("method", "name") {
            cfg.method = Method::parse(name)?;
        }
        let mut bucket_s = 2usize;
        let mut gas_p = 4usize;
        set(&mut bucket_s, get("method", "bucket_s"))?;
        set(&mut gas_p, get("method", "gas_p"))?;
        cfg.wrapper = match get("method", "wrapper").unwrap_or("none") {
            "none" => Wrapper::None,
            "bucketing" => Wrapper::Bucketing { s: bucket_s },
            "gas" => Wrapper::Gas { p: gas_p },
            other => return Err(Error::config(format!("unknown wrapper '{other}'"))),
        };
        cfg.trim_q = opt(get("method", "trim_q"))?;
        cfg.assumed_malicious = opt(get("method", "assumed_malicious"))?;
        set(&mut cfg.fine_tune, get("method", "fine_tune"))?;

        set(&mut cfg.custom.alpha, get("fedcap", "alpha"))?;
        set(&mut cfg.custom.phi, get("fedcap", "phi"))?;
        set(&mut cfg.custom.t_norm, get("fedcap", "t_norm"))?;

        if let Some(kind) = get("attack", "kind") {
            cfg.attack.kind = AttackKind::parse(kind)?;
        }
        set(&mut cfg.attack.malicious_fraction, get("attack", "fraction"))?;
        cfg.attack.mr_scale = opt(get("attack", "mr_scale"))?;
        cfg.attack.ipm_epsilon = opt(get("attack", "ipm_epsilon"))?;
        if let Some(level) = get("attack", "knowledge") {
            cfg.attack.knowledge = Knowledge::parse(level)?;
        }
        cfg.attack_seed = opt(get("attack", "seed"))?;

        set(&mut cfg.seed, get("run", "seed"))?;
        if let Some(choice) = get("run", "model_choice") {
            cfg.model_choice = ModelChoice::parse(choice)?;
        }
        set(&mut cfg.r2acc_target, get("run", "r2acc_target"))?;

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.plan.validate(&self.dataset)?;
        self.arch().validate()?;
        self.local.validate()?;
        self.custom.validate()?;
        self.attack.validate()?;
        if self.rounds == 0 {
            return Err(Error::config("rounds must be at least 1"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::config("participation must lie in (0, 1]"));
        }
        if self.method == Method::FedCap && self.wrapper != Wrapper::None {
            return Err(Error::config(
                "wrappers apply to baseline methods only; fedcap replaces them",
            ));
        }
        if let Wrapper::Bucketing { s } = self.wrapper {
            if s == 0 {
                return Err(Error::config("bucket_s must be at least 1"));
            }
        }
        if let Wrapper::Gas { p } = self.wrapper {
            if p == 0 || p > self.arch().param_count() {
                return Err(Error::config(
                    "gas_p must lie in [1, parameter count]",
                ));
            }
        }
        if !(self.r2acc_target > 0.0 && self.r2acc_target <= 1.0) {
            return Err(Error::config("r2acc_target must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn arch(&self) -> ModelArch {
        ModelArch {
            input_dim: self.dataset.input_dim,
            hidden_dim: self.hidden_dim,
            num_classes: self.dataset.num_classes,
        }
    }

    /// Configured participants per round: at least one, at most every client.
    pub fn participants_per_round(&self) -> usize {
        ((self.participation * self.plan.num_clients as f64).round() as usize)
            .max(1)
            .min(self.plan.num_clients)
    }

    /// Assumed malicious count M̂ for robust baselines.
    pub fn assumed_malicious_count(&self) -> usize {
        self.assumed_malicious.unwrap_or_else(|| {
            (self.attack.malicious_fraction * self.participants_per_round() as f64).ceil() as usize
        })
    }

    /// Trim count for the trimmed mean, Q = ⌊M̂/2⌋ by default.
    pub fn trim_count(&self) -> usize {
        self.trim_q.unwrap_or(self.assumed_malicious_count() / 2)
    }

    /// Canonical one-line-per-field rendering; the basis of the run digest.
    pub fn to_canonical_string(&self) -> String {
        let mut s = String::from("fedcap-config-v1\n");
        let kv = |s: &mut String, k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv(&mut s, "dataset.num_classes", &self.dataset.num_classes);
        kv(&mut s, "dataset.input_dim", &self.dataset.input_dim);
        kv(
            &mut s,
            "dataset.samples_per_client",
            &self.dataset.samples_per_client,
        );
        kv(
            &mut s,
            "dataset.class_separation",
            &self.dataset.class_separation,
        );
        kv(&mut s, "dataset.noise_std", &self.dataset.noise_std);
        let (scheme, cpc, dom) = match self.plan.scheme {
            PartitionScheme::Pathological { classes_per_client } => {
                ("pathological", classes_per_client, 0.0)
            }
            PartitionScheme::DominantMix { dominant_fraction } => {
                ("dominant_mix", 0, dominant_fraction)
            }
            PartitionScheme::Iid => ("iid", 0, 0.0),
        };
        kv(&mut s, "partition.scheme", &scheme);
        kv(&mut s, "partition.classes_per_client", &cpc);
        kv(&mut s, "partition.dominant_fraction", &dom);
        kv(&mut s, "partition.num_clients", &self.plan.num_clients);
        kv(&mut s, "partition.split_ratio", &self.plan.split_ratio);
        kv(&mut s, "model.hidden_dim", &self.hidden_dim);
        kv(&mut s, "training.rounds", &self.rounds);
        kv(&mut s, "training.participation", &self.participation);
        kv(&mut s, "training.epochs", &self.local.epochs);
        kv(&mut s, "training.batch_size", &self.local.batch_size);
        kv(&mut s, "training.lr", &self.local.lr);
        kv(&mut s, "training.lambda", &self.local.lambda);
        kv(&mut s, "method.name", &self.method.as_str());
        kv(&mut s, "method.wrapper", &self.wrapper.as_str());
        let (bucket_s, gas_p) = match self.wrapper {
            Wrapper::Bucketing { s } => (s, 0),
            Wrapper::Gas { p } => (0, p),
            Wrapper::None => (0, 0),
        };
        kv(&mut s, "method.bucket_s", &bucket_s);
        kv(&mut s, "method.gas_p", &gas_p);
        kv(&mut s, "method.trim_q", &display_opt(&self.trim_q));
        kv(
            &mut s,
            "method.assumed_malicious",
            &display_opt(&self.assumed_malicious),
        );
        kv(&mut s, "method.fine_tune", &self.fine_tune);
        kv(&mut s, "fedcap.alpha", &self.custom.alpha);
        kv(&mut s, "fedcap.phi", &self.custom.phi);
        kv(&mut s, "fedcap.t_norm", &self.custom.t_norm);
        kv(&mut s, "attack.kind", &self.attack.kind.as_str());
        kv(&mut s, "attack.fraction", &self.attack.malicious_fraction);
        kv(&mut s, "attack.mr_scale", &display_opt(&self.attack.mr_scale));
        kv(
            &mut s,
            "attack.ipm_epsilon",
            &display_opt(&self.attack.ipm_epsilon),
        );
        kv(&mut s, "attack.knowledge", &self.attack.knowledge.as_str());
        kv(&mut s, "attack.seed", &display_opt(&self.attack_seed));
        kv(&mut s, "run.seed", &self.seed);
        kv(&mut s, "run.model_choice", &self.model_choice.as_str());
        kv(&mut s, "run.r2acc_target", &self.r2acc_target);
        s
    }

    /// SHA-256 hex digest of the canonical rendering.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_canonical_string().as_bytes());
        hash.iter().fold(String::new(), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        })
    }
}

fn display_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "default".to_string(),
    }
}

/// Parses a value into an existing slot, leaving it untouched when absent.
fn set<T: FromStr>(slot: &mut T, value: Option<&str>) -> Result<()>
where
    T::Err: std::fmt::Display,
{
    if let Some(text) = value {
        *slot = text
            .parse()
            .map_err(|e| Error::config(format!("cannot parse '{text}': {e}")))?;
    }
    Ok(())
}

/// Parses an optional value; the literal "default" (or absence) means unset.
fn opt<T: FromStr>(value: Option<&str>) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match value {
        None => Ok(None),
        Some("default") => Ok(None),
        Some(text) => text
            .parse()
            .map(Some)
            .map_err(|e| Error::config(format!("cannot parse '{text}': {e}"))),
    }
}

pub type IniMap = BTreeMap<String, BTreeMap<String, String>>;

/// Parses the INI-style text: `[section]` headers, `key = value` lines, `#`
/// comments. Duplicate keys within a section are errors.
pub fn parse_ini(text: &str) -> Result<IniMap> {
    let mut map: IniMap = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| {
                    Error::config(format!("line {}: unterminated section header", lineno + 1))
                })?
                .trim()
                .to_string();
            map.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        let section = current.as_ref().ok_or_else(|| {
            Error::config(format!("line {}: key before any [section]", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let entries = map.get_mut(section).expect("section inserted above");
        if entries.contains_key(&key) {
            return Err(Error::config(format!(
                "line {}: duplicate key '{key}' in section [{section}]",
                lineno + 1
            )));
        }
        entries.insert(key, value);
    }
    Ok(map)
}

/// Rejects unknown sections and keys so typos never silently fall back to
/// defaults.
fn check_known_keys(map: &IniMap) -> Result<()> {
    let known: &[(&str, &[&str])] = &[
        (
            "dataset",
            &[
                "num_classes",
                "input_dim",
                "samples_per_client",
                "class_separation",
                "noise_std",
            ],
        ),
        (
            "partition",
            &[
                "scheme",
                "classes_per_client",
                "dominant_fraction",
                "num_clients",
                "split_ratio",
            ],
        ),
        ("model", &["hidden_dim"]),
        (
            "training",
            &["rounds", "participation", "epochs", "batch_size", "lr", "lambda"],
        ),
        (
            "method",
            &[
                "name",
                "wrapper",
                "bucket_s",
                "gas_p",
                "trim_q",
                "assumed_malicious",
                "fine_tune",
            ],
        ),
        ("fedcap", &["alpha", "phi", "t_norm"]),
        (
            "attack",
            &["kind", "fraction", "mr_scale", "ipm_epsilon", "knowledge", "seed"],
        ),
        ("run", &["seed", "model_choice", "r2acc_target"]),
    ];
    for (section, entries) in map {
        let keys = known
            .iter()
            .find(|(name, _)| name == section)
            .map(|(_, keys)| *keys)
            .ok_or_else(|| Error::config(format!("unknown section [{section}]")))?;
        for key in entries.keys() {
            if !keys.contains(&key.as_str()) {
                return Err(Error::config(format!(
                    "unknown key '{key}' in section [{section}]"
                )));
            }
        }
    }
    Ok(())
}
