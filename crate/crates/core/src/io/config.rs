//! Flat, explicitly typed key-value configuration.
//!
//! One entry per line, `section.key: type = value`, with `#` comments:
//!
//! ```text
//! degrade.factor: int = 16
//! train.learning_rate: float = 1e-4
//! reconstruct.filter: str = ramp
//! ```
//!
//! Every key belongs to a stage schema. Values are checked against the
//! declared and schema types before anything runs, and required keys have no
//! fallback.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ty {
    Int,
    Float,
    Str,
    Bool,
}

impl Ty {
    pub fn as_str(self) -> &'static str {
        match self {
            Ty::Int => "int",
            Ty::Float => "float",
            Ty::Str => "str",
            Ty::Bool => "bool",
        }
    }

    fn parse(s: &str) -> Option<Ty> {
        match s {
            "int" => Some(Ty::Int),
            "float" => Some(Ty::Float),
            "str" => Some(Ty::Str),
            "bool" => Some(Ty::Bool),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
}

impl Value {
    pub fn ty(&self) -> Ty {
        match self {
            Value::Int(_) => Ty::Int,
            Value::Float(_) => Ty::Float,
            Value::Str(_) => Ty::Str,
            Value::Bool(_) => Ty::Bool,
        }
    }

    fn parse(ty: Ty, raw: &str) -> std::result::Result<Value, String> {
        let raw = raw.trim();
        match ty {
            Ty::Int => raw.parse().map(Value::Int).map_err(|_| format!("`{raw}` is not an int")),
            Ty::Float => match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Value::Float(v)),
                _ => Err(format!("`{raw}` is not a finite float")),
            },
            Ty::Bool => match raw {
                "true" => Ok(Value::Bool(true)),
                "false" => Ok(Value::Bool(false)),
                _ => Err(format!("`{raw}` is not true or false")),
            },
            Ty::Str => {
                if raw.is_empty() || raw.contains('\n') {
                    Err("strings must be non-empty and single-line".into())
                } else {
                    Ok(Value::Str(raw.to_string()))
                }
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            // `{:?}` keeps a decimal point or exponent and round-trips exactly.
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Str(v) => f.write_str(v),
            Value::Bool(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub ty: Ty,
    /// `None` marks a key that must be given explicitly.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn req(key: &'static str, ty: Ty, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        ty,
        default: None,
        help,
    }
}

const fn opt(key: &'static str, ty: Ty, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        ty,
        default: Some(default),
        help,
    }
}

/// Keys whose absence is legal and means "not applied" (no default value).
const fn optional(key: &'static str, ty: Ty, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        ty,
        default: Some(""),
        help,
    }
}

pub const SIMULATE: &[KeySpec] = &[
    req("simulate.size", Ty::Int, "cubic grid edge in voxels"),
    req("simulate.seed", Ty::Int, "phantom seed"),
    req("simulate.n_angles", Ty::Int, "projection count over 180 degrees"),
    optional("simulate.n_features", Ty::Int, "void count; scaled from size when absent"),
    optional("simulate.radius_min", Ty::Float, "smallest void radius in voxels"),
    optional("simulate.radius_max", Ty::Float, "largest void radius in voxels"),
    opt("simulate.antialias", Ty::Bool, "true", "supersample void boundaries"),
];

pub const DEGRADE: &[KeySpec] = &[
    optional("degrade.factor", Ty::Int, "keep every factor-th projection"),
    optional("degrade.i0", Ty::Float, "incident photons per detector pixel"),
    optional("degrade.seed", Ty::Int, "noise seed; required with i0"),
    opt("degrade.absorption", Ty::Float, "0.025", "mean absorption after rescaling"),
];

pub const RECONSTRUCT: &[KeySpec] = &[
    req("reconstruct.method", Ty::Str, "fbp or sirt"),
    optional("reconstruct.filter", Ty::Str, "fbp filter: ramp, shepp_logan, hann"),
    optional("reconstruct.iterations", Ty::Int, "sirt iteration count"),
    opt("reconstruct.nonneg", Ty::Bool, "false", "clip sirt iterates at zero"),
    opt("reconstruct.provenance", Ty::Str, "low_dose", "tag for the output volume"),
    opt("reconstruct.output", Ty::Str, "recon", "output file stem"),
];

pub const TRAIN: &[KeySpec] = &[
    req("train.depth", Ty::Int, "adjacent slices per input (odd)"),
    req("train.batch_size", Ty::Int, "images per mini-batch"),
    req("train.d_steps_per_g", Ty::Int, "critic updates per generator update"),
    req("train.lambda_d", Ty::Float, "gradient penalty weight"),
    req("train.lambda_g", Ty::Float, "adversarial weight"),
    req("train.lambda_p", Ty::Float, "pixel loss weight"),
    req("train.lambda_v", Ty::Float, "perceptual loss weight"),
    req("train.learning_rate", Ty::Float, "Adam step size"),
    req("train.total_g_steps", Ty::Int, "generator updates"),
    req("train.seed", Ty::Int, "initialization and sampling seed"),
    opt("train.beta1", Ty::Float, "0.5", "Adam beta1"),
    opt("train.beta2", Ty::Float, "0.9", "Adam beta2"),
    opt("train.epsilon", Ty::Float, "1e-8", "Adam epsilon"),
    opt("train.crop_size", Ty::Int, "256", "random crop edge; 0 trains on full slices"),
    opt("train.mse_form", Ty::Str, "sum", "pixel loss normalization: sum or mean"),
    opt("train.extractor", Ty::Str, "gaussian_pyramid", "pretrained_vgg, gaussian_pyramid, identity"),
    opt("train.layer_counting", Ty::Str, "weight", "vgg cut point counting: weight or all"),
    opt("train.checkpoint_every", Ty::Int, "1000", "generator steps between checkpoints"),
    opt("train.base_channels", Ty::Int, "8", "generator width"),
];

pub const ENHANCE: &[KeySpec] = &[
    req("enhance.depth", Ty::Int, "adjacent slices per input; must match the checkpoint"),
    opt("enhance.pad", Ty::Bool, "true", "edge-pad slices that are not multiples of 8"),
];

pub const EVALUATE: &[KeySpec] = &[
    opt("evaluate.feature_variance", Ty::Float, "0.01", "slice variance threshold relative to the volume"),
];

pub const INSPECT: &[KeySpec] = &[
    req("inspect.tag", Ty::Str, "feature map tag, e.g. input, down1b, bottleneck"),
    req("inspect.slice", Ty::Int, "slice index"),
    req("inspect.depth", Ty::Int, "adjacent slices per input"),
];

pub const PLOT: &[KeySpec] = &[];

/// Schema of a stage by name.
pub fn schema(stage: &str) -> Option<&'static [KeySpec]> {
    Some(match stage {
        "simulate" => SIMULATE,
        "degrade" => DEGRADE,
        "reconstruct" => RECONSTRUCT,
        "train" => TRAIN,
        "enhance" => ENHANCE,
        "evaluate" => EVALUATE,
        "inspect" => INSPECT,
        "plot" => PLOT,
        _ => return None,
    })
}

fn find_spec(key: &str) -> Option<&'static KeySpec> {
    let stage = key.split('.').next()?;
    schema(stage)?.iter().find(|s| s.key == key)
}

fn cfg_err(origin: &str, line: Option<usize>, msg: impl fmt::Display) -> Error {
    match line {
        Some(n) => Error::Configuration(format!("{origin}:{n}: {msg}")),
        None => Error::Configuration(format!("{origin}: {msg}")),
    }
}

/// Parsed entries, keyed by full `section.key` name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, Value>,
}

impl Config {
    pub fn parse(text: &str, origin: &str) -> Result<Config> {
        let mut cfg = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let n = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (lhs, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(origin, Some(n), "expected `key: type = value`"))?;
            let (key, ty) = lhs
                .split_once(':')
                .ok_or_else(|| cfg_err(origin, Some(n), "missing `: type` after the key"))?;
            let key = key.trim();
            let ty = Ty::parse(ty.trim())
                .ok_or_else(|| cfg_err(origin, Some(n), format!("unknown type `{}`", ty.trim())))?;
            let spec = find_spec(key).ok_or_else(|| cfg_err(origin, Some(n), format!("unknown key `{key}`")))?;
            if spec.ty != ty {
                return Err(cfg_err(
                    origin,
                    Some(n),
                    format!("`{key}` is declared {} but must be {}", ty.as_str(), spec.ty.as_str()),
                ));
            }
            let v = Value::parse(ty, value).map_err(|m| cfg_err(origin, Some(n), format!("`{key}`: {m}")))?;
            if cfg.entries.insert(key.to_string(), v).is_some() {
                return Err(cfg_err(origin, Some(n), format!("duplicate key `{key}`")));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text, &path.display().to_string())
    }

    /// Sets `key` from a command-line string, typed by the schema.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let spec = find_spec(key).ok_or_else(|| cfg_err("command line", None, format!("unknown key `{key}`")))?;
        let v = Value::parse(spec.ty, raw).map_err(|m| cfg_err("command line", None, format!("`{key}`: {m}")))?;
        self.entries.insert(key.to_string(), v);
        Ok(())
    }

    pub fn insert(&mut self, key: &str, value: Value) -> Result<()> {
        let spec = find_spec(key).ok_or_else(|| cfg_err("config", None, format!("unknown key `{key}`")))?;
        if spec.ty != value.ty() {
            return Err(cfg_err("config", None, format!("`{key}` must be {}", spec.ty.as_str())));
        }
        self.entries.insert(key.to_string(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    /// Entries of one stage with documented defaults filled in. Missing
    /// required keys are an error naming every one of them.
    pub fn resolve(&self, stage: &str) -> Result<Config> {
        let specs = schema(stage).ok_or_else(|| Error::Usage(format!("unknown stage `{stage}`")))?;
        let mut out = Config::default();
        let mut missing = Vec::new();
        for s in specs {
            match (self.entries.get(s.key), s.default) {
                (Some(v), _) => {
                    out.entries.insert(s.key.to_string(), v.clone());
                }
                (None, Some("")) => {}
                (None, Some(d)) => {
                    let v = Value::parse(s.ty, d).expect("schema defaults parse");
                    out.entries.insert(s.key.to_string(), v);
                }
                (None, None) => missing.push(s.key),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Configuration(format!(
                "missing required keys: {}",
                missing.join(", ")
            )));
        }
        Ok(out)
    }

    fn typed<T>(&self, key: &str, want: Ty, pick: impl Fn(&Value) -> Option<T>) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => pick(v)
                .map(Some)
                .ok_or_else(|| Error::Configuration(format!("`{key}` must be {}", want.as_str()))),
        }
    }

    fn need<T>(&self, key: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| Error::Configuration(format!("missing required key {key}")))
    }

    pub fn opt_i64(&self, key: &str) -> Result<Option<i64>> {
        self.typed(key, Ty::Int, |v| match v {
            Value::Int(i) => Some(*i),
            _ => None,
        })
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.opt_i64(key)? {
            None => Ok(None),
            Some(i) => usize::try_from(i)
                .map(Some)
                .map_err(|_| Error::Configuration(format!("`{key}` must be non-negative, got {i}"))),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let v = self.opt_usize(key)?;
        self.need(key, v)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        Ok(self.usize(key)? as u64)
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        self.typed(key, Ty::Float, |v| match v {
            Value::Float(x) => Some(*x),
            _ => None,
        })
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v = self.opt_f64(key)?;
        self.need(key, v)
    }

    pub fn opt_str(&self, key: &str) -> Result<Option<&str>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(Value::Str(s)) => Ok(Some(s.as_str())),
            Some(_) => Err(Error::Configuration(format!("`{key}` must be str"))),
        }
    }

    pub fn str(&self, key: &str) -> Result<&str> {
        let v = self.opt_str(key)?;
        self.need(key, v)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        let v = self.typed(key, Ty::Bool, |v| match v {
            Value::Bool(b) => Some(*b),
            _ => None,
        })?;
        self.need(key, v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.entries.iter()
    }

    /// Canonical text form; `parse(to_text())` gives back the same entries.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}: {} = {v}\n", v.ty().as_str()))
            .collect()
    }

    /// `key -> "type = value"`, the manifest's config snapshot.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), format!("{} = {v}", v.ty().as_str())))
            .collect()
    }

    pub fn from_snapshot(snap: &BTreeMap<String, String>) -> Result<Config> {
        let text: String = snap.iter().map(|(k, v)| format!("{k}: {v}\n")).collect();
        Config::parse(&text, "manifest")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_typed_entries_and_round_trips() {
        let text = "# desk run\ndegrade.factor: int = 16\ntrain.learning_rate: float = 1e-4 # Adam\nreconstruct.method: str = fbp\nenhance.pad: bool = false\n";
        let cfg = Config::parse(text, "t").unwrap();
        assert_eq!(cfg.usize("degrade.factor").unwrap(), 16);
        assert_eq!(cfg.f64("train.learning_rate").unwrap(), 1e-4);
        assert!(!cfg.bool("enhance.pad").unwrap());
        assert_eq!(Config::parse(&cfg.to_text(), "t").unwrap(), cfg);
        assert_eq!(Config::from_snapshot(&cfg.snapshot()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_wrong_types_and_duplicates() {
        for bad in [
            "train.depht: int = 3",
            "train.depth: float = 3",
            "train.depth: int = 3.5",
            "train.depth = 3",
            "train.depth: int = 3\ntrain.depth: int = 5",
            "train.lambda_d: float = nan",
        ] {
            match Config::parse(bad, "t") {
                Err(Error::Configuration(_)) => {}
                other => panic!("{bad:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn resolve_lists_missing_required_keys_and_fills_defaults() {
        let cfg = Config::parse("train.depth: int = 3\ntrain.seed: int = 1", "t").unwrap();
        match cfg.resolve("train") {
            Err(Error::Configuration(m)) => {
                assert!(m.contains("train.lambda_d") && m.contains("train.batch_size"));
                assert!(!m.contains("train.depth"));
            }
            other => panic!("{other:?}"),
        }
        let r = Config::parse("reconstruct.method: str = fbp", "t").unwrap().resolve("reconstruct").unwrap();
        assert_eq!(r.str("reconstruct.provenance").unwrap(), "low_dose");
        assert!(r.get("reconstruct.iterations").is_none());
    }

    #[test]
    fn every_default_parses() {
        for stage in ["simulate", "degrade", "reconstruct", "train", "enhance", "evaluate", "inspect", "plot"] {
            for s in schema(stage).unwrap() {
                assert!(s.key.starts_with(stage));
                if let Some(d) = s.default.filter(|d| !d.is_empty()) {
                    Value::parse(s.ty, d).unwrap();
                }
            }
        }
    }
}
