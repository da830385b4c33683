//! Run-configuration parsing: a flat, line-oriented `key = value` format
//! with one `[layer]` section per layer, in network order. The last layer
//! is the fully-connected output layer. Unknown keys are rejected; every
//! parse error carries a 1-based line number.

use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::linalg::Vec1D;
use crate::network::NetworkSpec;
use crate::ops::{ConvGeometry, Nonlinearity};
use crate::train::TrainConfig;

/// Everything one run needs: the network, the training hyperparameters, and
/// the data file paths (relative paths are resolved against the config
/// file's directory by the command drivers).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub data_path: String,
    pub tangent_path: Option<String>,
}

const TRAIN_KEYS: &[&str] = &[
    "eta",
    "lambda",
    "batch_size",
    "iterations",
    "seed",
    "init_scale",
    "data",
    "tangents",
];

const LAYER_KEYS: &[&str] = &[
    "in_rows",
    "in_cols",
    "in_depth",
    "filter_rows",
    "filter_cols",
    "stride",
    "pool",
    "out_depth",
    "nonlinearity",
    "mixing",
];

#[derive(Default)]
struct Section {
    // key -> (line number, raw value)
    entries: Vec<(String, usize, String)>,
    start_line: usize,
}

impl Section {
    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, line, v)| (*line, v.as_str()))
    }

    fn require(&self, key: &str, what: &str) -> Result<(usize, &str)> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("{what}: missing required key `{key}`")))
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut train_section = Section::default();
    let mut layer_sections: Vec<Section> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "[layer]" {
            layer_sections.push(Section {
                entries: Vec::new(),
                start_line: line_no,
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {line_no}: expected `key = value`, got `{line}`"
            ))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let (section, allowed, where_name): (&mut Section, &[&str], &str) =
            match layer_sections.last_mut() {
                Some(s) => (s, LAYER_KEYS, "a [layer] section"),
                None => (&mut train_section, TRAIN_KEYS, "the training section"),
            };
        if !allowed.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "line {line_no}: unknown key `{key}` in {where_name}"
            )));
        }
        if section.entries.iter().any(|(k, _, _)| *k == key) {
            return Err(Error::Config(format!(
                "line {line_no}: duplicate key `{key}`"
            )));
        }
        section.entries.push((key, line_no, value));
    }

    if layer_sections.is_empty() {
        return Err(Error::Config("no [layer] sections found".into()));
    }

    let train = parse_train(&train_section)?;
    let (_, data_path) = train_section.require("data", "training section")?;
    let tangent_path = train_section.get("tangents").map(|(_, v)| v.to_string());

    let last = layer_sections.len() - 1;
    let mut layers = Vec::with_capacity(layer_sections.len());
    for (i, section) in layer_sections.iter().enumerate() {
        layers.push(parse_layer(section, i + 1, i == last)?);
    }
    let class_count = layers.last().unwrap().out_depth();
    let network = NetworkSpec::new(layers, class_count)?;

    Ok(RunConfig {
        network,
        train,
        data_path: data_path.to_string(),
        tangent_path,
    })
}

fn parse_train(section: &Section) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some((line, v)) = section.get("eta") {
        cfg.eta = parse_f64(line, "eta", v)?;
        if cfg.eta <= 0.0 {
            return Err(Error::Config(format!(
                "line {line}: eta must be positive, got {v}"
            )));
        }
    }
    if let Some((line, v)) = section.get("lambda") {
        cfg.lambda = parse_f64(line, "lambda", v)?;
        if cfg.lambda < 0.0 {
            return Err(Error::Config(format!(
                "line {line}: lambda must be nonnegative, got {v}"
            )));
        }
    }
    if let Some((line, v)) = section.get("batch_size") {
        cfg.batch_size = parse_usize(line, "batch_size", v)?;
        if cfg.batch_size == 0 {
            return Err(Error::Config(format!(
                "line {line}: batch_size must be positive"
            )));
        }
    }
    if let Some((line, v)) = section.get("iterations") {
        cfg.iterations = parse_usize(line, "iterations", v)?;
    }
    if let Some((line, v)) = section.get("seed") {
        cfg.seed = v.parse::<u64>().map_err(|_| {
            Error::Config(format!(
                "line {line}: seed: expected an unsigned integer, got `{v}`"
            ))
        })?;
    }
    if let Some((line, v)) = section.get("init_scale") {
        cfg.init_scale = parse_f64(line, "init_scale", v)?;
        if cfg.init_scale < 0.0 {
            return Err(Error::Config(format!(
                "line {line}: init_scale must be nonnegative, got {v}"
            )));
        }
    }
    Ok(cfg)
}

fn parse_layer(section: &Section, index: usize, is_final: bool) -> Result<LayerSpec> {
    let what = format!("layer {index} (line {})", section.start_line);
    let num = |key: &str| -> Result<usize> {
        let (line, v) = section.require(key, &what)?;
        parse_usize(line, key, v)
    };
    let in_rows = num("in_rows")?;
    let in_cols = num("in_cols")?;
    let in_depth = num("in_depth")?;
    let filter_rows = num("filter_rows")?;
    let filter_cols = num("filter_cols")?;
    let stride = num("stride")?;
    let pool = num("pool")?;
    let out_depth = num("out_depth")?;
    let (nl_line, nl_name) = section.require("nonlinearity", &what)?;
    let nl = Nonlinearity::from_config_name(nl_name)
        .map_err(|e| Error::Config(format!("line {nl_line}: {e}")))?;

    let mixing = match section.get("mixing") {
        None => None,
        Some((line, v)) => {
            let values: Vec<f64> = v
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| {
                        Error::Config(format!(
                            "line {line}: mixing: expected a decimal number, got `{tok}`"
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != out_depth * in_depth {
                return Err(Error::Config(format!(
                    "line {line}: mixing: expected {} values ({out_depth} x {in_depth}), got {}",
                    out_depth * in_depth,
                    values.len()
                )));
            }
            Some(
                values
                    .chunks(in_depth)
                    .map(|chunk| Vec1D::from_vec(chunk.to_vec()))
                    .collect::<Vec<_>>(),
            )
        }
    };

    if is_final {
        if pool != 1 || filter_rows != in_rows || filter_cols != in_cols || stride != 1 {
            return Err(Error::Config(format!(
                "{what}: the last layer must be fully connected \
                 (filter dims equal to input dims, stride 1, pool 1)"
            )));
        }
        return LayerSpec::final_layer_with_mixing(
            in_rows, in_cols, in_depth, out_depth, nl, mixing,
        )
        .map_err(|e| Error::Config(format!("{what}: {e}")));
    }
    let geometry = ConvGeometry::new(in_rows, in_cols, filter_rows, filter_cols, stride)
        .map_err(|e| Error::Config(format!("{what}: {e}")))?;
    LayerSpec::new(geometry, pool, nl, in_depth, out_depth, mixing)
        .map_err(|e| Error::Config(format!("{what}: {e}")))
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>().map_err(|_| {
        Error::Config(format!(
            "line {line}: {key}: expected a positive integer, got `{v}`"
        ))
    })
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64> {
    let x = v.parse::<f64>().map_err(|_| {
        Error::Config(format!(
            "line {line}: {key}: expected a decimal number, got `{v}`"
        ))
    })?;
    if !x.is_finite() {
        return Err(Error::Config(format!(
            "line {line}: {key}: value must be finite, got `{v}`"
        )));
    }
    Ok(x)
}

/// Emits the canonical text form of a configuration. Reparsing the output
/// reproduces an equal `RunConfig`.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let mut out = String::new();
    let t = &cfg.train;
    out.push_str(&format!("eta = {}\n", t.eta));
    out.push_str(&format!("lambda = {}\n", t.lambda));
    out.push_str(&format!("batch_size = {}\n", t.batch_size));
    out.push_str(&format!("iterations = {}\n", t.iterations));
    out.push_str(&format!("seed = {}\n", t.seed));
    out.push_str(&format!("init_scale = {}\n", t.init_scale));
    out.push_str(&format!("data = {}\n", cfg.data_path));
    if let Some(tp) = &cfg.tangent_path {
        out.push_str(&format!("tangents = {tp}\n"));
    }
    for ls in cfg.network.layers() {
        let g = ls.geometry();
        out.push_str("\n[layer]\n");
        out.push_str(&format!("in_rows = {}\n", g.in_rows()));
        out.push_str(&format!("in_cols = {}\n", g.in_cols()));
        out.push_str(&format!("in_depth = {}\n", ls.in_depth()));
        out.push_str(&format!("filter_rows = {}\n", g.filter_rows()));
        out.push_str(&format!("filter_cols = {}\n", g.filter_cols()));
        out.push_str(&format!("stride = {}\n", g.stride()));
        out.push_str(&format!("pool = {}\n", ls.pool_r()));
        out.push_str(&format!("out_depth = {}\n", ls.out_depth()));
        out.push_str(&format!("nonlinearity = {}\n", ls.nl().name()));
        let mixing: Vec<String> = ls
            .mixing()
            .iter()
            .flat_map(|v| v.data().iter().map(|x| format!("{x}")))
            .collect();
        out.push_str(&format!("mixing = {}\n", mixing.join(" ")));
    }
    out
}
