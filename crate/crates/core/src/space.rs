//! Search spaces: the menu of operations, their discrete hyperparameter
//! values and the connectivity rules genomes are decoded against.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::GenomeError;

pub const IDENTITY: &str = "Identity";

/// Characters reserved by the architecture string encoding.
const RESERVED: &[char] = &[';', '|', '=', ','];

/// One discrete hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Flag(bool),
    Int(i64),
    Real(f64),
    Label(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ParamValue::Flag(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_label(&self) -> Option<&str> {
        match self {
            ParamValue::Label(s) => Some(s),
            _ => None,
        }
    }

    fn from_json(value: &Value) -> Result<Self, GenomeError> {
        Ok(match value {
            Value::Bool(b) => ParamValue::Flag(*b),
            Value::Number(n) => match n.as_i64() {
                Some(i) => ParamValue::Int(i),
                None => ParamValue::Real(n.as_f64().ok_or_else(|| {
                    GenomeError::Config(format!("unsupported number {n}"))
                })?),
            },
            Value::String(s) => ParamValue::Label(s.clone()),
            other => {
                return Err(GenomeError::Config(format!(
                    "hyperparameter values must be scalars, got {other}"
                )))
            }
        })
    }

    fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("scalar serializes")
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Flag(true) => f.write_str("yes"),
            ParamValue::Flag(false) => f.write_str("no"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Label(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParam {
    pub name: String,
    pub values: Vec<ParamValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationSpec {
    pub name: String,
    pub hyperparams: Vec<HyperParam>,
}

impl OperationSpec {
    pub fn new(name: &str, hyperparams: Vec<(&str, Vec<ParamValue>)>) -> Self {
        Self {
            name: name.to_string(),
            hyperparams: hyperparams
                .into_iter()
                .map(|(n, values)| HyperParam {
                    name: n.to_string(),
                    values,
                })
                .collect(),
        }
    }

    pub fn hyperparam_index(&self, name: &str) -> Option<usize> {
        self.hyperparams.iter().position(|h| h.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aggregation {
    Add,
    Concat,
}

impl Aggregation {
    pub fn code(self) -> char {
        match self {
            Aggregation::Add => 'A',
            Aggregation::Concat => 'C',
        }
    }
}

/// Operations plus connectivity rules. Construct through [`SearchSpace::new`]
/// so the invariants hold.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    name: String,
    operations: Vec<OperationSpec>,
    allows_skip_connections: bool,
    max_indegree: usize,
    aggregations: Vec<Aggregation>,
    decodable: bool,
}

impl SearchSpace {
    pub fn new(
        name: &str,
        operations: Vec<OperationSpec>,
        allows_skip_connections: bool,
        max_indegree: usize,
        aggregations: Vec<Aggregation>,
        decodable: bool,
    ) -> Result<Self, GenomeError> {
        if !(1..=2).contains(&max_indegree) {
            return Err(GenomeError::Config(format!(
                "max_indegree must be 1 or 2, got {max_indegree}"
            )));
        }
        if !allows_skip_connections && max_indegree != 1 {
            return Err(GenomeError::Config(
                "a space without skip connections must have max_indegree 1".into(),
            ));
        }
        if allows_skip_connections && max_indegree != 2 {
            return Err(GenomeError::Config(
                "a space with skip connections must have max_indegree 2".into(),
            ));
        }
        if max_indegree == 2 && aggregations.is_empty() {
            return Err(GenomeError::Config("no aggregation choices".into()));
        }
        if operations.is_empty() {
            return Err(GenomeError::Config("search space has no operations".into()));
        }
        let mut names = HashSet::new();
        for op in &operations {
            check_name(&op.name)?;
            if !names.insert(op.name.as_str()) {
                return Err(GenomeError::Config(format!("duplicate operation `{}`", op.name)));
            }
            for hp in &op.hyperparams {
                check_name(&hp.name)?;
                if hp.values.is_empty() {
                    return Err(GenomeError::Config(format!(
                        "hyperparameter `{}` of `{}` has no values",
                        hp.name, op.name
                    )));
                }
                let mut rendered = HashSet::new();
                for v in &hp.values {
                    let r = v.to_string();
                    check_name(&r)?;
                    if !rendered.insert(r.clone()) {
                        return Err(GenomeError::Config(format!(
                            "hyperparameter `{}` of `{}` repeats value `{r}`",
                            hp.name, op.name
                        )));
                    }
                }
            }
        }
        if !names.contains(IDENTITY) {
            return Err(GenomeError::Config("search space must include Identity".into()));
        }
        Ok(Self {
            name: name.to_string(),
            operations,
            allows_skip_connections,
            max_indegree,
            aggregations,
            decodable,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn operations(&self) -> &[OperationSpec] {
        &self.operations
    }

    pub fn operation(&self, name: &str) -> Option<&OperationSpec> {
        self.operations.iter().find(|o| o.name == name)
    }

    pub fn allows_skip_connections(&self) -> bool {
        self.allows_skip_connections
    }

    pub fn max_indegree(&self) -> usize {
        self.max_indegree
    }

    pub fn aggregations(&self) -> &[Aggregation] {
        &self.aggregations
    }

    pub fn decodable(&self) -> bool {
        self.decodable
    }

    /// Largest hyperparameter count over all operations.
    pub fn max_hyperparams(&self) -> usize {
        self.operations
            .iter()
            .map(|o| o.hyperparams.len())
            .max()
            .unwrap_or(0)
    }

    /// Parses the JSON layout `{"name", "allows_skip_connections",
    /// "max_indegree", "aggregations", "decodable", "operations": {op: {hp: [values]}}}`.
    pub fn from_json_str(text: &str) -> Result<Self, GenomeError> {
        let root: Value = serde_json::from_str(text)
            .map_err(|e| GenomeError::Config(format!("invalid search space JSON: {e}")))?;
        let obj = root
            .as_object()
            .ok_or_else(|| GenomeError::Config("search space must be a JSON object".into()))?;
        let name = obj.get("name").and_then(Value::as_str).unwrap_or("custom");
        let skip = obj
            .get("allows_skip_connections")
            .and_then(Value::as_bool)
            .unwrap_or(false);
        let max_indegree = obj
            .get("max_indegree")
            .and_then(Value::as_u64)
            .map_or(if skip { 2 } else { 1 }, |v| v as usize);
        let aggregations = match obj.get("aggregations") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| GenomeError::Config(format!("bad aggregations: {e}")))?,
            None => vec![Aggregation::Add, Aggregation::Concat],
        };
        let decodable = obj.get("decodable").and_then(Value::as_bool).unwrap_or(false);
        let ops_obj = obj
            .get("operations")
            .and_then(Value::as_object)
            .ok_or_else(|| GenomeError::Config("missing `operations` object".into()))?;
        let mut operations = Vec::with_capacity(ops_obj.len());
        for (op_name, hps) in ops_obj {
            let hps = hps.as_object().ok_or_else(|| {
                GenomeError::Config(format!("operation `{op_name}` must map to an object"))
            })?;
            let mut hyperparams = Vec::with_capacity(hps.len());
            for (hp_name, values) in hps {
                let values = values
                    .as_array()
                    .ok_or_else(|| {
                        GenomeError::Config(format!("`{op_name}.{hp_name}` must be an array"))
                    })?
                    .iter()
                    .map(ParamValue::from_json)
                    .collect::<Result<Vec<_>, _>>()?;
                hyperparams.push(HyperParam {
                    name: hp_name.clone(),
                    values,
                });
            }
            operations.push(OperationSpec {
                name: op_name.clone(),
                hyperparams,
            });
        }
        Self::new(name, operations, skip, max_indegree, aggregations, decodable)
    }

    pub fn to_json(&self) -> Value {
        let mut ops = Map::new();
        for op in &self.operations {
            let mut hps = Map::new();
            for hp in &op.hyperparams {
                hps.insert(
                    hp.name.clone(),
                    Value::Array(hp.values.iter().map(ParamValue::to_json).collect()),
                );
            }
            ops.insert(op.name.clone(), Value::Object(hps));
        }
        let mut root = Map::new();
        root.insert("name".into(), Value::String(self.name.clone()));
        root.insert(
            "allows_skip_connections".into(),
            Value::Bool(self.allows_skip_connections),
        );
        root.insert("max_indegree".into(), Value::from(self.max_indegree));
        root.insert(
            "aggregations".into(),
            serde_json::to_value(&self.aggregations).expect("enum serializes"),
        );
        root.insert("decodable".into(), Value::Bool(self.decodable));
        root.insert("operations".into(), Value::Object(ops));
        Value::Object(root)
    }

    pub fn load(path: &Path) -> Result<Self, GenomeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GenomeError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Resolves a built-in preset name or a JSON file path.
    pub fn resolve(name_or_path: &str) -> Result<Arc<Self>, GenomeError> {
        match preset(name_or_path) {
            Some(space) => Ok(Arc::new(space)),
            None => Self::load(Path::new(name_or_path)).map(Arc::new),
        }
    }
}

fn check_name(name: &str) -> Result<(), GenomeError> {
    if name.is_empty() || name.contains(RESERVED) {
        return Err(GenomeError::Config(format!(
            "name `{name}` is empty or contains one of {RESERVED:?}"
        )));
    }
    Ok(())
}

pub const PRESET_NAMES: &[&str] = &["fmnist-seq", "cifar-blocks"];

pub fn preset(name: &str) -> Option<SearchSpace> {
    match name {
        "fmnist-seq" => Some(sequential_space()),
        "cifar-blocks" => Some(block_space()),
        _ => None,
    }
}

fn ints(values: &[i64]) -> Vec<ParamValue> {
    values.iter().copied().map(ParamValue::Int).collect()
}

fn flags() -> Vec<ParamValue> {
    vec![ParamValue::Flag(true), ParamValue::Flag(false)]
}

fn labels(values: &[&str]) -> Vec<ParamValue> {
    values.iter().map(|s| ParamValue::Label(s.to_string())).collect()
}

fn reals(values: &[f64]) -> Vec<ParamValue> {
    values.iter().copied().map(ParamValue::Real).collect()
}

/// Strictly sequential space of convolutions, separable convolutions, pooling
/// and identity layers. Decodable by the neural evaluator.
pub fn sequential_space() -> SearchSpace {
    let conv = |name| {
        OperationSpec::new(
            name,
            vec![
                ("kernel_size", ints(&[1, 3, 5, 7])),
                ("batchnorm", flags()),
                ("relu", flags()),
            ],
        )
    };
    let operations = vec![
        conv("Conv"),
        conv("DSepConv"),
        OperationSpec::new(
            "Pool",
            vec![
                ("type", labels(&["Max", "Avg"])),
                ("kernel_size", ints(&[3, 5])),
                ("channel_multiplier", reals(&[1.0, 4.0 / 3.0, 5.0 / 3.0, 2.0])),
            ],
        ),
        OperationSpec::new(IDENTITY, vec![]),
    ];
    SearchSpace::new("fmnist-seq", operations, false, 1, vec![Aggregation::Add, Aggregation::Concat], true)
        .expect("built-in space is valid")
}

/// Block-based space with skip connections. Genome-level only.
pub fn block_space() -> SearchSpace {
    let resnet = |name| {
        OperationSpec::new(
            name,
            vec![("kernel_size", ints(&[3, 5])), ("downsample", flags())],
        )
    };
    let densenet = |name| {
        OperationSpec::new(
            name,
            vec![("growth_factor", ints(&[12, 24, 36])), ("transition_layer", flags())],
        )
    };
    let inception = |name| {
        OperationSpec::new(
            name,
            vec![
                ("kernel_size", ints(&[3, 5])),
                ("bottleneck_factor", reals(&[0.1, 0.4, 0.75])),
            ],
        )
    };
    let operations = vec![
        resnet("ResNetBlock"),
        resnet("ResNetBottleneckBlock"),
        densenet("DenseNetBlock"),
        densenet("DenseNetBottleneckBlock"),
        inception("InceptionResNetBlockA"),
        inception("InceptionResNetBlockB"),
        OperationSpec::new(
            "Pool",
            vec![("type", labels(&["Max", "Avg"])), ("kernel_size", ints(&[3, 5]))],
        ),
        OperationSpec::new(IDENTITY, vec![]),
    ];
    SearchSpace::new(
        "cifar-blocks",
        operations,
        true,
        2,
        vec![Aggregation::Add, Aggregation::Concat],
        false,
    )
    .expect("built-in space is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_satisfy_invariants() {
        let seq = sequential_space();
        assert_eq!(seq.max_indegree(), 1);
        assert!(seq.decodable());
        assert!(seq.operation(IDENTITY).is_some());
        assert_eq!(seq.operations().len(), 4);
        let blocks = block_space();
        assert!(blocks.allows_skip_connections());
        assert_eq!(blocks.max_indegree(), 2);
        assert_eq!(blocks.operations().len(), 8);
        assert!(!blocks.decodable());
    }

    #[test]
    fn json_round_trip_preserves_order() {
        for space in [sequential_space(), block_space()] {
            let text = space.to_json().to_string();
            let back = SearchSpace::from_json_str(&text).unwrap();
            assert_eq!(back, space);
        }
    }

    #[test]
    fn rejects_missing_identity_and_bad_indegree() {
        let op = OperationSpec::new("Conv", vec![("k", ints(&[1]))]);
        assert!(SearchSpace::new("x", vec![op.clone()], false, 1, vec![], false).is_err());
        let id = OperationSpec::new(IDENTITY, vec![]);
        assert!(SearchSpace::new("x", vec![op.clone(), id.clone()], false, 2, vec![], false).is_err());
        assert!(SearchSpace::new("x", vec![op, id], false, 1, vec![], false).is_ok());
    }

    #[test]
    fn rejects_empty_value_list_and_reserved_names() {
        let json = r#"{"operations": {"Conv": {"k": []}, "Identity": {}}}"#;
        assert!(SearchSpace::from_json_str(json).is_err());
        let json = r#"{"operations": {"Co;nv": {"k": [1]}, "Identity": {}}}"#;
        assert!(SearchSpace::from_json_str(json).is_err());
    }

    #[test]
    fn parses_table_style_document() {
        let json = r#"{
            "name": "tiny",
            "decodable": true,
            "operations": {
                "Conv": {"kernel_size": [1, 3], "relu": [true, false]},
                "Pool": {"type": ["Max", "Avg"], "channel_multiplier": [1, 1.5]},
                "Identity": {}
            }
        }"#;
        let space = SearchSpace::from_json_str(json).unwrap();
        assert_eq!(space.name(), "tiny");
        assert_eq!(space.operations()[0].name, "Conv");
        assert_eq!(space.operations()[1].hyperparams[1].values[1], ParamValue::Real(1.5));
        assert_eq!(space.max_indegree(), 1);
    }
}
