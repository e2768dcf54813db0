//! Experiment matrices: a base config, axes of dotted-path values and a seed
//! list, expanded into their Cartesian product.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::overrides::set_path;
use crate::CliError;

pub const DEFAULT_MAX_RUNS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    /// Base config path, relative to the matrix file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<String>,
    /// Inline base config; takes the place of `base`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_config: Option<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Empty means the base config's own seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_max_runs")]
    pub max_runs: usize,
    #[serde(default)]
    pub axes: Vec<Axis>,
}

fn default_output_dir() -> String {
    "out/sweep".into()
}

fn default_max_runs() -> usize {
    DEFAULT_MAX_RUNS
}

/// One expanded run.
#[derive(Debug, Clone)]
pub struct Point {
    pub seed: u64,
    pub values: Vec<Value>,
    pub config: Table,
}

impl MatrixSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, CliError> {
        toml::from_str(s).map_err(|e| CliError::Validation(format!("cannot parse matrix: {}", e.message())))
    }

    /// Replaces `base` with the file's contents.
    pub fn inline_base(&mut self, dir: &Path) -> Result<(), CliError> {
        match (&self.base, &self.base_config) {
            (Some(_), Some(_)) => Err(CliError::Validation("matrix sets both `base` and `base_config`".into())),
            (None, None) => Err(CliError::Validation("matrix needs `base` or `base_config`".into())),
            (None, Some(_)) => Ok(()),
            (Some(rel), None) => {
                let path = dir.join(rel);
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                self.base = None;
                self.base_config = Some(text);
                Ok(())
            }
        }
    }

    pub fn run_count(&self) -> usize {
        self.axes
            .iter()
            .map(|a| a.values.len())
            .fold(self.seeds.len().max(1), usize::saturating_mul)
    }

    /// Expands the product, ordered by axis values in axis order, then seed.
    pub fn expand(&self) -> Result<Vec<Point>, CliError> {
        let base_text = self
            .base_config
            .as_deref()
            .ok_or_else(|| CliError::Validation("matrix base config was not loaded".into()))?;
        let base: Table = toml::from_str(base_text)
            .map_err(|e| CliError::Validation(format!("cannot parse base config: {}", e.message())))?;
        if let Some(a) = self.axes.iter().find(|a| a.values.is_empty()) {
            return Err(CliError::Validation(format!("axis `{}` has no values", a.name)));
        }
        let n = self.run_count();
        if n > self.max_runs {
            return Err(CliError::Validation(format!(
                "matrix expands to {n} runs, over the cap of {}",
                self.max_runs
            )));
        }
        let seeds = if self.seeds.is_empty() {
            vec![base
                .get("seed")
                .and_then(Value::as_integer)
                .ok_or_else(|| CliError::Validation("base config has no integer `seed`".into()))?
                as u64]
        } else {
            self.seeds.clone()
        };

        let mut combos: Vec<Vec<Value>> = vec![Vec::new()];
        for axis in &self.axes {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    axis.values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push(v.clone());
                        c
                    })
                })
                .collect();
        }
        let mut points = Vec::with_capacity(n);
        for values in combos {
            for &seed in &seeds {
                let mut config = base.clone();
                for (axis, v) in self.axes.iter().zip(&values) {
                    set_path(&mut config, &axis.name, v.clone())?;
                }
                config.insert("seed".into(), Value::Integer(seed as i64));
                points.push(Point {
                    seed,
                    values: values.clone(),
                    config,
                });
            }
        }
        points.sort_by(|a, b| {
            a.values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| compare_values(x, y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
                .then(a.seed.cmp(&b.seed))
        });
        Ok(points)
    }
}

fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Integer(i) => Some(*i as f64),
        Value::Float(f) => Some(*f),
        _ => None,
    }
}

fn compare_values(a: &Value, b: &Value) -> Ordering {
    match (as_number(a), as_number(b)) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        _ => format_value(a).cmp(&format_value(b)),
    }
}

/// CSV cell for an axis value.
pub fn format_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Integer(i) => i.to_string(),
        Value::Float(f) => f.to_string(),
        Value::Boolean(b) => b.to_string(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "seed = 5\nmode = \"edge_only\"\nrequest_rate = 8.0\n";

    fn spec(axes: &str) -> MatrixSpec {
        let mut m = MatrixSpec::from_toml_str(&format!("base_config = '''\n{BASE}'''\n{axes}")).unwrap();
        m.inline_base(Path::new(".")).unwrap();
        m
    }

    #[test]
    fn product_is_sorted_by_axes_then_seed() {
        let m = spec(
            "seeds = [2, 1]\n[[axes]]\nname = \"mode\"\nvalues = [\"edge_only\", \"cloud_only\"]\n\
             [[axes]]\nname = \"request_rate\"\nvalues = [10, 2.0, 6]\n",
        );
        let pts = m.expand().unwrap();
        assert_eq!(pts.len(), 12);
        assert_eq!(m.run_count(), 12);
        let first = &pts[0];
        assert_eq!(first.config["mode"].as_str(), Some("cloud_only"));
        assert_eq!(first.config["request_rate"].as_float(), Some(2.0));
        assert_eq!(first.seed, 1);
        assert_eq!(pts[1].seed, 2);
        assert_eq!(pts[11].config["mode"].as_str(), Some("edge_only"));
        assert_eq!(pts[11].config["request_rate"].as_integer(), Some(10));
    }

    #[test]
    fn empty_seed_list_uses_base_seed() {
        let pts = spec("").expand().unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].seed, 5);
    }

    #[test]
    fn cap_is_enforced_with_count() {
        let values: Vec<String> = (0..30).map(|i| i.to_string()).collect();
        let axes = format!(
            "[[axes]]\nname = \"a\"\nvalues = [{0}]\n[[axes]]\nname = \"b\"\nvalues = [{0}]\n",
            values.join(",")
        );
        let err = spec(&axes).expand().unwrap_err().to_string();
        assert!(err.contains("900"), "{err}");
    }

    #[test]
    fn base_sources_are_exclusive() {
        let mut m = MatrixSpec::from_toml_str("base = \"a.toml\"\nbase_config = \"\"").unwrap();
        assert!(m.inline_base(Path::new(".")).is_err());
        let mut m = MatrixSpec::from_toml_str("").unwrap();
        assert!(m.inline_base(Path::new(".")).is_err());
        assert!(MatrixSpec::from_toml_str("bogus = 1").is_err());
    }
}
