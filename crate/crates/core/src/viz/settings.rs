//! Typed, self-describing visualizer settings.
//!
//! A [`SettingsSchema`] is what a UI renders a form from; [`validate_settings`]
//! turns loosely typed JSON values into normalized [`Settings`].

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingType {
    Int,
    Float,
    Enum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SettingValue {
    Int(i64),
    Float(f64),
    Enum(String),
}

impl SettingValue {
    fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("setting values serialize")
    }
}

impl fmt::Display for SettingValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SettingValue::Int(v) => write!(f, "{v}"),
            SettingValue::Float(v) => write!(f, "{v}"),
            SettingValue::Enum(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSpec {
    pub key: String,
    #[serde(rename = "type")]
    pub kind: SettingType,
    pub default: SettingValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<SettingValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<SettingValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<String>>,
    pub label: String,
}

impl SettingSpec {
    pub fn int(key: &str, label: &str, default: i64, min: Option<i64>, max: Option<i64>) -> Self {
        SettingSpec {
            key: key.into(),
            kind: SettingType::Int,
            default: SettingValue::Int(default),
            min: min.map(SettingValue::Int),
            max: max.map(SettingValue::Int),
            values: None,
            label: label.into(),
        }
    }

    pub fn float(key: &str, label: &str, default: f64, min: Option<f64>, max: Option<f64>) -> Self {
        SettingSpec {
            key: key.into(),
            kind: SettingType::Float,
            default: SettingValue::Float(default),
            min: min.map(SettingValue::Float),
            max: max.map(SettingValue::Float),
            values: None,
            label: label.into(),
        }
    }

    pub fn choice(key: &str, label: &str, default: &str, values: &[&str]) -> Self {
        SettingSpec {
            key: key.into(),
            kind: SettingType::Enum,
            default: SettingValue::Enum(default.into()),
            min: None,
            max: None,
            values: Some(values.iter().map(|v| v.to_string()).collect()),
            label: label.into(),
        }
    }

    fn bound(v: &Option<SettingValue>) -> Option<f64> {
        match v {
            Some(SettingValue::Int(i)) => Some(*i as f64),
            Some(SettingValue::Float(f)) => Some(*f),
            _ => None,
        }
    }

    fn check_range(&self, v: f64) -> Result<()> {
        if let Some(min) = Self::bound(&self.min) {
            if v < min {
                return Err(Error::setting(
                    &self.key,
                    format!("must be ≥ {} (got {v})", self.min.as_ref().unwrap()),
                ));
            }
        }
        if let Some(max) = Self::bound(&self.max) {
            if v > max {
                return Err(Error::setting(
                    &self.key,
                    format!("must be ≤ {} (got {v})", self.max.as_ref().unwrap()),
                ));
            }
        }
        Ok(())
    }

    /// Type-checks and range-checks one JSON value.
    pub fn normalize(&self, value: &Value) -> Result<SettingValue> {
        match self.kind {
            SettingType::Int => {
                let v = value
                    .as_i64()
                    .or_else(|| value.as_f64().filter(|f| f.fract() == 0.0 && f.abs() < 9e15).map(|f| f as i64))
                    .ok_or_else(|| Error::setting(&self.key, format!("must be an integer (got {value})")))?;
                self.check_range(v as f64)?;
                Ok(SettingValue::Int(v))
            }
            SettingType::Float => {
                let v = value
                    .as_f64()
                    .filter(|f| f.is_finite())
                    .ok_or_else(|| Error::setting(&self.key, format!("must be a finite number (got {value})")))?;
                self.check_range(v)?;
                Ok(SettingValue::Float(v))
            }
            SettingType::Enum => {
                let allowed = self.values.as_deref().unwrap_or_default();
                match value.as_str() {
                    Some(s) if allowed.iter().any(|a| a == s) => Ok(SettingValue::Enum(s.to_string())),
                    _ => Err(Error::setting(
                        &self.key,
                        format!("must be one of [{}] (got {value})", allowed.join(", ")),
                    )),
                }
            }
        }
    }

    /// Interprets command-line text as a value of this setting's type.
    pub fn value_from_text(&self, text: &str) -> Value {
        match self.kind {
            SettingType::Enum => Value::String(text.to_string()),
            SettingType::Int | SettingType::Float => {
                serde_json::from_str::<Value>(text.trim()).unwrap_or_else(|_| Value::String(text.to_string()))
            }
        }
    }
}

/// Ordered list of settings with unique keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SettingsSchema {
    settings: Vec<SettingSpec>,
}

impl SettingsSchema {
    pub fn new(settings: Vec<SettingSpec>) -> Result<Self> {
        for (i, s) in settings.iter().enumerate() {
            if settings[..i].iter().any(|o| o.key == s.key) {
                return Err(Error::Validation(format!("duplicate setting key \"{}\"", s.key)));
            }
            s.normalize(&s.default.to_json()).map_err(|e| {
                Error::Validation(format!("default for \"{}\" violates its own constraint: {e}", s.key))
            })?;
        }
        Ok(SettingsSchema { settings })
    }

    pub fn empty() -> Self {
        SettingsSchema { settings: Vec::new() }
    }

    pub fn settings(&self) -> &[SettingSpec] {
        &self.settings
    }

    pub fn get(&self, key: &str) -> Option<&SettingSpec> {
        self.settings.iter().find(|s| s.key == key)
    }

    pub fn defaults(&self) -> Settings {
        Settings {
            values: self.settings.iter().map(|s| (s.key.clone(), s.default.clone())).collect(),
        }
    }

    /// Parses `key=value` strings into a JSON map typed per this schema.
    pub fn parse_assignments<S: AsRef<str>>(&self, assignments: &[S]) -> Result<Map<String, Value>> {
        let mut map = Map::new();
        for a in assignments {
            let a = a.as_ref();
            let (key, text) = a
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("expected key=value, got {a:?}")))?;
            let key = key.trim();
            let value = match self.get(key) {
                Some(spec) => spec.value_from_text(text),
                None => Value::String(text.to_string()),
            };
            map.insert(key.to_string(), value);
        }
        Ok(map)
    }
}

/// Settings after validation, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Settings {
    values: IndexMap<String, SettingValue>,
}

impl Settings {
    pub fn get(&self, key: &str) -> Option<&SettingValue> {
        self.values.get(key)
    }

    pub fn int(&self, key: &str) -> Result<i64> {
        match self.values.get(key) {
            Some(SettingValue::Int(v)) => Ok(*v),
            _ => Err(Error::setting(key, "missing integer setting")),
        }
    }

    pub fn float(&self, key: &str) -> Result<f64> {
        match self.values.get(key) {
            Some(SettingValue::Float(v)) => Ok(*v),
            Some(SettingValue::Int(v)) => Ok(*v as f64),
            _ => Err(Error::setting(key, "missing numeric setting")),
        }
    }

    pub fn choice(&self, key: &str) -> Result<&str> {
        match self.values.get(key) {
            Some(SettingValue::Enum(v)) => Ok(v),
            _ => Err(Error::setting(key, "missing enum setting")),
        }
    }

    pub fn set(&mut self, key: &str, value: SettingValue) {
        self.values.insert(key.to_string(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SettingValue)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// JSON object form, suitable for feeding back into [`validate_settings`].
    pub fn to_json(&self) -> Map<String, Value> {
        self.values.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()
    }
}

/// Fills defaults, enforces constraints and rejects unknown keys.
pub fn validate_settings(schema: &SettingsSchema, values: &Map<String, Value>) -> Result<Settings> {
    if let Some(unknown) = values.keys().find(|k| schema.get(k).is_none()) {
        let known: Vec<&str> = schema.settings.iter().map(|s| s.key.as_str()).collect();
        return Err(Error::setting(
            unknown.as_str(),
            format!("unknown setting (allowed: [{}])", known.join(", ")),
        ));
    }
    let mut out = IndexMap::with_capacity(schema.settings.len());
    for spec in &schema.settings {
        let v = match values.get(&spec.key) {
            Some(Value::Null) | None => spec.default.clone(),
            Some(v) => spec.normalize(v)?,
        };
        out.insert(spec.key.clone(), v);
    }
    Ok(Settings { values: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn schema() -> SettingsSchema {
        SettingsSchema::new(vec![
            SettingSpec::int("window", "Window", 7, Some(1), Some(28)),
            SettingSpec::float("fill", "Fill", 0.5, None, None),
            SettingSpec::choice("score_source", "Score", "logit", &["logit", "probability"]),
        ])
        .unwrap()
    }

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn empty_input_gives_defaults() {
        let s = validate_settings(&schema(), &Map::new()).unwrap();
        assert_eq!(s, schema().defaults());
        assert_eq!(s.int("window").unwrap(), 7);
    }

    #[test]
    fn zero_window_names_key_and_bound() {
        let err = validate_settings(&schema(), &obj(json!({"window": 0}))).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(&err, Error::Setting { key, .. } if key == "window"), "{msg}");
        assert!(msg.contains("≥ 1"), "{msg}");
    }

    #[test]
    fn enum_outside_list_lists_allowed() {
        let err = validate_settings(&schema(), &obj(json!({"score_source": "softmax"}))).unwrap_err();
        assert!(err.to_string().contains("[logit, probability]"), "{err}");
    }

    #[test]
    fn wrong_types() {
        assert!(validate_settings(&schema(), &obj(json!({"window": 2.5}))).is_err());
        assert!(validate_settings(&schema(), &obj(json!({"window": "3"}))).is_err());
        assert!(validate_settings(&schema(), &obj(json!({"fill": "x"}))).is_err());
        assert_eq!(
            validate_settings(&schema(), &obj(json!({"window": 3.0}))).unwrap().int("window").unwrap(),
            3
        );
    }

    #[test]
    fn unknown_key_rejected() {
        let err = validate_settings(&schema(), &obj(json!({"colour": 1}))).unwrap_err();
        assert!(matches!(&err, Error::Setting { key, .. } if key == "colour"));
    }

    #[test]
    fn defaults_round_trip() {
        let d = schema().defaults();
        assert_eq!(validate_settings(&schema(), &d.to_json()).unwrap(), d);
    }

    #[test]
    fn bad_default_rejected() {
        assert!(SettingsSchema::new(vec![SettingSpec::int("w", "W", 0, Some(1), None)]).is_err());
        assert!(SettingsSchema::new(vec![
            SettingSpec::int("w", "W", 1, None, None),
            SettingSpec::int("w", "W", 1, None, None),
        ])
        .is_err());
    }

    #[test]
    fn serialized_keys() {
        let v = serde_json::to_value(schema()).unwrap();
        assert_eq!(
            v[0],
            json!({"key": "window", "type": "int", "default": 7, "min": 1, "max": 28, "label": "Window"})
        );
        assert_eq!(v[2]["values"], json!(["logit", "probability"]));
    }

    #[test]
    fn cli_assignments() {
        let m = schema().parse_assignments(&["window=5", "score_source=probability", "fill=0.25"]).unwrap();
        let s = validate_settings(&schema(), &m).unwrap();
        assert_eq!(s.int("window").unwrap(), 5);
        assert_eq!(s.choice("score_source").unwrap(), "probability");
        assert_eq!(s.float("fill").unwrap(), 0.25);
    }
}
