use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::CodecError;

/// Ordered metric names of a stream. Fixed for the lifetime of the stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricHeader {
    names: Vec<String>,
}

impl MetricHeader {
    pub fn new<I, S>(names: I) -> Result<Self, CodecError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut seen = std::collections::HashSet::with_capacity(names.len());
        for name in &names {
            if name.is_empty() {
                return Err(CodecError::Header("empty metric name".into()));
            }
            if name.len() > u16::MAX as usize {
                return Err(CodecError::Header(format!("metric name longer than {} bytes", u16::MAX)));
            }
            if !seen.insert(name.as_str()) {
                return Err(CodecError::Header(format!("duplicate metric name {name:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Sorted string tags carried by every sample. Keys and values may not contain
/// `,` or `=` since the wire form is `k1=v1,k2=v2`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tags(BTreeMap<String, String>);

impl Tags {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) -> Result<(), String> {
        let (key, value) = (key.into(), value.into());
        check_tag_part(&key, "key")?;
        check_tag_part(&value, "value")?;
        if key.is_empty() {
            return Err("empty tag key".into());
        }
        self.0.insert(key, value);
        Ok(())
    }

    pub fn with(mut self, key: &str, value: &str) -> Self {
        self.insert(key, value).expect("valid tag");
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parses the `k1=v1,k2=v2` wire form. The empty string is the empty set.
    pub fn parse(s: &str) -> Result<Self, String> {
        let mut tags = Tags::new();
        if s.is_empty() {
            return Ok(tags);
        }
        for pair in s.split(',') {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| format!("tag {pair:?} is not key=value"))?;
            if tags.0.contains_key(k) {
                return Err(format!("duplicate tag key {k:?}"));
            }
            tags.insert(k, v)?;
        }
        Ok(tags)
    }
}

fn check_tag_part(s: &str, what: &str) -> Result<(), String> {
    if s.contains([',', '=']) {
        return Err(format!("tag {what} {s:?} contains ',' or '='"));
    }
    Ok(())
}

impl fmt::Display for Tags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Tags {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tags::parse(s)
    }
}

/// Identity of a monitored component, derived from a sample's tags.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentId(pub String);

impl ComponentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ComponentId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// One timestamped metric vector.
///
/// Equality is bit-exact on the float payload: `NaN == NaN` when the bit
/// patterns agree, and `0.0 != -0.0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp: u64,
    pub tags: Tags,
    pub values: Vec<f64>,
}

impl Sample {
    pub fn new(timestamp: u64, tags: Tags, values: Vec<f64>) -> Self {
        Self { timestamp, tags, values }
    }

    /// `host` tag when present, otherwise the canonical tag string, otherwise `"default"`.
    pub fn component(&self) -> ComponentId {
        if let Some(host) = self.tags.get("host") {
            return ComponentId::new(host);
        }
        if self.tags.is_empty() {
            ComponentId::new("default")
        } else {
            ComponentId::new(self.tags.to_string())
        }
    }
}

impl PartialEq for Sample {
    fn eq(&self, other: &Self) -> bool {
        self.timestamp == other.timestamp
            && self.tags == other.tags
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
