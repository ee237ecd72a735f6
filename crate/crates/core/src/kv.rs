//! Flat `key = value` documents used for configs and reports.
//!
//! The syntax is TOML restricted to dotted keys at top level, one entry per
//! line, for example `interaction.alpha = [1.0, 0.5, 0.2]`. Entry order is
//! preserved; nested tables in the input are flattened to dotted keys.

use std::fmt;

use toml::Table;
pub use toml::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, Value)>,
}

fn flatten(prefix: &str, table: Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other)),
        }
    }
}

fn valid_key_segment(seg: &str) -> bool {
    !seg.is_empty() && seg.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            let msg = e.message().replace('\n', " ");
            match line {
                Some(l) => Error::InvalidConfig(format!("line {l}: {msg}")),
                None => Error::InvalidConfig(msg),
            }
        })?;
        let mut entries = Vec::new();
        flatten("", table, &mut entries);
        if let Some((k, _)) = entries.iter().find(|(k, _)| !k.split('.').all(valid_key_segment)) {
            return Err(Error::InvalidConfig(format!("invalid key `{k}`")));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, Value)] {
        &self.entries
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    /// Inserts or replaces, keeping the original position of an existing key.
    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        debug_assert!(key.split('.').all(valid_key_segment), "invalid key {key}");
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn remove(&mut self, key: &str) -> Option<Value> {
        let pos = self.entries.iter().position(|(k, _)| k == key)?;
        Some(self.entries.remove(pos).1)
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn get_str(&self, key: &str) -> Result<Option<&str>> {
        self.get(key)
            .map(|v| v.as_str().ok_or_else(|| field_error(key, format!("expected a string, found {}", v.type_str()))))
            .transpose()
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| real(key, v)).transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key).map(|v| natural(key, v)).transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| {
                v.as_bool()
                    .ok_or_else(|| field_error(key, format!("expected true or false, found {}", v.type_str())))
            })
            .transpose()
    }

    /// Array of reals, exactly `len` long when `len` is given.
    pub fn get_reals(&self, key: &str, len: Option<usize>) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let values = array(key, v)?.iter().map(|x| real(key, x)).collect::<Result<Vec<_>>>()?;
        if let Some(n) = len {
            if values.len() != n {
                return Err(field_error(key, format!("expected {n} numbers, found {}", values.len())));
            }
        }
        Ok(Some(values))
    }

    pub fn get_naturals(&self, key: &str) -> Result<Option<Vec<u64>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        Ok(Some(array(key, v)?.iter().map(|x| natural(key, x)).collect::<Result<Vec<_>>>()?))
    }

    /// Array of rows, each an array of `width` reals.
    pub fn get_rows(&self, key: &str, width: usize) -> Result<Option<Vec<Vec<f64>>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let rows = array(key, v)?
            .iter()
            .map(|row| {
                let row = array(key, row)?.iter().map(|x| real(key, x)).collect::<Result<Vec<_>>>()?;
                if row.len() != width {
                    return Err(field_error(key, format!("each row needs {width} numbers, found {}", row.len())));
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(rows))
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub(crate) fn field_error(key: &str, msg: impl fmt::Display) -> Error {
    Error::InvalidConfig(format!("{key}: {msg}"))
}

fn array<'a>(key: &str, v: &'a Value) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| field_error(key, format!("expected an array, found {}", v.type_str())))
}

fn real(key: &str, v: &Value) -> Result<f64> {
    let x = match v {
        Value::Float(x) => *x,
        Value::Integer(i) => *i as f64,
        other => return Err(field_error(key, format!("expected a number, found {}", other.type_str()))),
    };
    if !x.is_finite() {
        return Err(field_error(key, format!("`{x}` is not finite")));
    }
    Ok(x)
}

fn natural(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        other => Err(field_error(key, format!("expected a nonnegative integer, found `{other}`"))),
    }
}

/// Array value of reals.
pub fn reals<'a>(values: impl IntoIterator<Item = &'a f64>) -> Value {
    Value::Array(values.into_iter().map(|&x| Value::Float(x)).collect())
}

/// Array value of nonnegative integers.
pub fn naturals(values: impl IntoIterator<Item = u64>) -> Value {
    Value::Array(values.into_iter().map(|x| Value::Integer(x as i64)).collect())
}

/// Array of arrays of reals.
pub fn rows(values: &[Vec<f64>]) -> Value {
    Value::Array(values.iter().map(reals).collect())
}

pub fn natural_value(x: u64) -> Value {
    Value::Integer(x as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render_round_trip() {
        let text = "# header\nrun.n_steps = 100\n\nmemory.bloch = [0, 0, 1]   # pure\npreset=\"identity\"\n[thresholds]\ns_min = 0.01\n";
        let kv = KeyValues::parse(text).unwrap();
        assert_eq!(kv.get_str("preset").unwrap(), Some("identity"));
        assert_eq!(kv.get_u64("run.n_steps").unwrap(), Some(100));
        assert_eq!(kv.get_f64("thresholds.s_min").unwrap(), Some(0.01));
        assert_eq!(kv.get_reals("memory.bloch", Some(3)).unwrap(), Some(vec![0.0, 0.0, 1.0]));
        assert_eq!(kv.keys().collect::<Vec<_>>(), ["run.n_steps", "memory.bloch", "preset", "thresholds.s_min"]);
        assert_eq!(KeyValues::parse(&kv.render()).unwrap(), kv);
    }

    #[test]
    fn floats_round_trip_exactly() {
        let mut kv = KeyValues::new();
        let xs = [0.1, -1.0, 1e-20, std::f64::consts::PI, -0.0, 123456789.125];
        kv.set("x", reals(&xs));
        kv.set("r", rows(&[xs.to_vec(), xs.to_vec()]));
        let parsed = KeyValues::parse(&kv.render()).unwrap();
        assert_eq!(parsed.get_rows("r", 6).unwrap().unwrap().len(), 2);
        let back = parsed.get_reals("x", Some(6)).unwrap().unwrap();
        for (a, b) in xs.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn parse_errors_are_single_line_and_name_the_line_or_field() {
        let e = KeyValues::parse("a = 1\na = 2").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        assert!(!e.contains('\n'));
        assert!(KeyValues::parse("no equals sign").is_err());

        let kv = KeyValues::parse("x = [1, 2]\ny = nan\nz = \"yes\"\nr = [[1, 2, 3], [4, 5]]\nn = -3").unwrap();
        let e = kv.get_reals("x", Some(3)).unwrap_err().to_string();
        assert!(e.starts_with("invalid experiment config: x:"), "{e}");
        assert!(kv.get_f64("y").is_err());
        assert!(kv.get_bool("z").is_err());
        assert!(kv.get_rows("r", 3).is_err());
        assert!(kv.get_u64("n").is_err());
        assert!(kv.get_str("x").is_err());
        assert_eq!(kv.get_f64("missing").unwrap(), None);
    }

    #[test]
    fn set_keeps_position() {
        let mut kv = KeyValues::parse("a = 1\nb = 2").unwrap();
        kv.set("a", 3);
        kv.set("c", "x y");
        assert_eq!(kv.render(), "a = 3\nb = 2\nc = \"x y\"\n");
        assert!(kv.remove("b").is_some());
        assert_eq!(
            kv.get_naturals("a").unwrap_err().to_string(),
            "invalid experiment config: a: expected an array, found integer"
        );
    }
}
