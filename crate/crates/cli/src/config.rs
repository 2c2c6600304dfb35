//! Layered configuration: code defaults, then the config file, then
//! `--set key=value` overrides.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::CliError;

/// Flattens `value` into `(dotted key, rendered value)` pairs. Arrays are
/// kept whole.
pub fn flatten(value: &Value) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Table(t) => {
                for (k, child) in t {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    walk("", value, &mut out);
    out
}

pub fn defaults_value<T: Serialize + Default>() -> Value {
    Value::try_from(T::default()).expect("defaults serialize to TOML")
}

/// Help text listing every key with its default. `optional` keys have no
/// default and are shown as unset.
pub fn key_listing<T: Serialize + Default>(optional: &[&str]) -> String {
    let mut rows = flatten(&defaults_value::<T>());
    for k in optional {
        if !rows.iter().any(|(key, _)| key == k) {
            rows.push((k.to_string(), "(unset)".to_string()));
        }
    }
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (default):\n");
    for (k, v) in rows {
        out.push_str(&format!("  {k:<width$}  {v}\n"));
    }
    out
}

/// Sibling keys of which at most one may be set; choosing one drops the
/// others (a model comes from a preset, an inline spec or a file).
const EXCLUSIVE: [&str; 3] = ["preset", "spec", "file"];

fn drop_exclusive_siblings(table: &mut Table, chosen: &str) {
    if EXCLUSIVE.contains(&chosen) {
        table.retain(|k, _| k == chosen || !EXCLUSIVE.iter().any(|e| *e == k));
    }
}

/// Tagged tables whose `kind` changes are replaced, not merged, so fields of
/// the previous variant do not leak into the new one.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) if o.contains_key("kind") && b.get("kind") != o.get("kind") => {
            *b = o;
        }
        (Value::Table(b), Value::Table(o)) => {
            if let Some(chosen) = o.keys().find(|k| EXCLUSIVE.contains(&k.as_str())) {
                drop_exclusive_siblings(b, &chosen.clone());
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Parses the right-hand side of `--set` as a TOML value, falling back to
/// a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn lookup<'a>(v: &'a Value, key: &str) -> Option<&'a Value> {
    key.split('.').try_fold(v, |cur, part| cur.as_table()?.get(part))
}

fn assign(root: &mut Value, key: &str, value: Value) {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let table = cur.as_table_mut().expect("parents are tables");
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        if !cur.is_table() {
            *cur = Value::Table(Table::new());
        }
    }
    let table = cur.as_table_mut().expect("parent is a table");
    let last = parts[parts.len() - 1];
    if last == "kind" && table.get("kind") != Some(&value) {
        table.clear();
    }
    drop_exclusive_siblings(table, last);
    table.insert(last.to_string(), value);
}

/// Builds a `T` from defaults, the optional config file and overrides.
/// Every unknown override key is reported, not just the first.
pub fn load<T: Serialize + DeserializeOwned + Default>(
    file: Option<&Path>,
    sets: &[String],
    optional: &[&str],
) -> Result<T, CliError> {
    let mut value = defaults_value::<T>();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(vec![format!("{}: {e}", path.display())]))?;
        let table: Table = text
            .parse()
            .map_err(|e| CliError::Validation(vec![format!("{}: {e}", path.display())]))?;
        merge(&mut value, Value::Table(table));
    }
    let mut errs = Vec::new();
    for set in sets {
        let Some((key, raw)) = set.split_once('=') else {
            errs.push(format!("override {set:?} is not key=value"));
            continue;
        };
        let key = key.trim();
        let known = lookup(&value, key).is_some()
            || lookup(&defaults_value::<T>(), key).is_some()
            || optional.contains(&key);
        if !known {
            errs.push(format!("override key {key:?} is not a config key"));
            continue;
        }
        assign(&mut value, key, parse_value(raw.trim()));
    }
    if !errs.is_empty() {
        return Err(CliError::Validation(errs));
    }
    value
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Validation(vec![e.message().to_string()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Inner {
        rate: f64,
        tags: Vec<String>,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Outer {
        name: String,
        count: usize,
        inner: Inner,
        extra: Option<u32>,
    }

    impl Default for Inner {
        fn default() -> Self {
            Self { rate: 0.5, tags: vec!["a".into()] }
        }
    }

    impl Default for Outer {
        fn default() -> Self {
            Self { name: "x".into(), count: 3, inner: Inner::default(), extra: None }
        }
    }

    #[test]
    fn overrides_apply_with_type_inference() {
        let sets = vec!["count=7".into(), "inner.rate=0.25".into(), "name=hello".into(), "extra=4".into()];
        let v: Outer = load(None, &sets, &["extra"]).unwrap();
        assert_eq!(v.count, 7);
        assert_eq!(v.inner.rate, 0.25);
        assert_eq!(v.name, "hello");
        assert_eq!(v.extra, Some(4));
    }

    #[test]
    fn every_unknown_key_is_reported() {
        let sets = vec!["nope=1".into(), "inner.missing=2".into(), "count".into()];
        match load::<Outer>(None, &sets, &[]) {
            Err(CliError::Validation(v)) => assert_eq!(v.len(), 3, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_values_merge_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "count = 9\n[inner]\ntags = [\"b\", \"c\"]\n").unwrap();
        let v: Outer = load(Some(&path), &[], &[]).unwrap();
        assert_eq!(v.count, 9);
        assert_eq!(v.inner.rate, 0.5);
        assert_eq!(v.inner.tags, ["b", "c"]);
    }

    #[test]
    fn changing_a_tag_drops_the_old_variant() {
        let mut v: Value = "[s]\nkind = \"a\"\nx = 1\n".parse::<Table>().unwrap().into();
        merge(&mut v, "[s]\nkind = \"b\"\ny = 2\n".parse::<Table>().unwrap().into());
        assert_eq!(v["s"].as_table().unwrap().len(), 2);
        assert_eq!(v["s"]["y"].as_integer(), Some(2));
        assign(&mut v, "s.kind", Value::String("c".into()));
        assert_eq!(v["s"].as_table().unwrap().len(), 1);
        assign(&mut v, "s.z", Value::Integer(3));
        assign(&mut v, "s.kind", Value::String("c".into()));
        assert_eq!(v["s"].as_table().unwrap().len(), 2);
    }

    #[test]
    fn model_sources_are_exclusive() {
        let mut v: Value = "[m]\nname = \"a\"\npreset = \"p\"\n".parse::<Table>().unwrap().into();
        merge(&mut v, "[m]\nfile = \"f.toml\"\n".parse::<Table>().unwrap().into());
        assert!(v["m"].get("preset").is_none());
        assert_eq!(v["m"]["name"].as_str(), Some("a"));
        assign(&mut v, "m.preset", Value::String("q".into()));
        assert!(v["m"].get("file").is_none());
    }

    #[test]
    fn listing_shows_defaults_from_code() {
        let text = key_listing::<Outer>(&["extra"]);
        assert!(text.contains("count"));
        assert!(text.contains("inner.rate  0.5"));
        assert!(text.contains("inner.tags  [\"a\"]"));
        assert!(text.contains("extra       (unset)"));
    }
}
