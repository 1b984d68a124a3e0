//! Plain-text `key = value` files (`#` starts a comment).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type KeyValues = BTreeMap<String, String>;

pub fn parse(text: &str) -> Result<KeyValues> {
    let mut out = KeyValues::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("line {}", n + 1), "expected `key = value`"))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<KeyValues> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

pub fn render(kv: &KeyValues) -> String {
    let mut s = String::new();
    for (k, v) in kv {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

pub fn write(path: &Path, kv: &KeyValues) -> Result<()> {
    std::fs::write(path, render(kv)).map_err(|e| Error::io(path, e))
}

pub fn require<'a>(kv: &'a KeyValues, key: &str) -> Result<&'a str> {
    kv.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
}

pub fn parse_value<T: std::str::FromStr>(kv: &KeyValues, key: &str) -> Result<T> {
    let raw = require(kv, key)?;
    raw.parse()
        .map_err(|_| Error::Config(format!("bad value for `{key}`: `{raw}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_spacing() {
        let kv = parse("# region\nname = barents\n rows=32 # knots\n\n").unwrap();
        assert_eq!(kv["name"], "barents");
        assert_eq!(parse_value::<usize>(&kv, "rows").unwrap(), 32);
        assert!(parse("novalue").is_err());
        assert!(parse_value::<usize>(&kv, "cols").is_err());
    }
}
