//! ISO 639-1 language codes and the fixed language registry.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Languages known to the artifact: code and English name.
///
/// Covers every language evaluated across MKQA, MLQA and XOR TyDi QA plus the
/// Wikipedia dump languages, so corpora and query sets from any of those tasks
/// can be tagged without extending the table.
pub const REGISTRY: &[(&str, &str)] = &[
    ("ar", "Arabic"),
    ("bn", "Bengali"),
    ("de", "German"),
    ("en", "English"),
    ("es", "Spanish"),
    ("fi", "Finnish"),
    ("fr", "French"),
    ("hi", "Hindi"),
    ("it", "Italian"),
    ("ja", "Japanese"),
    ("ko", "Korean"),
    ("pt", "Portuguese"),
    ("ru", "Russian"),
    ("te", "Telugu"),
    ("th", "Thai"),
    ("vi", "Vietnamese"),
    ("zh", "Chinese"),
];

/// A registered two-letter ISO 639-1 language code.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Lang([u8; 2]);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown language code `{0}`")]
pub struct UnknownLang(pub String);

impl Lang {
    pub const EN: Lang = Lang(*b"en");

    pub fn as_str(&self) -> &str {
        // registry codes are ASCII
        std::str::from_utf8(&self.0).expect("ascii language code")
    }

    /// English display name, e.g. `German` for `de`.
    pub fn name(&self) -> &'static str {
        REGISTRY
            .iter()
            .find(|(code, _)| *code == self.as_str())
            .map(|(_, name)| *name)
            .expect("registered language")
    }

    pub fn all() -> impl Iterator<Item = Lang> {
        REGISTRY.iter().map(|(code, _)| Lang([code.as_bytes()[0], code.as_bytes()[1]]))
    }
}

impl FromStr for Lang {
    type Err = UnknownLang;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let code = s.trim().to_ascii_lowercase();
        REGISTRY
            .iter()
            .find(|(c, _)| *c == code)
            .map(|(c, _)| Lang([c.as_bytes()[0], c.as_bytes()[1]]))
            .ok_or_else(|| UnknownLang(s.to_string()))
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Lang({})", self.as_str())
    }
}

impl Serialize for Lang {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Lang {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma-separated list such as `en,de,ko`.
pub fn parse_lang_set(list: &str) -> Result<BTreeSet<Lang>, UnknownLang> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

pub fn format_lang_set(langs: &BTreeSet<Lang>) -> String {
    langs.iter().map(Lang::as_str).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_registered_codes() {
        let de: Lang = "DE".parse().unwrap();
        assert_eq!(de.as_str(), "de");
        assert_eq!(de.name(), "German");
        assert!("xx".parse::<Lang>().is_err());
        assert!("deu".parse::<Lang>().is_err());
    }

    #[test]
    fn serde_uses_plain_code() {
        let json = serde_json::to_string(&Lang::EN).unwrap();
        assert_eq!(json, "\"en\"");
        let back: Lang = serde_json::from_str("\"ko\"").unwrap();
        assert_eq!(back.as_str(), "ko");
        assert!(serde_json::from_str::<Lang>("\"zz\"").is_err());
    }

    #[test]
    fn lang_set_round_trip() {
        let set = parse_lang_set("ko, en,de").unwrap();
        assert_eq!(format_lang_set(&set), "de,en,ko");
    }
}
