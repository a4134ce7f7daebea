use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::lists::CODE_KEYWORDS;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    #[default]
    PatternBased,
    /// Caller supplies an [`IdentifierExtractor`] through [`extract_identifiers_with`].
    Pluggable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodePipelineConfig {
    pub identifier_extractor: ExtractorKind,
    pub split_camel: bool,
    pub split_snake: bool,
    pub keywords: BTreeSet<String>,
}

impl Default for CodePipelineConfig {
    fn default() -> Self {
        Self {
            identifier_extractor: ExtractorKind::PatternBased,
            split_camel: true,
            split_snake: true,
            keywords: CODE_KEYWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CodePipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.split_camel && !self.split_snake {
            return Err(Error::Config(
                "code pipeline needs at least one identifier splitting rule".into(),
            ));
        }
        Ok(())
    }
}

/// Finds raw identifier names in a code fragment, in source order.
///
/// An AST-backed implementation can stand in for [`PatternExtractor`].
pub trait IdentifierExtractor {
    fn identifiers<'a>(&self, code: &'a str) -> Vec<&'a str>;
}

/// Regular-expression identifier extraction for diff hunks and source files.
///
/// Diff metadata lines are dropped, then string literals are masked out and
/// identifiers in declaration, call, member-access and type positions are
/// collected. Bare names (constants, references) are picked up last.
#[derive(Debug, Default, Clone, Copy)]
pub struct PatternExtractor;

fn diff_meta_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^(?:diff --git .*|index [0-9a-f]+\.\.[0-9a-f]+.*|\+\+\+ .*|--- .*|@@ .*@@|new file mode .*|deleted file mode .*)$")
            .unwrap()
    })
}

fn string_literal_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)'"#).unwrap())
}

fn shape_res() -> &'static [Regex] {
    static RES: OnceLock<Vec<Regex>> = OnceLock::new();
    RES.get_or_init(|| {
        [
            // class / interface / enum / struct declarations and type relations
            r"\b(?:class|interface|enum|struct|trait|extends|implements|new|throws)\s+(?P<id>[A-Za-z_$][A-Za-z0-9_$]*)",
            // typed declarations: `Type name =`, `Type name(`, `Type name;`
            r"\b[A-Za-z_$][A-Za-z0-9_$]*(?:<[^<>;]*>)?(?:\[\])*\s+(?P<id>[A-Za-z_$][A-Za-z0-9_$]*)\s*[=;,():{]",
            // calls
            r"(?P<id>[A-Za-z_$][A-Za-z0-9_$]*)\s*\(",
            // member access
            r"\.\s*(?P<id>[A-Za-z_$][A-Za-z0-9_$]*)",
            // bare identifiers
            r"(?P<id>\b[A-Za-z_$][A-Za-z0-9_$]*)",
        ]
        .iter()
        .map(|p| Regex::new(p).unwrap())
        .collect()
    })
}

impl IdentifierExtractor for PatternExtractor {
    fn identifiers<'a>(&self, code: &'a str) -> Vec<&'a str> {
        // Mask metadata lines and string literals with spaces so offsets stay valid.
        let mut masked: Vec<u8> = code.as_bytes().to_vec();
        for m in diff_meta_re()
            .find_iter(code)
            .chain(string_literal_re().find_iter(code))
        {
            masked[m.range()].fill(b' ');
        }
        // Non-ASCII bytes never belong to an identifier; blanking them keeps
        // offsets aligned with `code` and the buffer valid UTF-8.
        for b in masked.iter_mut() {
            if !b.is_ascii() {
                *b = b' ';
            }
        }
        let masked = String::from_utf8(masked).expect("ascii buffer");

        let mut found: Vec<(usize, usize)> = Vec::new();
        for re in shape_res() {
            for caps in re.captures_iter(&masked) {
                let m = caps.name("id").unwrap();
                found.push((m.start(), m.end()));
            }
        }
        found.sort_unstable();
        found.dedup_by_key(|(start, _)| *start);
        found.into_iter().map(|(s, e)| &code[s..e]).collect()
    }
}

/// Splits one identifier on camelCase and snake_case boundaries and lowercases
/// the parts. Digits stay attached to the part they follow (`utf8Decoder` ->
/// `utf8`, `decoder`).
pub fn split_identifier(ident: &str, split_camel: bool, split_snake: bool) -> Vec<String> {
    let chunks: Vec<&str> = if split_snake {
        ident.split(['_', '$']).filter(|s| !s.is_empty()).collect()
    } else {
        vec![ident]
    };
    let mut out = Vec::new();
    for chunk in chunks {
        let pieces = if split_camel {
            camel_pieces(chunk)
        } else {
            vec![chunk.to_string()]
        };
        for p in pieces {
            let cleaned: String = p
                .chars()
                .filter(char::is_ascii_alphanumeric)
                .map(|c| c.to_ascii_lowercase())
                .collect();
            if !cleaned.is_empty() {
                out.push(cleaned);
            }
        }
    }
    out
}

fn camel_pieces(s: &str) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    let mut pieces = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if i > 0 && c.is_ascii_uppercase() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_ascii_lowercase());
            // aB -> a|B, 1B -> 1|B, ABc -> A|Bc
            let boundary = prev.is_ascii_lowercase()
                || prev.is_ascii_digit()
                || (prev.is_ascii_uppercase() && next_lower);
            if boundary && !cur.is_empty() {
                pieces.push(std::mem::take(&mut cur));
            }
        }
        cur.push(c);
    }
    if !cur.is_empty() {
        pieces.push(cur);
    }
    pieces
}

/// Identifier tokens of a diff hunk or source file using the default
/// pattern extractor.
pub fn extract_identifiers(code: &str, cfg: &CodePipelineConfig) -> Vec<String> {
    extract_identifiers_with(code, cfg, &PatternExtractor)
}

pub fn extract_identifiers_with(
    code: &str,
    cfg: &CodePipelineConfig,
    extractor: &dyn IdentifierExtractor,
) -> Vec<String> {
    let mut out = Vec::new();
    for ident in extractor.identifiers(code) {
        if cfg.keywords.contains(&ident.to_ascii_lowercase()) {
            continue;
        }
        out.extend(split_identifier(ident, cfg.split_camel, cfg.split_snake));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(code: &str) -> Vec<String> {
        extract_identifiers(code, &CodePipelineConfig::default())
    }

    #[test]
    fn method_declaration_drops_type_keyword() {
        assert_eq!(ids("int getUserName()"), ["get", "user", "name"]);
    }

    #[test]
    fn constant_is_snake_split() {
        assert_eq!(ids("MAX_RETRY_COUNT"), ["max", "retry", "count"]);
    }

    #[test]
    fn class_file_contents() {
        let src = "package org.apache.accumulo.core.util;\n\
                   public class UnsynchronizedBuffer {\n\
                     public static class Writer {\n\
                       byte[] data;\n\
                       public void add(boolean b) { data[offset++] = b ? (byte) 1 : 0; }\n\
                     }\n\
                   }";
        let toks = ids(src);
        assert!(toks.contains(&"unsynchronized".to_string()));
        assert!(toks.contains(&"buffer".to_string()));
        assert!(toks.contains(&"writer".to_string()));
        assert!(!toks.contains(&"public".to_string()));
    }

    #[test]
    fn diff_headers_and_strings_ignored() {
        let diff = "diff --git a/Foo.java b/Foo.java\n\
                    index 3f2a1b0..9c8d7e6 100644\n\
                    --- a/src/Foo.java\n\
                    +++ b/src/Foo.java\n\
                    @@ -10,6 +10,7 @@\n\
                    -    log.warn(\"Slow Query Detected\");\n\
                    +    queryTimer.stopWatch();\n";
        let toks = ids(diff);
        assert_eq!(toks, ["log", "warn", "query", "timer", "stop", "watch"]);
    }

    #[test]
    fn acronyms_and_digits() {
        assert_eq!(split_identifier("HTTPServerV2", true, true), ["http", "server", "v2"]);
        assert_eq!(split_identifier("utf8Decoder", true, true), ["utf8", "decoder"]);
        assert_eq!(split_identifier("my_var$x", true, true), ["my", "var", "x"]);
        assert_eq!(split_identifier("getUserName", false, true), ["getusername"]);
        assert_eq!(split_identifier("get_user", true, false), ["getuser"]);
    }

    #[test]
    fn needs_a_split_rule() {
        let cfg = CodePipelineConfig {
            split_camel: false,
            split_snake: false,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(CodePipelineConfig::default().validate().is_ok());
    }

    struct WordsOnly;
    impl IdentifierExtractor for WordsOnly {
        fn identifiers<'a>(&self, code: &'a str) -> Vec<&'a str> {
            code.split_whitespace().collect()
        }
    }

    #[test]
    fn pluggable_extractor() {
        let cfg = CodePipelineConfig::default();
        assert_eq!(
            extract_identifiers_with("fooBar int baz_qux", &cfg, &WordsOnly),
            ["foo", "bar", "baz", "qux"]
        );
    }

    proptest! {
        #[test]
        fn tokens_are_lowercase_alphanumeric(code in "\\PC{0,200}") {
            for t in ids(&code) {
                prop_assert!(!t.is_empty());
                prop_assert!(t.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()), "{t:?}");
            }
        }
    }
}
