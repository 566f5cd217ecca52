//! Prompt template grammar.
//!
//! A template is literal text with `{placeholder}` substitutions. `{{` and
//! `}}` produce literal braces. The blend group `[A | B | C]` and the
//! `<label>-facing pose` phrase are rendered here as well, together with the
//! matching extractors, so every consumer of generated prompts reads them
//! back with one grammar.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("unbalanced brace at byte offset {offset}")]
    UnbalancedBrace { offset: usize },
    #[error("unknown placeholder `{{{name}}}` at byte offset {offset}")]
    UnknownPlaceholder { name: String, offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placeholder {
    NameBlend,
    Age,
    Race,
    Gender,
    PosePhrase,
    Background,
    Hairstyle,
    Expression,
}

impl Placeholder {
    pub const ALL: [Placeholder; 8] = [
        Placeholder::NameBlend,
        Placeholder::Age,
        Placeholder::Race,
        Placeholder::Gender,
        Placeholder::PosePhrase,
        Placeholder::Background,
        Placeholder::Hairstyle,
        Placeholder::Expression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeholder::NameBlend => "name_blend",
            Placeholder::Age => "age",
            Placeholder::Race => "race",
            Placeholder::Gender => "gender",
            Placeholder::PosePhrase => "pose_phrase",
            Placeholder::Background => "background",
            Placeholder::Hairstyle => "hairstyle",
            Placeholder::Expression => "expression",
        }
    }
}

impl FromStr for Placeholder {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Placeholder::ALL.into_iter().find(|p| p.name() == s).ok_or(())
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    Placeholder(Placeholder),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        parse_template(text)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn placeholders(&self) -> impl Iterator<Item = Placeholder> + '_ {
        self.segments.iter().filter_map(|s| match s {
            Segment::Placeholder(p) => Some(*p),
            Segment::Literal(_) => None,
        })
    }

    /// Substitutes every placeholder; `resolve` returns `None` for values
    /// that are unavailable, which aborts rendering with that placeholder.
    pub fn render<F>(&self, mut resolve: F) -> Result<String, Placeholder>
    where
        F: FnMut(Placeholder) -> Option<String>,
    {
        let mut out = String::new();
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Placeholder(p) => out.push_str(&resolve(*p).ok_or(*p)?),
            }
        }
        Ok(out)
    }
}

pub fn parse_template(text: &str) -> Result<PromptTemplate, TemplateError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                literal.push('{');
                i += 2;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                literal.push('}');
                i += 2;
            }
            b'{' => {
                let close = text[i + 1..]
                    .find(['{', '}'])
                    .map(|p| p + i + 1)
                    .filter(|&p| bytes[p] == b'}')
                    .ok_or(TemplateError::UnbalancedBrace { offset: i })?;
                let name = &text[i + 1..close];
                let placeholder = name.parse::<Placeholder>().map_err(|_| TemplateError::UnknownPlaceholder {
                    name: name.to_string(),
                    offset: i,
                })?;
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Placeholder(placeholder));
                i = close + 1;
            }
            b'}' => return Err(TemplateError::UnbalancedBrace { offset: i }),
            _ => {
                // Copy the whole UTF-8 scalar.
                let ch = text[i..].chars().next().expect("in-bounds char");
                literal.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(PromptTemplate { segments })
}

/// `[A | B | C]`
pub fn format_blend_group<S: AsRef<str>>(names: &[S]) -> String {
    let joined: Vec<&str> = names.iter().map(AsRef::as_ref).collect();
    format!("[{}]", joined.join(" | "))
}

/// Members of the first bracketed group in `text` that holds at least two
/// non-empty `|`-separated names, trimmed.
pub fn extract_blend_group(text: &str) -> Option<Vec<String>> {
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let close = after.find(']')?;
        let inner = &after[..close];
        if !inner.contains('[') {
            let members: Vec<String> = inner.split('|').map(|m| m.trim().to_string()).collect();
            if members.len() >= 2 && members.iter().all(|m| !m.is_empty()) {
                return Some(members);
            }
        }
        rest = after;
    }
    None
}

const POSE_SUFFIX: &str = "-facing";

/// `left` → `left-facing pose`.
pub fn pose_phrase(pose: &str) -> String {
    format!("{pose}{POSE_SUFFIX} pose")
}

/// The label in front of the first `-facing` token, if any.
pub fn extract_pose_token(text: &str) -> Option<String> {
    let mut search = 0;
    while let Some(found) = text[search..].find(POSE_SUFFIX) {
        let end = search + found;
        let start = text[..end]
            .char_indices()
            .rev()
            .take_while(|(_, c)| is_pose_char(*c))
            .last()
            .map(|(i, _)| i);
        if let Some(start) = start {
            return Some(text[start..end].to_string());
        }
        search = end + POSE_SUFFIX.len();
    }
    None
}

pub fn is_pose_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_literals_and_placeholders() {
        let t = parse_template("a {race} person").unwrap();
        assert_eq!(
            t.segments(),
            &[
                Segment::Literal("a ".into()),
                Segment::Placeholder(Placeholder::Race),
                Segment::Literal(" person".into()),
            ]
        );
    }

    #[test]
    fn double_braces_escape() {
        let t = parse_template("{{literal}}").unwrap();
        assert_eq!(t.segments(), &[Segment::Literal("{literal}".into())]);
        let t = parse_template("{{{age}}}").unwrap();
        assert_eq!(
            t.segments(),
            &[
                Segment::Literal("{".into()),
                Segment::Placeholder(Placeholder::Age),
                Segment::Literal("}".into()),
            ]
        );
    }

    #[test]
    fn unbalanced_braces_report_offsets() {
        assert_eq!(
            parse_template("a {bad").unwrap_err(),
            TemplateError::UnbalancedBrace { offset: 2 }
        );
        assert_eq!(
            parse_template("x } y").unwrap_err(),
            TemplateError::UnbalancedBrace { offset: 2 }
        );
        assert_eq!(
            parse_template("{a {race}").unwrap_err(),
            TemplateError::UnbalancedBrace { offset: 0 }
        );
    }

    #[test]
    fn unknown_placeholder_is_rejected() {
        assert_eq!(
            parse_template("hi {typo}").unwrap_err(),
            TemplateError::UnknownPlaceholder {
                name: "typo".into(),
                offset: 3
            }
        );
        assert!(matches!(
            parse_template("{}").unwrap_err(),
            TemplateError::UnknownPlaceholder { .. }
        ));
    }

    #[test]
    fn template_without_placeholders_renders_verbatim() {
        let text = "studio portrait, 85mm, ünïcode";
        let t = parse_template(text).unwrap();
        assert_eq!(t.render(|_| None).unwrap(), text);
    }

    #[test]
    fn blend_group_extraction_skips_non_groups() {
        assert_eq!(
            extract_blend_group("photo [x] of [Amara | Chidinma | Folake], [a|b]").unwrap(),
            vec!["Amara", "Chidinma", "Folake"]
        );
        assert_eq!(extract_blend_group("no group here"), None);
        assert_eq!(extract_blend_group("[ | a ]"), None);
    }

    #[test]
    fn pose_token_round_trip() {
        assert_eq!(extract_pose_token(&format!("x, {}, y", pose_phrase("left"))).as_deref(), Some("left"));
        assert_eq!(extract_pose_token("a -facing b, right-facing"), Some("right".into()));
        assert_eq!(extract_pose_token("facing forward"), None);
    }

    proptest! {
        #[test]
        fn blend_group_round_trip(names in proptest::array::uniform3("[A-Za-z][A-Za-z' -]{0,10}[A-Za-z]")) {
            let prompt = format!("portrait of {}, 25 year old", format_blend_group(&names));
            let got = extract_blend_group(&prompt).unwrap();
            prop_assert_eq!(got, names.to_vec());
        }

        #[test]
        fn brace_free_text_is_one_literal(text in "[^{}]{1,40}") {
            let t = parse_template(&text).unwrap();
            prop_assert_eq!(t.segments(), &[Segment::Literal(text.clone())]);
        }
    }
}
