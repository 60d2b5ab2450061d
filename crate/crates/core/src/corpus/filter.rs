use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::RawSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MarkdownList,
    MarkdownTable,
    FencedCode,
    MarkdownHeading,
    MarkdownEmphasis,
    ContainsThinkTag,
    EmptyCot,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Keep(RawSample),
    Drop(DropReason),
}

static LIST_ITEM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^[ \t]*(?:[-*+]|\d{1,3}[.)])[ \t]+\S").unwrap());
static TABLE_RULE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^[ \t]*\|?[ \t]*:?-{3,}:?[ \t]*(?:\|[ \t]*:?-{3,}:?[ \t]*)+\|?[ \t]*$").unwrap());
static FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^[ \t]*(?:```|~~~)").unwrap());
static HEADING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^[ ]{0,3}#{1,6}[ \t]+\S").unwrap());
static EMPHASIS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\*\*[^*\n]+\*\*|__[^_\n]+__").unwrap());

/// Markdown structure found in `text`, checked in a fixed order so a
/// heading over a list is reported as a list.
fn markdown_in(text: &str) -> Option<DropReason> {
    if LIST_ITEM.find_iter(text).count() >= 2 {
        return Some(DropReason::MarkdownList);
    }
    if TABLE_RULE.is_match(text) {
        return Some(DropReason::MarkdownTable);
    }
    if FENCE.is_match(text) {
        return Some(DropReason::FencedCode);
    }
    if HEADING.is_match(text) {
        return Some(DropReason::MarkdownHeading);
    }
    if EMPHASIS.is_match(text) {
        return Some(DropReason::MarkdownEmphasis);
    }
    None
}

/// Pictographic codepoints removed during cleaning.
pub fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF   // mahjong .. symbols and pictographs extended-a
        | 0x2600..=0x27BF   // misc symbols, dingbats
        | 0x2B50..=0x2B55   // stars and circles
        | 0xFE00..=0xFE0F   // variation selectors
        | 0x200D            // zero-width joiner
        | 0x20E3            // combining keycap
        | 0xE0020..=0xE007F // tag sequences
    )
}

/// Strips emoji, collapses blank runs and trims every line.
pub fn clean_text(text: &str) -> String {
    let stripped: String = text.chars().filter(|&c| !is_emoji(c)).collect();
    let mut out = String::with_capacity(stripped.len());
    let mut blank_run = 0usize;
    for line in stripped.lines() {
        let line = line.split_whitespace().collect::<Vec<_>>().join(" ");
        if line.is_empty() {
            blank_run += 1;
            continue;
        }
        if !out.is_empty() {
            out.push_str(if blank_run > 0 { "\n\n" } else { "\n" });
        }
        blank_run = 0;
        out.push_str(&line);
    }
    out
}

/// Drops samples with Markdown structure; cleans the rest.
pub fn filter_compatibility(sample: &RawSample) -> Verdict {
    let fields = std::iter::once(sample.query.as_str())
        .chain(sample.cot_paragraphs.iter().map(String::as_str))
        .chain(std::iter::once(sample.response.as_str()));
    for text in fields.clone() {
        if text.contains("<think>") || text.contains("</think>") {
            return Verdict::Drop(DropReason::ContainsThinkTag);
        }
    }
    for text in fields {
        if let Some(reason) = markdown_in(text) {
            return Verdict::Drop(reason);
        }
    }
    let cot_paragraphs: Vec<String> = sample
        .cot_paragraphs
        .iter()
        // a paragraph never spans a blank line
        .map(|p| clean_text(p).replace("\n\n", "\n"))
        .filter(|p| !p.is_empty())
        .collect();
    if cot_paragraphs.is_empty() {
        return Verdict::Drop(DropReason::EmptyCot);
    }
    Verdict::Keep(RawSample {
        query: clean_text(&sample.query),
        cot_paragraphs,
        response: clean_text(&sample.response),
    })
}
