use std::collections::HashSet;

use super::FeatureCandidate;
use crate::feature::FeatureId;

const FENCE: &str = "```";

/// First triple-quoted string, else the first `#` comment line, else empty.
fn docstring_of(source: &str) -> String {
    let mut first: Option<(usize, &str)> = None;
    for quote in ["\"\"\"", "'''"] {
        if let Some(pos) = source.find(quote) {
            if first.is_none_or(|(p, _)| pos < p) {
                first = Some((pos, quote));
            }
        }
    }
    if let Some((start, quote)) = first {
        let body = &source[start + 3..];
        if let Some(end) = body.find(quote) {
            return body[..end].split_whitespace().collect::<Vec<_>>().join(" ");
        }
    }
    source
        .lines()
        .map(str::trim_start)
        .find(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim().to_string())
        .unwrap_or_default()
}

/// Extracts fenced code blocks from a proposer response. Blocks are returned
/// in order of appearance; empty blocks and repeated sources are dropped.
pub fn parse_feature_sources(response: &str) -> Vec<FeatureCandidate> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut offset = 0;
    let mut open: Option<(usize, usize)> = None; // (block start, body start)
    for line in response.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        if !line.trim_start().starts_with(FENCE) {
            continue;
        }
        match open.take() {
            None => open = Some((line_start, offset)),
            Some((block_start, body_start)) => {
                let body = response[body_start..line_start].trim_end_matches(['\n', '\r']);
                if body.trim().is_empty() || !seen.insert(FeatureId::of_source(body)) {
                    continue;
                }
                out.push(FeatureCandidate {
                    source: body.to_string(),
                    docstring: docstring_of(body),
                    span: (block_start, offset),
                });
            }
        }
    }
    out
}
