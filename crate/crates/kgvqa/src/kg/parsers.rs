//! Per-source triple parsers.
//!
//! Four heterogeneous inputs feed the graph: hyperlink-style encyclopedic
//! records, scene-graph edge counts, and two already-processed flat TSV
//! sources (commonsense and part-of knowledge). Malformed lines are skipped
//! and counted, never fatal.

use crate::error::{Error, Result};
use crate::kg::triple::{Triple, TripleSource};
use serde::Serialize;
use std::io::BufRead;

/// Line accounting for one parsed source.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ParseStats {
    pub lines: usize,
    pub parsed: usize,
    pub skipped: usize,
}

/// Split a hyperlink-style record into raw fields. Fields are either
/// `<uri>` tokens, `"literal"` tokens or bare words; a trailing `.` is
/// tolerated.
fn split_record(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '<' {
            chars.next();
            let mut tok = String::new();
            for ch in chars.by_ref() {
                if ch == '>' {
                    break;
                }
                tok.push(ch);
            }
            fields.push(format!("<{}>", tok));
        } else if c == '"' {
            chars.next();
            let mut tok = String::new();
            for ch in chars.by_ref() {
                if ch == '"' {
                    break;
                }
                tok.push(ch);
            }
            // drop datatype/lang suffix if present
            while let Some(&n) = chars.peek() {
                if n.is_whitespace() {
                    break;
                }
                chars.next();
            }
            fields.push(format!("\"{}\"", tok));
        } else {
            let mut tok = String::new();
            while let Some(&n) = chars.peek() {
                if n.is_whitespace() {
                    break;
                }
                tok.push(n);
                chars.next();
            }
            fields.push(tok);
        }
    }
    if fields.last().map(String::as_str) == Some(".") {
        fields.pop();
    }
    fields
}

/// Reduce a URI to its category words: the fragment after the last `/` or
/// `#`, underscores split, lowercased. Literals lose their quotes; bare
/// tokens pass through.
fn extract_concept(field: &str) -> String {
    if let Some(inner) = field.strip_prefix('<').and_then(|s| s.strip_suffix('>')) {
        let frag = inner.rsplit(['/', '#']).next().unwrap_or("");
        frag.to_string()
    } else if let Some(inner) = field.strip_prefix('"').and_then(|s| s.strip_suffix('"')) {
        inner.to_string()
    } else {
        field.to_string()
    }
}

/// Parse hyperlink-style (subject-URI, predicate, object) records into
/// triples. Malformed lines are skipped with a counted warning.
pub fn parse_encyclopedic<R: BufRead>(reader: R) -> Result<(Vec<Triple>, ParseStats)> {
    let mut triples = Vec::new();
    let mut stats = ParseStats::default();
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        stats.lines += 1;
        let fields = split_record(trimmed);
        if fields.len() != 3 {
            stats.skipped += 1;
            continue;
        }
        let head = extract_concept(&fields[0]);
        let relation = extract_concept(&fields[1]);
        let tail = extract_concept(&fields[2]);
        match Triple::new(&head, &relation, &tail, TripleSource::Encyclopedic) {
            Some(t) => {
                triples.push(t);
                stats.parsed += 1;
            }
            None => stats.skipped += 1,
        }
    }
    Ok((triples, stats))
}

/// Parse (head, relation, tail, count) records, keeping edges seen at least
/// `min_count` times. Negative counts are an error.
pub fn parse_scene_graph<R: BufRead>(
    reader: R,
    min_count: i64,
) -> Result<(Vec<Triple>, ParseStats)> {
    if min_count < 1 {
        return Err(Error::InvalidArgument(format!(
            "scene-graph min_count must be >= 1, got {}",
            min_count
        )));
    }
    let mut triples = Vec::new();
    let mut stats = ParseStats::default();
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        stats.lines += 1;
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 4 {
            stats.skipped += 1;
            continue;
        }
        let count: i64 = match cols[3].trim().parse() {
            Ok(c) => c,
            Err(_) => {
                stats.skipped += 1;
                continue;
            }
        };
        if count < 0 {
            return Err(Error::InvalidArgument(format!(
                "negative scene-graph count {} on line: {}",
                count, trimmed
            )));
        }
        if count < min_count {
            stats.skipped += 1;
            continue;
        }
        match Triple::new(cols[0], cols[1], cols[2], TripleSource::SceneGraph) {
            Some(t) => {
                triples.push(t);
                stats.parsed += 1;
            }
            None => stats.skipped += 1,
        }
    }
    Ok((triples, stats))
}

/// Parse already-processed head/relation/tail TSV (commonsense and has-part
/// sources). Lines with the wrong column count are skipped and counted.
pub fn parse_flat<R: BufRead>(
    reader: R,
    source: TripleSource,
) -> Result<(Vec<Triple>, ParseStats)> {
    let mut triples = Vec::new();
    let mut stats = ParseStats::default();
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        stats.lines += 1;
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 3 {
            stats.skipped += 1;
            continue;
        }
        match Triple::new(cols[0], cols[1], cols[2], source) {
            Some(t) => {
                triples.push(t);
                stats.parsed += 1;
            }
            None => stats.skipped += 1,
        }
    }
    Ok((triples, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn hyperlink_concepts_are_extracted() {
        let input = "<http://dbpedia.org/resource/Tadeusz_Borowski> <http://dbpedia.org/ontology/birthPlace> <http://dbpedia.org/resource/Poland> .\n";
        let (triples, stats) = parse_encyclopedic(Cursor::new(input)).unwrap();
        assert_eq!(stats.parsed, 1);
        assert_eq!(triples[0].head, "tadeusz borowski");
        assert_eq!(triples[0].relation, "birthplace");
        assert_eq!(triples[0].tail, "poland");
    }

    #[test]
    fn bare_predicates_accepted() {
        let input = "<http://x.org/resource/Denmark> is_a <http://x.org/resource/Country>\n";
        let (triples, _) = parse_encyclopedic(Cursor::new(input)).unwrap();
        assert_eq!(
            (triples[0].head.as_str(), triples[0].relation.as_str(), triples[0].tail.as_str()),
            ("denmark", "is_a", "country")
        );
    }

    #[test]
    fn empty_object_skipped_and_counted() {
        let input = "<http://x.org/resource/Denmark> is_a <http://x.org/resource/>\n";
        let (triples, stats) = parse_encyclopedic(Cursor::new(input)).unwrap();
        assert!(triples.is_empty());
        assert_eq!(stats.skipped, 1);
    }

    #[test]
    fn literal_objects_lose_quotes() {
        let input = "<http://x.org/resource/Denmark> <http://x.org/p/name> \"Kingdom_of_Denmark\"@en\n";
        let (triples, _) = parse_encyclopedic(Cursor::new(input)).unwrap();
        assert_eq!(triples[0].tail, "kingdom of denmark");
    }

    #[test]
    fn scene_graph_min_count_boundary() {
        let input = "boat\tis_on\twater\t120\nboat\tis_on\tgrass\t49\ncat\tsits_on\tmat\t50\n";
        let (triples, stats) = parse_scene_graph(Cursor::new(input), 50).unwrap();
        let pairs: Vec<&str> = triples.iter().map(|t| t.tail.as_str()).collect();
        assert_eq!(pairs, ["water", "mat"], "count >= min_count is inclusive");
        assert_eq!(stats.skipped, 1);
    }

    #[test]
    fn scene_graph_negative_count_is_error() {
        let input = "boat\tis_on\twater\t-3\n";
        assert!(parse_scene_graph(Cursor::new(input), 50).is_err());
    }

    #[test]
    fn flat_parses_and_skips_bad_columns() {
        let input = "dog\thas_property\tfriendly\ndog\twhiskers\ndog\thas_part\twhiskers\n";
        let (triples, stats) = parse_flat(Cursor::new(input), TripleSource::Commonsense).unwrap();
        assert_eq!(triples.len(), 2);
        assert_eq!(stats.skipped, 1);
        assert_eq!(triples[0].head, "dog");
        assert_eq!(triples[0].relation, "has_property");
        assert_eq!(triples[0].tail, "friendly");
        assert_eq!(triples[1].relation, "has_part");
    }
}
