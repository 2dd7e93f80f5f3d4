//! Corpus ingestion: parse raw geo-tagged posts, prune them, tokenize the
//! text and attach location-type tags through a pluggable resolver.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_properties::emoji::{
    is_emoji_presentation_selector, is_regional_indicator, is_tag_character,
    is_text_presentation_selector, is_zwj, EmojiStatus, UnicodeEmoji,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus stream: {0}")]
    Io(#[from] std::io::Error),
    #[error("place resolver failure (retryable): {0}")]
    Resolver(String),
}

/// How specific a post's "place" bounding box is. Anything broader than a
/// neighborhood is considered too broad to carry location-type signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceGranularity {
    Poi,
    Neighborhood,
    City,
    Admin,
    Country,
    Unknown,
}

/// One record from the raw feed, before any pruning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawPost {
    pub id: String,
    pub text: String,
    pub lang: String,
    pub place_name: Option<String>,
    pub place_granularity: PlaceGranularity,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
}

/// A fully enriched post: tokens plus resolved location-type tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub tokens: Vec<String>,
    pub place_types: BTreeSet<String>,
}

/// Outcome of one place-type lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaceResolution {
    pub query_name: String,
    pub matched: bool,
    pub types: BTreeSet<String>,
}

/// Maps an establishment name (plus coordinates, which implementations may
/// ignore) to its location-type tags.
pub trait PlaceTypeResolver {
    fn resolve(&self, name: &str, lat: Option<f64>, lon: Option<f64>)
        -> Result<PlaceResolution, CorpusError>;
}

/// Fixture-backed resolver: a JSON object mapping lowercase place names to
/// arrays of location-type tags. Matching is case-insensitive exact-name;
/// coordinates are ignored.
#[derive(Debug, Clone, Default)]
pub struct FixtureResolver {
    entries: BTreeMap<String, BTreeSet<String>>,
}

impl FixtureResolver {
    pub fn from_map(entries: BTreeMap<String, Vec<String>>) -> Self {
        let entries = entries
            .into_iter()
            .map(|(k, v)| (k.to_lowercase(), v.into_iter().collect()))
            .collect();
        FixtureResolver { entries }
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        let entries: BTreeMap<String, Vec<String>> = serde_json::from_str(json)?;
        Ok(Self::from_map(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl PlaceTypeResolver for FixtureResolver {
    fn resolve(
        &self,
        name: &str,
        _lat: Option<f64>,
        _lon: Option<f64>,
    ) -> Result<PlaceResolution, CorpusError> {
        let key = name.to_lowercase();
        match self.entries.get(&key) {
            Some(types) => Ok(PlaceResolution {
                query_name: name.to_string(),
                matched: true,
                types: types.clone(),
            }),
            None => Ok(PlaceResolution {
                query_name: name.to_string(),
                matched: false,
                types: BTreeSet::new(),
            }),
        }
    }
}

/// Result of parsing a JSONL corpus stream.
#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub posts: Vec<RawPost>,
    pub skipped_lines: usize,
}

/// Parses a line-delimited JSON corpus. Malformed lines are counted and
/// skipped; an unreadable stream is fatal.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<ParseOutcome, CorpusError> {
    let mut outcome = ParseOutcome::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawPost>(&line) {
            Ok(post) => outcome.posts.push(post),
            Err(_) => outcome.skipped_lines += 1,
        }
    }
    Ok(outcome)
}

/// Keeps exactly the English posts with a place name at poi or neighborhood
/// granularity. Broader place tags carry no usable location-type signal.
pub fn filter_posts(posts: Vec<RawPost>) -> Vec<RawPost> {
    posts
        .into_iter()
        .filter(|p| {
            p.lang == "en"
                && p.place_name.is_some()
                && matches!(
                    p.place_granularity,
                    PlaceGranularity::Poi | PlaceGranularity::Neighborhood
                )
        })
        .collect()
}

const URL_TOKEN: &str = "<url>";

fn is_break_punct(c: char) -> bool {
    matches!(c, '(' | ')' | ',' | '.' | '!' | '?')
}

// Emoji start: pictographic characters only. ASCII like '#', '*' and digits
// are Emoji=YES components in Unicode but must stay inside word tokens.
fn is_emoji_start(c: char) -> bool {
    if c.is_ascii() {
        return false;
    }
    if is_regional_indicator(c) {
        return true;
    }
    matches!(
        c.emoji_status(),
        EmojiStatus::EmojiPresentation
            | EmojiStatus::EmojiModifierBase
            | EmojiStatus::EmojiPresentationAndModifierBase
            | EmojiStatus::EmojiOther
    )
}

// Characters that extend an emoji sequence once one has started.
fn is_emoji_continuation(c: char) -> bool {
    is_zwj(c)
        || is_emoji_presentation_selector(c)
        || is_text_presentation_selector(c)
        || is_tag_character(c)
        || matches!(c, '\u{1F3FB}'..='\u{1F3FF}')
}

fn starts_url(chars: &[char], i: usize) -> bool {
    let rest: String = chars[i..].iter().take(8).collect();
    rest.starts_with("http://") || rest.starts_with("https://") || rest.starts_with("www.")
}

/// Lowercased social-media tokenization. Hashtags and handles stay single
/// tokens, every emoji sequence is its own token, the six marks `( ) , . ! ?`
/// split off as single-character tokens, URLs collapse to `<url>`.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens: Vec<String> = Vec::new();
    let mut word = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            i += 1;
        } else if word.is_empty() && starts_url(&chars, i) {
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            tokens.push(URL_TOKEN.to_string());
        } else if is_break_punct(c) {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(c.to_string());
            i += 1;
        } else if is_emoji_start(c) {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            let mut emoji = String::new();
            emoji.push(c);
            let flag = is_regional_indicator(c);
            i += 1;
            // A flag is exactly two regional indicators.
            if flag && i < chars.len() && is_regional_indicator(chars[i]) {
                emoji.push(chars[i]);
                i += 1;
            } else if !flag {
                loop {
                    if i >= chars.len() {
                        break;
                    }
                    let n = chars[i];
                    if is_emoji_continuation(n) {
                        emoji.push(n);
                        let joined = is_zwj(n);
                        i += 1;
                        if joined && i < chars.len() && is_emoji_start(chars[i]) {
                            emoji.push(chars[i]);
                            i += 1;
                        }
                    } else {
                        break;
                    }
                }
            }
            tokens.push(emoji);
        } else {
            for lc in c.to_lowercase() {
                word.push(lc);
            }
            i += 1;
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Delegates a place lookup to the resolver.
pub fn resolve_place<R: PlaceTypeResolver>(
    name: &str,
    lat: Option<f64>,
    lon: Option<f64>,
    resolver: &R,
) -> Result<PlaceResolution, CorpusError> {
    resolver.resolve(name, lat, lon)
}

/// Drop-rule accounting for one ingestion run.
#[derive(Debug, Default, Clone, Serialize)]
pub struct IngestReport {
    pub input: usize,
    pub malformed_lines: usize,
    pub dropped_non_english: usize,
    pub dropped_broad_place: usize,
    pub dropped_no_place: usize,
    pub dropped_resolver_miss: usize,
    pub dropped_short: usize,
    pub kept: usize,
}

/// Tokenizes filtered raw posts and resolves their place types. Posts whose
/// place name fails to resolve or that tokenize to fewer than 2 tokens are
/// dropped.
pub fn build_posts<R: PlaceTypeResolver>(
    raw: &[RawPost],
    resolver: &R,
) -> Result<Vec<Post>, CorpusError> {
    Ok(build_posts_counted(raw, resolver)?.0)
}

pub fn build_posts_counted<R: PlaceTypeResolver>(
    raw: &[RawPost],
    resolver: &R,
) -> Result<(Vec<Post>, usize, usize), CorpusError> {
    let mut posts = Vec::new();
    let mut miss = 0usize;
    let mut short = 0usize;
    for r in raw {
        let name = match &r.place_name {
            Some(n) => n,
            None => {
                miss += 1;
                continue;
            }
        };
        let res = resolver.resolve(name, r.lat, r.lon)?;
        if !res.matched || res.types.is_empty() {
            miss += 1;
            continue;
        }
        let tokens = tokenize(&r.text);
        if tokens.len() < 2 {
            short += 1;
            continue;
        }
        posts.push(Post {
            id: r.id.clone(),
            tokens,
            place_types: res.types,
        });
    }
    Ok((posts, miss, short))
}

/// Runs the full pruning pipeline over parsed raw posts with per-rule counts.
pub fn ingest<R: PlaceTypeResolver>(
    raw: Vec<RawPost>,
    malformed_lines: usize,
    resolver: &R,
) -> Result<(Vec<Post>, IngestReport), CorpusError> {
    let mut report = IngestReport {
        input: raw.len(),
        malformed_lines,
        ..Default::default()
    };
    let mut filtered = Vec::new();
    for p in raw {
        if p.lang != "en" {
            report.dropped_non_english += 1;
        } else if p.place_name.is_none() {
            report.dropped_no_place += 1;
        } else if !matches!(
            p.place_granularity,
            PlaceGranularity::Poi | PlaceGranularity::Neighborhood
        ) {
            report.dropped_broad_place += 1;
        } else {
            filtered.push(p);
        }
    }
    let (posts, miss, short) = build_posts_counted(&filtered, resolver)?;
    report.dropped_resolver_miss = miss;
    report.dropped_short = short;
    report.kept = posts.len();
    Ok((posts, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn raw(id: &str, lang: &str, gran: PlaceGranularity, place: Option<&str>) -> RawPost {
        RawPost {
            id: id.to_string(),
            text: "hello there".to_string(),
            lang: lang.to_string(),
            place_name: place.map(String::from),
            place_granularity: gran,
            lat: None,
            lon: None,
        }
    }

    fn fixture() -> FixtureResolver {
        let mut m = BTreeMap::new();
        m.insert(
            "Joe's Pizza".to_string(),
            vec!["restaurant".to_string(), "food".to_string()],
        );
        FixtureResolver::from_map(m)
    }

    #[test]
    fn parse_empty_stream() {
        let out = parse_corpus(Cursor::new("")).unwrap();
        assert!(out.posts.is_empty());
        assert_eq!(out.skipped_lines, 0);
    }

    #[test]
    fn parse_valid_lines_in_order() {
        let lines = r#"{"id":"1","text":"a b","lang":"en","place_name":"x","place_granularity":"poi","lat":null,"lon":null}
{"id":"2","text":"c d","lang":"en","place_name":"x","place_granularity":"poi","lat":null,"lon":null}
{"id":"3","text":"e f","lang":"en","place_name":"x","place_granularity":"poi","lat":null,"lon":null}"#;
        let out = parse_corpus(Cursor::new(lines)).unwrap();
        assert_eq!(out.posts.len(), 3);
        assert_eq!(out.posts[0].id, "1");
        assert_eq!(out.posts[2].id, "3");
    }

    #[test]
    fn parse_skips_truncated_line() {
        let lines = r#"{"id":"1","text":"a b","lang":"en","place_name":"x","place_granularity":"poi","lat":null,"lon":null}
{"id":"2","text":"c d","lang":"en","place_na
{"id":"3","text":"e f","lang":"en","place_name":"x","place_granularity":"poi","lat":null,"lon":null}"#;
        let out = parse_corpus(Cursor::new(lines)).unwrap();
        assert_eq!(out.posts.len(), 2);
        assert_eq!(out.skipped_lines, 1);
    }

    #[test]
    fn filter_drops_city_granularity() {
        let posts = vec![raw("1", "en", PlaceGranularity::City, Some("nyc"))];
        assert!(filter_posts(posts).is_empty());
    }

    #[test]
    fn filter_keeps_english_poi() {
        let posts = vec![raw("1", "en", PlaceGranularity::Poi, Some("spot"))];
        assert_eq!(filter_posts(posts).len(), 1);
    }

    #[test]
    fn filter_mixed_list_preserves_order() {
        let posts = vec![
            raw("1", "fr", PlaceGranularity::Poi, Some("a")),
            raw("2", "en", PlaceGranularity::Poi, Some("b")),
            raw("3", "en", PlaceGranularity::City, Some("c")),
            raw("4", "en", PlaceGranularity::Neighborhood, Some("d")),
            raw("5", "en", PlaceGranularity::Poi, None),
        ];
        let kept = filter_posts(posts);
        assert_eq!(
            kept.iter().map(|p| p.id.as_str()).collect::<Vec<_>>(),
            vec!["2", "4"]
        );
    }

    #[test]
    fn filter_is_idempotent() {
        let posts = vec![
            raw("1", "fr", PlaceGranularity::Poi, Some("a")),
            raw("2", "en", PlaceGranularity::Poi, Some("b")),
        ];
        let once = filter_posts(posts);
        let twice = filter_posts(once.clone());
        assert_eq!(once.len(), twice.len());
    }

    #[test]
    fn tokenize_hashtag_emoji_punct() {
        assert_eq!(
            tokenize("Dinner at #NYC \u{1F355}!"),
            vec!["dinner", "at", "#nyc", "\u{1F355}", "!"]
        );
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn tokenize_parens() {
        assert_eq!(tokenize("( )"), vec!["(", ")"]);
    }

    #[test]
    fn tokenize_handles_and_urls() {
        assert_eq!(
            tokenize("@Bob see https://t.co/xyz now"),
            vec!["@bob", "see", "<url>", "now"]
        );
        assert_eq!(tokenize("www.example.com"), vec!["<url>"]);
    }

    #[test]
    fn tokenize_zwj_sequence_is_one_token() {
        // family emoji: man + zwj + woman + zwj + girl
        let fam = "\u{1F468}\u{200D}\u{1F469}\u{200D}\u{1F467}";
        let toks = tokenize(&format!("hi {fam} bye"));
        assert_eq!(toks, vec!["hi", fam, "bye"]);
    }

    #[test]
    fn tokenize_adjacent_emoji_split() {
        let toks = tokenize("\u{1F355}\u{1F355}");
        assert_eq!(toks, vec!["\u{1F355}", "\u{1F355}"]);
    }

    #[test]
    fn tokenize_never_emits_empty_and_preserves_chars() {
        let input = "A (quick) brown-fox's #tail?! \u{1F98A}";
        let toks = tokenize(input);
        assert!(toks.iter().all(|t| !t.is_empty()));
        let joined: String = toks.concat();
        let expected: String = input
            .to_lowercase()
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        let mut joined_sorted: Vec<char> = joined.chars().collect();
        let mut expected_sorted: Vec<char> = expected.chars().collect();
        joined_sorted.sort_unstable();
        expected_sorted.sort_unstable();
        assert_eq!(joined_sorted, expected_sorted);
    }

    #[test]
    fn resolver_hit_and_miss() {
        let f = fixture();
        let hit = resolve_place("Joe's Pizza", None, None, &f).unwrap();
        assert!(hit.matched);
        assert_eq!(hit.types.len(), 2);
        assert!(hit.types.contains("restaurant"));
        let miss = resolve_place("nowhere", None, None, &f).unwrap();
        assert!(!miss.matched);
        assert!(miss.types.is_empty());
    }

    #[test]
    fn resolver_case_folds() {
        let f = fixture();
        let hit = resolve_place("joe's pizza", None, None, &f).unwrap();
        assert!(hit.matched);
        let hit2 = resolve_place("JOE'S PIZZA", None, None, &f).unwrap();
        assert!(hit2.matched);
    }

    #[test]
    fn build_posts_drops_single_token_and_miss() {
        let f = fixture();
        let mut one_word = raw("1", "en", PlaceGranularity::Poi, Some("Joe's Pizza"));
        one_word.text = "hello".to_string();
        let unmatched = raw("2", "en", PlaceGranularity::Poi, Some("nowhere"));
        let good = raw("3", "en", PlaceGranularity::Poi, Some("Joe's Pizza"));
        let posts = build_posts(&[one_word, unmatched, good], &f).unwrap();
        assert_eq!(posts.len(), 1);
        assert_eq!(posts[0].id, "3");
        assert_eq!(posts[0].tokens, vec!["hello", "there"]);
        assert!(posts[0].place_types.contains("food"));
    }

    #[test]
    fn every_post_has_tokens_and_types() {
        let f = fixture();
        let raws = vec![
            raw("1", "en", PlaceGranularity::Poi, Some("Joe's Pizza")),
            raw("2", "en", PlaceGranularity::Poi, Some("nowhere")),
        ];
        let posts = build_posts(&raws, &f).unwrap();
        for p in &posts {
            assert!(p.tokens.len() >= 2);
            assert!(!p.place_types.is_empty());
        }
    }

    #[test]
    fn ingest_accounts_for_every_input() {
        let f = fixture();
        let raws = vec![
            raw("1", "fr", PlaceGranularity::Poi, Some("a")),
            raw("2", "en", PlaceGranularity::City, Some("b")),
            raw("3", "en", PlaceGranularity::Poi, None),
            raw("4", "en", PlaceGranularity::Poi, Some("nowhere")),
            raw("5", "en", PlaceGranularity::Poi, Some("Joe's Pizza")),
        ];
        let (posts, report) = ingest(raws, 0, &f).unwrap();
        assert_eq!(posts.len(), 1);
        assert_eq!(report.input, 5);
        assert_eq!(
            report.dropped_non_english
                + report.dropped_broad_place
                + report.dropped_no_place
                + report.dropped_resolver_miss
                + report.dropped_short
                + report.kept,
            report.input
        );
    }
}
