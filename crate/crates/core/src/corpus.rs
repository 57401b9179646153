//! News pieces, JSON-lines corpus I/O, temporal splitting and the
//! per-period entity/label audit.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary veracity label. `Fake` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn from_i64(v: i64) -> Result<Self> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            other => Err(Error::InvalidLabel(other)),
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }
}

impl From<bool> for Label {
    fn from(fake: bool) -> Self {
        if fake {
            Label::Fake
        } else {
            Label::Real
        }
    }
}

/// Where a piece's entity list came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntitySource {
    /// Supplied in the input file; not required to occur in the tokens.
    External,
    /// Produced by the gazetteer recognizer; every entity is a token span.
    Recognized,
    /// No entity list yet; recognition still has to run.
    Missing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewsPiece {
    pub id: String,
    pub tokens: Vec<String>,
    pub entities: Vec<String>,
    pub label: Label,
    pub timestamp: i64,
    pub entity_source: EntitySource,
}

/// Location of one entity occurrence inside a piece's tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntitySpan {
    /// Index into `NewsPiece::entities`.
    pub entity: usize,
    /// Token range `[start, end)`, `None` when the entity does not occur
    /// in the tokens (possible only for externally supplied lists).
    pub range: Option<(usize, usize)>,
}

impl NewsPiece {
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidPiece {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.tokens.is_empty() {
            return Err(invalid("no tokens"));
        }
        if self.timestamp < 0 {
            return Err(invalid("negative timestamp"));
        }
        if self.entity_source == EntitySource::Missing && !self.entities.is_empty() {
            return Err(invalid("entities present but marked as missing"));
        }
        if self.entity_source == EntitySource::Recognized
            && self.entity_spans().iter().any(|s| s.range.is_none())
        {
            return Err(invalid("recognized entity is not a token span"));
        }
        Ok(())
    }

    pub fn needs_recognition(&self) -> bool {
        self.entity_source == EntitySource::Missing
    }

    /// Maps each entity to its token span. Entities are located in order:
    /// each one is searched from the end of the previous located span, so
    /// repeated mentions map onto successive occurrences.
    pub fn entity_spans(&self) -> Vec<EntitySpan> {
        let mut cursor = 0;
        self.entities
            .iter()
            .enumerate()
            .map(|(idx, entity)| {
                let parts: Vec<&str> = entity.split_whitespace().collect();
                let range = find_subsequence(&self.tokens, &parts, cursor)
                    .map(|start| (start, start + parts.len()));
                if let Some((_, end)) = range {
                    cursor = end;
                }
                EntitySpan { entity: idx, range }
            })
            .collect()
    }

    /// Keeps the first `max_len` tokens. Entities whose span falls past the
    /// cut are removed; unlocated external entities are kept.
    pub fn truncated(&self, max_len: usize) -> NewsPiece {
        if self.tokens.len() <= max_len {
            return self.clone();
        }
        let entities = self
            .entity_spans()
            .into_iter()
            .filter(|s| match s.range {
                Some((_, end)) => end <= max_len,
                None => true,
            })
            .map(|s| self.entities[s.entity].clone())
            .collect();
        NewsPiece {
            tokens: self.tokens[..max_len].to_vec(),
            entities,
            ..self.clone()
        }
    }
}

fn find_subsequence(haystack: &[String], needle: &[&str], from: usize) -> Option<usize> {
    if needle.is_empty() || haystack.len() < needle.len() {
        return None;
    }
    (from..=haystack.len() - needle.len())
        .find(|&i| needle.iter().zip(&haystack[i..]).all(|(a, b)| *a == b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pieces: Vec<NewsPiece>,
}

impl Corpus {
    /// Builds a corpus, checking every piece and id uniqueness.
    pub fn new(name: impl Into<String>, pieces: Vec<NewsPiece>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pieces.len());
        for piece in &pieces {
            piece.validate()?;
            if !seen.insert(piece.id.as_str()) {
                return Err(Error::DuplicateId(piece.id.clone()));
            }
        }
        Ok(Corpus {
            name: name.into(),
            pieces,
        })
    }

    pub fn pieces(&self) -> &[NewsPiece] {
        &self.pieces
    }

    pub fn into_pieces(self) -> Vec<NewsPiece> {
        self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, NewsPiece> {
        self.pieces.iter()
    }

    /// `(fake, real)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let fake = self.pieces.iter().filter(|p| p.label.is_fake()).count();
        (fake, self.pieces.len() - fake)
    }

    pub fn needs_recognition(&self) -> bool {
        self.pieces.iter().any(NewsPiece::needs_recognition)
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a NewsPiece;
    type IntoIter = std::slice::Iter<'a, NewsPiece>;

    fn into_iter(self) -> Self::IntoIter {
        self.pieces.iter()
    }
}

/// Splits raw text on whitespace and punctuation. Punctuation characters
/// become single-character tokens.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut current = String::new();
        for ch in chunk.chars() {
            if ch.is_alphanumeric() || ch == '_' {
                current.push(ch);
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    if lowercase {
        tokens.iter_mut().for_each(|t| *t = t.to_lowercase());
    }
    tokens
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Lowercase tokens produced from a raw `text` field.
    pub lowercase: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPiece {
    id: String,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    entities: Option<Vec<String>>,
    label: i64,
    timestamp: i64,
    #[serde(default)]
    entity_source: Option<EntitySource>,
}

#[derive(Serialize)]
struct OutPiece<'a> {
    id: &'a str,
    tokens: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    entities: Option<&'a [String]>,
    label: u8,
    timestamp: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    entity_source: Option<EntitySource>,
}

impl RawPiece {
    fn into_piece(self, opts: LoadOptions) -> std::result::Result<NewsPiece, String> {
        let tokens = match (self.tokens, self.text) {
            (Some(tokens), None) => tokens,
            (None, Some(text)) => tokenize(&text, opts.lowercase),
            (Some(_), Some(_)) => return Err("both `tokens` and `text` given".into()),
            (None, None) => return Err("missing `tokens` or `text`".into()),
        };
        let label = Label::from_i64(self.label).map_err(|e| e.to_string())?;
        let (entities, entity_source) = match self.entities {
            Some(entities) => (
                entities,
                self.entity_source.unwrap_or(EntitySource::External),
            ),
            None => (Vec::new(), EntitySource::Missing),
        };
        let piece = NewsPiece {
            id: self.id,
            tokens,
            entities,
            label,
            timestamp: self.timestamp,
            entity_source,
        };
        piece.validate().map_err(|e| e.to_string())?;
        Ok(piece)
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    load_corpus_with(path, LoadOptions::default())
}

pub fn load_corpus_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_corpus(BufReader::new(file), &name, path, opts)
}

/// Parses JSON-lines from any reader; `origin` is only used in messages.
pub fn read_corpus(
    reader: impl BufRead,
    name: &str,
    origin: &Path,
    opts: LoadOptions,
) -> Result<Corpus> {
    let mut pieces = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno,
            message,
        };
        let raw: RawPiece = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let piece = raw.into_piece(opts).map_err(parse_err)?;
        if !seen.insert(piece.id.clone()) {
            return Err(parse_err(Error::DuplicateId(piece.id).to_string()));
        }
        pieces.push(piece);
    }
    Corpus::new(name, pieces)
}

pub fn write_corpus(corpus: &Corpus, mut w: impl Write) -> std::io::Result<()> {
    for piece in corpus {
        let out = OutPiece {
            id: &piece.id,
            tokens: &piece.tokens,
            entities: (piece.entity_source != EntitySource::Missing)
                .then_some(piece.entities.as_slice()),
            label: piece.label.as_u8(),
            timestamp: piece.timestamp,
            entity_source: (piece.entity_source == EntitySource::Recognized)
                .then_some(EntitySource::Recognized),
        };
        serde_json::to_writer(&mut w, &out)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus(corpus, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: Corpus,
    pub validation: Corpus,
    pub test: Corpus,
}

/// Oldest `train_ratio` of the corpus (timestamp order, ties by id) goes to
/// train. The remainder is shuffled with `seed` and cut into validation
/// (`round(n * val_ratio)` pieces) and test. Each part keeps time order.
pub fn temporal_split(
    corpus: &Corpus,
    train_ratio: f64,
    val_ratio: f64,
    seed: u64,
) -> Result<SplitResult> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(train_ratio > 0.0 && val_ratio > 0.0 && train_ratio + val_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive with sum below 1 (train {train_ratio}, val {val_ratio})"
        )));
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    let pieces = corpus.pieces();
    order.sort_by(|&a, &b| {
        (pieces[a].timestamp, &pieces[a].id).cmp(&(pieces[b].timestamp, &pieces[b].id))
    });

    let n_train = (n as f64 * train_ratio).round() as usize;
    let n_val = (n as f64 * val_ratio).round() as usize;
    if n_train == 0 {
        return Err(Error::EmptySplitPart("train"));
    }
    if n_val == 0 {
        return Err(Error::EmptySplitPart("validation"));
    }
    if n_train + n_val >= n {
        return Err(Error::EmptySplitPart("test"));
    }

    let mut recent = order[n_train..].to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    recent.shuffle(&mut rng);
    let (val_idx, test_idx) = recent.split_at(n_val);
    let rank: Vec<usize> = {
        let mut r = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            r[i] = pos;
        }
        r
    };
    let collect = |idx: &[usize], part: &str| {
        let mut idx = idx.to_vec();
        idx.sort_by_key(|&i| rank[i]);
        Corpus::new(
            format!("{}-{part}", corpus.name),
            idx.into_iter().map(|i| pieces[i].clone()).collect(),
        )
    };
    Ok(SplitResult {
        train: collect(&order[..n_train], "train")?,
        validation: collect(val_idx, "validation")?,
        test: collect(test_idx, "test")?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Before,
    After,
}

impl Period {
    pub fn of(timestamp: i64, boundary: i64) -> Self {
        if timestamp < boundary {
            Period::Before
        } else {
            Period::After
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Period::Before => "before",
            Period::After => "after",
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityBiasRow {
    pub entity: String,
    pub period: Period,
    pub news_count: usize,
    pub fake_count: usize,
    pub fake_fraction: f64,
}

/// Tallies, per entity and period, the pieces mentioning the entity at
/// least once and how many of them are fake.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BiasTally {
    counts: BTreeMap<(String, Period), (usize, usize)>,
}

impl BiasTally {
    pub fn add<'a>(
        &mut self,
        entities: impl IntoIterator<Item = &'a str>,
        period: Period,
        label: Label,
    ) {
        let distinct: BTreeSet<&str> = entities.into_iter().collect();
        for entity in distinct {
            let slot = self
                .counts
                .entry((entity.to_string(), period))
                .or_insert((0, 0));
            slot.0 += 1;
            slot.1 += label.is_fake() as usize;
        }
    }

    /// Rows sorted by total mentions across periods (descending), then by
    /// entity, then `before` ahead of `after`.
    pub fn rows(&self) -> Vec<EntityBiasRow> {
        let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
        for ((entity, _), (count, _)) in &self.counts {
            *totals.entry(entity.as_str()).or_default() += count;
        }
        let mut rows: Vec<EntityBiasRow> = self
            .counts
            .iter()
            .map(|((entity, period), &(news_count, fake_count))| EntityBiasRow {
                entity: entity.clone(),
                period: *period,
                news_count,
                fake_count,
                fake_fraction: fake_count as f64 / news_count as f64,
            })
            .collect();
        rows.sort_by(|a, b| {
            totals[b.entity.as_str()]
                .cmp(&totals[a.entity.as_str()])
                .then_with(|| a.entity.cmp(&b.entity))
                .then_with(|| a.period.cmp(&b.period))
        });
        rows
    }
}

pub fn entity_bias_table(corpus: &Corpus, period_boundary: i64) -> Vec<EntityBiasRow> {
    let mut tally = BiasTally::default();
    for piece in corpus {
        tally.add(
            piece.entities.iter().map(String::as_str),
            Period::of(piece.timestamp, period_boundary),
            piece.label,
        );
    }
    tally.rows()
}

pub fn write_bias_tsv(rows: &[EntityBiasRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "entity\tperiod\tnews_count\tfake_fraction")?;
    for row in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{:.4}",
            row.entity, row.period, row.news_count, row.fake_fraction
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    pub(crate) fn piece(id: &str, ts: i64, label: Label) -> NewsPiece {
        NewsPiece {
            id: id.to_string(),
            tokens: vec!["w".to_string()],
            entities: vec![],
            label,
            timestamp: ts,
            entity_source: EntitySource::External,
        }
    }

    fn parse(text: &str) -> Result<Corpus> {
        read_corpus(
            Cursor::new(text.as_bytes()),
            "t",
            Path::new("mem.jsonl"),
            LoadOptions::default(),
        )
    }

    #[test]
    fn parses_three_lines() {
        let text = r#"{"id":"a","tokens":["x","y"],"entities":["x"],"label":0,"timestamp":1}
{"id":"b","text":"Hello, world!","label":1,"timestamp":2}
{"id":"c","tokens":["z"],"entities":[],"label":1,"timestamp":3}
"#;
        let c = parse(text).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.pieces()[1].tokens, vec!["Hello", ",", "world", "!"]);
        assert!(c.pieces()[1].needs_recognition());
        assert!(!c.pieces()[2].needs_recognition());
        assert_eq!(c.class_counts(), (2, 1));
    }

    #[test]
    fn bad_label_names_line() {
        let mut text = String::new();
        for i in 0..6 {
            text.push_str(&format!(
                "{{\"id\":\"p{i}\",\"tokens\":[\"a\"],\"label\":0,\"timestamp\":{i}}}\n"
            ));
        }
        text.push_str("{\"id\":\"p7\",\"tokens\":[\"a\"],\"label\":2,\"timestamp\":7}\n");
        let err = parse(&text).unwrap_err();
        match &err {
            Error::Parse { line, message, .. } => {
                assert_eq!(*line, 7);
                assert!(message.contains("label"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains(":7:"));
    }

    #[test]
    fn malformed_and_duplicate_lines() {
        let err = parse("{\"id\":\"a\",\"tokens\":[\"a\"],\"label\":0,\"timestamp\":1}\nnot json\n")
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse(
            "{\"id\":\"a\",\"tokens\":[\"a\"],\"label\":0,\"timestamp\":1}\n{\"id\":\"a\",\"tokens\":[\"b\"],\"label\":1,\"timestamp\":2}\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn empty_tokens_rejected() {
        let err = parse("{\"id\":\"a\",\"tokens\":[],\"label\":0,\"timestamp\":1}\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize("Trump's rally, in NYC.", true),
            vec!["trump", "'", "s", "rally", ",", "in", "nyc", "."]
        );
        assert_eq!(tokenize("  a   b ", false), vec!["a", "b"]);
    }

    #[test]
    fn split_of_ten_is_forced_by_order() {
        let pieces = (1..=10)
            .map(|t| piece(&format!("p{t:02}"), t, Label::from(t % 3 == 0)))
            .collect();
        let c = Corpus::new("ten", pieces).unwrap();
        for seed in 0..20 {
            let s = temporal_split(&c, 0.6, 0.2, seed).unwrap();
            let ts = |c: &Corpus| c.iter().map(|p| p.timestamp).collect::<Vec<_>>();
            assert_eq!(ts(&s.train), vec![1, 2, 3, 4, 5, 6]);
            assert_eq!(s.validation.len(), 2);
            assert_eq!(s.test.len(), 2);
            let mut rest: Vec<i64> = ts(&s.validation).into_iter().chain(ts(&s.test)).collect();
            rest.sort();
            assert_eq!(rest, vec![7, 8, 9, 10]);
            assert_eq!(s, temporal_split(&c, 0.6, 0.2, seed).unwrap());
        }
    }

    #[test]
    fn split_ties_broken_by_id() {
        let pieces = vec![
            piece("b", 5, Label::Real),
            piece("a", 5, Label::Real),
            piece("c", 5, Label::Fake),
            piece("d", 5, Label::Fake),
            piece("e", 5, Label::Fake),
        ];
        let c = Corpus::new("ties", pieces).unwrap();
        let s = temporal_split(&c, 0.4, 0.2, 1).unwrap();
        let ids: Vec<&str> = s.train.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
    }

    #[test]
    fn split_errors() {
        let empty = Corpus::new("e", vec![]).unwrap();
        assert!(matches!(
            temporal_split(&empty, 0.6, 0.2, 0),
            Err(Error::EmptyCorpus)
        ));
        let two = Corpus::new(
            "two",
            vec![piece("a", 1, Label::Real), piece("b", 2, Label::Fake)],
        )
        .unwrap();
        assert!(temporal_split(&two, 0.6, 0.2, 0).is_err());
        assert!(temporal_split(&two, 0.8, 0.3, 0).is_err());
        assert!(temporal_split(&two, 0.0, 0.3, 0).is_err());
    }

    #[test]
    fn bias_table_single_entity() {
        let mut pieces = Vec::new();
        for i in 0..29 {
            let mut p = piece(&format!("a{i}"), 10, Label::from(i == 0));
            p.tokens = vec!["donald".into(), "trump".into()];
            p.entities = vec!["donald trump".into(), "donald trump".into()];
            pieces.push(p);
        }
        let c = Corpus::new("dt", pieces).unwrap();
        let rows = entity_bias_table(&c, 100);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].news_count, 29);
        assert_eq!(rows[0].period, Period::Before);
        assert!((rows[0].fake_fraction - 1.0 / 29.0).abs() < 1e-15);
        assert_eq!(format!("{:.2}", rows[0].fake_fraction), "0.03");

        let mut buf = Vec::new();
        write_bias_tsv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "entity\tperiod\tnews_count\tfake_fraction\ndonald trump\tbefore\t29\t0.0345\n"
        );
        assert!(entity_bias_table(&c, 100)
            .iter()
            .all(|r| r.entity != "beijing"));
    }

    #[test]
    fn spans_follow_occurrence_order() {
        let p = NewsPiece {
            id: "x".into(),
            tokens: "a b c a b".split(' ').map(String::from).collect(),
            entities: vec!["a b".into(), "a b".into(), "zz".into()],
            label: Label::Real,
            timestamp: 0,
            entity_source: EntitySource::External,
        };
        let spans = p.entity_spans();
        assert_eq!(spans[0].range, Some((0, 2)));
        assert_eq!(spans[1].range, Some((3, 5)));
        assert_eq!(spans[2].range, None);
        let t = p.truncated(3);
        assert_eq!(t.tokens.len(), 3);
        assert_eq!(t.entities, vec!["a b".to_string(), "zz".to_string()]);
    }
}
