//! Gloss annotations (TSV: `sample_id<TAB>TOKEN TOKEN ...`), the token
//! vocabulary (one token per line, line index = id) and sentence embeddings
//! (CSV: `sample_id,v1,...,v384`, no header).

use std::collections::HashMap;
use std::path::Path;

use super::{format_f64, parse_error, read_text, write_atomic};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::losses::SENTENCE_DIM;

/// Gloss tokens interned to dense ids in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Ids for a whitespace-separated gloss string, failing on unknown tokens.
    pub fn lookup(&self, glosses: &str) -> Result<Vec<u32>> {
        glosses
            .split_whitespace()
            .map(|t| {
                self.id(t)
                    .ok_or_else(|| Error::InvalidArgument(format!("gloss `{t}` is not in the vocabulary")))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let mut v = Vocabulary::new();
        for (i, line) in read_text(path)?.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(parse_error(path, i + 1, "expected exactly one token"));
            }
            if v.id(t).is_some() {
                return Err(parse_error(path, i + 1, format!("duplicate token `{t}`")));
            }
            v.intern(t);
        }
        Ok(v)
    }
}

/// Per-sample gloss id sequences keyed by sample id, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct GlossAnnotations {
    pub sample_ids: Vec<String>,
    pub sequences: Vec<Vec<u32>>,
}

impl GlossAnnotations {
    pub fn get(&self, sample_id: &str) -> Option<&[u32]> {
        self.sample_ids
            .iter()
            .position(|s| s == sample_id)
            .map(|i| self.sequences[i].as_slice())
    }

    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for (id, seq) in self.sample_ids.iter().zip(&self.sequences) {
            let toks: Vec<&str> = seq.iter().map(|&g| vocab.token(g).unwrap_or("?")).collect();
            out.push_str(&format!("{id}\t{}\n", toks.join(" ")));
        }
        out
    }
}

/// Parse the TSV, interning new tokens into `vocab`.
pub fn load_gloss_annotations(path: &Path, vocab: &mut Vocabulary) -> Result<GlossAnnotations> {
    let text = read_text(path)?;
    let mut sample_ids: Vec<String> = Vec::new();
    let mut sequences = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let (id, glosses) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(path, n, "expected `sample_id<TAB>glosses`"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(parse_error(path, n, "empty sample id"));
        }
        if let Some(prev) = seen.insert(id.to_string(), n) {
            return Err(parse_error(
                path,
                n,
                format!("duplicate sample id `{id}` (first on line {prev})"),
            ));
        }
        let seq: Vec<u32> = glosses.split_whitespace().map(|t| vocab.intern(t)).collect();
        if seq.is_empty() {
            return Err(parse_error(path, n, "no gloss tokens"));
        }
        sample_ids.push(id.to_string());
        sequences.push(seq);
    }
    Ok(GlossAnnotations { sample_ids, sequences })
}

/// Vectors keyed by sample id: sentence embeddings or latents.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub sample_ids: Vec<String>,
    /// One row per sample.
    pub rows: Tensor,
}

impl EmbeddingTable {
    pub fn row(&self, sample_id: &str) -> Option<&[f64]> {
        self.sample_ids
            .iter()
            .position(|s| s == sample_id)
            .map(|i| self.rows.row(i))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, id) in self.sample_ids.iter().enumerate() {
            out.push_str(id);
            for &x in self.rows.row(i) {
                out.push(',');
                out.push_str(&format_f64(x));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

/// Sentence embeddings: every row must carry exactly 384 values.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    load_vectors(path, Some(SENTENCE_DIM))
}

/// Rows of `sample_id,v1,...,vd`; `width` fixes `d`, otherwise the first row sets it.
pub fn load_vectors(path: &Path, width: Option<usize>) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut width = width;
    let mut ids: Vec<String> = Vec::new();
    let mut seen = HashMap::new();
    let mut data = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, e.to_string())
        })?;
        let n = rec.position().map_or(0, |p| p.line() as usize);
        let values = rec.len().saturating_sub(1);
        let expected = *width.get_or_insert(values);
        if values != expected || values == 0 {
            return Err(parse_error(
                path,
                n,
                format!("expected {expected} columns after the sample id, found {values}"),
            ));
        }
        let id = rec[0].trim().to_string();
        if let Some(prev) = seen.insert(id.clone(), n) {
            return Err(parse_error(
                path,
                n,
                format!("duplicate sample id `{id}` (first on line {prev})"),
            ));
        }
        for (k, field) in rec.iter().skip(1).enumerate() {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_error(path, n, format!("column {}: `{field}` is not a number", k + 2)))?;
            if !x.is_finite() {
                return Err(parse_error(path, n, format!("column {}: non-finite value", k + 2)));
            }
            data.push(x);
        }
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(parse_error(path, 1, "no rows"));
    }
    let rows = Tensor::new(ids.len(), width.unwrap_or(0), data)?;
    Ok(EmbeddingTable { sample_ids: ids, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_tokens_share_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        std::fs::write(&p, "a\tHELLO WORLD\nb\tWORLD AGAIN HELLO\n").unwrap();
        let mut vocab = Vocabulary::new();
        let ann = load_gloss_annotations(&p, &mut vocab).unwrap();
        assert_eq!(ann.sequences, vec![vec![0, 1], vec![1, 2, 0]]);
        assert_eq!(vocab.tokens(), ["HELLO", "WORLD", "AGAIN"]);
        assert_eq!(ann.get("b"), Some(&[1, 2, 0][..]));
        assert_eq!(ann.to_text(&vocab), "a\tHELLO WORLD\nb\tWORLD AGAIN HELLO\n");
    }

    #[test]
    fn vocabulary_file_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.tsv");
        std::fs::write(&g, "a\tX Y Z\nb\tZ W\n").unwrap();
        let v = dir.path().join("vocab.txt");
        let mut first = Vocabulary::new();
        load_gloss_annotations(&g, &mut first).unwrap();
        first.save(&v).unwrap();
        let bytes = std::fs::read(&v).unwrap();
        let mut second = Vocabulary::load(&v).unwrap();
        assert_eq!(second, first);
        load_gloss_annotations(&g, &mut second).unwrap();
        second.save(&v).unwrap();
        assert_eq!(std::fs::read(&v).unwrap(), bytes);
    }

    #[test]
    fn duplicate_sample_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        std::fs::write(&p, "a\tX\nb\tY\na\tZ\n").unwrap();
        let err = load_gloss_annotations(&p, &mut Vocabulary::new()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    fn row(id: &str, n: usize) -> String {
        let vals: Vec<String> = (0..n).map(|i| format!("{}", i as f64 * 0.5)).collect();
        format!("{id},{}\n", vals.join(","))
    }

    #[test]
    fn embedding_width_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, row("a", 384) + &row("b", 383)).unwrap();
        let err = load_embeddings(&p).unwrap_err();
        assert!(err.to_string().contains("expected 384 columns"), "{err}");
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn embeddings_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, row("a", 384) + &row("b", 384)).unwrap();
        let t = load_embeddings(&p).unwrap();
        assert_eq!(t.rows.shape(), (2, 384));
        assert_eq!(t.row("b").unwrap()[3], 1.5);
        t.save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let again = load_embeddings(&p).unwrap();
        assert_eq!(again, t);
        again.save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
    }

    #[test]
    fn embedding_duplicate_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, row("a", 384) + &row("a", 384)).unwrap();
        assert!(matches!(load_embeddings(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn free_width_follows_first_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.csv");
        std::fs::write(&p, row("a", 3) + &row("b", 3)).unwrap();
        assert_eq!(load_vectors(&p, None).unwrap().rows.shape(), (2, 3));
        std::fs::write(&p, row("a", 3) + &row("b", 4)).unwrap();
        let err = load_vectors(&p, None).unwrap_err();
        assert!(err.to_string().contains("expected 3 columns"), "{err}");
        std::fs::write(&p, "").unwrap();
        assert!(load_vectors(&p, None).is_err());
    }
}
