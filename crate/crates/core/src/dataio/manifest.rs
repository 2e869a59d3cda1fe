//! Vocabulary and manifest text files.
//!
//! Manifest lines are `<id>\t<feature path relative to the manifest>\t<tokens>`
//! with space-separated token strings. The vocabulary file holds one token
//! per line; the line index is the id.

use std::fs;
use std::path::Path;

use super::{read_features, write_features, Utterance};
use crate::error::{Error, Result};

pub const BLANK: &str = "<blank>";
pub const SOS_EOS: &str = "<sos/eos>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 {
            return Err(Error::Config(format!(
                "vocabulary needs blank, sos/eos and at least one token, got {}",
                tokens.len()
            )));
        }
        Ok(Self { tokens })
    }

    /// `<blank>`, then `a`, `b`, ... (or `t27`, ... past `z`), then `<sos/eos>`.
    pub fn synthetic(size: usize) -> Result<Self> {
        let spoken = size.saturating_sub(2);
        let mut tokens = vec![BLANK.to_string()];
        tokens.extend((0..spoken).map(|i| {
            if spoken <= 26 {
                ((b'a' + i as u8) as char).to_string()
            } else {
                format!("t{}", i + 1)
            }
        }));
        tokens.push(SOS_EOS.to_string());
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn blank(&self) -> usize {
        0
    }

    pub fn sos_eos(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::to_string).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Utterances listed in a manifest, in file order.
pub fn load_manifest(path: &Path, vocab: &Vocabulary) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(id), Some(rel), Some(toks)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line: line_no,
                message: "expected <id>\\t<feature path>\\t<tokens>".into(),
            });
        };
        if id.is_empty() || rel.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty id or feature path".into(),
            });
        }
        let tokens = toks
            .split_whitespace()
            .map(|t| {
                vocab.id(t).ok_or_else(|| Error::Vocabulary {
                    line: line_no,
                    token: t.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let features = read_features(&base.join(rel))?;
        out.push(Utterance {
            id: id.to_string(),
            features,
            tokens,
        });
    }
    Ok(out)
}

/// Write `<dir>/<name>.tsv` plus one feature file per utterance under
/// `<dir>/feats/`.
pub fn write_dataset(dir: &Path, name: &str, dataset: &[Utterance], vocab: &Vocabulary) -> Result<()> {
    let feats = dir.join("feats");
    fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
    let mut manifest = String::new();
    for utt in dataset {
        let rel = format!("feats/{}.mxrf", utt.id);
        write_features(&utt.features, &dir.join(&rel))?;
        manifest.push_str(&format!("{}\t{}\t{}\n", utt.id, rel, vocab.render(&utt.tokens)));
    }
    let path = dir.join(format!("{name}.tsv"));
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}
