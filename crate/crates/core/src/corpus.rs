//! Style-labelled, non-parallel corpora in the `<domain>.<split>.<style>` layout.
//!
//! Every split file holds one pre-tokenized sentence per line. Sentences are
//! kept exactly as released: no case folding, no re-tokenization.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StyleId(pub usize);

impl fmt::Display for StyleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Declared style inventory. Index `i` is the integer label used in file names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleSet {
    names: Vec<String>,
}

impl StyleSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::Config(format!(
                "a style set needs at least 2 styles, got {}",
                names.len()
            )));
        }
        Ok(StyleSet { names })
    }

    /// The two-style sentiment inventory used by the Yelp and Amazon releases.
    pub fn sentiment() -> Self {
        StyleSet {
            names: vec!["negative".into(), "positive".into()],
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = StyleId> + '_ {
        (0..self.names.len()).map(StyleId)
    }

    pub fn contains(&self, style: StyleId) -> bool {
        style.0 < self.names.len()
    }

    pub fn name(&self, style: StyleId) -> Option<&str> {
        self.names.get(style.0).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StyledSentence {
    pub tokens: Vec<String>,
    pub style: StyleId,
}

impl StyledSentence {
    pub fn new(tokens: Vec<String>, style: StyleId) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Input("a sentence needs at least one token".into()));
        }
        Ok(StyledSentence { tokens, style })
    }

    /// Splits `text` on whitespace.
    pub fn parse(text: &str, style: StyleId) -> Result<Self> {
        Self::new(text.split_whitespace().map(str::to_owned).collect(), style)
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    sentences_by_style: BTreeMap<StyleId, Vec<StyledSentence>>,
}

impl DatasetSplit {
    /// An empty split with one (empty) list per declared style.
    pub fn empty(name: SplitName, styles: &StyleSet) -> Self {
        DatasetSplit {
            name,
            sentences_by_style: styles.ids().map(|s| (s, Vec::new())).collect(),
        }
    }

    /// Builds a split from sentences, grouping them by their style label.
    pub fn from_sentences(
        name: SplitName,
        styles: &StyleSet,
        sentences: impl IntoIterator<Item = StyledSentence>,
    ) -> Result<Self> {
        let mut split = Self::empty(name, styles);
        for sentence in sentences {
            split.push(sentence)?;
        }
        Ok(split)
    }

    pub fn push(&mut self, sentence: StyledSentence) -> Result<()> {
        match self.sentences_by_style.get_mut(&sentence.style) {
            Some(list) => {
                list.push(sentence);
                Ok(())
            }
            None => Err(Error::Input(format!(
                "style {} is not declared for this split",
                sentence.style
            ))),
        }
    }

    pub fn styles(&self) -> impl Iterator<Item = StyleId> + '_ {
        self.sentences_by_style.keys().copied()
    }

    pub fn style_count(&self) -> usize {
        self.sentences_by_style.len()
    }

    pub fn sentences(&self, style: StyleId) -> &[StyledSentence] {
        self.sentences_by_style
            .get(&style)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// All sentences, style by style, each style in file order.
    pub fn iter(&self) -> impl Iterator<Item = &StyledSentence> {
        self.sentences_by_style.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.sentences_by_style.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Styles that have at least one sentence.
    pub fn populated_styles(&self) -> Vec<StyleId> {
        self.sentences_by_style
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(s, _)| *s)
            .collect()
    }

    /// Writes the split back in the release layout.
    pub fn write(&self, root: &Path, domain: &str) -> Result<()> {
        for (style, sentences) in &self.sentences_by_style {
            let path = split_path(root, domain, self.name, *style);
            let mut out = Vec::new();
            for s in sentences {
                out.extend_from_slice(s.text().as_bytes());
                out.push(b'\n');
            }
            fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub domain: String,
    pub styles: StyleSet,
    pub train: DatasetSplit,
    pub dev: DatasetSplit,
    pub test: DatasetSplit,
}

impl Dataset {
    pub fn split(&self, name: SplitName) -> &DatasetSplit {
        match name {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }
}

pub fn split_path(root: &Path, domain: &str, split: SplitName, style: StyleId) -> PathBuf {
    root.join(format!("{domain}.{split}.{style}"))
}

/// Reads one split file. Blank lines are rejected with their 1-based line number.
pub fn read_sentences(path: &Path, style: StyleId) -> Result<Vec<StyledSentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    for (i, line) in text.split_terminator('\n').enumerate() {
        let tokens: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if tokens.is_empty() {
            return Err(Error::Format {
                path: path.to_owned(),
                line: i + 1,
                message: "blank line".into(),
            });
        }
        sentences.push(StyledSentence { tokens, style });
    }
    Ok(sentences)
}

pub fn load_split(root: &Path, domain: &str, split: SplitName, styles: &StyleSet) -> Result<DatasetSplit> {
    let mut out = DatasetSplit::empty(split, styles);
    for style in styles.ids() {
        let path = split_path(root, domain, split, style);
        let sentences = read_sentences(&path, style)?;
        out.sentences_by_style.insert(style, sentences);
    }
    Ok(out)
}

/// Loads train, dev and test for every declared style.
pub fn load_dataset(root: &Path, domain: &str, styles: &StyleSet) -> Result<Dataset> {
    Ok(Dataset {
        domain: domain.to_owned(),
        styles: styles.clone(),
        train: load_split(root, domain, SplitName::Train, styles)?,
        dev: load_split(root, domain, SplitName::Dev, styles)?,
        test: load_split(root, domain, SplitName::Test, styles)?,
    })
}

/// Human references, line-aligned with the test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceSet {
    n_refs: usize,
    references: BTreeMap<(StyleId, usize), Vec<Vec<String>>>,
}

impl ReferenceSet {
    pub fn n_refs(&self) -> usize {
        self.n_refs
    }

    pub fn get(&self, style: StyleId, index: usize) -> Option<&[Vec<String>]> {
        self.references.get(&(style, index)).map(Vec::as_slice)
    }

    /// References for every test sentence of `style`, in test order.
    pub fn for_style(&self, style: StyleId) -> Vec<Vec<Vec<String>>> {
        self.references
            .range((style, 0)..=(style, usize::MAX))
            .map(|(_, refs)| refs.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }
}

pub fn reference_path(root: &Path, source: &str, style: StyleId) -> PathBuf {
    root.join(format!("reference.{source}.{style}"))
}

/// Loads `reference.<source>.<style>` for every source and every style of `test`.
pub fn load_references(root: &Path, sources: &[String], test: &DatasetSplit) -> Result<ReferenceSet> {
    if sources.is_empty() {
        return Err(Error::Config("at least one reference source is required".into()));
    }
    let mut references: BTreeMap<(StyleId, usize), Vec<Vec<String>>> = BTreeMap::new();
    for style in test.styles() {
        let expected = test.sentences(style).len();
        for source in sources {
            let path = reference_path(root, source, style);
            let lines = read_sentences(&path, style)?;
            if lines.len() != expected {
                return Err(Error::Alignment {
                    what: path.display().to_string(),
                    expected,
                    found: lines.len(),
                });
            }
            for (i, line) in lines.into_iter().enumerate() {
                references.entry((style, i)).or_default().push(line.tokens);
            }
        }
    }
    Ok(ReferenceSet {
        n_refs: sources.len(),
        references,
    })
}

/// Draws exactly `n_per_style` sentences per style without replacement,
/// keeping the surviving sentences in their original order.
pub fn subsample(split: &DatasetSplit, n_per_style: usize, seed: u64) -> Result<DatasetSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences_by_style = BTreeMap::new();
    for (style, sentences) in &split.sentences_by_style {
        if n_per_style > sentences.len() {
            return Err(Error::Size {
                style: style.0,
                requested: n_per_style,
                available: sentences.len(),
            });
        }
        let mut picked = rand::seq::index::sample(&mut rng, sentences.len(), n_per_style).into_vec();
        picked.sort_unstable();
        sentences_by_style.insert(*style, picked.into_iter().map(|i| sentences[i].clone()).collect());
    }
    Ok(DatasetSplit {
        name: split.name,
        sentences_by_style,
    })
}

/// Writes plain lines, one per entry.
pub fn write_lines<I, S>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for line in lines {
        writeln!(file, "{}", line.as_ref()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
