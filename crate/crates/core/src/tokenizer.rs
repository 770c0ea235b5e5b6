//! Byte-pair-encoding subword vocabulary shared by every model of a dataset.
//!
//! Words are split into characters followed by the word-final marker `</w>`,
//! which is itself an ordinary mergeable base symbol. Decoding closes a word
//! at every piece that ends with the marker.
//!
//! Id layout: `<pad>`, `<unk>`, `<s>`, `</s>`, one `<style:i>` per style,
//! then base symbols (marker first, characters in code point order), then
//! merged symbols in the order they were learned.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{StyleId, StyledSentence};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const START: u32 = 2;
pub const END: u32 = 3;
const FIXED_SPECIALS: usize = 4;

pub const WORD_END: &str = "</w>";

const MERGES_HEADER: &str = "#sst-bpe-merges v1";
const TABLE_HEADER: &str = "#sst-bpe-vocab v1";

#[derive(Debug, Clone)]
pub struct Vocabulary {
    n_styles: usize,
    /// Surface form of every id, specials included.
    tokens: Vec<String>,
    /// Non-special symbols only, so corpus text can never alias a special.
    symbol_to_id: HashMap<String, u32>,
    char_to_id: HashMap<char, u32>,
    merges: Vec<(String, String)>,
    merge_table: HashMap<(u32, u32), (usize, u32)>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_styles(&self) -> usize {
        self.n_styles
    }

    pub fn special_count(&self) -> usize {
        FIXED_SPECIALS + self.n_styles
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < self.special_count()
    }

    pub fn style_token(&self, style: StyleId) -> Result<u32> {
        if style.0 >= self.n_styles {
            return Err(Error::Input(format!(
                "style {style} is outside the {} declared styles",
                self.n_styles
            )));
        }
        Ok((FIXED_SPECIALS + style.0) as u32)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, symbol: &str) -> Option<u32> {
        self.symbol_to_id.get(symbol).copied()
    }

    /// Subword ids of a single word, word-final marker included.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        let marker = self.symbol_to_id[WORD_END];
        let mut symbols: Vec<u32> = word
            .chars()
            .map(|c| self.char_to_id.get(&c).copied().unwrap_or(UNK))
            .collect();
        symbols.push(marker);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_table.get(&(w[0], w[1])).map(|&(rank, _)| (rank, (w[0], w[1]))))
                .min_by_key(|&(rank, _)| rank);
            let Some((_, pair)) = best else { break };
            let merged = self.merge_table[&pair].1;
            let mut out = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && (symbols[i], symbols[i + 1]) == pair {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = out;
        }
        symbols
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        words.iter().flat_map(|w| self.encode_word(w.as_ref())).collect()
    }

    /// Reassembles words from subword ids. Specials are dropped unless `raw`,
    /// in which case each one becomes a standalone token.
    pub fn decode_with(&self, ids: &[u32], raw: bool) -> Result<Vec<String>> {
        let mut words = Vec::new();
        let mut pending = String::new();
        for &id in ids {
            let token = self.token(id).ok_or(Error::Range { id, size: self.len() })?;
            if self.is_special(id) {
                if raw {
                    if !pending.is_empty() {
                        words.push(std::mem::take(&mut pending));
                    }
                    words.push(token.to_owned());
                }
                continue;
            }
            match token.strip_suffix(WORD_END) {
                Some(stem) => {
                    pending.push_str(stem);
                    words.push(std::mem::take(&mut pending));
                }
                None => pending.push_str(token),
            }
        }
        if !pending.is_empty() {
            words.push(pending);
        }
        Ok(words)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        self.decode_with(ids, false)
    }

    pub fn merges_text(&self) -> String {
        let mut out = String::from(MERGES_HEADER);
        out.push('\n');
        for (a, b) in &self.merges {
            out.push_str(a);
            out.push(' ');
            out.push_str(b);
            out.push('\n');
        }
        out
    }

    pub fn table_text(&self) -> String {
        let mut out = format!("{TABLE_HEADER} styles={}\n", self.n_styles);
        for (id, token) in self.tokens.iter().enumerate() {
            out.push_str(&format!("{id}\t{token}\n"));
        }
        out
    }

    /// SHA-256 over the serialized merges and token table.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.merges_text().as_bytes());
        hasher.update(self.table_text().as_bytes());
        format!("{:x}", hasher.finalize())
    }

    /// Writes `<stem>.merges` and `<stem>.vocab`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let merges = dir.join(format!("{stem}.merges"));
        fs::write(&merges, self.merges_text()).map_err(|e| Error::io(&merges, e))?;
        let table = dir.join(format!("{stem}.vocab"));
        fs::write(&table, self.table_text()).map_err(|e| Error::io(&table, e))?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let merges_path = dir.join(format!("{stem}.merges"));
        let table_path = dir.join(format!("{stem}.vocab"));
        let merges_text = fs::read_to_string(&merges_path).map_err(|e| Error::io(&merges_path, e))?;
        let table_text = fs::read_to_string(&table_path).map_err(|e| Error::io(&table_path, e))?;
        Self::from_texts(&merges_text, &table_text, &merges_path, &table_path)
    }

    fn from_texts(merges_text: &str, table_text: &str, merges_path: &Path, table_path: &Path) -> Result<Self> {
        let bad = |path: &Path, line: usize, message: &str| Error::Format {
            path: path.to_owned(),
            line,
            message: message.to_owned(),
        };
        let mut lines = table_text.lines();
        let header = lines.next().ok_or_else(|| bad(table_path, 1, "empty vocabulary table"))?;
        let n_styles: usize = header
            .strip_prefix(TABLE_HEADER)
            .and_then(|rest| rest.trim().strip_prefix("styles="))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad(table_path, 1, "unsupported vocabulary header"))?;
        let mut tokens = Vec::new();
        for (i, line) in lines.enumerate() {
            let (id, token) = line
                .split_once('\t')
                .ok_or_else(|| bad(table_path, i + 2, "expected `id<TAB>token`"))?;
            if id.parse::<usize>().ok() != Some(tokens.len()) {
                return Err(bad(table_path, i + 2, "ids must be contiguous from 0"));
            }
            tokens.push(token.to_owned());
        }
        let mut mlines = merges_text.lines();
        if mlines.next() != Some(MERGES_HEADER) {
            return Err(bad(merges_path, 1, "unsupported merges header"));
        }
        let mut merges = Vec::new();
        for (i, line) in mlines.enumerate() {
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| bad(merges_path, i + 2, "expected `left right`"))?;
            merges.push((a.to_owned(), b.to_owned()));
        }
        let specials = FIXED_SPECIALS + n_styles;
        let base_end = tokens.len().checked_sub(merges.len()).filter(|&b| b > specials).ok_or_else(|| {
            Error::Config("merge count inconsistent with the vocabulary table".into())
        })?;
        let mut vocab = Vocabulary {
            n_styles,
            tokens,
            symbol_to_id: HashMap::new(),
            char_to_id: HashMap::new(),
            merges: Vec::new(),
            merge_table: HashMap::new(),
        };
        for id in specials..vocab.tokens.len() {
            let sym = vocab.tokens[id].clone();
            if id < base_end && sym != WORD_END {
                let mut chars = sym.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => {
                        vocab.char_to_id.insert(c, id as u32);
                    }
                    _ => return Err(Error::Config(format!("base symbol {sym:?} is not a single character"))),
                }
            }
            vocab.symbol_to_id.insert(sym, id as u32);
        }
        if !vocab.symbol_to_id.contains_key(WORD_END) {
            return Err(Error::Config("vocabulary lacks the word-final marker".into()));
        }
        for (rank, (a, b)) in merges.into_iter().enumerate() {
            let merged_id = (base_end + rank) as u32;
            let (Some(l), Some(r)) = (vocab.id_of(&a), vocab.id_of(&b)) else {
                return Err(Error::Config(format!("merge {a} {b} references unknown symbols")));
            };
            if vocab.tokens[merged_id as usize] != format!("{a}{b}") {
                return Err(Error::Config(format!("merge {a} {b} does not match token {merged_id}")));
            }
            vocab.merge_table.insert((l, r), (rank, merged_id));
            vocab.merges.push((a, b));
        }
        Ok(vocab)
    }
}

fn special_surfaces(n_styles: usize) -> Vec<String> {
    let mut out: Vec<String> = ["<pad>", "<unk>", "<s>", "</s>"].iter().map(|s| s.to_string()).collect();
    out.extend((0..n_styles).map(|i| format!("<style:{i}>")));
    out
}

struct WordEntry {
    symbols: Vec<u32>,
    count: i64,
}

/// Learns merges until the vocabulary holds `vocab_size` entries or no
/// adjacent pair is left to merge.
///
/// Candidate pairs are ranked by frequency; ties go to the pair that occurs
/// first in corpus order.
pub fn train_bpe<'a>(
    corpus: impl IntoIterator<Item = &'a StyledSentence>,
    n_styles: usize,
    vocab_size: usize,
) -> Result<Vocabulary> {
    let mut word_index: HashMap<&str, usize> = HashMap::new();
    let mut word_list: Vec<(&str, i64)> = Vec::new();
    for sentence in corpus {
        for word in &sentence.tokens {
            match word_index.get(word.as_str()) {
                Some(&i) => word_list[i].1 += 1,
                None => {
                    word_index.insert(word, word_list.len());
                    word_list.push((word, 1));
                }
            }
        }
    }
    if word_list.is_empty() {
        return Err(Error::Config("cannot train BPE on an empty corpus".into()));
    }

    let chars: BTreeSet<char> = word_list.iter().flat_map(|(w, _)| w.chars()).collect();
    let mut tokens = special_surfaces(n_styles);
    let specials = tokens.len();
    let base = 1 + chars.len();
    if vocab_size <= specials + base {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} must exceed {specials} specials + {base} base symbols"
        )));
    }
    let mut symbol_to_id = HashMap::new();
    let mut char_to_id = HashMap::new();
    let marker = tokens.len() as u32;
    tokens.push(WORD_END.to_owned());
    symbol_to_id.insert(WORD_END.to_owned(), marker);
    for c in &chars {
        let id = tokens.len() as u32;
        tokens.push(c.to_string());
        symbol_to_id.insert(c.to_string(), id);
        char_to_id.insert(*c, id);
    }

    let mut words: Vec<WordEntry> = word_list
        .iter()
        .map(|(w, count)| {
            let mut symbols: Vec<u32> = w.chars().map(|c| char_to_id[&c]).collect();
            symbols.push(marker);
            WordEntry { symbols, count: *count }
        })
        .collect();

    let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut pair_words: HashMap<(u32, u32), BTreeSet<usize>> = HashMap::new();
    for (wi, entry) in words.iter().enumerate() {
        for pair in entry.symbols.windows(2) {
            let key = (pair[0], pair[1]);
            *pair_counts.entry(key).or_default() += entry.count;
            pair_words.entry(key).or_default().insert(wi);
        }
    }

    let mut merges = Vec::new();
    let mut merge_table = HashMap::new();
    while tokens.len() < vocab_size {
        let Some(best_count) = pair_counts.values().copied().filter(|&c| c > 0).max() else {
            break;
        };
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c == best_count)
            .map(|(&pair, _)| {
                let first_word = *pair_words[&pair].first().expect("counted pair has a word");
                let pos = words[first_word]
                    .symbols
                    .windows(2)
                    .position(|w| (w[0], w[1]) == pair)
                    .expect("indexed word contains pair");
                ((first_word, pos), pair)
            })
            .min()
            .map(|(_, pair)| pair)
            .expect("at least one pair has the best count");

        let merged_id = tokens.len() as u32;
        let surface = format!("{}{}", tokens[best.0 as usize], tokens[best.1 as usize]);
        merges.push((tokens[best.0 as usize].clone(), tokens[best.1 as usize].clone()));
        merge_table.insert(best, (merges.len() - 1, merged_id));
        symbol_to_id.insert(surface.clone(), merged_id);
        tokens.push(surface);

        let affected: Vec<usize> = pair_words[&best].iter().copied().collect();
        for wi in affected {
            let entry = &mut words[wi];
            for pair in entry.symbols.windows(2) {
                let key = (pair[0], pair[1]);
                *pair_counts.get_mut(&key).expect("pair was counted") -= entry.count;
                if let Some(set) = pair_words.get_mut(&key) {
                    set.remove(&wi);
                }
            }
            let mut out = Vec::with_capacity(entry.symbols.len());
            let mut i = 0;
            while i < entry.symbols.len() {
                if i + 1 < entry.symbols.len() && (entry.symbols[i], entry.symbols[i + 1]) == best {
                    out.push(merged_id);
                    i += 2;
                } else {
                    out.push(entry.symbols[i]);
                    i += 1;
                }
            }
            entry.symbols = out;
            for pair in entry.symbols.windows(2) {
                let key = (pair[0], pair[1]);
                *pair_counts.entry(key).or_default() += entry.count;
                pair_words.entry(key).or_default().insert(wi);
            }
        }
        pair_counts.retain(|_, c| *c > 0);
        pair_words.retain(|_, set| !set.is_empty());
    }
    if tokens.len() < vocab_size {
        log::warn!(
            "BPE ran out of pairs: vocabulary has {} entries, budget was {vocab_size}",
            tokens.len()
        );
    }

    Ok(Vocabulary {
        n_styles,
        tokens,
        symbol_to_id,
        char_to_id,
        merges,
        merge_table,
    })
}
