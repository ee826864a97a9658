//! Frequency-greedy byte-pair encoding over characters.
//!
//! Text is split into chunks that start at whitespace, so merges never cross
//! a word boundary and decoding is plain concatenation. Ties between equally
//! frequent pairs go to the lexicographically smallest pair.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::VocabError;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const LIT_END: &str = "<lit-end>";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const LIT_END_ID: u32 = 2;
const SPECIALS: [&str; 3] = [PAD, UNK, LIT_END];

#[derive(Debug, Clone)]
pub struct SubwordVocab {
    alphabet: Vec<char>,
    merges: Vec<(String, String)>,
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
}

impl PartialEq for SubwordVocab {
    fn eq(&self, other: &Self) -> bool {
        self.alphabet == other.alphabet && self.merges == other.merges
    }
}

fn chunks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() && i > start {
            out.push(&text[start..i]);
            start = i;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let r = symbols.remove(i + 1);
            symbols[i].push_str(&r);
        }
        i += 1;
    }
}

impl SubwordVocab {
    /// Learns merges until the non-special table reaches `target_size`, or
    /// no pair occurs at least twice.
    pub fn train<'a, I>(corpus: I, target_size: usize) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut alphabet = std::collections::BTreeSet::new();
        let mut any = false;
        for text in corpus {
            any = true;
            for chunk in chunks(text) {
                *counts.entry(chunk).or_default() += 1;
                alphabet.extend(chunk.chars());
            }
        }
        if !any || alphabet.is_empty() {
            return Err(VocabError::EmptyCorpus);
        }
        if target_size < alphabet.len() {
            return Err(VocabError::SizeTooSmall {
                target: target_size,
                alphabet: alphabet.len(),
            });
        }
        let mut words: Vec<(Vec<String>, usize)> = counts
            .into_iter()
            .map(|(w, n)| (w.chars().map(String::from).collect(), n))
            .collect();
        let mut merges = Vec::new();
        while alphabet.len() + merges.len() < target_size {
            let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
            for (syms, n) in &words {
                for w in syms.windows(2) {
                    *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += n;
                }
            }
            let best = pairs
                .into_iter()
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
            let Some(((l, r), count)) = best else { break };
            if count < 2 {
                break;
            }
            let (l, r) = (l.to_string(), r.to_string());
            for (syms, _) in &mut words {
                merge_pair(syms, &l, &r);
            }
            merges.push((l, r));
        }
        Ok(Self::from_parts(alphabet.into_iter().collect(), merges))
    }

    fn from_parts(alphabet: Vec<char>, merges: Vec<(String, String)>) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(alphabet.iter().map(|c| c.to_string()));
        let mut ranks = HashMap::new();
        for (rank, (l, r)) in merges.iter().enumerate() {
            ranks.insert((l.clone(), r.clone()), rank);
            let joined = format!("{l}{r}");
            if !tokens.contains(&joined) {
                tokens.push(joined);
            }
        }
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        SubwordVocab {
            alphabet,
            merges,
            tokens,
            ids,
            ranks,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        id < SPECIALS.len() as u32
    }

    /// Segments one chunk by repeatedly applying the lowest-ranked merge.
    pub fn segment(&self, chunk: &str) -> Vec<String> {
        let mut syms: Vec<String> = chunk.chars().map(String::from).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            merge_pair(&mut syms, l, r);
        }
        syms
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        chunks(text)
            .into_iter()
            .flat_map(|c| self.segment(c))
            .map(|s| self.id(&s).unwrap_or(UNK_ID))
            .collect()
    }

    /// Concatenates the token strings; specials decode to nothing.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| !Self::is_special(id))
            .filter_map(|&id| self.token(id))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc())
            .expect("vocab serialization is infallible")
    }

    pub fn from_json(document: &str) -> Result<Self, VocabError> {
        let doc: SubwordDoc = serde_json::from_str(document)?;
        Self::from_doc(doc)
    }

    pub(crate) fn to_doc(&self) -> SubwordDoc {
        SubwordDoc {
            alphabet: self.alphabet.iter().map(|c| c.to_string()).collect(),
            format_version: 1,
            merges: self.merges.clone(),
            specials: SPECIALS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub(crate) fn from_doc(doc: SubwordDoc) -> Result<Self, VocabError> {
        if doc.format_version != 1 {
            return Err(VocabError::Version(doc.format_version));
        }
        if doc.specials != SPECIALS {
            return Err(VocabError::Inconsistent("unexpected special tokens".into()));
        }
        let mut alphabet = Vec::new();
        for s in &doc.alphabet {
            let mut cs = s.chars();
            match (cs.next(), cs.next()) {
                (Some(c), None) => alphabet.push(c),
                _ => return Err(VocabError::Inconsistent(format!("bad alphabet entry `{s}`"))),
            }
        }
        Ok(Self::from_parts(alphabet, doc.merges))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct SubwordDoc {
    alphabet: Vec<String>,
    format_version: u32,
    merges: Vec<(String, String)>,
    specials: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let v = SubwordVocab::train(["aaab", "aaac"], 4).unwrap();
        assert_eq!(v.merges(), &[("a".to_string(), "a".to_string())]);
        let ids = v.encode("aaab");
        let toks: Vec<&str> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, ["aa", "a", "b"]);
    }

    #[test]
    fn target_equal_to_alphabet_means_no_merges() {
        let v = SubwordVocab::train(["abc cab"], 4).unwrap();
        assert!(v.merges().is_empty());
        assert_eq!(v.len(), 3 + 4);
        assert!(matches!(
            SubwordVocab::train(["abc"], 2),
            Err(VocabError::SizeTooSmall { .. })
        ));
        assert!(matches!(
            SubwordVocab::train(std::iter::empty(), 10),
            Err(VocabError::EmptyCorpus)
        ));
    }

    #[test]
    fn deterministic_and_round_trips() {
        let corpus = ["set x to 5 then call print", "set total to x plus 3", "call show with 'hi'"];
        let a = SubwordVocab::train(corpus, 40).unwrap();
        let b = SubwordVocab::train(corpus, 40).unwrap();
        assert_eq!(a.merges(), b.merges());
        for line in corpus {
            assert_eq!(a.decode(&a.encode(line)), line);
        }
        assert!(a.encode("").is_empty());
        let back = SubwordVocab::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.encode(corpus[0]), a.encode(corpus[0]));
    }

    #[test]
    fn unknown_chars_map_to_unk() {
        let v = SubwordVocab::train(["abc"], 3).unwrap();
        assert_eq!(v.encode("aZ"), vec![v.id("a").unwrap(), UNK_ID]);
    }

    #[test]
    fn chunks_start_at_whitespace() {
        assert_eq!(chunks("a  bc d"), ["a", " ", " bc", " d"]);
        assert_eq!(chunks(" x"), [" x"]);
    }
}
