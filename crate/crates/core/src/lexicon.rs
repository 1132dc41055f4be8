//! Dictionary pseudo-translation and cross-lingual inverse cloze pair
//! generation.
//!
//! A training pair takes the title of a passage's source article as the
//! pseudo-query, translated into a language drawn uniformly from all lexicon
//! languages. Drawing the article's own language means the title stays
//! untranslated, so with L languages the no-translation probability is 1/L.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Article, Passage, Token};
use crate::error::{Error, Result};
use crate::rng::{self, stream, Rng};

/// One line of a lexicon file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub src_lang: String,
    pub tgt_lang: String,
    pub src_token: String,
    pub tgt_token: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TranslationLexicon {
    languages: Vec<String>,
    positions: HashMap<String, usize>,
    tables: HashMap<(usize, usize), HashMap<Token, Token>>,
}

impl TranslationLexicon {
    pub fn new(languages: Vec<String>) -> Result<Self> {
        let mut lex = Self::default();
        for l in languages {
            if lex.positions.contains_key(&l) {
                return Err(Error::InvalidConfig(format!("duplicate language `{l}`")));
            }
            lex.add_language(l)?;
        }
        Ok(lex)
    }

    fn add_language(&mut self, code: String) -> Result<usize> {
        if code.trim().is_empty() {
            return Err(Error::UnknownLanguage(code));
        }
        if let Some(&i) = self.positions.get(&code) {
            return Ok(i);
        }
        let i = self.languages.len();
        self.positions.insert(code.clone(), i);
        self.languages.push(code);
        Ok(i)
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn contains_language(&self, code: &str) -> bool {
        self.positions.contains_key(code)
    }

    fn position(&self, code: &str) -> Result<usize> {
        self.positions
            .get(code)
            .copied()
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    pub fn insert(&mut self, src: &str, src_token: &str, tgt: &str, tgt_token: &str) -> Result<()> {
        let (s, t) = (self.position(src)?, self.position(tgt)?);
        if s == t {
            return Err(Error::InvalidArgument(format!(
                "lexicon entry for `{src_token}` maps {src} onto itself"
            )));
        }
        self.tables
            .entry((s, t))
            .or_default()
            .insert(src_token.to_string(), tgt_token.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tables.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, src: &str, token: &str, tgt: &str) -> Option<&str> {
        let key = (*self.positions.get(src)?, *self.positions.get(tgt)?);
        self.tables.get(&key)?.get(token).map(String::as_str)
    }

    /// Per-token lookup; out-of-vocabulary tokens pass through unchanged.
    pub fn translate_tokens(&self, tokens: &[Token], src: &str, tgt: &str) -> Result<Vec<Token>> {
        let (s, t) = (self.position(src)?, self.position(tgt)?);
        if s == t {
            return Ok(tokens.to_vec());
        }
        let table = self.tables.get(&(s, t));
        Ok(tokens
            .iter()
            .map(|tok| {
                table
                    .and_then(|tb| tb.get(tok))
                    .cloned()
                    .unwrap_or_else(|| tok.clone())
            })
            .collect())
    }

    /// True when every language pair's table is injective and inverted by
    /// the reverse table.
    pub fn is_bijective(&self) -> bool {
        self.tables.iter().all(|(&(s, t), table)| {
            let reverse = self.tables.get(&(t, s));
            let distinct: BTreeSet<&Token> = table.values().collect();
            distinct.len() == table.len()
                && reverse.is_some_and(|rev| {
                    rev.len() == table.len() && table.iter().all(|(k, v)| rev.get(v) == Some(k))
                })
        })
    }

    /// All entries ordered by (source language, target language, source token).
    pub fn entries(&self) -> Vec<LexiconEntry> {
        let mut keys: Vec<&(usize, usize)> = self.tables.keys().collect();
        keys.sort();
        let mut out = Vec::with_capacity(self.len());
        for &(s, t) in keys {
            let table = &self.tables[&(s, t)];
            let mut pairs: Vec<(&Token, &Token)> = table.iter().collect();
            pairs.sort();
            out.extend(pairs.into_iter().map(|(a, b)| LexiconEntry {
                src_lang: self.languages[s].clone(),
                tgt_lang: self.languages[t].clone(),
                src_token: a.clone(),
                tgt_token: b.clone(),
            }));
        }
        out
    }

    /// Builds a lexicon from entries; languages are ordered by first appearance.
    pub fn from_entries<I: IntoIterator<Item = LexiconEntry>>(entries: I) -> Result<Self> {
        let mut lex = Self::default();
        for e in entries {
            lex.add_language(e.src_lang.clone())?;
            lex.add_language(e.tgt_lang.clone())?;
            lex.insert(&e.src_lang, &e.src_token, &e.tgt_lang, &e.tgt_token)?;
        }
        Ok(lex)
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LexiconEntry = serde_json::from_str(&line)
                .map_err(|e| Error::record(i + 1, "<line>", e.to_string()))?;
            entries.push(entry);
        }
        Self::from_entries(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read(BufReader::new(file))
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        crate::corpus::write_jsonl(writer, &self.entries())
    }
}

/// Uniform draw over `languages`; returning `src` means "do not translate".
pub fn sample_target_language<'a>(
    src: &str,
    languages: &'a [String],
    rng: &mut Rng,
) -> Result<&'a str> {
    if languages.is_empty() {
        return Err(Error::InvalidArgument("language list is empty".into()));
    }
    if !languages.iter().any(|l| l == src) {
        return Err(Error::UnknownLanguage(src.to_string()));
    }
    Ok(&languages[rng.gen_range(0..languages.len())])
}

/// A (translated title, positive passage) training instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct XictPair {
    pub pseudo_query: Vec<Token>,
    pub query_language: String,
    pub positive_passage_id: String,
    pub source_article_id: String,
}

pub fn make_xict_pair(
    title_tokens: &[Token],
    article_language: &str,
    passage: &Passage,
    lexicon: &TranslationLexicon,
    rng: &mut Rng,
) -> Result<XictPair> {
    if title_tokens.is_empty() {
        return Err(Error::EmptyTitle(passage.article_id.clone()));
    }
    if passage.language != article_language {
        return Err(Error::InvalidArgument(format!(
            "passage `{}` is in {} but its article is in {article_language}",
            passage.id, passage.language
        )));
    }
    let target = sample_target_language(article_language, lexicon.languages(), rng)?;
    Ok(XictPair {
        pseudo_query: lexicon.translate_tokens(title_tokens, article_language, target)?,
        query_language: target.to_string(),
        positive_passage_id: passage.id.clone(),
        source_article_id: passage.article_id.clone(),
    })
}

/// One pair per passage, in passage order.
pub fn generate_xict_dataset(
    articles: &[Article],
    passages: &[Passage],
    lexicon: &TranslationLexicon,
    seed: u64,
) -> Result<Vec<XictPair>> {
    let titles: HashMap<&str, (Vec<Token>, &str)> = articles
        .iter()
        .map(|a| (a.id.as_str(), (tokenize(&a.title), a.language.as_str())))
        .collect();
    let mut rng = rng::substream(seed, stream::XICT_PAIRS);
    passages
        .iter()
        .map(|p| {
            let (title, language) =
                titles
                    .get(p.article_id.as_str())
                    .ok_or_else(|| Error::OrphanPassage {
                        passage: p.id.clone(),
                        article: p.article_id.clone(),
                    })?;
            make_xict_pair(title, language, p, lexicon, &mut rng)
        })
        .collect()
}

/// Every token the collection can produce: passage and title tokens plus
/// their translations into every lexicon language. Sorted, deduplicated.
pub fn translation_closure<'a, I>(tokens: I, lexicon: &TranslationLexicon) -> Vec<Token>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut out = BTreeSet::new();
    for (language, token) in tokens {
        out.insert(token.to_string());
        if !lexicon.contains_language(language) {
            continue;
        }
        for tgt in lexicon.languages() {
            if let Some(t) = lexicon.lookup(language, token, tgt) {
                out.insert(t.to_string());
            }
        }
    }
    out.into_iter().collect()
}

/// The retriever vocabulary for a collection: [`translation_closure`] over
/// article titles and passage tokens.
pub fn collection_vocabulary(
    articles: &[Article],
    passages: &[Passage],
    lexicon: &TranslationLexicon,
) -> Vec<Token> {
    let titles: Vec<(&str, Vec<Token>)> = articles
        .iter()
        .map(|a| (a.language.as_str(), tokenize(&a.title)))
        .collect();
    let pairs = titles
        .iter()
        .flat_map(|(l, ts)| ts.iter().map(move |t| (*l, t.as_str())))
        .chain(passages.iter().flat_map(|p| {
            p.tokens
                .iter()
                .map(move |t| (p.language.as_str(), t.as_str()))
        }));
    translation_closure(pairs, lexicon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{
        generate_synthetic_corpus, split_articles, SyntheticCorpusConfig, PASSAGE_MAX_TOKENS,
    };
    use proptest::prelude::*;

    fn toy() -> TranslationLexicon {
        let mut lex = TranslationLexicon::new(vec!["en".into(), "pt".into()]).unwrap();
        for (a, b) in [("cat", "gato"), ("dog", "cão"), ("house", "casa")] {
            lex.insert("en", a, "pt", b).unwrap();
            lex.insert("pt", b, "en", a).unwrap();
        }
        lex
    }

    fn toks(s: &[&str]) -> Vec<Token> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn identity_and_round_trip() {
        let lex = toy();
        let t = toks(&["cat", "house"]);
        assert_eq!(lex.translate_tokens(&t, "en", "en").unwrap(), t);
        let pt = lex.translate_tokens(&t, "en", "pt").unwrap();
        assert_eq!(pt, toks(&["gato", "casa"]));
        assert_eq!(lex.translate_tokens(&pt, "pt", "en").unwrap(), t);
        assert!(lex.is_bijective());
    }

    #[test]
    fn oov_passes_through_in_place() {
        let lex = toy();
        let full = lex
            .translate_tokens(&toks(&["cat", "dog", "house"]), "en", "pt")
            .unwrap();
        let with_oov = lex
            .translate_tokens(&toks(&["cat", "zebra", "house"]), "en", "pt")
            .unwrap();
        let diff: Vec<usize> = (0..3).filter(|&i| full[i] != with_oov[i]).collect();
        assert_eq!(diff, vec![1]);
        assert_eq!(with_oov[1], "zebra");
    }

    #[test]
    fn unknown_language_is_an_error() {
        assert!(matches!(
            toy().translate_tokens(&toks(&["cat"]), "en", "fr"),
            Err(Error::UnknownLanguage(l)) if l == "fr"
        ));
        assert!(TranslationLexicon::new(vec!["en".into(), "en".into()]).is_err());
    }

    #[test]
    fn lexicon_file_round_trip() {
        let lex = toy();
        let mut buf = Vec::new();
        lex.write(&mut buf).unwrap();
        let back = TranslationLexicon::read(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.entries(), lex.entries());
        assert_eq!(back.languages(), lex.languages());
    }

    #[test]
    fn single_language_never_translates() {
        let langs = vec!["en".to_string()];
        let mut rng = rng::seeded(1);
        for _ in 0..100 {
            assert_eq!(
                sample_target_language("en", &langs, &mut rng).unwrap(),
                "en"
            );
        }
        assert!(sample_target_language("en", &[], &mut rng).is_err());
        assert!(sample_target_language("fr", &langs, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_uniform_within_four_sigma() {
        for l in [2usize, 4, 7] {
            let langs: Vec<String> = (0..l).map(|i| format!("x{i}")).collect();
            let n = 10_000;
            let mut rng = rng::seeded(99 + l as u64);
            let mut counts = vec![0usize; l];
            for _ in 0..n {
                let picked = sample_target_language("x0", &langs, &mut rng).unwrap();
                counts[langs.iter().position(|x| x == picked).unwrap()] += 1;
            }
            let p = 1.0 / l as f64;
            let bound = 4.0 * (p * (1.0 - p) / n as f64).sqrt();
            for c in counts {
                assert!((c as f64 / n as f64 - p).abs() < bound, "L={l} count={c}");
            }
        }
    }

    fn synthetic() -> (Vec<Article>, Vec<Passage>, TranslationLexicon) {
        let cfg = SyntheticCorpusConfig {
            num_languages: 4,
            vocab_concepts: 80,
            unattested_concepts: 10,
            num_articles: 40,
            concepts_per_article: 10,
            article_len_range: (20, 220),
            num_claims: 0,
            seed: 3,
            ..Default::default()
        };
        let c = generate_synthetic_corpus(&cfg).unwrap();
        let ps = split_articles(&c.articles, PASSAGE_MAX_TOKENS).unwrap();
        (c.articles, ps, c.lexicon)
    }

    #[test]
    fn one_pair_per_passage_and_round_trip_to_title() {
        let (arts, ps, lex) = synthetic();
        let pairs = generate_xict_dataset(&arts, &ps, &lex, 5).unwrap();
        let mut got: Vec<&str> = pairs
            .iter()
            .map(|p| p.positive_passage_id.as_str())
            .collect();
        let mut want: Vec<&str> = ps.iter().map(|p| p.id.as_str()).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
        for (pair, passage) in pairs.iter().zip(&ps) {
            assert_eq!(pair.source_article_id, passage.article_id);
            let art = arts.iter().find(|a| a.id == passage.article_id).unwrap();
            let back = lex
                .translate_tokens(&pair.pseudo_query, &pair.query_language, &art.language)
                .unwrap();
            assert_eq!(back, tokenize(&art.title));
        }
        assert_eq!(pairs, generate_xict_dataset(&arts, &ps, &lex, 5).unwrap());
    }

    #[test]
    fn counts_and_orphans() {
        let arts: Vec<Article> = (0..3)
            .map(|i| Article {
                id: format!("a{i}"),
                title: "cat dog".into(),
                body: "cat dog house cat".into(),
                language: "en".into(),
                published: None,
            })
            .collect();
        let ps = split_articles(&arts, 2).unwrap();
        assert_eq!(
            generate_xict_dataset(&arts, &ps, &toy(), 1).unwrap().len(),
            6
        );
        assert!(matches!(
            generate_xict_dataset(&arts[..1], &ps, &toy(), 1),
            Err(Error::OrphanPassage { .. })
        ));
    }

    #[test]
    fn single_language_pair_keeps_title() {
        let lex = TranslationLexicon::new(vec!["en".into()]).unwrap();
        let p = Passage {
            id: "a#0".into(),
            article_id: "a".into(),
            seq: 0,
            tokens: toks(&["x"]),
            language: "en".into(),
        };
        let title = toks(&["some", "title"]);
        let pair = make_xict_pair(&title, "en", &p, &lex, &mut rng::seeded(0)).unwrap();
        assert_eq!(pair.pseudo_query, title);
        assert!(matches!(
            make_xict_pair(&[], "en", &p, &lex, &mut rng::seeded(0)),
            Err(Error::EmptyTitle(_))
        ));
    }

    #[test]
    fn query_language_histogram_is_uniform() {
        // chi-square with L-1 = 3 degrees of freedom; 16.27 is the 0.999 quantile
        let (arts, ps, lex) = synthetic();
        let mut counts = [0f64; 4];
        for seed in 0..40 {
            for pair in generate_xict_dataset(&arts, &ps, &lex, seed).unwrap() {
                counts[lex
                    .languages()
                    .iter()
                    .position(|l| *l == pair.query_language)
                    .unwrap()] += 1.0;
            }
        }
        let expected = counts.iter().sum::<f64>() / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|c| (c - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn closure_covers_all_translations() {
        let lex = toy();
        let vocab = translation_closure([("en", "cat"), ("en", "zebra")], &lex);
        assert_eq!(vocab, toks(&["cat", "gato", "zebra"]));
    }

    proptest! {
        #[test]
        fn translation_preserves_length(words in prop::collection::vec("[a-z]{1,6}", 0..20)) {
            let lex = toy();
            let out = lex.translate_tokens(&words, "en", "pt").unwrap();
            prop_assert_eq!(out.len(), words.len());
        }
    }
}
