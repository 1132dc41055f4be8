use std::collections::HashMap;

use xict_core::eval::recall_at_k;
use xict_core::retrieval::{Bm25Retriever, DenseRetriever};
use xict_core::*;

fn toks(s: &str) -> Vec<Token> {
    s.split_whitespace().map(str::to_string).collect()
}

fn passage(id: &str, article: &str, lang: &str, text: &str) -> Passage {
    Passage {
        id: id.into(),
        article_id: article.into(),
        seq: 0,
        tokens: toks(text),
        language: lang.into(),
    }
}

fn claim(id: &str, lang: &str, text: &str) -> Claim {
    Claim {
        id: id.into(),
        text: text.into(),
        claimer: String::new(),
        claim_date: String::new(),
        language: lang.into(),
        label: Some(VerdictLabel::True),
    }
}

fn collection() -> Vec<Passage> {
    vec![
        passage("p3", "a3", "en", "gamma delta delta"),
        passage("p1", "a1", "en", "alpha beta"),
        passage("p2", "a2", "en", "beta gamma gamma gamma"),
        passage("p4", "a4", "pt", "alpha alpha"),
        passage("p0", "a0", "en", "delta"),
    ]
}

fn encoder() -> EncoderParams {
    let vocab = Vocabulary::new(toks("alpha beta gamma delta"));
    init_params(vocab, 3, 11, 1.0).unwrap()
}

#[test]
fn full_k_is_a_score_sorted_permutation() {
    let params = encoder();
    let passages = collection();
    let index = build_dense_index(&params, &passages).unwrap();
    let result = dense_top_k(&index, &params, &toks("beta gamma"), passages.len(), None).unwrap();
    let mut ids: Vec<&str> = result.passage_ids().collect();
    assert!(result.ranked.windows(2).all(|w| w[0].score >= w[1].score));
    ids.sort();
    assert_eq!(ids, ["p0", "p1", "p2", "p3", "p4"]);
    assert!(!result.short);
}

#[test]
fn k_beyond_filtered_collection_returns_all_flagged_short() {
    let params = encoder();
    let index = build_dense_index(&params, &collection()).unwrap();
    let result = dense_top_k(&index, &params, &toks("alpha"), 3, Some("pt")).unwrap();
    assert_eq!(result.passage_ids().collect::<Vec<_>>(), ["p4"]);
    assert!(result.short);
}

#[test]
fn bm25_top_one_maximizes_the_term_formula() {
    let passages = collection();
    let index = build_bm25_index(&passages, Bm25Params::default()).unwrap();
    let (k1, b) = (1.5, 0.75);
    let en: Vec<&Passage> = passages.iter().filter(|p| p.language == "en").collect();
    let avg = en.iter().map(|p| p.tokens.len()).sum::<usize>() as f64 / en.len() as f64;
    for term in ["beta", "gamma", "delta"] {
        let df = en
            .iter()
            .filter(|p| p.tokens.iter().any(|t| t == term))
            .count() as f64;
        let n = en.len() as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let term_score = |p: &Passage| {
            let tf = p.tokens.iter().filter(|t| *t == term).count() as f64;
            idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * p.tokens.len() as f64 / avg))
        };
        let best = en
            .iter()
            .max_by(|x, y| {
                term_score(x)
                    .total_cmp(&term_score(y))
                    .then(y.id.cmp(&x.id))
            })
            .unwrap();
        let c = claim("q", "en", &format!("{term} {term} {term}"));
        let top = bm25_top_k(&index, &c, 1).unwrap();
        assert_eq!(top.ranked[0].passage_id, best.id, "{term}");
    }
}

#[test]
fn bm25_scores_zero_without_shared_terms() {
    let index = build_bm25_index(&collection(), Bm25Params::default()).unwrap();
    assert_eq!(bm25_score(&index, "en", &toks("omega"), "p1").unwrap(), 0.0);
    assert!(bm25_score(&index, "en", &toks("omega"), "nope").is_err());
}

#[test]
fn translated_all_oov_claim_behaves_like_zero_query() {
    let params = encoder();
    let passages = collection();
    let index = build_dense_index(&params, &passages).unwrap();
    let mut lexicon = TranslationLexicon::new(vec!["en".into(), "pt".into()]).unwrap();
    lexicon.insert("pt", "alfa", "en", "alpha").unwrap();
    let c = claim("q", "pt", "zzz yyy");
    let translated = translate_then_retrieve(&c, "en", &lexicon, &index, &params, 2).unwrap();
    assert!(translated.ranked.iter().all(|s| s.score == 0.0));
    assert_eq!(translated.passage_ids().collect::<Vec<_>>(), ["p0", "p1"]);
    assert_eq!(translated.backend, Backend::TranslateDense);
}

#[test]
fn ablation_identity_and_emptiness() {
    let passages = collection();
    assert_eq!(ablate_language(&passages, "fr"), passages);
    let pt_only: Vec<Passage> = passages
        .iter()
        .filter(|p| p.language == "pt")
        .cloned()
        .collect();
    assert!(ablate_language(&pt_only, "pt").is_empty());
}

#[test]
fn recall_is_one_at_full_k_and_for_own_title() {
    let params = encoder();
    let passages = collection();
    let index = build_dense_index(&params, &passages).unwrap();
    let retriever = DenseRetriever::new(&index, &params, false).unwrap();
    let coll = PassageCollection::new(passages.clone()).unwrap();
    let pairs: Vec<XictPair> = passages
        .iter()
        .map(|p| XictPair {
            pseudo_query: toks("alpha gamma"),
            query_language: "en".into(),
            positive_passage_id: p.id.clone(),
            source_article_id: p.article_id.clone(),
        })
        .collect();
    assert_eq!(
        recall_at_k(&retriever, &pairs, &coll, passages.len()).unwrap(),
        1.0
    );

    let single = vec![passage("s0", "s", "en", "beta delta")];
    let s_coll = PassageCollection::new(single.clone()).unwrap();
    let s_index = build_bm25_index(&single, Bm25Params::default()).unwrap();
    let own_title = XictPair {
        pseudo_query: toks("beta"),
        query_language: "en".into(),
        positive_passage_id: "s0".into(),
        source_article_id: "s".into(),
    };
    assert_eq!(
        recall_at_k(&Bm25Retriever(&s_index), &[own_title], &s_coll, 1).unwrap(),
        1.0
    );
}

#[test]
fn l4_sampling_is_uniform() {
    let languages: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let mut rng = rng::seeded(77);
    let n = 40_000;
    let mut counts: HashMap<String, usize> = HashMap::new();
    for _ in 0..n {
        *counts
            .entry(
                sample_target_language("a", &languages, &mut rng)
                    .unwrap()
                    .to_string(),
            )
            .or_default() += 1;
    }
    let p = 0.25;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    for l in &languages {
        let freq = counts[l] as f64 / n as f64;
        assert!((freq - p).abs() <= 4.0 * sigma, "{l}: {freq}");
    }
}
