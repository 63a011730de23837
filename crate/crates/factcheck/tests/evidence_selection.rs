//! Sentence segmentation, bag-of-words embeddings with a brute-force cosine
//! oracle, similarity ranking, and top-k selection.

use factcheck::evidence::{
    cosine, lead_k_summary, rank_sentences, select_top_k, split_sentences, split_sentences_with,
    BagOfWordsProvider, EmbeddingProvider, GuardList, SentenceList, SentenceRanking,
    DEFAULT_LEAD_K,
};
use factcheck::Result;
use proptest::prelude::*;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn splitting_handles_terminators_and_trailing_text() {
    assert_eq!(
        split_sentences("First one. Second one! Third one? Tail without period"),
        vec![
            "First one.",
            "Second one!",
            "Third one?",
            "Tail without period"
        ]
    );
    assert_eq!(split_sentences("Single."), vec!["Single."]);
    assert_eq!(split_sentences("   \t  "), Vec::<String>::new());
    assert_eq!(split_sentences(""), Vec::<String>::new());
}

#[test]
fn abbreviations_do_not_end_sentences() {
    let got = split_sentences("Dr. Reed spoke. The crowd listened.");
    assert_eq!(got, vec!["Dr. Reed spoke.", "The crowd listened."]);
    let got = split_sentences("See e.g. the appendix. Then stop.");
    assert_eq!(got, vec!["See e.g. the appendix.", "Then stop."]);
    // Guarding is case-insensitive.
    let got = split_sentences("DR. Reed spoke. Done.");
    assert_eq!(got, vec!["DR. Reed spoke.", "Done."]);
}

#[test]
fn decimals_and_inline_dots_do_not_split() {
    assert_eq!(
        split_sentences("It rose 3.5 percent. Then it fell."),
        vec!["It rose 3.5 percent.", "Then it fell."]
    );
    assert_eq!(
        split_sentences("Visit example.com today. Really."),
        vec!["Visit example.com today.", "Really."]
    );
}

#[test]
fn extra_guards_extend_the_default_list() {
    let plain = split_sentences("The Rev. spoke of Xq. Arc next. Done.");
    // "Xq." is unknown by default, so it terminates.
    assert_eq!(plain[0], "The Rev. spoke of Xq.");
    let guards = GuardList::with_extras(&["xq.".to_string()]);
    let guarded = split_sentences_with("The Rev. spoke of Xq. Arc next. Done.", &guards);
    assert_eq!(guarded, vec!["The Rev. spoke of Xq. Arc next.", "Done."]);
}

#[test]
fn empty_guard_list_splits_on_every_period() {
    let got = split_sentences_with("Dr. Reed spoke. Done.", &GuardList::empty());
    assert_eq!(got, vec!["Dr.", "Reed spoke.", "Done."]);
}

#[test]
fn sentence_list_is_ordered_and_never_empty_stringed() {
    let list = SentenceList::from_text("r1", "One. Two.  Three.", &GuardList::default());
    assert_eq!(list.source_record_id, "r1");
    assert_eq!(list.sentences, vec!["One.", "Two.", "Three."]);
    assert!(list.sentences.iter().all(|s| !s.trim().is_empty()));
}

/// Brute-force cosine over the raw formula, no shortcuts shared with the
/// production code path.
fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na2 = 0.0;
    let mut nb2 = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na2 += a[i] * a[i];
        nb2 += b[i] * b[i];
    }
    if na2 == 0.0 || nb2 == 0.0 {
        return 0.0;
    }
    dot / (na2.sqrt() * nb2.sqrt())
}

#[test]
fn cosine_hand_values() {
    assert!(close(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0));
    assert!(close(cosine(&[1.0, 1.0], &[1.0, 1.0]), 1.0));
    assert!(close(cosine(&[2.0, 0.0], &[1.0, 0.0]), 1.0));
    assert!(close(cosine(&[1.0, 0.0], &[-1.0, 0.0]), -1.0));
    // Zero vector scores zero against anything.
    assert!(close(cosine(&[0.0, 0.0], &[3.0, 4.0]), 0.0));
    assert!(close(cosine(&[1.0, 2.0], &[0.0, 0.0]), 0.0));
}

#[test]
fn bag_of_words_counts_match_manual_tally() {
    let provider = BagOfWordsProvider::fit(&["the cat sat", "the dog"]);
    // Vocabulary is sorted and deduplicated.
    assert_eq!(provider.vocabulary(), ["cat", "dog", "sat", "the"]);
    assert_eq!(provider.dimension(), 4);
    let vecs = provider
        .embed(&["the the cat", "unknown words only"])
        .unwrap();
    assert_eq!(vecs[0], vec![1.0, 0.0, 0.0, 2.0]);
    // Out-of-vocabulary tokens embed to all-zero counts.
    assert_eq!(vecs[1], vec![0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn ranking_orders_by_similarity_with_index_tiebreak() {
    let claim = "the red planet is mars";
    let list = SentenceList {
        sentences: vec![
            "unrelated filler words here".into(),
            "mars is the red planet".into(),
            "the planet is red".into(),
        ],
        source_record_id: "r".into(),
    };
    let mut corpus: Vec<String> = vec![claim.to_string()];
    corpus.extend(list.sentences.iter().cloned());
    let provider = BagOfWordsProvider::fit(&corpus);
    let ranking = rank_sentences(claim, &list, &provider).unwrap();
    let order: Vec<usize> = ranking.entries.iter().map(|(i, _)| *i).collect();
    assert_eq!(order[0], 1, "exact token match ranks first");
    assert_eq!(order, vec![1, 2, 0]);
    // Scores agree with the brute-force oracle on the same vectors.
    let mut texts: Vec<&str> = vec![claim];
    texts.extend(list.sentences.iter().map(String::as_str));
    let vectors = provider.embed(&texts).unwrap();
    for (idx, score) in &ranking.entries {
        assert!(close(*score, oracle_cosine(&vectors[0], &vectors[idx + 1])));
    }
    // Best-first ordering is monotone.
    for pair in ranking.entries.windows(2) {
        assert!(pair[0].1 >= pair[1].1);
    }
}

#[test]
fn equal_scores_rank_by_ascending_index() {
    let claim = "alpha beta";
    let list = SentenceList {
        sentences: vec![
            "alpha beta".into(),
            "alpha beta".into(),
            "alpha beta".into(),
        ],
        source_record_id: "r".into(),
    };
    let provider = BagOfWordsProvider::fit(&["alpha beta"]);
    let ranking = rank_sentences(claim, &list, &provider).unwrap();
    let order: Vec<usize> = ranking.entries.iter().map(|(i, _)| *i).collect();
    assert_eq!(order, vec![0, 1, 2]);
}

#[test]
fn empty_sentence_list_is_degenerate() {
    let list = SentenceList {
        sentences: vec![],
        source_record_id: "r9".into(),
    };
    let provider = BagOfWordsProvider::fit(&["anything"]);
    let err = rank_sentences("claim", &list, &provider).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(err.to_string().contains("r9"));
}

/// Provider that violates its own contract, for runtime-error coverage.
struct LyingProvider {
    declared_dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingProvider for LyingProvider {
    fn dimension(&self) -> usize {
        self.declared_dim
    }

    fn embed(&self, _texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        Ok(self.vectors.clone())
    }
}

#[test]
fn contract_violating_providers_are_runtime_errors() {
    let list = SentenceList {
        sentences: vec!["one sentence".into()],
        source_record_id: "r".into(),
    };
    // Too few vectors for claim + sentences.
    let short = LyingProvider {
        declared_dim: 2,
        vectors: vec![vec![1.0, 0.0]],
    };
    assert_eq!(
        rank_sentences("c", &list, &short).unwrap_err().exit_code(),
        3
    );
    // Wrong dimension.
    let narrow = LyingProvider {
        declared_dim: 3,
        vectors: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    };
    assert_eq!(
        rank_sentences("c", &list, &narrow).unwrap_err().exit_code(),
        3
    );
    // Non-finite component.
    let nan = LyingProvider {
        declared_dim: 2,
        vectors: vec![vec![1.0, f64::NAN], vec![0.0, 1.0]],
    };
    assert_eq!(rank_sentences("c", &list, &nan).unwrap_err().exit_code(), 3);
}

#[test]
fn selection_restores_document_order() {
    let list = SentenceList {
        sentences: vec!["First.".into(), "Second.".into(), "Third.".into()],
        source_record_id: "r".into(),
    };
    // Ranking prefers the last sentence, then the first.
    let ranking = SentenceRanking {
        entries: vec![(2, 0.9), (0, 0.5), (1, 0.1)],
    };
    assert_eq!(select_top_k(&ranking, &list, 2), "First. Third.");
    assert_eq!(select_top_k(&ranking, &list, 1), "Third.");
}

#[test]
fn selection_keeps_everything_when_k_exceeds_count() {
    let list = SentenceList {
        sentences: vec!["A.".into(), "B.".into()],
        source_record_id: "r".into(),
    };
    let ranking = SentenceRanking {
        entries: vec![(1, 0.8), (0, 0.2)],
    };
    assert_eq!(select_top_k(&ranking, &list, 10), "A. B.");
}

#[test]
#[should_panic(expected = "at least 1")]
fn selection_of_zero_sentences_panics() {
    let list = SentenceList {
        sentences: vec!["A.".into()],
        source_record_id: "r".into(),
    };
    let ranking = SentenceRanking {
        entries: vec![(0, 1.0)],
    };
    select_top_k(&ranking, &list, 0);
}

#[test]
fn lead_summary_takes_the_first_sentences() {
    let text = "One here. Two here. Three here. Four here.";
    assert_eq!(lead_k_summary(text, 2), "One here. Two here.");
    assert_eq!(
        lead_k_summary(text, DEFAULT_LEAD_K),
        "One here. Two here. Three here."
    );
    assert_eq!(lead_k_summary("Only one.", 5), "Only one.");
    assert_eq!(lead_k_summary("", 3), "");
}

proptest! {
    #[test]
    fn cosine_matches_oracle_and_stays_bounded(
        (a, b) in (1usize..8).prop_flat_map(|n| (
            proptest::collection::vec(-5.0f64..5.0, n),
            proptest::collection::vec(-5.0f64..5.0, n),
        )),
    ) {
        let got = cosine(&a, &b);
        prop_assert!(close(got, oracle_cosine(&a, &b)));
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&got));
        // Symmetry.
        prop_assert!(close(got, cosine(&b, &a)));
    }

    #[test]
    fn split_sentences_partitions_the_text(
        text in "[a-zA-Z .!?]{0,80}",
    ) {
        // Rejoining the sentences recovers every non-space character in
        // order: segmentation only cuts, never edits.
        let sentences = split_sentences(&text);
        let rejoined: String = sentences.concat();
        let mut expect: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
        expect.retain(|c| !c.is_whitespace());
        let mut got = rejoined;
        got.retain(|c| !c.is_whitespace());
        prop_assert_eq!(got, expect);
        for s in &sentences {
            prop_assert!(!s.trim().is_empty());
        }
    }

    #[test]
    fn ranking_is_stable_under_sentence_permutation(
        perm_seed in 0usize..24,
    ) {
        // The same sentences in a different order rank to the same
        // (sentence, score) multiset; only indices move.
        let claim = "mars is red";
        let base = [
            "mars is a red planet",
            "water freezes here",
            "red rocks everywhere on mars",
            "nothing relevant",
        ];
        let mut order: Vec<usize> = (0..4).collect();
        // Lehmer-style permutation from the seed.
        let mut s = perm_seed;
        for i in (1..4).rev() {
            order.swap(i, s % (i + 1));
            s /= i + 1;
        }
        let all: Vec<String> = std::iter::once(claim.to_string())
            .chain(base.iter().map(|s| s.to_string()))
            .collect();
        let provider = BagOfWordsProvider::fit(&all);
        let scores_for = |sentences: &[&str]| -> Vec<(String, String)> {
            let list = SentenceList {
                sentences: sentences.iter().map(|s| s.to_string()).collect(),
                source_record_id: "r".into(),
            };
            let ranking = rank_sentences(claim, &list, &provider).unwrap();
            ranking
                .entries
                .iter()
                .map(|(i, score)| (sentences[*i].to_string(), format!("{score:.12}")))
                .collect()
        };
        let baseline = scores_for(&base);
        let permuted: Vec<&str> = order.iter().map(|&i| base[i]).collect();
        let mut shuffled = scores_for(&permuted);
        let mut expect = baseline;
        expect.sort();
        shuffled.sort();
        prop_assert_eq!(shuffled, expect);
    }
}
