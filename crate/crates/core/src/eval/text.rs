//! Tokenization, LCS-based ROUGE-L and answer normalization.

/// Lowercases and splits on every maximal run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) memory.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over [`tokenize`]d text; 0 when either side is empty or nothing matches.
pub fn rouge_l_f1(candidate: &str, reference: &str) -> f64 {
    rouge_l_f1_tokens(&tokenize(candidate), &tokenize(reference))
}

pub fn rouge_l_f1_tokens(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_length(candidate, reference) as f64;
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    if precision + recall == 0.0 {
        return 0.0;
    }
    2.0 * precision * recall / (precision + recall)
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, drop punctuation, collapse whitespace and strip leading articles.
/// Numerals are not mapped to words.
pub fn normalize_answer(text: &str) -> String {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let mut words: Vec<&str> = cleaned.split_whitespace().collect();
    let leading = words.iter().take_while(|w| ARTICLES.contains(w)).count();
    words.drain(..leading);
    words.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    // Exponential oracle: longest subsequence of `a` that is also a subsequence of `b`.
    fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
        let is_subseq = |s: &[u8]| {
            let mut it = b.iter();
            s.iter().all(|c| it.any(|d| d == c))
        };
        (0u32..(1 << a.len()))
            .filter_map(|mask| {
                let sub: Vec<u8> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
                is_subseq(&sub).then_some(sub.len())
            })
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(toks("The cat, sat!"), vec!["the", "cat", "sat"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("a1-b2"), vec!["a1", "b2"]);
    }

    #[test]
    fn lcs_examples() {
        assert_eq!(lcs_length(&toks("the cat sat"), &toks("the cat ran")), 2);
        let x = toks("a b c d");
        assert_eq!(lcs_length(&x, &x), 4);
        assert_eq!(lcs_length(&toks("a b"), &toks("c d")), 0);
    }

    #[test]
    fn rouge_examples() {
        // LCS = 2 of 3 tokens on both sides
        let p = 2.0 / 3.0;
        let expected = 2.0 * p * p / (p + p);
        assert!((rouge_l_f1("the cat sat", "the cat ran") - expected).abs() < 1e-12);
        assert!((expected - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_l_f1("same words here", "same words here"), 1.0);
        assert_eq!(rouge_l_f1("", "anything"), 0.0);
        assert_eq!(rouge_l_f1("anything", ""), 0.0);
        assert_eq!(rouge_l_f1("x y", "z w"), 0.0);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_answer("The Red Car."), "red car");
        assert_eq!(normalize_answer("  YES "), "yes");
        assert_ne!(normalize_answer("3"), normalize_answer("three"));
        assert_eq!(normalize_answer("an  apple,  please"), "apple please");
        assert_eq!(normalize_answer("theory"), "theory");
    }

    proptest! {
        #[test]
        fn lcs_matches_brute_force(a in proptest::collection::vec(0u8..4, 0..9), b in proptest::collection::vec(0u8..4, 0..9)) {
            prop_assert_eq!(lcs_length(&a, &b), brute_lcs(&a, &b));
        }

        #[test]
        fn lcs_bounds(a in proptest::collection::vec(0u8..5, 0..30), b in proptest::collection::vec(0u8..5, 0..30)) {
            let l = lcs_length(&a, &b);
            prop_assert!(l <= a.len().min(b.len()));
            prop_assert_eq!(l == a.len(), brute_is_subsequence(&a, &b));
        }

        #[test]
        fn rouge_in_unit_interval_and_swap_symmetric(
            a in proptest::collection::vec("[a-d]{1,2}", 0..12),
            b in proptest::collection::vec("[a-d]{1,2}", 0..12),
        ) {
            let (ca, cb) = (a.join(" "), b.join(" "));
            let f = rouge_l_f1(&ca, &cb);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!((f - rouge_l_f1(&cb, &ca)).abs() < 1e-12);
        }
    }

    fn brute_is_subsequence(a: &[u8], b: &[u8]) -> bool {
        let mut it = b.iter();
        a.iter().all(|c| it.any(|d| d == c))
    }
}
