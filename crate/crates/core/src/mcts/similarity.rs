/// Character-level Levenshtein distance (unit insert/delete/substitute).
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the longer length, in `[0, 1]`.
///
/// Two empty strings are identical, so their value is 0.
pub fn normalized_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    edit_distance(a, b) as f64 / longest as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(normalized_similarity("abc", "abc"), 0.0);
        assert_eq!(normalized_similarity("kitten", "sitting"), 3.0 / 7.0);
        assert_eq!(normalized_similarity("a", ""), 1.0);
        assert_eq!(normalized_similarity("", ""), 0.0);
        assert_eq!(normalized_similarity("abcd", "wxyz"), 1.0);
        assert_eq!(edit_distance("flaw", "lawn"), 2);
        assert_eq!(edit_distance("héllo", "hello"), 1);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in "[a-d]{0,30}", b in "[a-d]{0,30}") {
            let s = normalized_similarity(&a, &b);
            prop_assert_eq!(s, normalized_similarity(&b, &a));
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn shared_prefix_never_increases_distance(p in "[a-d]{0,10}", a in "[a-d]{0,20}", b in "[a-d]{0,20}") {
            let with_prefix = edit_distance(&format!("{p}{a}"), &format!("{p}{b}"));
            prop_assert_eq!(with_prefix, edit_distance(&a, &b));
        }
    }
}
