//! Edit distance and LCS-based similarity rates.

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut curr = vec![0; short.len() + 1];
    for (i, lc) in long.iter().enumerate() {
        curr[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let substitution = prev[j] + usize::from(lc != sc);
            curr[j + 1] = substitution.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[short.len()]
}

/// Length of a longest common subsequence, via Myers' O((N+M)·D) diff.
///
/// Common prefixes and suffixes are stripped first, so near-identical inputs
/// cost roughly linear time.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let suffix = a.iter().rev().zip(b.iter().rev()).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[..a.len() - suffix], &b[..b.len() - suffix]);
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return prefix + suffix;
    }

    let max = n + m;
    let offset = max as isize;
    // v[k + offset] = furthest x reached on diagonal k
    let mut v = vec![0usize; 2 * max + 2];
    for d in 0..=max as isize {
        let mut k = -d;
        while k <= d {
            let idx = (k + offset) as usize;
            let mut x = if k == -d || (k != d && v[idx - 1] < v[idx + 1]) {
                v[idx + 1]
            } else {
                v[idx - 1] + 1
            };
            let mut y = (x as isize - k) as usize;
            while x < n && y < m && a[x] == b[y] {
                x += 1;
                y += 1;
            }
            v[idx] = x;
            if x >= n && y >= m {
                return prefix + suffix + (n + m - d as usize) / 2;
            }
            k += 2;
        }
    }
    unreachable!("Myers search always terminates within n + m steps")
}

fn ratio(common: usize, a_len: usize, b_len: usize) -> f64 {
    let longest = a_len.max(b_len);
    if longest == 0 {
        1.0
    } else {
        common as f64 / longest as f64
    }
}

/// |LCS of lines| / max(line counts); two empty texts are fully similar.
pub fn line_similarity(pred: &str, succ: &str) -> f64 {
    let a: Vec<&str> = pred.lines().collect();
    let b: Vec<&str> = succ.lines().collect();
    ratio(lcs_len(&a, &b), a.len(), b.len())
}

/// Character-level counterpart of [`line_similarity`].
pub fn content_similarity(pred: &str, succ: &str) -> f64 {
    let a: Vec<char> = pred.chars().collect();
    let b: Vec<char> = succ.chars().collect();
    ratio(lcs_len(&a, &b), a.len(), b.len())
}
