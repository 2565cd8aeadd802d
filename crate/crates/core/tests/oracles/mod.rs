//! Slow, obviously-correct reference implementations used by the tests.

#![allow(dead_code)]

/// Minimum DTW objective over every admissible warping path, found by
/// explicit depth-first enumeration.
pub fn brute_force_dtw(x: &[f64], y: &[f64], q: f64, band: Option<usize>) -> f64 {
    fn walk(x: &[f64], y: &[f64], q: f64, band: Option<usize>, i: usize, j: usize, acc: f64, best: &mut f64) {
        if band.is_some_and(|r| i.abs_diff(j) > r) {
            return;
        }
        let acc = acc + (x[i] - y[j]).abs().powf(q);
        if i + 1 == x.len() && j + 1 == y.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < x.len() && j + 1 < y.len() {
            walk(x, y, q, band, i + 1, j + 1, acc, best);
        }
        if i + 1 < x.len() {
            walk(x, y, q, band, i + 1, j, acc, best);
        }
        if j + 1 < y.len() {
            walk(x, y, q, band, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(x, y, q, band, 0, 0, 0.0, &mut best);
    best.powf(1.0 / q)
}

/// Adjusted Rand index from explicit pair counting over all item pairs.
pub fn pair_counting_ari(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (mut both, mut only_a, mut only_b, mut neither) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let denom = (both + only_a) * (only_a + neither) + (both + only_b) * (only_b + neither);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (both * neither - only_a * only_b) / denom
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// LSTM forward pass written out step by step with named gate matrices.
/// Layout per gate (input, forget, candidate, output): W (h x f), U (h x h),
/// b (h); then dense weights (h) and dense bias.
pub fn unrolled_lstm(f: usize, h: usize, params: &[f64], input: &[f64]) -> f64 {
    let block = h * f + h * h + h;
    let w = |g: usize, k: usize, c: usize| params[g * block + k * f + c];
    let u = |g: usize, k: usize, c: usize| params[g * block + h * f + k * h + c];
    let b = |g: usize, k: usize| params[g * block + h * f + h * h + k];
    let dense = 4 * block;

    let mut hidden = vec![0.0; h];
    let mut cell = vec![0.0; h];
    for x in input.chunks(f) {
        let pre = |g: usize, k: usize, hidden: &[f64]| {
            let mut z = b(g, k);
            for c in 0..f {
                z += w(g, k, c) * x[c];
            }
            for c in 0..h {
                z += u(g, k, c) * hidden[c];
            }
            z
        };
        let mut next_h = vec![0.0; h];
        for k in 0..h {
            let i_gate = sigmoid(pre(0, k, &hidden));
            let f_gate = sigmoid(pre(1, k, &hidden));
            let cand = pre(2, k, &hidden).tanh();
            let o_gate = sigmoid(pre(3, k, &hidden));
            cell[k] = f_gate * cell[k] + i_gate * cand;
            next_h[k] = o_gate * cell[k].tanh();
        }
        hidden = next_h;
    }
    params[dense + h] + (0..h).map(|k| params[dense + k] * hidden[k]).sum::<f64>()
}

/// Central differences of `|unrolled_lstm - target|` for every parameter.
pub fn finite_differences(f: usize, h: usize, params: &[f64], input: &[f64], target: f64, eps: f64) -> Vec<f64> {
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|i| {
            probe[i] = params[i] + eps;
            let up = (unrolled_lstm(f, h, &probe, input) - target).abs();
            probe[i] = params[i] - eps;
            let down = (unrolled_lstm(f, h, &probe, input) - target).abs();
            probe[i] = params[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest elementwise relative error, with a small absolute floor on the
/// denominator for gradients that are zero in both.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-7))
        .fold(0.0, f64::max)
}

/// Every sequence of length `len` over `alphabet`.
pub fn all_sequences(alphabet: &[f64], len: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                alphabet.iter().map(move |&v| {
                    let mut t = s.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    out
}

/// Textbook full-matrix DTW with `q = 2`, for sequences too long to
/// enumerate.
pub fn full_matrix_dtw(x: &[f64], y: &[f64]) -> f64 {
    let (n, m) = (x.len(), y.len());
    let mut d = vec![vec![f64::INFINITY; m + 1]; n + 1];
    d[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let c = (x[i - 1] - y[j - 1]).powi(2);
            d[i][j] = c + d[i - 1][j - 1].min(d[i - 1][j]).min(d[i][j - 1]);
        }
    }
    d[n][m].sqrt()
}
