//! Reference implementations used as oracles by the integration tests.
//! They work on raw logits and token lists and share no code with the library.

#![allow(dead_code)]

/// Softmax of one logit row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Logit row used at position `d` after `prefix`: all depth-`d` prefixes come
/// after the `1 + v + ... + v^(d-1)` rows of shallower depths.
pub fn row_of(v: usize, prefix: &[usize]) -> usize {
    let mut offset = 0;
    let mut width = 1;
    for _ in 0..prefix.len() {
        offset += width;
        width *= v;
    }
    let lex = prefix.iter().fold(0, |acc, &t| acc * v + t);
    offset + lex
}

pub fn prob(v: usize, params: &[f64], tokens: &[usize]) -> f64 {
    let mut p = 1.0;
    for d in 0..tokens.len() {
        let r = row_of(v, &tokens[..d]);
        p *= softmax(&params[r * v..(r + 1) * v])[tokens[d]];
    }
    p
}

/// Every sequence of length `t` over `v` tokens, lexicographic.
pub fn all_sequences(v: usize, t: usize) -> Vec<Vec<usize>> {
    let total = v.pow(t as u32);
    (0..total)
        .map(|mut n| {
            let mut s = vec![0; t];
            for pos in (0..t).rev() {
                s[pos] = n % v;
                n /= v;
            }
            s
        })
        .collect()
}

/// All row softmaxes, row-major.
pub fn all_rows(v: usize, params: &[f64]) -> Vec<f64> {
    params.chunks(v).flat_map(softmax).collect()
}

/// The outcome space of one case with each sequence's logit indices and
/// verdict precomputed.
pub struct Space {
    pub v: usize,
    pub seqs: Vec<Vec<usize>>,
    /// For each sequence, the flat logit index chosen at each position.
    pub picks: Vec<Vec<usize>>,
    pub correct: Vec<bool>,
}

impl Space {
    pub fn new(v: usize, t: usize, correct: &[Vec<usize>]) -> Self {
        let seqs = all_sequences(v, t);
        let picks = seqs
            .iter()
            .map(|s| (0..t).map(|d| row_of(v, &s[..d]) * v + s[d]).collect())
            .collect();
        let correct = seqs.iter().map(|s| correct.contains(s)).collect();
        Self {
            v,
            seqs,
            picks,
            correct,
        }
    }

    /// `(J1, delta)` with both masses summed directly.
    pub fn masses(&self, params: &[f64]) -> (f64, f64) {
        let rows = all_rows(self.v, params);
        let (mut hit, mut miss) = (0.0, 0.0);
        for (pick, &ok) in self.picks.iter().zip(&self.correct) {
            let p: f64 = pick.iter().map(|&i| rows[i]).product();
            if ok {
                hit += p;
            } else {
                miss += p;
            }
        }
        (hit, miss)
    }
}

/// `(J1, delta)` with both masses summed directly.
pub fn masses(v: usize, t: usize, params: &[f64], correct: &[Vec<usize>]) -> (f64, f64) {
    Space::new(v, t, correct).masses(params)
}

pub fn central_difference(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut w = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = w[i];
            w[i] = x0 + h;
            let up = f(&w);
            w[i] = x0 - h;
            let down = f(&w);
            w[i] = x0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Finite-difference `grad J_k`. Below `J1 = 1/2` it differences
/// `1 - exp(k ln(1 - J1))` through `ln_1p`/`exp_m1`, above it `-delta^k`
/// (the constant 1 drops out); either way no leading digits cancel.
pub fn fd_grad_jk(
    v: usize,
    t: usize,
    params: &[f64],
    correct: &[Vec<usize>],
    k: usize,
    h: f64,
) -> Vec<f64> {
    let space = Space::new(v, t, correct);
    let (hit, _) = space.masses(params);
    if hit < 0.5 {
        central_difference(params, h, |x| {
            -(k as f64 * (-space.masses(x).0).ln_1p()).exp_m1()
        })
    } else {
        central_difference(params, h, |x| -space.masses(x).1.powi(k as i32))
    }
}

/// Analytic `grad J_k = k delta^(k-1) grad J1`. The mass gradient is summed
/// over whichever side of the verifier carries less mass, so the sum does
/// not cancel: `grad J1` directly, or `-grad delta` over the incorrect side.
pub fn analytic_grad_jk(
    v: usize,
    t: usize,
    params: &[f64],
    correct: &[Vec<usize>],
    k: usize,
) -> Vec<f64> {
    let space = Space::new(v, t, correct);
    let rows = all_rows(v, params);
    let (hit, miss) = space.masses(params);
    let use_correct = hit < 0.5;
    let mut grad = vec![0.0; params.len()];
    for (pick, &ok) in space.picks.iter().zip(&space.correct) {
        if ok != use_correct {
            continue;
        }
        let p: f64 = pick.iter().map(|&i| rows[i]).product();
        for &i in pick {
            let r = i / v;
            for j in 0..v {
                let onehot = if r * v + j == i { 1.0 } else { 0.0 };
                grad[r * v + j] += p * (onehot - rows[r * v + j]);
            }
        }
    }
    let (delta, sign) = if use_correct {
        (1.0 - hit, 1.0)
    } else {
        (miss, -1.0)
    };
    let scale = sign * k as f64 * delta.powi(k as i32 - 1);
    grad.iter().map(|g| scale * g).collect()
}

/// `max |a - b| / max(max |a|, max |b|)`, zero for two zero vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Relative agreement of an exact gradient with a finite-difference one.
/// When the verifier accepts everything or nothing the objective is constant,
/// both gradients are rounding noise and only their size is checked.
pub fn grads_agree(exact: &[f64], fd: &[f64], rel_tol: f64, constant: bool) -> bool {
    if constant {
        return exact.iter().chain(fd).all(|x| x.abs() < 1e-8);
    }
    rel_err(exact, fd) < rel_tol
}

/// Worst componentwise relative error. Components below `floor` times the
/// largest magnitude count as zero.
pub fn componentwise_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let denom = x.abs().max(y.abs()).max(floor * scale);
            if denom == 0.0 {
                0.0
            } else {
                (x - y).abs() / denom
            }
        })
        .fold(0.0, f64::max)
}

/// pass@k by listing every size-`k` subset of `n` items, the first `c` correct.
pub fn brute_passk(n: usize, c: usize, k: usize) -> f64 {
    let correct_mask: u32 = (1u32 << c) - 1;
    let (mut hits, mut total) = (0u64, 0u64);
    for subset in 0u32..(1u32 << n) {
        if subset.count_ones() as usize == k {
            total += 1;
            if subset & correct_mask != 0 {
                hits += 1;
            }
        }
    }
    hits as f64 / total as f64
}

/// `1 - (1 - j1)^k` by repeated multiplication.
pub fn jk(j1: f64, k: usize) -> f64 {
    let mut miss = 1.0;
    for _ in 0..k {
        miss *= 1.0 - j1;
    }
    1.0 - miss
}

/// `k (1 - j1)^(k - 1)` by repeated multiplication.
pub fn alpha(j1: f64, k: usize) -> f64 {
    let mut a = k as f64;
    for _ in 1..k {
        a *= 1.0 - j1;
    }
    a
}

/// Parses a CSV with a header into column name -> values.
pub fn parse_csv(bytes: &[u8]) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::str::from_utf8(bytes).expect("utf8");
    let mut lines = text.split_terminator('\n');
    let header = lines
        .next()
        .expect("header")
        .split(',')
        .map(str::to_owned)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect();
    (header, rows)
}

pub fn column(header: &[String], name: &str) -> usize {
    header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("missing column {name}"))
}
