//! Straight transcriptions of the loss definitions over nested vectors.

#![allow(clippy::needless_range_loop)]

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

pub fn icl(h: &[Vec<f64>], l: &[Vec<f64>], y: &[usize], tau: f64) -> f64 {
    let mut sum = 0.0;
    for i in 0..h.len() {
        let mut z = 0.0;
        for p in 0..l.len() {
            z += (cos(&h[i], &l[p]) / tau).exp();
        }
        sum += cos(&h[i], &l[y[i]]) / tau - z.ln();
    }
    -sum / h.len() as f64
}

pub fn icl_heads(h: &[Vec<f64>], l: &[Vec<f64>], y: &[usize], tau: f64, m: usize) -> f64 {
    let w = h[0].len() / m;
    let mut total = 0.0;
    for k in 0..m {
        let hs: Vec<Vec<f64>> = h.iter().map(|r| r[k * w..(k + 1) * w].to_vec()).collect();
        let ls: Vec<Vec<f64>> = l.iter().map(|r| r[k * w..(k + 1) * w].to_vec()).collect();
        total += icl(&hs, &ls, y, tau);
    }
    total
}

pub fn lcl(h: &[Vec<f64>], l: &[Vec<f64>], y: &[usize], tau: f64) -> f64 {
    let mut total = 0.0;
    let mut eligible = 0;
    for p in 0..l.len() {
        let pos: Vec<usize> = (0..h.len()).filter(|&i| y[i] == p).collect();
        let neg: Vec<usize> = (0..h.len()).filter(|&i| y[i] != p).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        eligible += 1;
        let mut z = 0.0;
        for &b in &neg {
            z += (cos(&l[p], &h[b]) / tau).exp();
        }
        for &a in &pos {
            total += cos(&l[p], &h[a]) / tau - z.ln();
        }
    }
    if eligible == 0 {
        0.0
    } else {
        -total / eligible as f64
    }
}

pub fn ler(l: &[Vec<f64>]) -> f64 {
    let c = l.len();
    let mut total = 0.0;
    for i in 0..c {
        for j in (i + 1)..c {
            total += (1.0 + cos(&l[i], &l[j])).exp() - 1.0;
        }
    }
    total / (c * (c - 1) / 2) as f64
}
