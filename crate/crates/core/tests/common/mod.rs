//! Independent reference implementations used as test oracles. None of these
//! call into the library's numerical code.

#![allow(dead_code)]

/// Anchored joint MLE by alternating one-dimensional Newton sweeps on plain
/// `rows[i][j]` data. Students and items whose score is zero or perfect
/// (repeatedly, among the rest) are set to `-bound`/`+bound` and their cells
/// dropped.
pub fn newton_calibration(rows: &[Vec<u8>], l2_anchor: f64, bound: f64) -> (Vec<f64>, Vec<f64>) {
    let ns = rows.len();
    let ni = rows[0].len();
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut theta = vec![0.0; ns];
    let mut b = vec![0.0; ni];
    let mut live_s = vec![true; ns];
    let mut live_i = vec![true; ni];
    loop {
        let mut drop_s = Vec::new();
        let mut drop_i = Vec::new();
        let cols: Vec<usize> = (0..ni).filter(|&j| live_i[j]).collect();
        let who: Vec<usize> = (0..ns).filter(|&i| live_s[i]).collect();
        for &i in &who {
            let score: usize = cols.iter().map(|&j| rows[i][j] as usize).sum();
            if !cols.is_empty() && (score == 0 || score == cols.len()) {
                drop_s.push((i, if score == 0 { -bound } else { bound }));
            }
        }
        for &j in &cols {
            let score: usize = who.iter().map(|&i| rows[i][j] as usize).sum();
            if !who.is_empty() && (score == 0 || score == who.len()) {
                drop_i.push((j, if score == 0 { bound } else { -bound }));
            }
        }
        if drop_s.is_empty() && drop_i.is_empty() {
            break;
        }
        for (i, v) in drop_s {
            live_s[i] = false;
            theta[i] = v;
        }
        for (j, v) in drop_i {
            live_i[j] = false;
            b[j] = v;
        }
    }
    for _ in 0..5000 {
        let mut biggest: f64 = 0.0;
        for i in (0..ns).filter(|&i| live_s[i]) {
            let (mut g, mut h) = (2.0 * l2_anchor * theta[i], 2.0 * l2_anchor);
            for j in (0..ni).filter(|&j| live_i[j]) {
                let p = sig(theta[i] - b[j]);
                g += p - f64::from(rows[i][j]);
                h += p * (1.0 - p);
            }
            let next = (theta[i] - g / h.max(1e-12)).clamp(-bound, bound);
            biggest = biggest.max((next - theta[i]).abs());
            theta[i] = next;
        }
        for j in (0..ni).filter(|&j| live_i[j]) {
            let (mut g, mut h) = (0.0, 0.0);
            for i in (0..ns).filter(|&i| live_s[i]) {
                let p = sig(theta[i] - b[j]);
                g += f64::from(rows[i][j]) - p;
                h += p * (1.0 - p);
            }
            let next = (b[j] - g / h.max(1e-12)).clamp(-bound, bound);
            biggest = biggest.max((next - b[j]).abs());
            b[j] = next;
        }
        // coordinate sweeps barely move a common shift of the live
        // parameters, which only the weak anchor sees; minimize over that
        // shift as its own block
        let n = live_s.iter().filter(|&&l| l).count();
        if n > 0 && l2_anchor > 0.0 {
            let c = -(0..ns).filter(|&i| live_s[i]).map(|i| theta[i]).sum::<f64>() / n as f64;
            biggest = biggest.max(c.abs());
            (0..ns).filter(|&i| live_s[i]).for_each(|i| theta[i] += c);
            (0..ni).filter(|&j| live_i[j]).for_each(|j| b[j] += c);
        }
        if biggest < 1e-11 {
            break;
        }
    }
    (theta, b)
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Advantages as explicit discounted sums of TD residuals:
/// `A_t = sum_{k>=t} (gamma*lambda)^(k-t) * delta_k`, truncated at the first
/// terminal step.
pub fn brute_force_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta: Vec<f64> = (0..n)
        .map(|k| {
            let next = if dones[k] || k + 1 == n { 0.0 } else { values[k + 1] };
            rewards[k] + gamma * next - values[k]
        })
        .collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            for k in t..n {
                sum += (gamma * lambda).powi((k - t) as i32) * delta[k];
                if dones[k] {
                    break;
                }
            }
            sum
        })
        .collect()
}

/// Grid argmax of `p(1-p)` over `b` in `[lo, hi]` with step `h`.
pub fn information_argmax(theta: f64, lo: f64, hi: f64, h: f64) -> f64 {
    let steps = ((hi - lo) / h).round() as usize;
    let mut best = (lo, -1.0);
    for k in 0..=steps {
        let b = lo + k as f64 * h;
        let p = 1.0 / (1.0 + (b - theta).exp());
        let info = p * (1.0 - p);
        if info > best.1 {
            best = (b, info);
        }
    }
    best.0
}
