//! Direct, loop-by-loop metric definitions used as a reference.

use coffee_core::metrics::{evaluate_user, Holdout, Metric};

pub const ITEMS: usize = 6;
pub const RATINGS: [f64; 4] = [1.0, 3.0, 4.0, 5.0];
pub const THRESHOLD: f64 = 3.0;
pub const MAX_N: usize = 5;
pub const UNRATED: usize = 99;

pub fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

pub fn rating_of(holdout: &[(usize, f64)], item: usize) -> Option<f64> {
    holdout.iter().find(|h| h.0 == item).map(|h| h.1)
}

pub fn ref_dcg(list: &[usize], holdout: &[(usize, f64)]) -> f64 {
    let mut total = 0.0;
    for (p, &item) in list.iter().enumerate() {
        if let Some(r) = rating_of(holdout, item) {
            if r > THRESHOLD {
                total += (2f64.powf(r) - 1.0) / discount(p + 1);
            }
        }
    }
    total
}

pub fn ref_dcl(list: &[usize], holdout: &[(usize, f64)]) -> f64 {
    let mut total = 0.0;
    for (p, &item) in list.iter().enumerate() {
        if let Some(r) = rating_of(holdout, item) {
            if r <= THRESHOLD {
                total += (2f64.powf(-r) - 1.0) / -discount(p + 1);
            }
        }
    }
    total
}

pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Best DCG over every ordering of the positives.
pub fn ref_idcg(holdout: &[(usize, f64)]) -> f64 {
    let positives: Vec<usize> = holdout.iter().filter(|h| h.1 > THRESHOLD).map(|h| h.0).collect();
    permutations(&positives)
        .iter()
        .map(|order| ref_dcg(order, holdout))
        .fold(0.0, f64::max)
}

/// DCL of the list that fills the bottom of the window with negatives,
/// lowest rating last.
pub fn ref_idcl(holdout: &[(usize, f64)], n: usize) -> f64 {
    let mut negatives: Vec<(usize, f64)> = holdout.iter().copied().filter(|h| h.1 <= THRESHOLD).collect();
    negatives.sort_by(|a, b| b.1.total_cmp(&a.1));
    let keep = negatives.len().min(n);
    let tail = &negatives[negatives.len() - keep..];
    let mut list = vec![UNRATED; n - keep];
    list.extend(tail.iter().map(|h| h.0));
    ref_dcl(&list, holdout)
}

pub fn ref_metrics(list: &[usize], holdout: &[(usize, f64)], n: usize, idcg: f64, idcl: f64) -> [Option<f64>; 5] {
    let window = &list[..n.min(list.len())];
    let mut tp = 0;
    let mut fp = 0;
    for &item in window {
        match rating_of(holdout, item) {
            Some(r) if r > THRESHOLD => tp += 1,
            Some(_) => fp += 1,
            None => {}
        }
    }
    let positives = holdout.iter().filter(|h| h.1 > THRESHOLD).count();
    let negatives = holdout.len() - positives;
    let div = |a: usize, b: usize| if b == 0 { None } else { Some(a as f64 / b as f64) };
    [
        div(tp, tp + fp),
        div(tp, positives),
        div(fp, negatives),
        if idcg > 0.0 { Some(ref_dcg(window, holdout) / idcg) } else { None },
        if idcl > 0.0 { Some(ref_dcl(window, holdout) / idcl) } else { None },
    ]
}

pub fn holdouts() -> Vec<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    // each item is absent or takes one of the four ratings
    let choices = RATINGS.len() + 1;
    for code in 0..choices.pow(ITEMS as u32) {
        let mut c = code;
        let mut h = Vec::new();
        for item in 0..ITEMS {
            let pick = c % choices;
            c /= choices;
            if pick > 0 {
                h.push((item, RATINGS[pick - 1]));
            }
        }
        if h.len() <= 4 {
            out.push(h);
        }
    }
    out
}

pub fn lists() -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..MAX_N {
        let mut next = Vec::new();
        for l in &frontier {
            for item in 0..ITEMS {
                if !l.contains(&item) {
                    let mut m: Vec<usize> = l.clone();
                    m.push(item);
                    next.push(m);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Compare the metric kernels with the reference on every instance;
/// returns the number of (instance, cutoff) pairs checked or the first
/// mismatch.
pub fn exhaustive_check() -> Result<usize, String> {
    let lists = lists();
    let mut checked = 0usize;
    for h in &holdouts() {
        let holdout = Holdout::new(h.iter().copied(), THRESHOLD).unwrap();
        let idcg = ref_idcg(h);
        let idcl: Vec<f64> = (1..=MAX_N).map(|n| ref_idcl(h, n)).collect();
        for l in &lists {
            let got = evaluate_user(l, &holdout, MAX_N);
            for n in 0..MAX_N {
                let expected = ref_metrics(l, h, n + 1, idcg, idcl[n]);
                for m in Metric::ALL {
                    if got[n].get(m) != expected[m as usize] {
                        return Err(format!(
                            "{m:?}@{}: {:?} vs {:?} for list {l:?} holdout {h:?}",
                            n + 1,
                            got[n].get(m),
                            expected[m as usize]
                        ));
                    }
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}
