//! Shared test oracles, kept independent of the library's implementation
//! paths: a from-scratch logistic-regression probe, a brute-force transcription
//! of the gate rule, and integer-arithmetic metric recounts.

// Each test target compiles its own copy; not every target uses every oracle.
#![allow(dead_code)]

/// Plain multinomial logistic regression trained by full-batch gradient
/// descent. Self-contained on purpose; returns accuracy on the same set.
pub fn logistic_probe_accuracy(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    epochs: usize,
    lr: f64,
) -> f64 {
    assert_eq!(features.len(), labels.len());
    assert!(!features.is_empty());
    let d = features[0].len();
    let m = features.len() as f64;
    let mut w = vec![vec![0.0; d]; classes];
    let mut b = vec![0.0; classes];

    let predict_probs = |w: &Vec<Vec<f64>>, b: &Vec<f64>, x: &[f64]| -> Vec<f64> {
        let mut logits: Vec<f64> = (0..classes)
            .map(|c| b[c] + w[c].iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for z in &mut logits {
            *z = (*z - max).exp();
        }
        let sum: f64 = logits.iter().sum();
        logits.into_iter().map(|e| e / sum).collect()
    };

    for _ in 0..epochs {
        let mut gw = vec![vec![0.0; d]; classes];
        let mut gb = vec![0.0; classes];
        for (x, &y) in features.iter().zip(labels) {
            let p = predict_probs(&w, &b, x);
            for c in 0..classes {
                let err = p[c] - if c == y { 1.0 } else { 0.0 };
                gb[c] += err;
                for (g, xi) in gw[c].iter_mut().zip(x) {
                    *g += err * xi;
                }
            }
        }
        for c in 0..classes {
            b[c] -= lr * gb[c] / m;
            for (wi, g) in w[c].iter_mut().zip(&gw[c]) {
                *wi -= lr * g / m;
            }
        }
    }

    let mut correct = 0usize;
    for (x, &y) in features.iter().zip(labels) {
        let p = predict_probs(&w, &b, x);
        let mut best = 0;
        for c in 1..classes {
            if p[c] > p[best] {
                best = c;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    correct as f64 / features.len() as f64
}

/// Binary logistic probe convenience over (features, bool) pairs.
pub fn binary_probe_error(features: &[Vec<f64>], hard: &[bool], epochs: usize, lr: f64) -> f64 {
    let labels: Vec<usize> = hard.iter().map(|&h| usize::from(h)).collect();
    1.0 - logistic_probe_accuracy(features, &labels, 2, epochs, lr)
}

/// One step of the brute-force gate transcription.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BruteDecision {
    Exit(usize),
    Defer,
    Continue,
}

/// Direct, layer-by-layer transcription of the three-way rule: at non-final
/// layers defer when `s >= beta`, else exit when `c >= alpha`, else continue;
/// at the final layer exit iff `c >= alpha`. Returns the per-layer decision
/// sequence (ending at termination), the 1-based terminal layer, and the
/// covered label if any.
pub fn brute_force_walk(
    scores: &[(f64, f64, usize)], // (confidence, hardness, argmax class)
    alpha: f64,
    beta: f64,
) -> (Vec<BruteDecision>, usize, Option<usize>) {
    let n = scores.len();
    let mut decisions = Vec::new();
    for (i, &(c, s, class)) in scores.iter().enumerate() {
        let final_layer = i + 1 == n;
        let decision = if final_layer {
            if c >= alpha {
                BruteDecision::Exit(class)
            } else {
                BruteDecision::Defer
            }
        } else if s >= beta {
            BruteDecision::Defer
        } else if c >= alpha {
            BruteDecision::Exit(class)
        } else {
            BruteDecision::Continue
        };
        decisions.push(decision);
        match decision {
            BruteDecision::Continue => {}
            BruteDecision::Exit(class) => return (decisions, i + 1, Some(class)),
            BruteDecision::Defer => return (decisions, i + 1, None),
        }
    }
    unreachable!("final layer terminates the walk");
}

/// Recounted metrics from raw outcomes, using integer tallies and a single
/// final division so results are bit-comparable with the implementation.
pub struct Recount {
    pub coverage: f64,
    pub risk: f64,
    pub speedup: f64,
    pub histogram: Vec<u64>,
}

pub fn recount_metrics(outcomes: &[(usize, bool, bool)], layers: usize) -> Recount {
    let total = outcomes.len() as u64;
    let mut histogram = vec![0u64; layers];
    let mut covered = 0u64;
    let mut wrong = 0u64;
    for &(layer, is_covered, correct) in outcomes {
        histogram[layer - 1] += 1;
        if is_covered {
            covered += 1;
            if !correct {
                wrong += 1;
            }
        }
    }
    let weighted: u64 = histogram
        .iter()
        .enumerate()
        .map(|(i, &x)| (i as u64 + 1) * x)
        .sum();
    Recount {
        coverage: covered as f64 / total as f64,
        risk: if covered > 0 {
            wrong as f64 / covered as f64
        } else {
            0.0
        },
        speedup: (layers as u64 * total) as f64 / weighted as f64,
        histogram,
    }
}
