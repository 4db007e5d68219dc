//! Independent reference computations used as test oracles.

use neurovasc_autograd::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn conv(cin: usize, cout: usize, taps: usize) -> usize {
    cin * cout * taps + cout
}

fn dilated_block(cin: usize, cout: usize) -> usize {
    conv(cin, cout, 27) + 2 * cout + conv(cout, cout, 27) + 2 * cout
}

/// Offsets of a 5³ cube grouped by squared radius, counted by brute force.
fn shells_of_five_cube() -> usize {
    let mut seen = [false; 13];
    for a in -2i32..=2 {
        for b in -2i32..=2 {
            for c in -2i32..=2 {
                seen[(a * a + b * b + c * c) as usize] = true;
            }
        }
    }
    seen.iter().filter(|&&s| s).count()
}

fn cross_domain(c: usize, grid: [usize; 3], heads: usize) -> usize {
    let hidden = c / 4;
    let involution = conv(c, hidden, 1) + conv(hidden, 27, 1);
    let spectral = grid.iter().product::<usize>();
    let spherical = c * c * shells_of_five_cube() + c;
    let convnext = conv(1, c, 125) + 2 * c + conv(c, 4 * c, 1) + 4 * c * c + c;
    let axial_pass = 2 * c + conv(c, 3 * c, 1) + heads * 31 + heads + c * c;
    involution + spectral + spherical + convnext + 3 * axial_pass + 1
}

fn multi_scale(c: usize, grid: [usize; 3]) -> usize {
    let aspp = 3 * conv(c, c, 27) + conv(3 * c, c, 1);
    let depthwise = conv(1, 3 * c, 27);
    aspp + grid.iter().product::<usize>() + depthwise + 3 + conv(3 * c, c, 1) + 2 * conv(c, c, 1)
}

/// Parameter total of the full network written out from the layer inventory.
pub fn analytic_total(ch: [usize; 5], input: [usize; 3], classes: usize) -> usize {
    let mut total = 0;
    let mut cin = 1;
    for &c in &ch[..4] {
        total += dilated_block(cin, c);
        cin = c;
    }
    total += dilated_block(ch[3], ch[4]);
    total += multi_scale(ch[4], input.map(|n| n / 16));
    total += 2 * cross_domain(ch[3], input.map(|n| n / 8), 4);
    for level in 0..4 {
        let (fine, coarse) = (ch[level], ch[level + 1]);
        let inter = fine / 2;
        let up = coarse * fine * 8 + fine;
        let gate = fine * inter * 8 + conv(coarse, inter, 1) + conv(inter, 1, 1);
        total += up + gate + dilated_block(2 * fine, fine);
    }
    total + conv(ch[0], classes, 1)
}

/// The 24 proper rotations of the cube as (axis permutation, axis flips).
pub fn octahedral_rotations() -> Vec<([usize; 3], [bool; 3])> {
    let perms = [([0, 1, 2], 1), ([0, 2, 1], -1), ([1, 0, 2], -1), ([1, 2, 0], 1), ([2, 0, 1], 1), ([2, 1, 0], -1)];
    let mut out = Vec::new();
    for (p, parity) in perms {
        for bits in 0..8u8 {
            let flips = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0];
            let det = parity * flips.iter().map(|&f| if f { -1 } else { 1 }).product::<i32>();
            if det == 1 {
                out.push((p, flips));
            }
        }
    }
    out
}

pub fn rotate(x: &Tensor<f64>, (perm, flips): ([usize; 3], [bool; 3])) -> Tensor<f64> {
    let (b, c, n, _, _) = x.dims5();
    let mut out = Tensor::zeros([b, c, n, n, n]);
    for bi in 0..b {
        for ci in 0..c {
            for z in 0..n {
                for y in 0..n {
                    for w in 0..n {
                        let idx = [z, y, w];
                        let src = [0, 1, 2].map(|a| if flips[a] { n - 1 - idx[perm[a]] } else { idx[perm[a]] });
                        out.set(&[bi, ci, z, y, w], x.get(&[bi, ci, src[0], src[1], src[2]]));
                    }
                }
            }
        }
    }
    out
}

/// Softmax over the channel axis of random logits, as a plain tensor.
pub fn random_probs(shape: [usize; 5], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let [b, c, d, h, w] = shape;
    let vol = d * h * w;
    let logits: Vec<f64> = (0..b * c * vol).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut out = vec![0.0; logits.len()];
    for bi in 0..b {
        for i in 0..vol {
            let at = |k: usize| (bi * c + k) * vol + i;
            let z: f64 = (0..c).map(|k| logits[at(k)].exp()).sum();
            for k in 0..c {
                out[at(k)] = logits[at(k)].exp() / z;
            }
        }
    }
    Tensor::from_vec(shape.to_vec(), out)
}

pub fn random_labels(n: usize, c: u8, rng: &mut ChaCha8Rng) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..c)).collect()
}

/// Per-voxel loop that never builds confusion counts.
pub fn naive_metrics(pred: &[u8], gt: &[u8], class: u8) -> [f64; 5] {
    let (mut inter, mut p, mut g, mut union, mut neg_both, mut neg_gt) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (&a, &b) in pred.iter().zip(gt) {
        let (a, b) = (a == class, b == class);
        inter += (a && b) as u8 as f64;
        p += a as u8 as f64;
        g += b as u8 as f64;
        union += (a || b) as u8 as f64;
        neg_both += (!a && !b) as u8 as f64;
        neg_gt += (!b) as u8 as f64;
    }
    let div = |n: f64, d: f64| if d == 0.0 { 1.0 } else { n / d };
    [div(2.0 * inter, p + g), div(inter, union), div(inter, g), div(neg_both, neg_gt), div(inter, p)]
}
