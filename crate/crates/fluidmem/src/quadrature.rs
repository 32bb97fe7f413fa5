//! Grundmann-Moller quadrature on reference simplices of any dimension.
//!
//! One combinatorial family covers segments, triangles and tetrahedra at any
//! odd degree, which keeps bulk, facet and surface quadrature on a single
//! code path.

/// A quadrature node in barycentric coordinates (first `dim + 1` entries used)
/// with its weight on the reference simplex.
#[derive(Debug, Clone, Copy)]
pub struct QuadNode {
    pub bary: [f64; 4],
    pub weight: f64,
}

/// Quadrature rule for the `dim`-dimensional reference simplex, exact for
/// polynomials up to `degree`. Weights sum to the reference volume 1/dim!.
pub fn simplex_rule(dim: usize, degree: usize) -> Vec<QuadNode> {
    assert!(dim >= 1 && dim <= 3);
    let s = degree.saturating_sub(1).div_ceil(2); // exact degree 2s+1 >= degree
    let n = dim;
    let d = 2 * s + 1;
    let mut nodes = Vec::new();
    for i in 0..=s {
        let exp = d + n - 2 * i;
        // (-1)^i 2^{-2s} (d+n-2i)^d / (i! (d+n-i)!)
        let mut w = (exp as f64).powi(d as i32) / (factorial(i) * factorial(d + n - i));
        w /= (2.0f64).powi(2 * s as i32);
        if i % 2 == 1 {
            w = -w;
        }
        for beta in compositions(s - i, n + 1) {
            let mut bary = [0.0; 4];
            for (slot, b) in bary.iter_mut().zip(&beta) {
                *slot = (2 * b + 1) as f64 / exp as f64;
            }
            nodes.push(QuadNode { bary, weight: w });
        }
    }
    nodes
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// All vectors of `parts` non-negative integers summing to `total`.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; parts];
    fn rec(total: usize, idx: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if idx + 1 == cur.len() {
            cur[idx] = total;
            out.push(cur.clone());
            return;
        }
        for v in 0..=total {
            cur[idx] = v;
            rec(total - v, idx + 1, cur, out);
        }
    }
    rec(total, 0, &mut cur, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact integral of x^a over the reference simplex:
    /// prod(a_i!) / (dim + sum a_i)!.
    fn exact_monomial(dim: usize, a: &[usize]) -> f64 {
        let num: f64 = a.iter().map(|&ai| factorial(ai)).product();
        num / factorial(dim + a.iter().sum::<usize>())
    }

    fn monomials(dim: usize, degree: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        match dim {
            1 => {
                for a in 0..=degree {
                    out.push(vec![a]);
                }
            }
            2 => {
                for a in 0..=degree {
                    for b in 0..=degree - a {
                        out.push(vec![a, b]);
                    }
                }
            }
            3 => {
                for a in 0..=degree {
                    for b in 0..=degree - a {
                        for c in 0..=degree - a - b {
                            out.push(vec![a, b, c]);
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
        out
    }

    #[test]
    fn exactness_all_dims() {
        for dim in 1..=3 {
            for degree in [1usize, 2, 3, 4, 5, 6, 7] {
                let rule = simplex_rule(dim, degree);
                for mono in monomials(dim, degree) {
                    let mut approx = 0.0;
                    for node in &rule {
                        let mut v = 1.0;
                        for (k, &a) in mono.iter().enumerate() {
                            // cartesian coordinate k = barycentric k+1
                            v *= node.bary[k + 1].powi(a as i32);
                        }
                        approx += node.weight * v;
                    }
                    let exact = exact_monomial(dim, &mono);
                    assert!(
                        (approx - exact).abs() < 1e-13,
                        "dim {dim} degree {degree} mono {mono:?}: {approx} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn weights_sum_to_volume() {
        for dim in 1..=3 {
            let rule = simplex_rule(dim, 5);
            let sum: f64 = rule.iter().map(|n| n.weight).sum();
            assert!((sum - 1.0 / factorial(dim)).abs() < 1e-14);
        }
    }
}
