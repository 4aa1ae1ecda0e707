//! Truncated summation machinery with certified tails.
//!
//! Every infinite sum in this crate runs over nonnegative integer vectors
//! grouped by their total `s`, with a per-total weight `(s + shift)! z^s`
//! and a coefficient extracted from a product of per-coordinate
//! exponential generating functions. Each coordinate factor is a finite
//! combination of `poly(x) e^{beta x}` pieces, so the product is too, and
//! the coefficient of `x^s` splits into atoms
//! `p * beta^{s-d} / (s-d)!` that are evaluated in log space. That keeps
//! the evaluation stable at any truncation depth even though bare
//! factorials overflow f64 long before the sums converge.
//!
//! The dropped tail is bounded by the same atoms with absolute values:
//! the term ratio is at most `(s+1+shift) z B / (s+1-D)` (B the largest
//! exponential base, D the largest polynomial degree), which decreases
//! toward `zB < 1`, giving an explicit geometric bound. A sum refuses to
//! report a value whose tail bound exceeds the requested tolerance.

use super::CombError;

/// Truncation policy: hard cap on the summation total plus the tail
/// bound the caller is willing to accept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesTruncation {
    max_total: usize,
    tail_tol: f64,
}

impl SeriesTruncation {
    pub fn new(max_total: usize, tail_tol: f64) -> Result<Self, CombError> {
        if max_total < 1 {
            return Err(CombError::InvalidInput(
                "max_total must be at least 1".into(),
            ));
        }
        if tail_tol.is_nan() || tail_tol <= 0.0 || !tail_tol.is_finite() {
            return Err(CombError::InvalidInput(
                "tail_tol must be a positive real".into(),
            ));
        }
        Ok(SeriesTruncation {
            max_total,
            tail_tol,
        })
    }

    pub fn max_total(&self) -> usize {
        self.max_total
    }

    pub fn tail_tol(&self) -> f64 {
        self.tail_tol
    }
}

impl Default for SeriesTruncation {
    /// Totals up to 400 with a 1e-10 tail bound; generous for every
    /// parameter range the tests exercise.
    fn default() -> Self {
        SeriesTruncation {
            max_total: 400,
            tail_tol: 1e-10,
        }
    }
}

/// A truncated sum together with the certified bound on what was dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifiedValue {
    pub value: f64,
    pub tail_bound: f64,
}

/// Natural logs of factorials 0! ..= up_to!.
pub(crate) fn ln_factorials(up_to: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(up_to + 1);
    t.push(0.0);
    let mut acc = 0.0f64;
    for m in 1..=up_to {
        acc += (m as f64).ln();
        t.push(acc);
    }
    t
}

/// Exact f64 factorials up to 170! (the largest that fits).
pub(crate) fn f64_factorials() -> Vec<f64> {
    let mut t = Vec::with_capacity(171);
    t.push(1.0);
    for m in 1..=170u32 {
        let prev = t[m as usize - 1];
        t.push(prev * f64::from(m));
    }
    t
}

/// Finite combination of `poly(x) e^{beta x}` pieces, representing the
/// product of per-coordinate generating functions. `terms[beta]` holds
/// the polynomial coefficients attached to `e^{beta x}`.
#[derive(Debug, Clone)]
pub(crate) struct ExpPoly {
    terms: Vec<Vec<f64>>,
}

/// Per-coordinate weight selector for marked coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum MarkFn {
    /// w(m) = m
    Linear,
    /// w(m) = m^2
    Square,
    /// w(m) = m - 1
    LinearMinusOne,
}

fn poly_add(acc: &mut Vec<f64>, p: &[f64], scale: f64) {
    if acc.len() < p.len() {
        acc.resize(p.len(), 0.0);
    }
    for (a, &b) in acc.iter_mut().zip(p.iter()) {
        *a += scale * b;
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

impl ExpPoly {
    pub fn one() -> ExpPoly {
        ExpPoly {
            terms: vec![vec![1.0]],
        }
    }

    fn from_pieces(pieces: &[(usize, &[f64])]) -> ExpPoly {
        let max_beta = pieces.iter().map(|(b, _)| *b).max().unwrap_or(0);
        let mut terms = vec![Vec::new(); max_beta + 1];
        for (beta, poly) in pieces {
            poly_add(&mut terms[*beta], poly, 1.0);
        }
        ExpPoly { terms }
    }

    /// `sum_{m >= min} x^m / m!` for min in {0, 1, 2}.
    pub fn exp_from(min: usize) -> ExpPoly {
        match min {
            0 => ExpPoly::from_pieces(&[(1, &[1.0])]),
            1 => ExpPoly::from_pieces(&[(1, &[1.0]), (0, &[-1.0])]),
            2 => ExpPoly::from_pieces(&[(1, &[1.0]), (0, &[-1.0, -1.0])]),
            _ => unreachable!("only minimum counts 0..=2 occur"),
        }
    }

    /// The monomial `x / 1!`: a coordinate pinned to exactly one arrival.
    pub fn pinned_one() -> ExpPoly {
        ExpPoly::from_pieces(&[(0, &[0.0, 1.0])])
    }

    /// `sum_{m >= min} w(m) x^m / m!` for the supported weights.
    pub fn marked(mark: MarkFn, min: usize) -> ExpPoly {
        match (mark, min) {
            // m has no m=0 term, so min 0 and 1 coincide
            (MarkFn::Linear, 0 | 1) => ExpPoly::from_pieces(&[(1, &[0.0, 1.0])]),
            (MarkFn::Linear, 2) => ExpPoly::from_pieces(&[(1, &[0.0, 1.0]), (0, &[0.0, -1.0])]),
            (MarkFn::Square, 0 | 1) => ExpPoly::from_pieces(&[(1, &[0.0, 1.0, 1.0])]),
            (MarkFn::Square, 2) => {
                ExpPoly::from_pieces(&[(1, &[0.0, 1.0, 1.0]), (0, &[0.0, -1.0])])
            }
            (MarkFn::LinearMinusOne, 0) => ExpPoly::from_pieces(&[(1, &[-1.0, 1.0])]),
            // the m=0 term is -1, the m=1 term vanishes
            (MarkFn::LinearMinusOne, 1 | 2) => {
                ExpPoly::from_pieces(&[(1, &[-1.0, 1.0]), (0, &[1.0])])
            }
            _ => unreachable!("only minimum counts 0..=2 occur"),
        }
    }

    pub fn mul(&self, rhs: &ExpPoly) -> ExpPoly {
        let mut terms = vec![Vec::new(); self.terms.len() + rhs.terms.len() - 1];
        for (b1, p1) in self.terms.iter().enumerate() {
            if p1.is_empty() {
                continue;
            }
            for (b2, p2) in rhs.terms.iter().enumerate() {
                if p2.is_empty() {
                    continue;
                }
                let prod = poly_mul(p1, p2);
                poly_add(&mut terms[b1 + b2], &prod, 1.0);
            }
        }
        ExpPoly { terms }
    }

    pub fn max_beta(&self) -> usize {
        self.terms
            .iter()
            .enumerate()
            .rev()
            .find(|(_, p)| p.iter().any(|&c| c != 0.0))
            .map_or(0, |(b, _)| b)
    }

    pub fn max_degree(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|p| {
                p.iter()
                    .enumerate()
                    .rev()
                    .find(|(_, &c)| c != 0.0)
                    .map(|(d, _)| d)
            })
            .max()
            .unwrap_or(0)
    }
}

/// Evaluator for `sum_s (s + shift)! z^s [x^s] f(x)` over an [`ExpPoly`]
/// `f`.
///
/// The coefficient atom `p beta^{s-d}/(s-d)!` combines with the weight
/// into `p * [(s+shift)!/(s-d)!] * (z beta)^s / beta^d`. The factorial
/// ratio is a short product and `z beta < 1` wherever the sum converges,
/// so everything stays inside f64 range at any depth.
pub(crate) struct WeightedSum<'a> {
    f: &'a ExpPoly,
    z: f64,
    shift: i64,
}

impl<'a> WeightedSum<'a> {
    pub fn new(f: &'a ExpPoly, z: f64, shift: i64) -> WeightedSum<'a> {
        WeightedSum { f, z, shift }
    }

    fn atoms(&self, s: usize, absolute: bool) -> f64 {
        debug_assert!(s as i64 + self.shift >= 0);
        let mut total = 0.0f64;
        for (beta, poly) in self.f.terms.iter().enumerate() {
            for (d, &p) in poly.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let p = if absolute { p.abs() } else { p };
                let atom = if beta == 0 {
                    // polynomial piece: only the exact-degree total
                    if d == s {
                        let top = (s as i64 + self.shift) as usize;
                        let fact = f64_factorials();
                        let w = if top <= 170 {
                            fact[top] * self.z.powi(s as i32)
                        } else {
                            (ln_factorials(top)[top] + s as f64 * self.z.ln()).exp()
                        };
                        p * w
                    } else {
                        0.0
                    }
                } else {
                    if d > s {
                        continue;
                    }
                    // (s+shift)!/(s-d)!; the only downward case is
                    // shift = -1 with d = 0, where it equals 1/s
                    let top = (s as i64 + self.shift) as usize;
                    let bottom = s - d;
                    let ratio = if top >= bottom {
                        ((bottom + 1)..=top).map(|i| i as f64).product::<f64>()
                    } else {
                        1.0 / s as f64
                    };
                    let zb = (self.z * beta as f64).powi(s as i32);
                    p * ratio * zb / (beta as f64).powi(d as i32)
                };
                total += atom;
            }
        }
        total
    }

    /// The term at total `s`.
    pub fn term(&self, s: usize) -> f64 {
        self.atoms(s, false)
    }

    /// Upper bound on the absolute value of every term at total `s`.
    fn term_bound(&self, s: usize) -> f64 {
        self.atoms(s, true)
    }

    /// Bound on `sum_{s > last} |term_s|`, or infinity when the geometric
    /// certificate does not apply yet at `last + 1`.
    pub fn tail_bound(&self, last: usize) -> f64 {
        self.tail_poly_bound(last, 0.0, 0.0, 1.0)
    }

    /// Bound on `sum_{s > last} |term_s| (a2 s^2 + a1 s + a0)` via the
    /// same geometric majorant; used to bound polynomial-weighted drops
    /// such as Lyapunov increments over truncated re-entry laws.
    pub fn tail_poly_bound(&self, last: usize, a2: f64, a1: f64, a0: f64) -> f64 {
        let b = self.f.max_beta() as f64;
        let d = self.f.max_degree() as f64;
        let s0 = last + 1;
        let denom = s0 as f64 + 1.0 - d;
        if denom <= 0.0 {
            return f64::INFINITY;
        }
        let rho = (s0 as i64 + 1 + self.shift) as f64 * self.z * b / denom;
        if rho >= 1.0 {
            return f64::INFINITY;
        }
        let t_hat = self.term_bound(s0);
        let s0 = s0 as f64;
        let g0 = 1.0 / (1.0 - rho);
        let g1 = rho / ((1.0 - rho) * (1.0 - rho));
        let g2 = rho * (1.0 + rho) / ((1.0 - rho) * (1.0 - rho) * (1.0 - rho));
        t_hat * (a2 * (s0 * s0 * g0 + 2.0 * s0 * g1 + g2) + a1 * (s0 * g0 + g1) + a0 * g0)
    }
}

/// Certified evaluation of `sum_{s >= s_min} (s + shift)! z^s [x^s] f(x)`.
///
/// Sums totals up to `trunc.max_total`, stopping early once the certified
/// bound on the remainder drops below one percent of the tolerance.
pub(crate) fn certified_sum(
    f: &ExpPoly,
    s_min: usize,
    z: f64,
    shift: i64,
    trunc: &SeriesTruncation,
) -> Result<CertifiedValue, CombError> {
    assert!(s_min as i64 + shift >= 0, "factorial weight undefined");
    let ws = WeightedSum::new(f, z, shift);
    let mut sum = 0.0f64;
    let mut last = s_min.saturating_sub(1);
    let mut bound = f64::INFINITY;
    for s in s_min..=trunc.max_total() {
        sum += ws.term(s);
        last = s;
        if s % 8 == 0 {
            bound = ws.tail_bound(last);
            if bound <= trunc.tail_tol() * 0.01 {
                break;
            }
        }
    }
    bound = bound.min(ws.tail_bound(last));
    if bound.is_nan() || bound > trunc.tail_tol() {
        return Err(CombError::TailBoundViolated {
            bound,
            tol: trunc.tail_tol(),
        });
    }
    Ok(CertifiedValue {
        value: sum,
        tail_bound: bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_series_certified() {
        // One pinned coordinate and one free coordinate with weight
        // (s-1)!: sum_s (s-1)! z^s [x^s] x e^x = sum_s z^s = z/(1-z).
        let f = ExpPoly::pinned_one().mul(&ExpPoly::exp_from(0));
        let trunc = SeriesTruncation::new(300, 1e-12).unwrap();
        let z = 0.25;
        let got = certified_sum(&f, 1, z, -1, &trunc).unwrap();
        assert!((got.value - z / (1.0 - z)).abs() <= 1e-12 + got.tail_bound);
    }

    #[test]
    fn negative_binomial_series() {
        // J free coordinates with weight (L+s)! z^s sums to L!/(1-Jz)^{L+1}.
        for &(j, l, z) in &[(2usize, 0i64, 0.2f64), (3, 2, 0.15), (5, 3, 0.11)] {
            let mut f = ExpPoly::one();
            for _ in 0..j {
                f = f.mul(&ExpPoly::exp_from(0));
            }
            let trunc = SeriesTruncation::new(800, 1e-11).unwrap();
            let got = certified_sum(&f, 0, z, l, &trunc).unwrap();
            let lf = f64_factorials()[l as usize];
            let expect = lf / (1.0 - j as f64 * z).powi(l as i32 + 1);
            assert!(
                (got.value - expect).abs() <= 1e-10 * expect.abs() + got.tail_bound,
                "J={j} L={l} z={z}: {} vs {expect}",
                got.value
            );
        }
    }

    #[test]
    fn marked_series_matches_closed_form() {
        // sum over (m1, m2) >= 0 of m2 (L+m1+m2)! z^{m1+m2} / (m1! m2!)
        // equals (L+1)! z / (1-2z)^{L+2}.
        let f = ExpPoly::exp_from(0).mul(&ExpPoly::marked(MarkFn::Linear, 0));
        let trunc = SeriesTruncation::new(600, 1e-11).unwrap();
        let z = 0.21;
        let got = certified_sum(&f, 0, z, 1, &trunc).unwrap();
        let expect = 2.0 * z / (1.0 - 2.0 * z).powi(3);
        assert!((got.value - expect).abs() <= 1e-11 + got.tail_bound);
    }

    #[test]
    fn tail_violation_is_reported() {
        let f = ExpPoly::exp_from(0);
        let trunc = SeriesTruncation::new(3, 1e-30).unwrap();
        let err = certified_sum(&f, 0, 0.2, 0, &trunc).unwrap_err();
        assert!(matches!(err, CombError::TailBoundViolated { .. }));
    }

    #[test]
    fn deep_truncation_stays_finite() {
        // Ratio 9/10 forces totals in the hundreds; the log-space atoms
        // must neither overflow nor lose the certificate.
        let mut f = ExpPoly::one();
        for _ in 0..8 {
            f = f.mul(&ExpPoly::exp_from(0));
        }
        f = f.mul(&ExpPoly::marked(MarkFn::Linear, 0));
        let trunc = SeriesTruncation::new(1200, 1e-10).unwrap();
        let got = certified_sum(&f, 0, 0.1, 3, &trunc).unwrap();
        // closed form: (L+1)! z J^{... }: d/dz-type mark on one of nine
        // coordinates: (L+1)! z / (1-9z)^{L+2} with L = 3.
        let expect = 24.0 * 0.1 / (1.0 - 0.9_f64).powi(5);
        assert!(
            (got.value - expect).abs() <= 1e-9 * expect + got.tail_bound,
            "{} vs {expect} (tail {})",
            got.value,
            got.tail_bound
        );
    }
}
