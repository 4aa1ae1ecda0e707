//! Exact and truncated-series combinatorics: multinomial path counts,
//! the re-entry law of the chain after an excursion out of S, the sojourn
//! distribution, the F/G summation families with their closed forms, and
//! the generating-function identity suite.

pub mod series;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

use series::{certified_sum, f64_factorials, ln_factorials, ExpPoly, MarkFn, WeightedSum};
pub use series::{CertifiedValue, SeriesTruncation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CombError {
    #[error("all counts are zero")]
    AllZero,
    #[error("vector is not a stratum-{j} re-entry vector: {reason}")]
    NotInEj { j: usize, reason: String },
    #[error("certified tail bound {bound:e} exceeds tolerance {tol:e}")]
    TailBoundViolated { bound: f64, tol: f64 },
    #[error("series diverges: {0}")]
    DivergentRegime(String),
    #[error("recursion does not cover this case: {0}")]
    RecursionDomain(String),
    #[error("polynomial degree {degree} must be below n = {n}")]
    DegreeTooHigh { degree: usize, n: u32 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Weight applied to the last summation index of the F family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GKind {
    /// w(i) = 1
    One,
    /// w(i) = i
    Identity,
    /// w(i) = i - 1
    IdentityMinusOne,
}

impl GKind {
    pub fn apply(self, i: u64) -> f64 {
        match self {
            GKind::One => 1.0,
            GKind::Identity => i as f64,
            GKind::IdentityMinusOne => i as f64 - 1.0,
        }
    }

    fn factor(self, min: usize) -> ExpPoly {
        match self {
            GKind::One => ExpPoly::exp_from(min),
            GKind::Identity => ExpPoly::marked(MarkFn::Linear, min),
            GKind::IdentityMinusOne => ExpPoly::marked(MarkFn::LinearMinusOne, min),
        }
    }
}

fn factorial_big(m: u64) -> BigUint {
    let mut acc = BigUint::one();
    for i in 2..=m {
        acc *= BigUint::from(i);
    }
    acc
}

pub(crate) fn binom_big(top: u64, bottom: u64) -> BigUint {
    if bottom > top {
        return BigUint::zero();
    }
    let bottom = bottom.min(top - bottom);
    let mut acc = BigUint::one();
    for i in 0..bottom {
        acc = acc * BigUint::from(top - i) / BigUint::from(i + 1);
    }
    acc
}

/// Exact binomial coefficient rounded into f64.
pub fn binom_f64(top: u64, bottom: u64) -> f64 {
    binom_big(top, bottom).to_f64().unwrap_or(f64::INFINITY)
}

/// Number of monotone lattice paths from the origin to the given count
/// vector: `(sum counts)! / prod(counts!)`, exact at any size.
pub fn multinomial_paths(counts: &[u64]) -> Result<BigUint, CombError> {
    if counts.iter().all(|&c| c == 0) {
        return Err(CombError::AllZero);
    }
    let total: u64 = counts.iter().sum();
    let mut acc = factorial_big(total);
    for &c in counts {
        acc /= factorial_big(c);
    }
    Ok(acc)
}

/// A re-entry displacement vector for stratum `j`: the first `j` slots
/// (the ones that were empty) gained at least one arrival and at least
/// one of them ends with exactly one; the remaining slots gained any
/// nonnegative number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReturnVector {
    r: Vec<u64>,
    j: usize,
}

impl ReturnVector {
    pub fn new(r: Vec<u64>, j: usize) -> Result<Self, CombError> {
        if j < 1 || j > r.len() {
            return Err(CombError::NotInEj {
                j,
                reason: format!("stratum must lie in [1, {}]", r.len()),
            });
        }
        if r[..j].contains(&0) {
            return Err(CombError::NotInEj {
                j,
                reason: "first j entries must be at least 1".into(),
            });
        }
        if !r[..j].contains(&1) {
            return Err(CombError::NotInEj {
                j,
                reason: "no entry among the first j equals 1".into(),
            });
        }
        Ok(ReturnVector { r, j })
    }

    pub fn entries(&self) -> &[u64] {
        &self.r
    }

    pub fn stratum(&self) -> usize {
        self.j
    }

    pub fn total(&self) -> u64 {
        self.r.iter().sum()
    }
}

fn to_f64_ratio(num: &BigUint, den: &BigUint) -> f64 {
    match (num.to_f64(), den.to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() && d > 0.0 => n / d,
        _ => f64::NAN,
    }
}

/// Probability that the chain, having left S into stratum `j`, re-enters
/// through the displacement `r`: a binomial path-probability prefactor
/// times the number of admissible arrival orders times `k^{-|r|}`.
///
/// Exact big-integer arithmetic up to totals of 150, log-space beyond.
pub fn q_star(k: u32, n: u32, rv: &ReturnVector) -> Result<f64, CombError> {
    if n < 3 || k < n {
        return Err(CombError::InvalidInput(format!(
            "require k >= n >= 3, got k={k} n={n}"
        )));
    }
    if rv.entries().len() != (n - 1) as usize {
        return Err(CombError::InvalidInput(format!(
            "vector has {} slots, expected {}",
            rv.entries().len(),
            n - 1
        )));
    }
    let j = rv.stratum();
    let total = rv.total();
    let ones = rv.entries()[..j].iter().filter(|&&v| v == 1).count() as u64;
    let kn = u64::from(k) - u64::from(n);
    if total <= 150 {
        let mut num = binom_big(kn + j as u64 + 1, kn + 1);
        num *= factorial_big(total - 1);
        num *= BigUint::from(ones);
        let mut den = BigUint::from(u64::from(k)).pow(total as u32);
        for &c in rv.entries() {
            den *= factorial_big(c);
        }
        Ok(to_f64_ratio(&num, &den))
    } else {
        let lnf = ln_factorials(total as usize + 1);
        let mut ln = binom_f64(kn + j as u64 + 1, kn + 1).ln()
            + lnf[total as usize - 1]
            + (ones as f64).ln()
            - total as f64 * f64::from(k).ln();
        for &c in rv.entries() {
            ln -= lnf[c as usize];
        }
        Ok(ln.exp())
    }
}

/// Fast unchecked weight used by enumeration-based consumers; identical
/// value to [`q_star`].
pub(crate) fn q_star_weight(k: u32, n: u32, j: usize, r: &[u64]) -> f64 {
    let total: u64 = r.iter().sum();
    let ones = r[..j].iter().filter(|&&v| v == 1).count() as f64;
    let kn = u64::from(k - n);
    let binom = binom_f64(kn + j as u64 + 1, kn + 1);
    if total <= 170 {
        let fact = f64_factorials();
        let mut v = binom * fact[(total - 1) as usize] * ones / f64::from(k).powi(total as i32);
        for &c in r {
            v /= fact[c as usize];
        }
        v
    } else {
        let lnf = ln_factorials(total as usize + 1);
        let mut ln =
            binom.ln() + lnf[total as usize - 1] + ones.ln() - total as f64 * f64::from(k).ln();
        for &c in r {
            ln -= lnf[c as usize];
        }
        ln.exp()
    }
}

/// Visit every re-entry vector of stratum `j` with total at most
/// `max_total`, in lexicographic order.
pub(crate) fn enumerate_return_vectors(
    dims: usize,
    j: usize,
    max_total: u64,
    visit: &mut dyn FnMut(&[u64]),
) {
    fn rec(
        buf: &mut Vec<u64>,
        idx: usize,
        dims: usize,
        j: usize,
        left: u64,
        has_one: bool,
        visit: &mut dyn FnMut(&[u64]),
    ) {
        if idx == dims {
            if has_one {
                visit(buf);
            }
            return;
        }
        if idx < j {
            let reserve = (j - 1 - idx) as u64;
            if left < 1 + reserve {
                return;
            }
            let hi = left - reserve;
            for v in 1..=hi {
                if idx == j - 1 && !has_one && v != 1 {
                    continue;
                }
                buf[idx] = v;
                rec(buf, idx + 1, dims, j, left - v, has_one || v == 1, visit);
            }
        } else {
            for v in 0..=left {
                buf[idx] = v;
                rec(buf, idx + 1, dims, j, left - v, has_one, visit);
            }
        }
        buf[idx] = 0;
    }
    let mut buf = vec![0u64; dims];
    rec(&mut buf, 0, dims, j, max_total, false, visit);
}

/// Marked coordinate position for the stratum sums.
#[derive(Debug, Clone, Copy)]
pub(crate) enum EjBlock {
    /// One of the slots that must gain at least one arrival (beyond the
    /// pinned slot).
    Constrained,
    /// One of the slots free to gain any nonnegative number.
    Free,
}

/// Core stratum sum: over vectors with one slot pinned to exactly one
/// arrival, `j - 1` slots at one or more, and `n - 1 - j` free slots,
/// weighted by `(|r|-1)! / prod(r_i!) k^{-|r|}` times the product of the
/// mark weights on distinct designated slots.
///
/// By exchangeability this carries the full indicator-weighted sum over
/// re-entry vectors after multiplying by `j`.
pub(crate) fn ej_pinned_sum(
    k: u32,
    n: u32,
    j: usize,
    marks: &[(EjBlock, MarkFn)],
    trunc: &SeriesTruncation,
) -> Result<CertifiedValue, CombError> {
    let dims = (n - 1) as usize;
    let constrained_marks = marks
        .iter()
        .filter(|(b, _)| matches!(b, EjBlock::Constrained))
        .count();
    let free_marks = marks.len() - constrained_marks;
    if constrained_marks + 1 > j || free_marks > dims - j {
        return Err(CombError::InvalidInput(
            "more marks than coordinates in block".into(),
        ));
    }
    let mut f = ExpPoly::pinned_one();
    for _ in 0..(j - 1 - constrained_marks) {
        f = f.mul(&ExpPoly::exp_from(1));
    }
    for _ in 0..(dims - j - free_marks) {
        f = f.mul(&ExpPoly::exp_from(0));
    }
    for (block, mark) in marks {
        let min = match block {
            EjBlock::Constrained => 1,
            EjBlock::Free => 0,
        };
        f = f.mul(&ExpPoly::marked(*mark, min));
    }
    certified_sum(&f, j, 1.0 / f64::from(k), -1, trunc)
}

fn scale_certified(v: CertifiedValue, c: f64) -> CertifiedValue {
    CertifiedValue {
        value: v.value * c,
        tail_bound: v.tail_bound * c.abs(),
    }
}

/// Bound on the polynomial-weighted re-entry mass dropped beyond the
/// truncation cap: `sum_{s > cap} m_s (a2 s^2 + a1 s + a0)` where `m_s`
/// is the total stratum-`j` re-entry probability at excursion length `s`
/// (prefactor included).
pub(crate) fn ej_mass_tail_poly(
    k: u32,
    n: u32,
    j: usize,
    cap: usize,
    a2: f64,
    a1: f64,
    a0: f64,
) -> f64 {
    let dims = (n - 1) as usize;
    let mut f = ExpPoly::pinned_one();
    for _ in 0..(j - 1) {
        f = f.mul(&ExpPoly::exp_from(1));
    }
    for _ in 0..(dims - j) {
        f = f.mul(&ExpPoly::exp_from(0));
    }
    let ws = WeightedSum::new(&f, 1.0 / f64::from(k), -1);
    let kn = u64::from(k - n);
    let prefactor = binom_f64(kn + j as u64 + 1, kn + 1) * j as f64;
    prefactor * ws.tail_poly_bound(cap, a2, a1, a0)
}

/// Truncated total mass of the re-entry law for stratum `j`; the exact
/// value is 1, so this doubles as a machinery check.
pub fn q_star_normalization(
    k: u32,
    n: u32,
    j: usize,
    trunc: &SeriesTruncation,
) -> Result<CertifiedValue, CombError> {
    if n < 3 || k < n {
        return Err(CombError::InvalidInput(format!(
            "require k >= n >= 3, got k={k} n={n}"
        )));
    }
    if j < 1 || j > (n - 1) as usize {
        return Err(CombError::InvalidInput(format!(
            "stratum {j} outside [1, {}]",
            n - 1
        )));
    }
    let kn = u64::from(k - n);
    let prefactor = binom_f64(kn + j as u64 + 1, kn + 1) * j as f64;
    // the prefactor scales the tail too, so the inner sum must certify
    // against a proportionally tighter tolerance
    let inner = SeriesTruncation::new(trunc.max_total(), trunc.tail_tol() / prefactor)?;
    let base = ej_pinned_sum(k, n, j, &[], &inner)?;
    Ok(scale_certified(base, prefactor))
}

/// Probability that the chain spends exactly `steps` uniformized steps
/// outside S after entering at stratum `j`. Zero below `j`; the mean of
/// this law is the closed-form expected excursion length.
pub fn sojourn_pmf(k: u32, n: u32, j: usize, steps: u64) -> Result<f64, CombError> {
    if n < 3 || k < n {
        return Err(CombError::InvalidInput(format!(
            "require k >= n >= 3, got k={k} n={n}"
        )));
    }
    let dims = (n - 1) as usize;
    if j < 1 || j > dims {
        return Err(CombError::InvalidInput(format!(
            "stratum {j} outside [1, {dims}]"
        )));
    }
    if (steps as usize) < j {
        return Ok(0.0);
    }
    let mut f = ExpPoly::pinned_one();
    for _ in 0..(j - 1) {
        f = f.mul(&ExpPoly::exp_from(1));
    }
    for _ in 0..(dims - j) {
        f = f.mul(&ExpPoly::exp_from(0));
    }
    let ws = WeightedSum::new(&f, 1.0 / f64::from(k), -1);
    let kn = u64::from(k - n);
    let prefactor = binom_f64(kn + j as u64 + 1, kn + 1) * j as f64;
    Ok(prefactor * ws.term(steps as usize))
}

fn factorial_f64(m: usize) -> f64 {
    if m <= 170 {
        f64_factorials()[m]
    } else {
        ln_factorials(m)[m].exp()
    }
}

/// Closed forms of the base family: with `dims` free indices, shift `L`,
/// and weight `g` on the last index,
/// `F0(1) = L! k^{L+1}/(k-J)^{L+1}`,
/// `F0(i) = (L+1)! k^{L+1}/(k-J)^{L+2}`,
/// `F0(i-1) = -L! k^{L+1}(k-J-L-1)/(k-J)^{L+2}`.
pub fn f0_closed(g: GKind, dims: usize, shift: usize, k: u32) -> Result<f64, CombError> {
    if dims == 0 {
        return match g {
            GKind::One => Ok(factorial_f64(shift)),
            _ => Err(CombError::InvalidInput(
                "empty index set is defined only for the constant weight".into(),
            )),
        };
    }
    if (k as usize) <= dims {
        return Err(CombError::DivergentRegime(format!(
            "need k > {dims}, got k={k}"
        )));
    }
    let kf = f64::from(k);
    let gap = kf - dims as f64;
    let lf = factorial_f64(shift);
    let l = shift as f64;
    Ok(match g {
        GKind::One => lf * kf.powi(shift as i32 + 1) / gap.powi(shift as i32 + 1),
        GKind::Identity => lf * (l + 1.0) * kf.powi(shift as i32 + 1) / gap.powi(shift as i32 + 2),
        GKind::IdentityMinusOne => {
            -lf * kf.powi(shift as i32 + 1) * (kf - dims as f64 - l - 1.0)
                / gap.powi(shift as i32 + 2)
        }
    })
}

/// Truncated evaluation of the family member with the first `constrained`
/// indices held at 2 or more, straight from the defining sum.
pub fn f_direct(
    g: GKind,
    constrained: usize,
    dims: usize,
    shift: usize,
    k: u32,
    trunc: &SeriesTruncation,
) -> Result<CertifiedValue, CombError> {
    if dims == 0 {
        if constrained == 0 && g == GKind::One {
            return Ok(CertifiedValue {
                value: factorial_f64(shift),
                tail_bound: 0.0,
            });
        }
        return Err(CombError::InvalidInput(
            "empty index set is defined only for the constant weight".into(),
        ));
    }
    if constrained > dims {
        return Err(CombError::InvalidInput(format!(
            "constrained count {constrained} exceeds dimension {dims}"
        )));
    }
    if (k as usize) <= dims {
        return Err(CombError::DivergentRegime(format!(
            "need k > {dims}, got k={k}"
        )));
    }
    let (e2, e0, g_min) = if constrained == dims {
        (constrained - 1, 0, 2)
    } else {
        (constrained, dims - 1 - constrained, 0)
    };
    let mut f = ExpPoly::one();
    for _ in 0..e2 {
        f = f.mul(&ExpPoly::exp_from(2));
    }
    for _ in 0..e0 {
        f = f.mul(&ExpPoly::exp_from(0));
    }
    f = f.mul(&g.factor(g_min));
    certified_sum(&f, 2 * constrained, 1.0 / f64::from(k), shift as i64, trunc)
}

/// Evaluation through the three-term recursion down to the closed forms
/// at `constrained = 0`; exact up to rounding, no truncation involved.
/// The fully-constrained case is covered only for the constant weight.
pub fn f_via_recursion(
    g: GKind,
    constrained: usize,
    dims: usize,
    shift: usize,
    k: u32,
) -> Result<f64, CombError> {
    if constrained > dims {
        return Err(CombError::InvalidInput(format!(
            "constrained count {constrained} exceeds dimension {dims}"
        )));
    }
    if dims > 0 && (k as usize) <= dims {
        return Err(CombError::DivergentRegime(format!(
            "need k > {dims}, got k={k}"
        )));
    }
    if constrained == dims && constrained > 0 && g != GKind::One {
        return Err(CombError::RecursionDomain(
            "fully-constrained recursion holds only for the constant weight".into(),
        ));
    }
    if constrained == 0 {
        return f0_closed(g, dims, shift, k);
    }
    let a = f_via_recursion(g, constrained - 1, dims, shift, k)?;
    let b = f_via_recursion(g, constrained - 1, dims - 1, shift, k)?;
    let c = f_via_recursion(g, constrained - 1, dims - 1, shift + 1, k)?;
    Ok(a - b - c / f64::from(k))
}

fn g_domain_check(g: GKind, offset: i64, n: u32, stratum: usize, k: u32) -> Result<(), CombError> {
    if n < 3 {
        return Err(CombError::InvalidInput(format!("need n >= 3, got {n}")));
    }
    if offset < -1 {
        return Err(CombError::InvalidInput(format!(
            "offset must be at least -1, got {offset}"
        )));
    }
    if stratum < 1 || stratum > (n - 1) as usize {
        return Err(CombError::InvalidInput(format!(
            "stratum {stratum} outside [1, {}]",
            n - 1
        )));
    }
    if stratum == (n - 1) as usize && g != GKind::One {
        return Err(CombError::RecursionDomain(
            "top stratum holds only for the constant weight".into(),
        ));
    }
    if (k as usize) <= (n - 2) as usize {
        return Err(CombError::DivergentRegime(format!(
            "need k > n-2 = {}, got k={k}",
            n - 2
        )));
    }
    Ok(())
}

/// Binomial aggregate of the family over split counts, straight from the
/// defining sum: `sum_l C(m,l) (l/k^l) F_{m-l}(g; n-l-1, l+offset)`.
pub fn g_direct(
    g: GKind,
    offset: i64,
    n: u32,
    stratum: usize,
    k: u32,
    trunc: &SeriesTruncation,
) -> Result<CertifiedValue, CombError> {
    g_domain_check(g, offset, n, stratum, k)?;
    let kf = f64::from(k);
    let mut value = 0.0;
    let mut tail = 0.0;
    for l in 1..=stratum {
        let weight = binom_f64(stratum as u64, l as u64) * l as f64 / kf.powi(l as i32);
        let inner = f_direct(
            g,
            stratum - l,
            (n as usize - 1) - l,
            (l as i64 + offset) as usize,
            k,
            trunc,
        )?;
        value += weight * inner.value;
        tail += weight * inner.tail_bound;
    }
    Ok(CertifiedValue {
        value,
        tail_bound: tail,
    })
}

/// Alternating closed form of the same aggregate:
/// `(1/k) sum_l C(m,l) (-1)^{l+1} l F0(g; n-l-1, 1+offset)`.
pub fn g_closed(g: GKind, offset: i64, n: u32, stratum: usize, k: u32) -> Result<f64, CombError> {
    g_domain_check(g, offset, n, stratum, k)?;
    let mut acc = 0.0;
    for l in 1..=stratum {
        let sign = if l % 2 == 1 { 1.0 } else { -1.0 };
        let f0 = f0_closed(g, (n as usize - 1) - l, (1 + offset) as usize, k)?;
        acc += sign * binom_f64(stratum as u64, l as u64) * l as f64 * f0;
    }
    Ok(acc / f64::from(k))
}

/// `sum_{i=0}^{n} C(n,i) (-1)^i P(i)` for a polynomial of degree below
/// `n`; always zero. Integer coefficients are evaluated exactly.
pub fn alternating_binomial_residual(coeffs: &[f64], n: u32) -> Result<f64, CombError> {
    let degree = coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0);
    if degree as u64 >= u64::from(n) {
        return Err(CombError::DegreeTooHigh { degree, n });
    }
    let integral = coeffs
        .iter()
        .all(|&c| c.fract() == 0.0 && c.abs() < 2f64.powi(53));
    if integral {
        use num_bigint::BigInt;
        let mut acc = BigInt::zero();
        for i in 0..=u64::from(n) {
            let mut p = BigInt::zero();
            let iv = BigInt::from(i);
            for &c in coeffs.iter().rev() {
                p = p * &iv + BigInt::from(c as i64);
            }
            let b = BigInt::from(binom_big(u64::from(n), i));
            let signed = if i % 2 == 0 { b * p } else { -b * p };
            acc += signed;
        }
        Ok(acc.to_f64().unwrap_or(f64::NAN))
    } else {
        let mut acc = 0.0f64;
        for i in 0..=u64::from(n) {
            let x = i as f64;
            let mut p = 0.0f64;
            for &c in coeffs.iter().rev() {
                p = p * x + c;
            }
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binom_f64(u64::from(n), i) * p;
        }
        Ok(acc)
    }
}

/// Absolute residuals of the five negative-binomial generating-function
/// identities at equal arguments `z` (all series truncated with certified
/// tails): the base identity, its first derivative, the shifted weight,
/// the second derivative, and the cross derivative. The cross identity is
/// vacuous with a single index and reports zero there.
pub fn generating_identity_residuals(
    dims: usize,
    shift: usize,
    z: f64,
    trunc: &SeriesTruncation,
) -> Result<[f64; 5], CombError> {
    generating_identities_full(dims, shift, z, trunc).map(|(residuals, _)| residuals)
}

/// Residuals together with the closed-form reference magnitudes.
pub(crate) fn generating_identities_full(
    dims: usize,
    shift: usize,
    z: f64,
    trunc: &SeriesTruncation,
) -> Result<([f64; 5], [f64; 5]), CombError> {
    if dims < 1 {
        return Err(CombError::InvalidInput("need at least one index".into()));
    }
    if z.is_nan() || z < 0.0 || !z.is_finite() {
        return Err(CombError::InvalidInput(format!(
            "z must be a nonnegative real, got {z}"
        )));
    }
    let jz = dims as f64 * z;
    if jz >= 1.0 {
        return Err(CombError::DivergentRegime(format!(
            "need J*z < 1, got {jz}"
        )));
    }
    let l = shift as f64;
    let lf = factorial_f64(shift);
    let jf = dims as f64;

    // Three primitive sums with exact per-total terms; each later ratio
    // is below the first, so a geometric bound certifies the tails.
    // base: sum_{N>=0} (L+N)!/N! (Jz)^N
    // deriv: sum_{N>=1} (L+N)!/(N-1)! J^{N-1} z^N
    // deriv2: sum_{N>=2} (L+N)!/(N-2)! J^{N-2} z^N
    let run = |start: usize, t_start: f64, den_off: f64| -> Result<CertifiedValue, CombError> {
        let mut t = t_start;
        let mut sum = 0.0;
        for nn in start..=trunc.max_total() {
            sum += t;
            t *= (l + nn as f64 + 1.0) * jz / (nn as f64 + 1.0 - den_off);
        }
        let np = trunc.max_total() as f64 + 1.0;
        let rho = (l + np + 1.0) * jz / (np + 1.0 - den_off);
        if rho.is_nan() || rho >= 1.0 {
            return Err(CombError::TailBoundViolated {
                bound: f64::INFINITY,
                tol: trunc.tail_tol(),
            });
        }
        let bound = t / (1.0 - rho);
        if bound > trunc.tail_tol() {
            return Err(CombError::TailBoundViolated {
                bound,
                tol: trunc.tail_tol(),
            });
        }
        Ok(CertifiedValue {
            value: sum,
            tail_bound: bound,
        })
    };

    let base = run(0, lf, 0.0)?;
    let deriv = run(1, factorial_f64(shift + 1) * z, 1.0)?;
    let deriv2 = run(2, factorial_f64(shift + 2) * z * z, 2.0)?;

    let gap = 1.0 - jz;
    let rhs_base = lf / gap.powi(shift as i32 + 1);
    let rhs_deriv = factorial_f64(shift + 1) * z / gap.powi(shift as i32 + 2);
    let rhs_shifted = lf * ((jf + l + 1.0) * z - 1.0) / gap.powi(shift as i32 + 2);
    let rhs_square =
        factorial_f64(shift + 1) * ((l + 2.0 - jf) * z + 1.0) * z / gap.powi(shift as i32 + 3);
    let rhs_cross = factorial_f64(shift + 2) * z * z / gap.powi(shift as i32 + 3);

    let lhs_shifted = deriv.value - base.value;
    let lhs_square = deriv2.value + deriv.value;
    let residual_cross = if dims >= 2 {
        (deriv2.value - rhs_cross).abs()
    } else {
        0.0
    };
    Ok((
        [
            (base.value - rhs_base).abs(),
            (deriv.value - rhs_deriv).abs(),
            (lhs_shifted - rhs_shifted).abs(),
            (lhs_square - rhs_square).abs(),
            residual_cross,
        ],
        [rhs_base, rhs_deriv, rhs_shifted, rhs_square, rhs_cross],
    ))
}

/// Worst relative residuals of the identity families over a parameter
/// grid, for the verification front end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentitySuiteReport {
    /// Direct sums against the closed forms of the unconstrained family.
    pub f0_residual: f64,
    /// Recursion route against the direct sums.
    pub recursion_residual: f64,
    /// Aggregate family, direct against alternating closed form.
    pub g_residual: f64,
    /// The five generating-function identities.
    pub generating_residual: f64,
    /// Alternating binomial sums of integer polynomials (exact zeros).
    pub binomial_residual: f64,
    /// Re-entry law normalizations against 1.
    pub normalization_residual: f64,
    pub cases: usize,
}

impl IdentitySuiteReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.f0_residual,
            self.recursion_residual,
            self.g_residual,
            self.generating_residual,
            self.binomial_residual,
            self.normalization_residual,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn rel(diff: f64, reference: f64) -> f64 {
    diff.abs() / reference.abs().max(1.0)
}

/// Run every identity family over the grid `k in [k_lo, k_hi]`, all
/// dimensions below `k`, shifts up to `l_max`, and all three weights;
/// residuals are relative to the closed-form values.
pub fn identity_suite(
    k_lo: u32,
    k_hi: u32,
    l_max: usize,
    trunc: &SeriesTruncation,
) -> Result<IdentitySuiteReport, CombError> {
    if k_lo < 2 || k_hi < k_lo {
        return Err(CombError::InvalidInput(format!(
            "bad k range [{k_lo}, {k_hi}]"
        )));
    }
    let gs = [GKind::One, GKind::Identity, GKind::IdentityMinusOne];
    let mut report = IdentitySuiteReport {
        f0_residual: 0.0,
        recursion_residual: 0.0,
        g_residual: 0.0,
        generating_residual: 0.0,
        binomial_residual: 0.0,
        normalization_residual: 0.0,
        cases: 0,
    };

    for k in k_lo..=k_hi {
        for dims in 1..k as usize {
            for shift in 0..=l_max {
                for g in gs {
                    let closed = f0_closed(g, dims, shift, k)?;
                    let direct = f_direct(g, 0, dims, shift, k, trunc)?;
                    report.f0_residual = report.f0_residual.max(rel(direct.value - closed, closed));
                    report.cases += 1;

                    let top = if g == GKind::One { dims } else { dims - 1 };
                    for m in 1..=top {
                        let rec = f_via_recursion(g, m, dims, shift, k)?;
                        let dir = f_direct(g, m, dims, shift, k, trunc)?;
                        report.recursion_residual =
                            report.recursion_residual.max(rel(rec - dir.value, rec));
                        report.cases += 1;
                    }
                }
            }
        }
        // aggregate family over every admissible target size
        for n in 3..=k.saturating_sub(1) {
            for offset in [-1i64, 0, 1] {
                for g in gs {
                    let top = if g == GKind::One {
                        n as usize - 1
                    } else {
                        n as usize - 2
                    };
                    for stratum in 1..=top {
                        let closed = g_closed(g, offset, n, stratum, k)?;
                        let direct = g_direct(g, offset, n, stratum, k, trunc)?;
                        report.g_residual =
                            report.g_residual.max(rel(direct.value - closed, closed));
                        report.cases += 1;
                    }
                }
            }
        }
        // re-entry normalizations
        for n in 3..=k.min(7) {
            if k < n {
                continue;
            }
            for j in 1..=(n - 1) as usize {
                let d = q_star_normalization(k, n, j, trunc)?;
                report.normalization_residual = report
                    .normalization_residual
                    .max((d.value - 1.0).abs().max(d.tail_bound));
                report.cases += 1;
            }
        }
    }

    for dims in 1..=6usize {
        for shift in 0..=l_max {
            for z in [0.05, 0.1, 0.15] {
                if dims as f64 * z >= 1.0 {
                    continue;
                }
                let (rs, refs) = generating_identities_full(dims, shift, z, trunc)?;
                for (r, reference) in rs.into_iter().zip(refs) {
                    report.generating_residual = report.generating_residual.max(rel(r, reference));
                }
                report.cases += 1;
            }
        }
    }

    // alternating binomial sums of integer polynomials vanish exactly
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    for n in 1..=12u32 {
        for _ in 0..8 {
            let deg = rng.random_range(0..n) as usize;
            let coeffs: Vec<f64> = (0..=deg)
                .map(|_| f64::from(rng.random_range(-40..=40i32)))
                .collect();
            let r = alternating_binomial_residual(&coeffs, n)?;
            report.binomial_residual = report.binomial_residual.max(r.abs());
            report.cases += 1;
        }
    }
    Ok(report)
}
