//! Fisher's exact test on 2x2 tables and zero-cell-corrected odds ratios.

use serde::{Deserialize, Serialize};

use super::{Method, TestResult};

/// Relative slack when comparing point probabilities against the observed
/// one, so tables that are equally likely up to rounding count as "as extreme".
const RELATIVE_TIE_TOLERANCE: f64 = 1e-7;

/// ```text
///              case   control
/// exposed        a       b
/// unexposed      c       d
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        ContingencyTable { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn exposed(&self) -> u64 {
        self.a + self.b
    }

    pub fn cases(&self) -> u64 {
        self.a + self.c
    }

    /// True when any row or column margin is zero, i.e. only one table is
    /// consistent with the margins.
    pub fn is_degenerate(&self) -> bool {
        let n = self.total();
        let r = self.exposed();
        let k = self.cases();
        r == 0 || r == n || k == 0 || k == n
    }
}

/// Table of ln(k!) for k in 0..=max_n.
#[derive(Debug, Clone)]
pub struct LogFactorials {
    table: Vec<f64>,
}

impl LogFactorials {
    pub fn new(max_n: usize) -> Self {
        let mut table = Vec::with_capacity(max_n + 1);
        table.push(0.0);
        let mut acc = 0.0f64;
        for k in 1..=max_n {
            acc += (k as f64).ln();
            table.push(acc);
        }
        LogFactorials { table }
    }

    pub fn max_n(&self) -> usize {
        self.table.len() - 1
    }

    #[inline]
    pub fn ln_fact(&self, k: u64) -> f64 {
        self.table[k as usize]
    }

    #[inline]
    pub fn ln_choose(&self, n: u64, k: u64) -> f64 {
        self.ln_fact(n) - self.ln_fact(k) - self.ln_fact(n - k)
    }
}

/// Fisher exact tester backed by a log-factorial table sized once for the
/// largest table it will see. Read-only after construction, so one instance
/// can be shared across scan workers.
#[derive(Debug, Clone)]
pub struct FisherExact {
    lf: LogFactorials,
}

impl FisherExact {
    pub fn new(max_n: usize) -> Self {
        FisherExact {
            lf: LogFactorials::new(max_n),
        }
    }

    pub fn log_factorials(&self) -> &LogFactorials {
        &self.lf
    }

    /// ln P(X = x) for the hypergeometric law fixed by the table's margins.
    fn ln_pmf(&self, x: u64, row1: u64, col1: u64, n: u64) -> f64 {
        self.lf.ln_choose(row1, x) + self.lf.ln_choose(n - row1, col1 - x)
            - self.lf.ln_choose(n, col1)
    }

    /// Point probability of every table sharing the margins of `t`, indexed
    /// from the smallest feasible `a`.
    pub fn support_pmf(&self, t: &ContingencyTable) -> (u64, Vec<f64>) {
        let n = t.total();
        let row1 = t.exposed();
        let col1 = t.cases();
        let lo = (row1 + col1).saturating_sub(n);
        let hi = row1.min(col1);
        let pmf = (lo..=hi)
            .map(|x| self.ln_pmf(x, row1, col1, n).exp())
            .collect();
        (lo, pmf)
    }

    pub fn two_sided(&self, t: &ContingencyTable) -> TestResult {
        let n = t.total();
        assert!(
            n as usize <= self.lf.max_n(),
            "table total {n} exceeds log-factorial cache ({})",
            self.lf.max_n()
        );
        let or = odds_ratio(t);
        if n == 0 || t.is_degenerate() {
            return TestResult::degenerate(or, Method::Exact);
        }
        let row1 = t.exposed();
        let col1 = t.cases();
        let lo = (row1 + col1).saturating_sub(n);
        let hi = row1.min(col1);
        let observed = self.ln_pmf(t.a, row1, col1, n);
        let cutoff = observed + RELATIVE_TIE_TOLERANCE.ln_1p();
        let mut p = 0.0;
        for x in lo..=hi {
            let lp = self.ln_pmf(x, row1, col1, n);
            if lp <= cutoff {
                p += lp.exp();
            }
        }
        TestResult::new(or, p.min(1.0), Method::Exact)
    }
}

/// Two-sided Fisher exact test (point-probability convention). Builds a
/// log-factorial table for this one table; use [`FisherExact`] when testing
/// many tables.
pub fn fisher_exact_two_sided(t: &ContingencyTable) -> TestResult {
    FisherExact::new(t.total() as usize).two_sided(t)
}

/// (a·d)/(b·c), with 0.5 added to every cell when any cell is zero.
pub fn odds_ratio(t: &ContingencyTable) -> f64 {
    let (a, b, c, d) = (t.a as f64, t.b as f64, t.c as f64, t.d as f64);
    if t.a == 0 || t.b == 0 || t.c == 0 || t.d == 0 {
        ((a + 0.5) * (d + 0.5)) / ((b + 0.5) * (c + 0.5))
    } else {
        (a * d) / (b * c)
    }
}
