use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use racetee::analysis::{
    self, binomial, hypergeometric_pmf, liveness_delta, rsts_epsilon_in, rsts_tail, threshold_readings, LivenessQuery,
};
use racetee::enclave::selection::{committee_from_offset, compute_step};
use racetee::{Approx, Exact};

fn rat(n: u64, d: u64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Counts all `s`-subsets of `0..n` holding at least `t` of `0..m`.
fn brute_tail(n: u32, m: u32, s: u32, t: u32) -> BigRational {
    let (mut hit, mut all) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() != s {
            continue;
        }
        all += 1;
        if (mask & ((1 << m) - 1)).count_ones() >= t {
            hit += 1;
        }
    }
    rat(hit, all)
}

#[test]
fn tail_matches_subset_enumeration() {
    for n in 1..=12u32 {
        for m in 0..=n {
            for s in 1..=n {
                for t in 1..=s {
                    let exact = rsts_tail(n as u64, m as u64, s as u64, t as u64).unwrap();
                    assert_eq!(exact, brute_tail(n, m, s, t), "n={n} m={m} s={s} t={t}");
                }
            }
        }
    }
}

#[test]
fn pascal_triangle() {
    let mut row = vec![BigRational::one()];
    for n in 1..=40u64 {
        let mut next = vec![BigRational::one(); n as usize + 1];
        for k in 1..n as usize {
            next[k] = &row[k - 1] + &row[k];
        }
        row = next;
        for (k, v) in row.iter().enumerate() {
            assert_eq!(&binomial::<Exact>(n, k as u64), v);
        }
    }
}

#[test]
fn pmf_is_a_distribution() {
    for (n, m, s) in [(10u64, 4u64, 5u64), (50, 17, 12), (200, 66, 38)] {
        let total = (0..=s).fold(BigRational::zero(), |a, k| a + hypergeometric_pmf::<Exact>(n, m, s, k));
        assert_eq!(total, BigRational::one(), "n={n} m={m} s={s}");
    }
}

#[test]
fn float_tracks_exact_at_the_headline_cell() {
    let (lo, hi) = threshold_readings(38);
    assert_eq!((lo, hi), (34, 35));
    for t in [lo, hi] {
        let exact = rsts_tail(10_000, 3_333, 38, t).unwrap();
        let f: Approx = rsts_epsilon_in(10_000, 3_333, 38, t).unwrap();
        let e = analysis::rational_to_f64(&exact);
        assert!(((f - e) / e).abs() < 1e-9, "t={t}: {f} vs {e}");
    }
    assert!(analysis::is_headline_cell(10_000, 3_333, 38, hi));
    assert!(!analysis::is_headline_cell(10_000, 3_333, 38, lo));
}

#[test]
fn headline_is_below_the_bound() {
    let e = rsts_tail(10_000, 3_333, 38, 35).unwrap();
    assert!(analysis::log10_rational(&e) < -12.0);
    assert!(e < BigRational::new(BigInt::one(), BigInt::from(10u64.pow(12))));
}

#[test]
fn liveness_closed_form() {
    let q = LivenessQuery::new(20, 4, 5);
    assert_eq!(liveness_delta::<Exact>(&q).unwrap(), rat(67_232, 100_000));
    let f: Approx = liveness_delta(&q).unwrap();
    assert!((f - 0.67232).abs() < 1e-12);
    assert_eq!(liveness_delta::<Exact>(&LivenessQuery::new(7, 7, 1)).unwrap(), BigRational::one());
}

/// One round selects a given node with probability exactly `c/n` over the
/// `n` equally likely offsets, so `t` independent rounds give the closed form.
#[test]
fn liveness_from_enumerated_offsets() {
    for (n, c, t) in [(20u64, 4u64, 5u64), (13, 3, 4), (9, 9, 2), (64, 5, 10)] {
        let step = compute_step(n, c).unwrap();
        for node in 0..n {
            let hits = (0..n).filter(|&o| committee_from_offset(o, n, c, step).contains(&node)).count() as u64;
            assert_eq!(hits, c, "n={n} c={c} node={node}");
        }
        let miss = BigRational::one() - rat(c, n);
        let want = BigRational::one() - num_traits::pow(miss, t as usize);
        assert_eq!(liveness_delta::<Exact>(&LivenessQuery::new(n, c, t)).unwrap(), want);
    }
}

#[test]
fn montecarlo_estimates_agree() {
    let q = LivenessQuery::new(20, 4, 5);
    let mc = analysis::liveness_montecarlo(&q, 20_000, 11).unwrap();
    assert!(mc.agrees_with(0.67232, 4.0), "{mc:?}");
    let mc = analysis::rsts_montecarlo(10, 6, 4, 3, 20_000, 12).unwrap();
    assert!(mc.agrees_with(95.0 / 210.0, 4.0), "{mc:?}");
    assert!(analysis::liveness_montecarlo(&q, 10, 1).is_err());
}

#[test]
fn sweep_rows_and_csv() {
    let rows = analysis::rsts_sweep(&[(10, 4, 5, 4), (10_000, 3_333, 38, 35)]).unwrap();
    assert_eq!(rows[0].epsilon_exact, rat(1, 42));
    assert!(rows[1].headline && !rows[0].headline);
    let mut buf = Vec::new();
    analysis::write_rsts_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,m,s,t,epsilon_exact,epsilon_log10"));
    assert!(lines.next().unwrap().starts_with("10,4,5,4,1/42,"));
}

#[test]
fn bad_parameters_are_errors() {
    assert!(rsts_tail(10, 11, 5, 3).is_err());
    assert!(rsts_tail(10, 4, 11, 3).is_err());
    assert!(rsts_tail(10, 4, 5, 0).is_err());
    assert!(liveness_delta::<Approx>(&LivenessQuery::new(4, 0, 3)).is_err());
    assert!(analysis::rsts_sweep(&[(3, 1, 4, 1)]).is_err());
}
