use spotarc::experiment::{calibration_cases, summarize, Stratum};

// reference outcome rates (not fulfilled %, interrupted %) per studied stratum
const REFERENCE: [(&str, f64, f64); 5] = [
    ("HH", 0.0, 14.71),
    ("HL", 0.0, 40.52),
    ("MM", 25.49, 39.22),
    ("LH", 58.18, 30.91),
    ("LL", 45.61, 45.61),
];

#[test]
fn studied_strata_match_reference_rates() {
    for (code, nf, int) in REFERENCE {
        let s: Stratum = code.parse().unwrap();
        let cases = calibration_cases(s, 10_000, 17);
        let sum = &summarize(&cases).unwrap()[0];
        println!("{code}: {:.2} {:.2} median {:?}", sum.not_fulfilled_pct, sum.interrupted_pct, sum.median_fulfill_secs());
        assert!((sum.not_fulfilled_pct - nf).abs() <= 2.0, "{code} not fulfilled {}", sum.not_fulfilled_pct);
        assert!((sum.interrupted_pct - int).abs() <= 2.0, "{code} interrupted {}", sum.interrupted_pct);
    }
}

#[test]
fn low_low_median_fulfillment_latency() {
    let cases = calibration_cases("LL".parse().unwrap(), 10_000, 23);
    let median = summarize(&cases).unwrap()[0].median_fulfill_secs().unwrap();
    assert!((median / 1322.0 - 1.0).abs() <= 0.15, "{median}");
}
