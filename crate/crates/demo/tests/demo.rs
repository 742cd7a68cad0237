use pcn_demo::{complexity_row, payment_trace, sampling_curves};

#[test]
fn curves_cover_each_faulty_count() {
    let csv = sampling_curves(1200, &[300, 400], 31).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 10);
    assert!(rows[0].starts_with("1200,300,4,"));
    assert!(sampling_curves(1200, &[], 31).is_err());
    assert!(sampling_curves(1200, &[1300], 31).is_err());
}

#[test]
fn complexity_rows_pass() {
    let r = complexity_row("syncpcn", "pbft-like", 4, 2).unwrap();
    assert_eq!(r.measured_messages, 8 * 4 * 2 + 3 * 2 + 2);
    assert!(complexity_row("psyncpcn", "hotstuff-like", 7, 1).unwrap().pass);
    assert!(complexity_row("lightning", "pbft-like", 4, 1).is_err());
    assert!(complexity_row("syncpcn", "pbft-like", 40, 1).is_err());
}

#[test]
fn trace_is_ndjson() {
    let t = payment_trace("psyncpcn-full", 4, 2).unwrap();
    assert!(t.lines().count() > 10);
    assert!(t.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
}
