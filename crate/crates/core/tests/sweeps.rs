use gansic::detect::difference_sigma;
use gansic::harness::{run_static_sweep, Method, ScenarioConfig};

#[test]
fn map_ser_never_rises_with_snr() {
    let cfg = ScenarioConfig { methods: vec![Method::Map], seed: 12, ..Default::default() };
    let res = run_static_sweep(&cfg, 1).unwrap();
    for pair in res.rows.windows(2) {
        let (lo, hi) = (pair[0].result(), pair[1].result());
        assert!(
            hi.ser <= lo.ser + 3.0 * difference_sigma(&lo, &hi),
            "{} dB {} then {} dB {}",
            pair[0].snr_db,
            lo.ser,
            pair[1].snr_db,
            hi.ser
        );
    }
}

#[test]
fn map_dominates_and_cells_are_consistent() {
    let mut cfg = ScenarioConfig {
        methods: vec![Method::Map, Method::Sic, Method::DeepsicStatic],
        snr_db: vec![0.0, 6.0, 12.0],
        train_pairs_per_snr: 1000,
        seed: 13,
        ..Default::default()
    };
    cfg.deepsic.epochs = 5;
    cfg.deepsic.lr = 1e-3;
    let res = run_static_sweep(&cfg, 2).unwrap();
    assert_eq!(res.rows.len(), 9);
    for row in &res.rows {
        assert!(row.symbols >= 1000);
        assert_eq!(row.ser, row.errors as f64 / row.symbols as f64);
        assert!((0.0..=0.5 + 0.05).contains(&row.ser));
        let map = res.get(Method::Map, row.snr_db).unwrap().result();
        assert!(map.ser <= row.ser + 3.0 * difference_sigma(&map, &row.result()), "{row:?}");
    }
}

#[test]
fn early_stop_keeps_the_symbol_floor() {
    let mut cfg = ScenarioConfig { methods: vec![Method::Sic], snr_db: vec![-10.0], ..Default::default() };
    cfg.eval.min_errors = 1;
    let row = &run_static_sweep(&cfg, 1).unwrap().rows[0];
    assert!(row.errors >= 200 && row.symbols >= 1000);
    assert_eq!(row.symbols, 4000);
}
