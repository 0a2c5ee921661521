use gapflow::ingest::{parse_snapshots, write_csv, write_jsonl, BookSnapshot, Decimal, Format, IngestConfig, Level, SnapshotSequence, LEVELS};
use proptest::prelude::*;

const TICK: Decimal = Decimal::from_units(1_000_000);

/// Strictly increasing tick offsets for one side.
fn offsets() -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(1i64..6, LEVELS).prop_map(|steps| {
        steps
            .iter()
            .scan(0, |acc, s| {
                *acc += s;
                Some(*acc)
            })
            .collect()
    })
}

fn volumes() -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(0i64..5_000_000_000, LEVELS)
}

fn snapshot(ts: i64, mid_ticks: i64, ask: &[i64], bid: &[i64], av: &[i64], bv: &[i64]) -> BookSnapshot {
    let level = |ticks: i64, vol: i64| Level { price: Decimal::from_units(ticks * 1_000_000), volume: Decimal::from_units(vol) };
    let asks: [Level; LEVELS] = std::array::from_fn(|i| level(mid_ticks + ask[i], av[i]));
    let bids: [Level; LEVELS] = std::array::from_fn(|i| level(mid_ticks - bid[i] + 1, bv[i]));
    BookSnapshot::new(ts, asks, bids, TICK).expect("valid snapshot")
}

fn sequences() -> impl Strategy<Value = SnapshotSequence> {
    let one = (100i64..100_000, offsets(), offsets(), volumes(), volumes(), prop::bool::weighted(0.1));
    prop::collection::vec(one, 1..12).prop_map(|rows| {
        let mut ts = 0;
        let snaps = rows
            .iter()
            .map(|(mid, a, b, av, bv, skip)| {
                ts += if *skip { 30 } else { 10 };
                snapshot(ts, *mid, a, b, av, bv)
            })
            .collect();
        SnapshotSequence::new(snaps, 10, "p").expect("ordered")
    })
}

fn config() -> IngestConfig {
    IngestConfig { tick: TICK, resolution: 10, label: "p".into() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(seq in sequences()) {
        let mut bytes = Vec::new();
        write_csv(&seq, &mut bytes).unwrap();
        let back = parse_snapshots(bytes.as_slice(), Format::Csv, &config()).unwrap();
        prop_assert!(back.rejected.is_empty());
        prop_assert_eq!(back.sequence, seq);
    }

    #[test]
    fn jsonl_round_trip(seq in sequences()) {
        let mut bytes = Vec::new();
        write_jsonl(&seq, &mut bytes).unwrap();
        let back = parse_snapshots(bytes.as_slice(), Format::Jsonl, &config()).unwrap();
        prop_assert!(back.rejected.is_empty());
        prop_assert_eq!(back.sequence, seq);
    }

    #[test]
    fn parsing_is_total(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        for fmt in [Format::Csv, Format::Jsonl] {
            // any input yields a report or an error, never a panic
            let _ = parse_snapshots(bytes.as_slice(), fmt, &config());
        }
    }

    #[test]
    fn corrupted_rows_are_rejected_not_fatal(seq in sequences(), row in 0usize..12, col in 1usize..81) {
        // a file whose only record is bad is an error, covered elsewhere
        prop_assume!(seq.len() >= 2);
        let mut bytes = Vec::new();
        write_csv(&seq, &mut bytes).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let target = 1 + row % seq.len();
        let mut fields: Vec<String> = lines[target].split(',').map(String::from).collect();
        fields[col] = "x".into();
        lines[target] = fields.join(",");
        let back = parse_snapshots(lines.join("\n").as_bytes(), Format::Csv, &config()).unwrap();
        prop_assert_eq!(back.rejected.len(), 1);
        prop_assert_eq!(back.sequence.len(), seq.len() - 1);
        prop_assert_eq!(back.records as usize, seq.len());
    }
}
