//! Event files written by `write_events_csv` read back to the same events.

use ccl::ingest::{ingest_events, write_events_csv, EventFormat};
use ccl_core::event::{EventLog, Layer};
use ccl_core::testing::{Gen, LogShape};
use proptest::prelude::*;

type Row = (String, String, String, Layer, Vec<(String, String)>);

fn rows(log: &EventLog) -> Vec<Row> {
    let mut out: Vec<Row> = log
        .events()
        .map(|e| {
            let attrs = e.attributes.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            (e.case_id.clone(), e.activity.clone(), e.timestamp.to_rfc3339(), e.layer, attrs)
        })
        .collect();
    out.sort();
    out
}

fn to_csv(log: &EventLog) -> Vec<u8> {
    let mut buf = Vec::new();
    write_events_csv(log, &mut buf).unwrap();
    buf
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(seed in any::<u64>()) {
        let log = Gen::new(seed).log(LogShape { max_cases: 30, ..LogShape::default() });
        let text = to_csv(&log);
        let back = ingest_events(&text[..], EventFormat::Csv, Layer::BusinessFlow, "roundtrip").unwrap();
        prop_assert_eq!(rows(&back), rows(&log));
        // Ordinals follow row order, which is already canonical.
        for trace in back.traces.values() {
            prop_assert!(trace.is_canonical());
        }
        prop_assert_eq!(to_csv(&back), text);
    }

    #[test]
    fn csv_fields_with_separators_survive(activity in "[a-zA-Z ,;\"]{1,12}", value in "[a-zA-Z ,;\"]{1,8}") {
        prop_assume!(!activity.trim().is_empty());
        let text = format!(
            "case_id,activity,timestamp,note\nC1,\"{}\",2021-07-01,\"{}\"\n",
            activity.replace('"', "\"\""),
            value.replace('"', "\"\"")
        );
        let log = ingest_events(text.as_bytes(), EventFormat::Csv, Layer::BusinessFlow, "t").unwrap();
        let e = log.events().next().unwrap();
        prop_assert_eq!(&e.activity, &activity);
        prop_assert_eq!(e.attributes.get("note"), Some(&value));
    }
}
