use std::io::Cursor;

use eqr::events::{sessionize, write_events, Event, EventError, EventReader, ParseMode};
use proptest::prelude::*;

fn event() -> impl Strategy<Value = Event> {
    let head = ("[a-z0-9]{1,8}", 0i64..10_000_000_000_000, "s[0-9]{1,3}", "[a-z]{1,6}( [a-z]{1,6})?");
    (head, 0u8..5, 1u32..100, 0.0f64..5000.0, any::<bool>(), (1u32..5000, 0u32..100, 0u32..100)).prop_map(
        |((id, ts, sid, q), kind, pos, price, sp, (found, shown, spons))| match kind {
            0 => {
                let shown = shown.min(found);
                Event::search(id, ts, &sid, &q, found, shown, spons.min(shown))
            }
            1 => Event::result_click(id, ts, &sid, &q, pos, sp),
            2 => Event::widget_click(id, ts, &sid, &q),
            3 => Event::add_to_cart(id, ts, &sid, &q),
            _ => Event::purchase(id, ts, &sid, &q, price, sp),
        },
    )
}

fn round_trip(events: &[Event], mode: ParseMode) -> Vec<Result<Event, String>> {
    let mut buf = Vec::new();
    write_events(events, &mut buf).unwrap();
    EventReader::new(Cursor::new(buf), mode).map(|r| r.map_err(|e| e.to_string())).collect()
}

proptest! {
    #[test]
    fn serialization_round_trips(mut events in proptest::collection::vec(event(), 0..40)) {
        events.sort_by_key(|e| e.timestamp);
        let back: Vec<Event> = round_trip(&events, ParseMode::Strict).into_iter().map(Result::unwrap).collect();
        prop_assert_eq!(back, events);
    }

    #[test]
    fn sessionize_ignores_input_order(events in proptest::collection::vec(event(), 0..40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = events.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = sessionize(events);
        let b = sessionize(shuffled);
        prop_assert_eq!(&a, &b);
        for s in &a {
            prop_assert!(s.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
            prop_assert!(s.events.iter().all(|e| e.session_id == s.session_id));
        }
    }
}

#[test]
fn strict_mode_reports_the_first_bad_line() {
    let text = concat!(
        r#"{"event_id":"a","kind":"search","timestamp":5,"session_id":"s","query":"q","results_found":3,"results_displayed":2,"sponsored_displayed":0}"#,
        "\n",
        r#"{"event_id":"b","kind":"result_click","timestamp":6,"session_id":"s","query":"q"}"#,
        "\n",
        r#"{"event_id":"c","kind":"widget_click","timestamp":4,"session_id":"s","query":"q"}"#,
        "\n",
    );
    let strict: Vec<_> = EventReader::new(Cursor::new(text), ParseMode::Strict).collect();
    assert!(strict[0].is_ok());
    assert!(matches!(strict[1], Err(EventError::MissingField { line: 2, field: "position", .. })));

    let mut lenient = EventReader::new(Cursor::new(text), ParseMode::Lenient);
    let kept: Vec<_> = lenient.by_ref().collect::<Result<_, _>>().unwrap();
    assert_eq!(kept.len(), 2);
    assert_eq!((lenient.skipped(), lenient.warnings()), (1, 1));
}

#[test]
fn queries_are_normalized_on_read() {
    let line = r#"{"event_id":"a","kind":"widget_click","timestamp":1,"session_id":"s","query":"  Air   FRYER "}"#;
    let e = EventReader::new(Cursor::new(line), ParseMode::Strict).next().unwrap().unwrap();
    assert_eq!(e.query, "air fryer");
}
