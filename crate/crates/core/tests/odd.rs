mod common;

use std::collections::BTreeSet;
use std::fs;

use proptest::prelude::*;
use teleodd_core::odd::{
    contains, distance_to_border, intersect, parse_odd_definition, serialize_odd_definition, Constraint,
    DomainSnapshot, OddDefinition, OddMonitor, Value,
};

const NUM_KEYS: [&str; 3] = ["env.rain_mm_h", "conn.latency_ms", "dyn.speed_limit_kmh"];
const ROADS: [&str; 3] = ["urban", "highway", "rural"];

#[derive(Debug, Clone)]
struct Spec {
    intervals: Vec<Option<(f64, f64)>>,
    roads: Option<BTreeSet<String>>,
    construction: Option<bool>,
}

fn bound() -> impl Strategy<Value = f64> {
    prop_oneof![
        1 => Just(f64::NEG_INFINITY),
        1 => Just(f64::INFINITY),
        6 => (-50i32..300).prop_map(f64::from),
    ]
}

fn interval() -> impl Strategy<Value = Option<(f64, f64)>> {
    prop::option::of((bound(), bound()).prop_filter_map("ordered", |(a, b)| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        (lo < f64::INFINITY && hi > f64::NEG_INFINITY).then_some((lo, hi))
    }))
}

fn spec() -> impl Strategy<Value = Spec> {
    (
        prop::collection::vec(interval(), 3),
        prop::option::of(prop::sample::subsequence(ROADS.to_vec(), 1..=3)),
        prop::option::of(any::<bool>()),
    )
        .prop_map(|(intervals, roads, construction)| Spec {
            intervals,
            roads: roads.map(|r| r.into_iter().map(String::from).collect()),
            construction,
        })
}

fn build(name: &str, s: &Spec) -> OddDefinition {
    let mut odd = OddDefinition::new(name);
    for (key, iv) in NUM_KEYS.iter().zip(&s.intervals) {
        if let Some((lo, hi)) = iv {
            odd = odd
                .with(key, Constraint::Interval { lo: *lo, hi: *hi, unit: "u".into() })
                .unwrap();
        }
    }
    if let Some(r) = &s.roads {
        odd = odd.with("scenery.road_type", Constraint::OneOf(r.clone())).unwrap();
    }
    if let Some(c) = s.construction {
        odd = odd.with("scenery.construction", Constraint::Required(c)).unwrap();
    }
    odd
}

#[derive(Debug, Clone)]
struct Snap {
    nums: Vec<f64>,
    road: &'static str,
    construction: bool,
}

fn snap() -> impl Strategy<Value = Snap> {
    (
        prop::collection::vec((-60i32..320).prop_map(f64::from), 3),
        prop::sample::select(ROADS.to_vec()),
        any::<bool>(),
    )
        .prop_map(|(nums, road, construction)| Snap { nums, road, construction })
}

fn to_snapshot(s: &Snap) -> DomainSnapshot {
    let mut d = DomainSnapshot::new(0);
    for (k, v) in NUM_KEYS.iter().zip(&s.nums) {
        d.set(k, Value::Number(*v));
    }
    d.set("scenery.road_type", Value::Text(s.road.into()));
    d.set("scenery.construction", Value::Bool(s.construction));
    d
}

fn oracle_inside(spec: &Spec, s: &Snap) -> bool {
    let nums_ok = spec
        .intervals
        .iter()
        .zip(&s.nums)
        .all(|(iv, x)| iv.is_none_or(|(lo, hi)| lo <= *x && *x <= hi));
    let road_ok = spec.roads.as_ref().is_none_or(|r| r.contains(s.road));
    let cons_ok = spec.construction.is_none_or(|c| c == s.construction);
    nums_ok && road_ok && cons_ok
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn containment_matches_per_attribute_oracle(sp in spec(), sn in snap()) {
        let odd = build("a", &sp);
        let v = contains(&odd, &to_snapshot(&sn)).unwrap();
        prop_assert_eq!(v.inside, oracle_inside(&sp, &sn));
        for (key, m) in &v.margin {
            prop_assert!((-1.0..=1.0).contains(m));
            let violated = v.violated.iter().any(|x| &x.key == key);
            prop_assert_eq!(violated, *m < 0.0, "key {} margin {}", key, m);
        }
    }

    #[test]
    fn intersection_is_conjunction(a in spec(), b in spec(), sn in snap()) {
        let (oa, ob) = (build("a", &a), build("b", &b));
        let both = intersect(&oa, &ob).unwrap();
        let d = to_snapshot(&sn);
        prop_assert_eq!(contains(&both, &d).unwrap().inside, oracle_inside(&a, &sn) && oracle_inside(&b, &sn));
        prop_assert!(both.is_subset_of(&oa) && both.is_subset_of(&ob));
    }

    #[test]
    fn subset_implies_containment(a in spec(), b in spec(), sn in snap()) {
        let (oa, ob) = (build("a", &a), build("b", &b));
        let d = to_snapshot(&sn);
        if oa.is_subset_of(&ob) && contains(&oa, &d).unwrap().inside {
            prop_assert!(contains(&ob, &d).unwrap().inside);
        }
    }

    #[test]
    fn text_form_round_trips(a in spec()) {
        let odd = build("roundtrip", &a);
        let text = serialize_odd_definition(&odd);
        prop_assert_eq!(parse_odd_definition(&text).unwrap(), odd);
    }

    #[test]
    fn margin_shrinks_toward_the_border(lo in 0i32..100, width in 1i32..200, x in 0i32..400) {
        let (lo, hi) = (f64::from(lo), f64::from(lo + width));
        let odd = OddDefinition::new("m")
            .with("k", Constraint::Interval { lo, hi, unit: String::new() })
            .unwrap();
        let m = |v: f64| distance_to_border(&odd, &DomainSnapshot::new(0).with("k", Value::Number(v))).unwrap()["k"];
        let x = f64::from(x);
        let mid = (lo + hi) / 2.0;
        let farther = if x < mid { x - 1.0 } else { x + 1.0 };
        prop_assert!(m(farther) <= m(x));
    }
}

#[test]
fn latency_margin_example() {
    let odd = OddDefinition::new("lat")
        .with("conn.latency_ms", Constraint::Interval { lo: 0.0, hi: 250.0, unit: "ms".into() })
        .unwrap();
    let m = distance_to_border(&odd, &DomainSnapshot::new(0).with("conn.latency_ms", Value::Number(200.0))).unwrap();
    assert!((m["conn.latency_ms"] - 0.2).abs() < 1e-12);
}

fn count_flips(band: f64) -> usize {
    let odd = OddDefinition::new("lat")
        .with("conn.latency_ms", Constraint::Interval { lo: 0.0, hi: 250.0, unit: "ms".into() })
        .unwrap()
        .with_band("conn.latency_ms", band)
        .unwrap();
    let mut mon = OddMonitor::new(odd);
    let mut last: Option<bool> = None;
    let mut flips = 0;
    // 10 s at 10 ms, alternating every tick
    for tick in 0..1000u64 {
        let x = if tick % 2 == 0 { 249.0 } else { 251.0 };
        let v = mon.evaluate(&DomainSnapshot::new(tick).with("conn.latency_ms", Value::Number(x))).unwrap();
        if last.is_some_and(|l| l != v.inside) {
            flips += 1;
        }
        last = Some(v.inside);
    }
    flips
}

#[test]
fn hysteresis_suppresses_square_wave() {
    assert!(count_flips(0.1) <= 1);
    assert!(count_flips(0.0) >= 100);
}

#[test]
fn shipped_odd_files_parse_and_round_trip() {
    let dir = common::repo_root().join("scenarios/odd");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let odd = parse_odd_definition(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(parse_odd_definition(&serialize_odd_definition(&odd)).unwrap(), odd);
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn teleop_odd_rejects_high_latency() {
    let text = fs::read_to_string(common::repo_root().join("scenarios/odd/teleop_urban_t2.odd")).unwrap();
    let odd = parse_odd_definition(&text).unwrap();
    let snap = |lat: f64| {
        DomainSnapshot::new(0)
            .with("scenery.road_type", Value::Text("urban".into()))
            .with("env.rain_mm_h", Value::Number(0.0))
            .with("dyn.speed_limit_kmh", Value::Number(50.0))
            .with("conn.latency_ms", Value::Number(lat))
            .with("conn.loss_frac", Value::Number(0.0))
    };
    assert!(contains(&odd, &snap(40.0)).unwrap().inside);
    let v = contains(&odd, &snap(400.0)).unwrap();
    assert!(!v.inside);
    assert_eq!(v.violated_keys().collect::<Vec<_>>(), ["conn.latency_ms"]);
}
