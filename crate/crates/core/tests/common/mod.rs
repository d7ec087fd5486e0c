#![allow(dead_code)]

use std::collections::BTreeMap;

use castel_core::deadspot::DeadspotParams;
use castel_core::RoadNetwork;

/// Straight road A(0,0) - T(2,0) - B(4,0); START is 2 on both legs.
pub fn tiny_road() -> RoadNetwork {
    let points = BTreeMap::from([
        ("A".to_string(), (0.0, 0.0)),
        ("T".to_string(), (2.0, 0.0)),
        ("B".to_string(), (4.0, 0.0)),
    ]);
    RoadNetwork::new(points, "T", &["A", "B"], 1.0, 2.0).unwrap()
}

pub fn tiny(cars: u32, messages: u32) -> DeadspotParams {
    DeadspotParams {
        cars,
        messages,
        speeds: vec![80],
        road: Some(tiny_road()),
        ..Default::default()
    }
}
