//! Built-in test systems.

use crate::grid::{
    CapacitorBank, EquipmentInventory, GridSpec, Line, Node, StorageParams, StorageUnit, Ultc, WindSite,
};

/// (from, to, R ohm, X ohm) for the 33-node 12.66 kV feeder; the last five
/// entries are the normally-open tie lines.
const BW33_LINES: [(usize, usize, f64, f64); 37] = [
    (1, 2, 0.0922, 0.0470),
    (2, 3, 0.4930, 0.2511),
    (3, 4, 0.3660, 0.1864),
    (4, 5, 0.3811, 0.1941),
    (5, 6, 0.8190, 0.7070),
    (6, 7, 0.1872, 0.6188),
    (7, 8, 0.7114, 0.2351),
    (8, 9, 1.0300, 0.7400),
    (9, 10, 1.0440, 0.7400),
    (10, 11, 0.1966, 0.0650),
    (11, 12, 0.3744, 0.1238),
    (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129),
    (14, 15, 0.5910, 0.5260),
    (15, 16, 0.7463, 0.5450),
    (16, 17, 1.2890, 1.7210),
    (17, 18, 0.7320, 0.5740),
    (2, 19, 0.1640, 0.1565),
    (19, 20, 1.5042, 1.3554),
    (20, 21, 0.4095, 0.4784),
    (21, 22, 0.7089, 0.9373),
    (3, 23, 0.4512, 0.3083),
    (23, 24, 0.8980, 0.7091),
    (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034),
    (26, 27, 0.2842, 0.1447),
    (27, 28, 1.0590, 0.9337),
    (28, 29, 0.8042, 0.7006),
    (29, 30, 0.5075, 0.2585),
    (30, 31, 0.9744, 0.9630),
    (31, 32, 0.3105, 0.3619),
    (32, 33, 0.3410, 0.5302),
    (8, 21, 2.0, 2.0),
    (9, 15, 2.0, 2.0),
    (12, 22, 2.0, 2.0),
    (18, 33, 0.5, 0.5),
    (25, 29, 0.5, 0.5),
];

/// Nominal (kW, kvar) demand of nodes 1..=33.
const BW33_LOADS: [(f64, f64); 33] = [
    (0.0, 0.0),
    (100.0, 60.0),
    (90.0, 40.0),
    (120.0, 80.0),
    (60.0, 30.0),
    (60.0, 20.0),
    (200.0, 100.0),
    (200.0, 100.0),
    (60.0, 20.0),
    (60.0, 20.0),
    (45.0, 30.0),
    (60.0, 35.0),
    (60.0, 35.0),
    (120.0, 80.0),
    (60.0, 10.0),
    (60.0, 20.0),
    (60.0, 20.0),
    (90.0, 40.0),
    (90.0, 40.0),
    (90.0, 40.0),
    (90.0, 40.0),
    (90.0, 40.0),
    (90.0, 50.0),
    (420.0, 200.0),
    (420.0, 200.0),
    (60.0, 25.0),
    (60.0, 25.0),
    (60.0, 20.0),
    (120.0, 70.0),
    (200.0, 600.0),
    (150.0, 70.0),
    (210.0, 100.0),
    (60.0, 40.0),
];

const BW33_SWITCHES: [(usize, usize); 9] = [
    (8, 21),
    (9, 15),
    (12, 22),
    (18, 33),
    (25, 29),
    (6, 7),
    (10, 11),
    (14, 15),
    (29, 30),
];

/// Nominal demand (kW, kvar) per node of the 33-node feeder, index 0 = node 1.
pub fn baran_wu_33_loads() -> &'static [(f64, f64)] {
    &BW33_LOADS
}

/// The 33-node feeder without any VVO equipment and without switches.
pub fn baran_wu_33_bare() -> GridSpec {
    let base_mva = 1.0;
    let base_kv = 12.66;
    let z_base = base_kv * base_kv / base_mva;
    let nodes = BW33_LOADS
        .iter()
        .enumerate()
        .map(|(k, &(p, q))| Node {
            id: k + 1,
            is_substation: k == 0,
            power_factor: if p > 0.0 { p / p.hypot(q) } else { 1.0 },
            vmin: 0.94,
            vmax: 1.06,
        })
        .collect();
    let lines = BW33_LINES
        .iter()
        .enumerate()
        .map(|(k, &(from, to, r, x))| Line {
            from,
            to,
            resistance: r / z_base,
            reactance: x / z_base,
            ampacity: if k < 5 { 4.0 } else { 2.0 },
            switchable: false,
            normally_closed: k < 32,
        })
        .collect();
    GridSpec::new(base_mva, base_kv, nodes, lines, EquipmentInventory::default()).expect("built-in case is valid")
}

/// The 33-node active feeder with the full equipment set: a 1 MW wind
/// turbine at node 15, storage at nodes 14 and 15, 4 x 100 kvar capacitor
/// banks at nodes 11 and 25, a 0.9-1.1 ULTC between nodes 6 and 26 and nine
/// remotely controllable switches.
pub fn baran_wu_33() -> GridSpec {
    let bare = baran_wu_33_bare();
    let equipment = EquipmentInventory {
        storage: vec![
            StorageUnit { node: 14, capacity_kwh: 200.0, rating_kw: 100.0 },
            StorageUnit { node: 15, capacity_kwh: 300.0, rating_kw: 100.0 },
        ],
        capacitors: vec![
            CapacitorBank { node: 11, module_kvar: 100.0, modules: 4 },
            CapacitorBank { node: 25, module_kvar: 100.0, modules: 4 },
        ],
        ultc: Some(Ultc { from: 6, to: 26, ratio_halfwidth: 0.1, tap_step: 0.01 }),
        storage_params: StorageParams::default(),
        wind: Some(WindSite { node: 15, rated_kw: 1000.0 }),
    };
    bare.with_equipment(equipment)
        .and_then(|g| g.with_switchable(|l| BW33_SWITCHES.iter().any(|&(a, b)| l.connects(a, b))))
        .expect("built-in case is valid")
}

fn small_node(id: usize) -> Node {
    Node { id, is_substation: id == 1, power_factor: 0.9, vmin: 0.9, vmax: 1.1 }
}

fn small_line(from: usize, to: usize, r: f64, x: f64, switchable: bool, closed: bool) -> Line {
    Line { from, to, resistance: r, reactance: x, ampacity: 5.0, switchable, normally_closed: closed }
}

/// Five nodes, one loop closed by two switchable branches (3-4 closed,
/// 2-5 open) and a two-module 100 kvar capacitor bank at node 4.
pub fn five_node_switching() -> GridSpec {
    let nodes = (1..=5).map(small_node).collect();
    let lines = vec![
        small_line(1, 2, 0.010, 0.020, false, true),
        small_line(2, 3, 0.020, 0.030, false, true),
        small_line(3, 4, 0.030, 0.025, true, true),
        small_line(4, 5, 0.015, 0.020, false, true),
        small_line(2, 5, 0.012, 0.018, true, false),
    ];
    let equipment = EquipmentInventory {
        capacitors: vec![CapacitorBank { node: 4, module_kvar: 100.0, modules: 2 }],
        ..Default::default()
    };
    GridSpec::new(1.0, 12.66, nodes, lines, equipment).expect("built-in case is valid")
}

/// Active demand (kW) per node of [`five_node_switching`] for two hours.
pub fn five_node_loads() -> Vec<Vec<f64>> {
    vec![vec![0.0, 0.0], vec![120.0, 90.0], vec![200.0, 150.0], vec![260.0, 310.0], vec![180.0, 140.0]]
}

/// Six nodes and eight candidate lines, all switchable; the first five
/// (a path) start closed.
pub fn six_node_mesh() -> GridSpec {
    let nodes = (1..=6).map(small_node).collect();
    let pairs = [(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (1, 6), (2, 5), (3, 6)];
    let lines = pairs
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| small_line(a, b, 0.01 + 0.002 * k as f64, 0.02, true, k < 5))
        .collect();
    GridSpec::new(1.0, 12.66, nodes, lines, EquipmentInventory::default()).expect("built-in case is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{check_radiality, Radiality};

    #[test]
    fn layout_counts() {
        let g = baran_wu_33();
        assert_eq!(g.node_count(), 33);
        assert_eq!(g.lines().len(), 37);
        assert_eq!(g.lines().iter().filter(|l| !l.normally_closed).count(), 5);
        assert_eq!(g.lines().iter().filter(|l| l.switchable).count(), 9);
        assert_eq!(check_radiality(&g, &g.default_config()).unwrap(), Radiality::Radial);
        let total: f64 = baran_wu_33_loads().iter().map(|l| l.0).sum();
        assert!((total - 3715.0).abs() < 1e-9);
    }
}
