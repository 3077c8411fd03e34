//! Shared by the fixture tests and the acceptance run.
#![allow(dead_code)]

use ergo_hri::kinematics::JointPosture;
use ergo_hri::rula::{LoadCategory, TaskContext};

/// Worksheet values worked out by hand for one posture.
pub struct Fixture {
    pub name: &'static str,
    /// Joint angles in degrees, chain order.
    pub q_deg: [f64; 10],
    pub ctx: TaskContext,
    /// upper arm, lower arm, wrist, wrist twist, table A
    pub arm: [u8; 5],
    /// neck, trunk, legs, table B
    pub body: [u8; 4],
    pub grand: u8,
}

impl Fixture {
    pub fn posture(&self) -> JointPosture {
        JointPosture::from_slice(&self.q_deg.map(f64::to_radians)).unwrap()
    }
}

fn neutral() -> TaskContext {
    TaskContext::seated_neutral()
}

fn with(f: impl FnOnce(&mut TaskContext)) -> TaskContext {
    let mut c = neutral();
    f(&mut c);
    c
}

//                 torso flex, bend, twist, sh flex, abd, rot, elbow, pron, wr flex, dev
const REST: [f64; 10] = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 90.0, 0.0, 0.0, 0.0];

fn q(edits: &[(usize, f64)]) -> [f64; 10] {
    let mut out = REST;
    for &(j, v) in edits {
        out[j] = v;
    }
    out
}

pub fn fixtures() -> Vec<Fixture> {
    let fx = |name, q_deg, ctx, arm, body, grand| Fixture { name, q_deg, ctx, arm, body, grand };
    vec![
        fx("rest", REST, neutral(), [1, 1, 1, 1, 1], [1, 1, 1, 1], 1),
        fx("shoulder 30", q(&[(3, 30.0)]), neutral(), [2, 1, 1, 1, 2], [1, 1, 1, 1], 2),
        fx("shoulder 60", q(&[(3, 60.0)]), neutral(), [3, 1, 1, 1, 3], [1, 1, 1, 1], 3),
        fx("shoulder 100", q(&[(3, 100.0)]), neutral(), [4, 1, 1, 1, 4], [1, 1, 1, 1], 3),
        fx("shoulder 100 abducted 50", q(&[(3, 100.0), (4, 50.0)]), neutral(), [5, 1, 1, 1, 5], [1, 1, 1, 1], 4),
        fx("shoulder extended 30", q(&[(3, -30.0)]), neutral(), [2, 1, 1, 1, 2], [1, 1, 1, 1], 2),
        fx(
            "elbow 40, twist flag",
            q(&[(6, 40.0)]),
            with(|c| c.wrist_twist_extreme = true),
            [1, 2, 1, 2, 2],
            [1, 1, 1, 1],
            2,
        ),
        fx(
            "elbow 120, wrist 10, bent flag",
            q(&[(6, 120.0), (8, 10.0)]),
            with(|c| c.wrist_bent_from_midline = true),
            [1, 2, 3, 1, 3],
            [1, 1, 1, 1],
            3,
        ),
        fx("wrist 25", q(&[(8, 25.0)]), neutral(), [1, 1, 3, 1, 2], [1, 1, 1, 1], 2),
        fx("wrist 25 deviated 15", q(&[(8, 25.0), (9, 15.0)]), neutral(), [1, 1, 4, 1, 3], [1, 1, 1, 1], 3),
        fx("pronation 60", q(&[(7, 60.0)]), neutral(), [1, 1, 1, 2, 2], [1, 1, 1, 1], 2),
        fx(
            "reach with bent wrist",
            q(&[(3, 60.0), (6, 120.0), (7, 60.0), (8, 25.0)]),
            neutral(),
            [3, 2, 3, 2, 4],
            [1, 1, 1, 1],
            3,
        ),
        fx("trunk 10", q(&[(0, 10.0)]), neutral(), [1, 1, 1, 1, 1], [1, 2, 1, 2], 2),
        fx("trunk 30", q(&[(0, 30.0)]), neutral(), [1, 1, 1, 1, 1], [1, 3, 1, 3], 3),
        fx("trunk 65", q(&[(0, 65.0)]), neutral(), [1, 1, 1, 1, 1], [1, 4, 1, 5], 4),
        fx("trunk extended 10", q(&[(0, -10.0)]), neutral(), [1, 1, 1, 1, 1], [1, 2, 1, 2], 2),
        fx("trunk twisted 25", q(&[(2, 25.0)]), neutral(), [1, 1, 1, 1, 1], [1, 2, 1, 2], 2),
        fx(
            "trunk 30 bent and twisted",
            q(&[(0, 30.0), (1, 22.0), (2, 25.0)]),
            neutral(),
            [1, 1, 1, 1, 1],
            [1, 5, 1, 6],
            5,
        ),
        fx("supported trunk 15", q(&[(0, 15.0)]), with(|c| c.trunk_supported = true), [1, 1, 1, 1, 1], [1, 1, 1, 1], 1),
        fx("neck 15", REST, with(|c| c.neck_angle = 15f64.to_radians()), [1, 1, 1, 1, 1], [2, 1, 1, 2], 2),
        fx("neck 25", REST, with(|c| c.neck_angle = 25f64.to_radians()), [1, 1, 1, 1, 1], [3, 1, 1, 3], 3),
        fx("neck extended", REST, with(|c| c.neck_angle = -5f64.to_radians()), [1, 1, 1, 1, 1], [4, 1, 1, 5], 4),
        fx(
            "neck 25 twisted, trunk 30",
            q(&[(0, 30.0)]),
            with(|c| {
                c.neck_angle = 25f64.to_radians();
                c.neck_twist_or_side_bend = true;
            }),
            [1, 1, 1, 1, 1],
            [4, 3, 1, 6],
            5,
        ),
        fx("legs unsupported", REST, with(|c| c.legs_supported = false), [1, 1, 1, 1, 1], [1, 1, 2, 3], 3),
        fx("light load", REST, with(|c| c.load_category = LoadCategory::Low), [1, 1, 1, 1, 1], [1, 1, 1, 1], 2),
        fx(
            "heavy static load",
            REST,
            with(|c| {
                c.load_category = LoadCategory::High;
                c.static_muscle_use = true;
            }),
            [1, 1, 1, 1, 1],
            [1, 1, 1, 1],
            6,
        ),
        fx("repetitive reach", q(&[(3, 60.0)]), with(|c| c.repetition = true), [3, 1, 1, 1, 3], [1, 1, 1, 1], 3),
        fx(
            "worst case",
            [30.0, 0.0, 25.0, 100.0, 50.0, 0.0, 30.0, 60.0, 25.0, 15.0],
            with(|c| {
                c.shoulder_raised = true;
                c.working_across_midline = true;
                c.neck_angle = 25f64.to_radians();
                c.neck_twist_or_side_bend = true;
                c.legs_supported = false;
                c.load_category = LoadCategory::High;
                c.repetition = true;
            }),
            [6, 3, 4, 2, 9],
            [4, 4, 2, 7],
            7,
        ),
        fx("supported arm at 30", q(&[(3, 30.0)]), with(|c| c.arm_supported = true), [1, 1, 1, 1, 1], [1, 1, 1, 1], 1),
        fx(
            "abduction flag and joint count once",
            q(&[(3, 60.0), (4, 50.0)]),
            with(|c| c.arm_abducted_flag = true),
            [4, 1, 1, 1, 4],
            [1, 1, 1, 1],
            3,
        ),
    ]
}

// A second copy of the lookup tables, typed in row by row from the printed
// worksheet rather than from the library source.

/// Table A: one line per (upper arm, lower arm); pairs are wrist 1..4, each
/// as (twist 1, twist 2).
const TABLE_A_ROWS: &str = "
1 1 : 12 22 23 33
1 2 : 22 22 33 33
1 3 : 23 33 33 44
2 1 : 23 33 34 44
2 2 : 33 33 34 44
2 3 : 34 44 44 55
3 1 : 33 44 44 55
3 2 : 34 44 44 55
3 3 : 44 44 45 55
4 1 : 44 44 45 55
4 2 : 44 44 45 55
4 3 : 44 45 55 66
5 1 : 55 55 56 67
5 2 : 56 66 67 77
5 3 : 66 67 77 78
6 1 : 77 77 78 89
6 2 : 88 88 89 99
6 3 : 99 99 99 99
";

/// Table B: one line per neck score; pairs are trunk 1..6, each as
/// (legs 1, legs 2).
const TABLE_B_ROWS: &str = "
1 : 13 23 34 55 66 77
2 : 23 23 45 55 67 77
3 : 33 34 45 56 67 77
4 : 55 56 67 77 77 88
5 : 77 77 78 88 88 88
6 : 88 88 88 89 99 99
";

/// Table C: one line per score C (8 means 8+); columns are score D 1..7+.
const TABLE_C_ROWS: &str = "
1 : 1 2 3 3 4 5 5
2 : 2 2 3 4 4 5 5
3 : 3 3 3 4 4 5 6
4 : 3 3 3 4 5 6 6
5 : 4 4 4 5 6 7 7
6 : 4 4 5 6 6 7 7
7 : 5 5 6 6 7 7 7
8 : 5 5 6 7 7 7 7
";

fn rows(text: &str) -> Vec<(Vec<u8>, Vec<u8>)> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (key, cells) = l.split_once(':').unwrap();
            let key = key.split_whitespace().map(|k| k.parse().unwrap()).collect();
            let cells = cells.split_whitespace().flat_map(|c| c.bytes().map(|b| b - b'0')).collect();
            (key, cells)
        })
        .collect()
}

/// `((upper arm, lower arm, wrist, twist), score)` for every cell.
pub fn reference_table_a() -> Vec<([u8; 4], u8)> {
    let mut out = Vec::new();
    for (key, cells) in rows(TABLE_A_ROWS) {
        for (i, v) in cells.into_iter().enumerate() {
            out.push(([key[0], key[1], i as u8 / 2 + 1, i as u8 % 2 + 1], v));
        }
    }
    out
}

/// `((neck, trunk, legs), score)` for every cell.
pub fn reference_table_b() -> Vec<([u8; 3], u8)> {
    let mut out = Vec::new();
    for (key, cells) in rows(TABLE_B_ROWS) {
        for (i, v) in cells.into_iter().enumerate() {
            out.push(([key[0], i as u8 / 2 + 1, i as u8 % 2 + 1], v));
        }
    }
    out
}

/// `((score C, score D), grand)` for every cell.
pub fn reference_table_c() -> Vec<([u8; 2], u8)> {
    let mut out = Vec::new();
    for (key, cells) in rows(TABLE_C_ROWS) {
        for (i, v) in cells.into_iter().enumerate() {
            out.push(([key[0], i as u8 + 1], v));
        }
    }
    out
}
