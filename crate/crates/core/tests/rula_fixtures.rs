mod common;

use ergo_hri::rula::{interpret, score_posture, tables};

#[test]
fn thirty_hand_scored_postures() {
    let all = common::fixtures();
    assert_eq!(all.len(), 30);
    for f in &all {
        let a = score_posture(&f.posture(), &f.ctx);
        assert_eq!([a.upper_arm, a.lower_arm, a.wrist, a.wrist_twist, a.table_a], f.arm, "{}: arm side", f.name);
        assert_eq!([a.neck, a.trunk, a.legs, a.table_b], f.body, "{}: body side", f.name);
        assert_eq!(a.grand, f.grand, "{}: grand", f.name);
        assert_eq!(a.action_level, interpret(f.grand).unwrap(), "{}", f.name);
    }
}

#[test]
fn tables_agree_with_the_second_copy() {
    let a = common::reference_table_a();
    let b = common::reference_table_b();
    let c = common::reference_table_c();
    assert_eq!((a.len(), b.len(), c.len()), (6 * 3 * 4 * 2, 6 * 6 * 2, 8 * 7));
    for ([ua, la, w, t], v) in a {
        assert_eq!(tables::table_a(ua, la, w, t), v, "A[{ua}][{la}][{w}][{t}]");
    }
    for ([n, t, l], v) in b {
        assert_eq!(tables::table_b(n, t, l), v, "B[{n}][{t}][{l}]");
    }
    for ([sc, sd], v) in c {
        assert_eq!(tables::table_c(sc, sd), v, "C[{sc}][{sd}]");
    }
    // Scores past the last row or column use it.
    assert_eq!(tables::table_c(13, 11), tables::table_c(8, 7));
}

#[test]
fn tables_never_decrease_along_any_axis() {
    const TOP: [u8; 4] = [6, 3, 4, 2];
    for (key, v) in common::reference_table_a() {
        for axis in 0..4 {
            if key[axis] < TOP[axis] {
                let mut up = key;
                up[axis] += 1;
                assert!(tables::table_a(up[0], up[1], up[2], up[3]) >= v, "{key:?} axis {axis}");
            }
        }
    }
    for sc in 1..8 {
        for sd in 1..7 {
            let v = tables::table_c(sc, sd);
            assert!(tables::table_c(sc + 1, sd) >= v && tables::table_c(sc, sd + 1) >= v);
        }
    }
}
