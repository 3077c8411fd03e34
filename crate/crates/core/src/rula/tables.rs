//! Lookup tables of the RULA worksheet.

/// Table A, indexed `[upper_arm - 1][lower_arm - 1][wrist - 1][wrist_twist - 1]`.
pub const TABLE_A: [[[[u8; 2]; 4]; 3]; 6] = [
    [
        [[1, 2], [2, 2], [2, 3], [3, 3]],
        [[2, 2], [2, 2], [3, 3], [3, 3]],
        [[2, 3], [3, 3], [3, 3], [4, 4]],
    ],
    [
        [[2, 3], [3, 3], [3, 4], [4, 4]],
        [[3, 3], [3, 3], [3, 4], [4, 4]],
        [[3, 4], [4, 4], [4, 4], [5, 5]],
    ],
    [
        [[3, 3], [4, 4], [4, 4], [5, 5]],
        [[3, 4], [4, 4], [4, 4], [5, 5]],
        [[4, 4], [4, 4], [4, 5], [5, 5]],
    ],
    [
        [[4, 4], [4, 4], [4, 5], [5, 5]],
        [[4, 4], [4, 4], [4, 5], [5, 5]],
        [[4, 4], [4, 5], [5, 5], [6, 6]],
    ],
    [
        [[5, 5], [5, 5], [5, 6], [6, 7]],
        [[5, 6], [6, 6], [6, 7], [7, 7]],
        [[6, 6], [6, 7], [7, 7], [7, 8]],
    ],
    [
        [[7, 7], [7, 7], [7, 8], [8, 9]],
        [[8, 8], [8, 8], [8, 9], [9, 9]],
        [[9, 9], [9, 9], [9, 9], [9, 9]],
    ],
];

/// Table B, indexed `[neck - 1][trunk - 1][legs - 1]`.
pub const TABLE_B: [[[u8; 2]; 6]; 6] = [
    [[1, 3], [2, 3], [3, 4], [5, 5], [6, 6], [7, 7]],
    [[2, 3], [2, 3], [4, 5], [5, 5], [6, 7], [7, 7]],
    [[3, 3], [3, 4], [4, 5], [5, 6], [6, 7], [7, 7]],
    [[5, 5], [5, 6], [6, 7], [7, 7], [7, 7], [8, 8]],
    [[7, 7], [7, 7], [7, 8], [8, 8], [8, 8], [8, 8]],
    [[8, 8], [8, 8], [8, 8], [8, 9], [9, 9], [9, 9]],
];

/// Table C, indexed `[min(score_c, 8) - 1][min(score_d, 7) - 1]`.
pub const TABLE_C: [[u8; 7]; 8] = [
    [1, 2, 3, 3, 4, 5, 5],
    [2, 2, 3, 4, 4, 5, 5],
    [3, 3, 3, 4, 4, 5, 6],
    [3, 3, 3, 4, 5, 6, 6],
    [4, 4, 4, 5, 6, 7, 7],
    [4, 4, 5, 6, 6, 7, 7],
    [5, 5, 6, 6, 7, 7, 7],
    [5, 5, 6, 7, 7, 7, 7],
];

pub fn table_a(upper_arm: u8, lower_arm: u8, wrist: u8, wrist_twist: u8) -> u8 {
    TABLE_A[upper_arm as usize - 1][lower_arm as usize - 1][wrist as usize - 1][wrist_twist as usize - 1]
}

pub fn table_b(neck: u8, trunk: u8, legs: u8) -> u8 {
    TABLE_B[neck as usize - 1][trunk as usize - 1][legs as usize - 1]
}

/// Grand score from the wrist/arm score C and the neck/trunk/leg score D.
pub fn table_c(score_c: u8, score_d: u8) -> u8 {
    TABLE_C[score_c.clamp(1, 8) as usize - 1][score_d.clamp(1, 7) as usize - 1]
}
