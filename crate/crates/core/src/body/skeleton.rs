//! SMPL-compatible 24-joint kinematic tree and rest proportions.

pub const NUM_JOINTS: usize = 24;
pub const NUM_SHAPE: usize = 10;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

/// Parent of each joint; the root is its own sentinel (`None`).
pub const PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

/// Skeleton nodes: the 24 joints followed by five end points (head top,
/// toes, finger tips) that only shape the surface.
pub const NUM_NODES: usize = NUM_JOINTS + 5;
pub const HEAD_TOP: usize = 24;
pub const LEFT_TOE: usize = 25;
pub const RIGHT_TOE: usize = 26;
pub const LEFT_FINGERS: usize = 27;
pub const RIGHT_FINGERS: usize = 28;

pub fn node_parent(node: usize) -> Option<usize> {
    match node {
        HEAD_TOP => Some(15),
        LEFT_TOE => Some(10),
        RIGHT_TOE => Some(11),
        LEFT_FINGERS => Some(22),
        RIGHT_FINGERS => Some(23),
        j => PARENTS[j],
    }
}

/// Rest positions in metres; y up, the figure faces +z, its left is +x.
pub const REST_NODES: [[f64; 3]; NUM_NODES] = [
    [0.0, 0.0, 0.0],
    [0.09, -0.08, 0.0],
    [-0.09, -0.08, 0.0],
    [0.0, 0.11, -0.01],
    [0.10, -0.48, 0.01],
    [-0.10, -0.48, 0.01],
    [0.0, 0.24, -0.01],
    [0.10, -0.88, -0.01],
    [-0.10, -0.88, -0.01],
    [0.0, 0.31, -0.01],
    [0.10, -0.93, 0.06],
    [-0.10, -0.93, 0.06],
    [0.0, 0.50, -0.01],
    [0.07, 0.43, -0.01],
    [-0.07, 0.43, -0.01],
    [0.0, 0.58, 0.0],
    [0.18, 0.45, -0.01],
    [-0.18, 0.45, -0.01],
    [0.40, 0.29, -0.01],
    [-0.40, 0.29, -0.01],
    [0.60, 0.15, 0.0],
    [-0.60, 0.15, 0.0],
    [0.66, 0.11, 0.0],
    [-0.66, 0.11, 0.0],
    [0.0, 0.80, 0.0],
    [0.10, -0.94, 0.17],
    [-0.10, -0.94, 0.17],
    [0.74, 0.06, 0.0],
    [-0.74, 0.06, 0.0],
];

/// One capped tube following a chain of skeleton nodes.
pub struct PartSpec {
    pub name: &'static str,
    /// Nodes along the tube; each segment `chain[i] -> chain[i + 1]` is
    /// driven by joint `chain[i]`.
    pub chain: &'static [usize],
    /// Tube radius at each chain node.
    pub radii: &'static [f64],
}

pub const PARTS: [PartSpec; 6] = [
    PartSpec {
        name: "torso",
        chain: &[0, 3, 6, 9, 12],
        radii: &[0.14, 0.13, 0.14, 0.15, 0.06],
    },
    PartSpec {
        name: "head",
        chain: &[12, 15, HEAD_TOP],
        radii: &[0.05, 0.10, 0.07],
    },
    PartSpec {
        name: "left_leg",
        chain: &[1, 4, 7, 10, LEFT_TOE],
        radii: &[0.08, 0.055, 0.045, 0.04, 0.03],
    },
    PartSpec {
        name: "right_leg",
        chain: &[2, 5, 8, 11, RIGHT_TOE],
        radii: &[0.08, 0.055, 0.045, 0.04, 0.03],
    },
    PartSpec {
        name: "left_arm",
        chain: &[16, 18, 20, 22, LEFT_FINGERS],
        radii: &[0.05, 0.04, 0.032, 0.035, 0.02],
    },
    PartSpec {
        name: "right_arm",
        chain: &[17, 19, 21, 23, RIGHT_FINGERS],
        radii: &[0.05, 0.04, 0.032, 0.035, 0.02],
    },
];

pub fn part_index(name: &str) -> Option<usize> {
    PARTS.iter().position(|p| p.name == name)
}
