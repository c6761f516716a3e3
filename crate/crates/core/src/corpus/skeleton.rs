/// Kinematic tree used for synthesis and for the rotation / foot-contact
/// feature blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub parents: Vec<Option<usize>>,
    /// Rest-pose joint positions; joint 0 is the root.
    pub rest: Vec<[f64; 3]>,
    /// Joints whose vertical speed drives the four contact channels.
    pub feet: [usize; 4],
}

const SMPL_PARENTS: [i32; 22] = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19];

const SMPL_OFFSETS: [[f64; 3]; 22] = [
    [0.0, 0.0, 0.0],
    [0.06, -0.09, 0.0],
    [-0.06, -0.09, 0.0],
    [0.0, 0.11, -0.02],
    [0.04, -0.38, 0.0],
    [-0.04, -0.38, 0.0],
    [0.0, 0.14, 0.0],
    [-0.01, -0.40, -0.04],
    [0.01, -0.40, -0.04],
    [0.0, 0.06, 0.02],
    [0.02, -0.06, 0.12],
    [-0.02, -0.06, 0.12],
    [0.0, 0.22, -0.03],
    [0.08, 0.12, -0.01],
    [-0.08, 0.12, -0.01],
    [0.0, 0.09, 0.05],
    [0.12, 0.04, 0.0],
    [-0.12, 0.04, 0.0],
    [0.26, 0.0, -0.01],
    [-0.26, 0.0, -0.01],
    [0.25, 0.0, 0.0],
    [-0.25, 0.0, 0.0],
];

impl Skeleton {
    /// SMPL-like layout for 22 joints, a binary tree for any other count.
    pub fn standard(joint_count: usize) -> Self {
        assert!(joint_count >= 2, "skeleton needs at least two joints");
        let (parents, offsets): (Vec<Option<usize>>, Vec<[f64; 3]>) = if joint_count == 22 {
            (
                SMPL_PARENTS.iter().map(|&p| (p >= 0).then_some(p as usize)).collect(),
                SMPL_OFFSETS.to_vec(),
            )
        } else {
            (0..joint_count)
                .map(|j| {
                    if j == 0 {
                        (None, [0.0, 0.0, 0.0])
                    } else {
                        let a = j as f64 * 1.3;
                        let down = if j % 2 == 1 { -0.25 } else { 0.2 };
                        (Some((j - 1) / 2), [0.15 * a.cos(), down, 0.15 * a.sin()])
                    }
                })
                .unzip()
        };
        let mut rest = vec![[0.0, 0.9, 0.0]; joint_count];
        for j in 1..joint_count {
            let p = parents[j].expect("non-root joint has a parent");
            rest[j] = [
                rest[p][0] + offsets[j][0],
                rest[p][1] + offsets[j][1],
                rest[p][2] + offsets[j][2],
            ];
        }
        let feet = if joint_count == 22 {
            [7, 10, 8, 11]
        } else {
            let last = joint_count - 1;
            std::array::from_fn(|k| last - (k % last))
        };
        Skeleton { parents, rest, feet }
    }

    pub fn joint_count(&self) -> usize {
        self.rest.len()
    }

    /// Rest bone vector from the parent of `j` to `j`.
    pub fn rest_bone(&self, j: usize) -> [f64; 3] {
        let p = self.parents[j].expect("root has no bone");
        [
            self.rest[j][0] - self.rest[p][0],
            self.rest[j][1] - self.rest[p][1],
            self.rest[j][2] - self.rest[p][2],
        ]
    }
}
