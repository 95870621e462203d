use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assign::GroundTruth;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng;

/// Scene layout regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Difficulty {
    /// 1-3 medium objects.
    Sparse,
    /// 6-10 small-to-medium objects packed without overlap.
    Dense,
    /// 1-2 medium objects plus 2-4 tiny ones (< 1% of the image each). Tiny
    /// objects always carry the last class id.
    TinyObjects,
}

impl std::str::FromStr for Difficulty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Difficulty::Sparse),
            "dense" => Ok(Difficulty::Dense),
            "tiny-objects" | "tiny_objects" | "tiny" => Ok(Difficulty::TinyObjects),
            other => Err(Error::arg("difficulty", format!("unknown `{other}` (sparse, dense, tiny-objects)"))),
        }
    }
}

/// Grid and class layout shared by scenes and the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneLayout {
    /// Square image side in pixels.
    pub image_size: u32,
    /// Cells per side; the stride is `1 / grid` in normalized units.
    pub grid: usize,
    pub num_classes: usize,
}

impl Default for SceneLayout {
    fn default() -> Self {
        SceneLayout { image_size: 64, grid: 8, num_classes: 3 }
    }
}

impl SceneLayout {
    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.image_size == 0 {
            return Err(Error::arg("grid", "grid and image_size must be >= 1"));
        }
        if !(self.image_size as usize).is_multiple_of(self.grid) {
            return Err(Error::arg("grid", format!("{} does not divide image_size {}", self.grid, self.image_size)));
        }
        if !(2..=16).contains(&self.num_classes) {
            return Err(Error::arg("num_classes", format!("{} not in [2, 16]", self.num_classes)));
        }
        Ok(())
    }

    pub fn stride(&self) -> f64 {
        1.0 / self.grid as f64
    }

    pub fn num_cells(&self) -> usize {
        self.grid * self.grid
    }

    /// Descriptor length: bias, per-class coverage, per-class center marker,
    /// and four signed edge distances.
    pub fn feature_dim(&self) -> usize {
        5 + 2 * self.num_classes
    }

    /// Center of cell `idx` (row-major) in normalized coordinates.
    pub fn anchor_point(&self, idx: usize) -> (f64, f64) {
        let s = self.stride();
        let (row, col) = (idx / self.grid, idx % self.grid);
        ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
    }

    pub fn cell_of(&self, x: f64, y: f64) -> usize {
        let clamp = |v: f64| ((v * self.grid as f64).floor().max(0.0) as usize).min(self.grid - 1);
        clamp(y) * self.grid + clamp(x)
    }
}

/// A rendered synthetic image reduced to per-cell descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub layout: SceneLayout,
    pub difficulty: Difficulty,
    pub seed: u64,
    pub gts: Vec<GroundTruth<f64>>,
    /// `num_cells` rows of `feature_dim` values.
    pub features: Vec<Vec<f64>>,
}

impl SyntheticScene {
    pub fn stride(&self) -> f64 {
        self.layout.stride()
    }

    /// Rebuilds a scene from its objects, recomputing the descriptors.
    pub fn from_gts(
        layout: SceneLayout,
        difficulty: Difficulty,
        seed: u64,
        gts: Vec<GroundTruth<f64>>,
    ) -> Result<Self> {
        layout.validate()?;
        for g in &gts {
            if g.class_id as usize >= layout.num_classes {
                return Err(Error::arg("class_id", format!("{} >= num_classes {}", g.class_id, layout.num_classes)));
            }
            let (x1, y1, x2, y2) = g.bbox.corners();
            if x1 < 0.0 || y1 < 0.0 || x2 > 1.0 || y2 > 1.0 {
                return Err(Error::InvalidBox(format!("ground truth outside the image: {:?}", g.bbox)));
            }
        }
        let features = describe(&layout, &gts);
        Ok(SyntheticScene { layout, difficulty, seed, gts, features })
    }

    /// Checks that stored descriptors match the objects (e.g. after loading
    /// from disk).
    pub fn verify(&self) -> Result<()> {
        let rebuilt = SyntheticScene::from_gts(self.layout, self.difficulty, self.seed, self.gts.clone())?;
        if rebuilt.features != self.features {
            return Err(Error::arg("features", "descriptors do not match the scene objects"));
        }
        Ok(())
    }
}

/// Rasterizes the objects at pixel resolution and summarizes each cell.
fn describe(layout: &SceneLayout, gts: &[GroundTruth<f64>]) -> Vec<Vec<f64>> {
    let n = layout.image_size as usize;
    let g = layout.grid;
    let c = layout.num_classes;
    let px = 1.0 / n as f64;
    let cell_px = n / g;
    let s = layout.stride();

    // Object index per pixel (pixel center inside the box); later objects win.
    let mut raster: Vec<Option<usize>> = vec![None; n * n];
    for (k, gt) in gts.iter().enumerate() {
        let (x1, y1, x2, y2) = gt.bbox.corners();
        let lo = |v: f64| ((v / px - 0.5).ceil().max(0.0)) as usize;
        let hi = |v: f64| (((v / px - 0.5).floor()) as isize).min(n as isize - 1);
        let (cx0, cx1) = (lo(x1), hi(x2));
        let (cy0, cy1) = (lo(y1), hi(y2));
        if cx1 < 0 || cy1 < 0 {
            continue;
        }
        for yy in cy0..=(cy1 as usize) {
            for xx in cx0..=(cx1 as usize) {
                raster[yy * n + xx] = Some(k);
            }
        }
    }

    let mut out = Vec::with_capacity(g * g);
    for idx in 0..g * g {
        let (row, col) = (idx / g, idx % g);
        let mut f = vec![0.0; layout.feature_dim()];
        f[0] = 1.0;
        let mut counts = vec![0usize; gts.len()];
        for yy in row * cell_px..(row + 1) * cell_px {
            for xx in col * cell_px..(col + 1) * cell_px {
                if let Some(k) = raster[yy * n + xx] {
                    counts[k] += 1;
                }
            }
        }
        let total = (cell_px * cell_px) as f64;
        for (k, &cnt) in counts.iter().enumerate() {
            f[1 + gts[k].class_id as usize] += cnt as f64 / total;
        }
        let centered = gts.iter().position(|gt| layout.cell_of(gt.bbox.xc, gt.bbox.yc) == idx);
        if let Some(k) = centered {
            f[1 + c + gts[k].class_id as usize] = 1.0;
        }
        // Edge distances describe the centered object, else the one covering
        // most of the cell.
        let dominant = centered.or_else(|| {
            counts.iter().enumerate().filter(|(_, &cnt)| cnt > 0).max_by_key(|(_, &cnt)| cnt).map(|(k, _)| k)
        });
        if let Some(k) = dominant {
            let (ax, ay) = layout.anchor_point(idx);
            let (x1, y1, x2, y2) = gts[k].bbox.corners();
            let base = 1 + 2 * c;
            f[base] = (ax - x1) / s;
            f[base + 1] = (ay - y1) / s;
            f[base + 2] = (x2 - ax) / s;
            f[base + 3] = (y2 - ay) / s;
        }
        out.push(f);
    }
    out
}

fn overlaps(a: &BBox<f64>, b: &BBox<f64>) -> bool {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    ax1 < bx2 && bx1 < ax2 && ay1 < by2 && by1 < ay2
}

/// Generates a scene deterministically from `seed`.
///
/// Objects never overlap and no two object centers share a cell.
pub fn generate_scene(seed: u64, difficulty: Difficulty, layout: SceneLayout) -> Result<SyntheticScene> {
    layout.validate()?;
    let mut rng = rng::stream(seed, rng::streams::SCENES);
    let s = layout.stride();
    let px = 1.0 / layout.image_size as f64;
    let c = layout.num_classes as u32;

    // (count range, size range, class range) per object group.
    type Group = ((usize, usize), (f64, f64), (u32, u32));
    let groups: Vec<Group> = match difficulty {
        Difficulty::Sparse => vec![((1, 3), (1.5 * s, 3.0 * s), (0, c))],
        Difficulty::Dense => vec![((6, 10), (1.0 * s, 2.5 * s), (0, c))],
        Difficulty::TinyObjects => {
            vec![((2, 4), (4.0 * px, 6.0 * px), (c - 1, c)), ((1, 2), (1.5 * s, 3.0 * s), (0, c - 1))]
        }
    };

    let mut gts: Vec<GroundTruth<f64>> = Vec::new();
    let mut taken = vec![false; layout.num_cells()];
    for ((lo, hi), (smin, smax), (c0, c1)) in groups {
        let target = rng.gen_range(lo..=hi);
        let mut placed = 0;
        let mut attempts = 0;
        while placed < target && attempts < 2000 {
            attempts += 1;
            let w = rng.gen_range(smin..smax);
            let h = rng.gen_range(smin..smax);
            let xc = rng.gen_range(w / 2.0..1.0 - w / 2.0);
            let yc = rng.gen_range(h / 2.0..1.0 - h / 2.0);
            let class_id = rng.gen_range(c0..c1);
            let bbox = BBox { xc, yc, w, h };
            let cell = layout.cell_of(xc, yc);
            if taken[cell] || gts.iter().any(|g| overlaps(&g.bbox, &bbox)) {
                continue;
            }
            taken[cell] = true;
            gts.push(GroundTruth::new(bbox, class_id, 1.0)?);
            placed += 1;
        }
        if placed < lo {
            return Err(Error::arg("difficulty", format!("could not place {lo} objects for seed {seed}")));
        }
    }
    SyntheticScene::from_gts(layout, difficulty, seed, gts)
}

/// `count` scenes with seeds drawn from `stream` of `seed`.
pub fn generate_scenes(
    seed: u64,
    stream: u64,
    count: usize,
    difficulty: Difficulty,
    layout: SceneLayout,
) -> Result<Vec<SyntheticScene>> {
    let mut seeds = rng::stream(seed, stream);
    (0..count).map(|_| generate_scene(seeds.gen(), difficulty, layout)).collect()
}
