//! Procedural ground-truth scenes and a corruption model that imitates noisy
//! network predictions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::likelihood::PredictionBundle;
use crate::priors::penetration_depth;
use crate::real::Real;
use crate::relative::{build_relative_tensor, EDGE_DIM, E_ROTATION, E_SCALE, E_TRANSLATION};
use crate::scene::{ClassTable, ObjectAttributes, SceneLayout};

/// Rejection-sampling budget per scene.
pub const MAX_ATTEMPTS: usize = 1000;
/// Upper limit on rotation jitter, in degrees.
pub const MAX_JITTER_DEG: f64 = 10.0;

pub const BED: usize = 0;
pub const NIGHTSTAND: usize = 1;
pub const WARDROBE: usize = 2;
pub const LAMP: usize = 3;

/// Bedroom grammar: one bed centred against the back wall, one or two
/// nightstands beside it, an optional wardrobe in a front corner against a
/// side wall, and an optional lamp on each nightstand.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrammarConfig {
    pub name: String,
    /// Room interior `[min, max]` per axis; z is up and the floor is at `arena[2][0]`.
    pub arena: [[f64; 2]; 3],
    /// Standard deviation of the bed's offset from the back-wall centre and
    /// of the wardrobe's offset from the front corner.
    pub placement_noise: f64,
    /// Relative size variation, uniform in `±size_jitter`.
    pub size_jitter: f64,
    /// Yaw jitter bound in degrees.
    pub rotation_jitter_deg: f64,
    pub p_two_nightstands: f64,
    pub p_wardrobe: f64,
    pub p_lamp: f64,
    pub seed: u64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        Self::bedroom()
    }
}

impl GrammarConfig {
    pub fn bedroom() -> Self {
        Self {
            name: "bedroom".into(),
            arena: [[-2.5, 2.5], [-2.5, 2.5], [0.0, 3.0]],
            placement_noise: 0.15,
            size_jitter: 0.1,
            rotation_jitter_deg: 5.0,
            p_two_nightstands: 0.8,
            p_wardrobe: 0.6,
            p_lamp: 0.5,
            seed: 0,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "bedroom" => Ok(Self::bedroom()),
            other => Err(Error::InvalidParameter(format!("unknown grammar '{other}'"))),
        }
    }

    pub fn class_table(&self) -> ClassTable {
        ClassTable::new([("bed", 2), ("nightstand", 3), ("wardrobe", 2), ("lamp", 3)]).expect("static table")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name != "bedroom" {
            return Err(Error::InvalidParameter(format!("unknown grammar '{}'", self.name)));
        }
        for p in [self.p_two_nightstands, self.p_wardrobe, self.p_lamp] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("probability {p} outside [0,1]")));
            }
        }
        if !(self.placement_noise >= 0.0) || !(self.size_jitter >= 0.0 && self.size_jitter < 1.0) {
            return Err(Error::InvalidParameter("noise levels must be non-negative".into()));
        }
        if !(0.0..=MAX_JITTER_DEG).contains(&self.rotation_jitter_deg) {
            return Err(Error::InvalidParameter(format!("rotation jitter must lie in [0, {MAX_JITTER_DEG}] degrees")));
        }
        if self.arena.iter().any(|[lo, hi]| !(lo < hi)) {
            return Err(Error::InvalidParameter("arena bounds must be increasing".into()));
        }
        Ok(())
    }

    /// Largest arena extent; scale for outlier relative values.
    pub fn extent(&self) -> f64 {
        self.arena.iter().map(|[lo, hi]| hi - lo).fold(0.0, f64::max)
    }
}

const BASE_SIZE: [[f64; 3]; 4] = [
    [1.6, 2.0, 0.5],
    [0.5, 0.4, 0.55],
    [0.6, 1.2, 2.0],
    [0.3, 0.3, 0.5],
];
const WALL_GAP: f64 = 0.1;
const STAND_GAP: f64 = 0.05;
const LAMP_GAP: f64 = 0.001;

fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Sampler<'a> {
    g: &'a GrammarConfig,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            self.rng.random_range(lo..hi)
        } else {
            lo
        }
    }

    fn normal(&mut self, sd: f64) -> f64 {
        if sd > 0.0 {
            Normal::new(0.0, sd).expect("valid sd").sample(&mut self.rng)
        } else {
            0.0
        }
    }

    fn size(&mut self, class: usize) -> [f64; 3] {
        let j = self.g.size_jitter;
        BASE_SIZE[class].map(|s| s * (1.0 + self.uniform(-j, j)))
    }

    fn yaw(&mut self) -> f64 {
        let j = self.g.rotation_jitter_deg.to_radians();
        self.uniform(-j, j)
    }

    fn shape(&mut self) -> [f64; 3] {
        [self.normal(0.1), self.normal(0.1), self.normal(0.1)]
    }

    fn object(&mut self, class: usize, size: [f64; 3], t: [f64; 3]) -> ObjectAttributes<f64> {
        let mut shape_code = self.shape();
        shape_code[0] += class as f64;
        ObjectAttributes {
            size,
            rotation: [0.0, 0.0, self.yaw()],
            translation: t,
            shape_code,
        }
    }

    /// Random placement for an inactive slot anywhere on the floor.
    fn filler(&mut self, class: usize) -> ObjectAttributes<f64> {
        let a = self.g.arena;
        let size = self.size(class);
        let t = [
            self.uniform(a[0][0] + size[0] / 2.0, a[0][1] - size[0] / 2.0),
            self.uniform(a[1][0] + size[1] / 2.0, a[1][1] - size[1] / 2.0),
            a[2][0] + size[2] / 2.0,
        ];
        self.object(class, size, t)
    }

    fn try_scene(&mut self, table: &ClassTable) -> Option<SceneLayout<f64>> {
        let a = self.g.arena;
        let floor = a[2][0];
        let mut scene = SceneLayout::<f64>::empty(table.clone());
        let place = |scene: &mut SceneLayout<f64>, class: usize, idx: usize, attrs: ObjectAttributes<f64>| {
            let g = table.global_slot(class, idx);
            scene.slots[g].attrs = attrs;
            scene.slots[g].indicator = 1.0;
        };

        let bed_s = self.size(BED);
        let bed_t = [
            self.normal(self.g.placement_noise),
            a[1][1] - bed_s[1] / 2.0 - self.uniform(0.0, WALL_GAP),
            floor + bed_s[2] / 2.0,
        ];
        let bed = self.object(BED, bed_s, bed_t);
        place(&mut scene, BED, 0, bed);

        let two = self.rng.random::<f64>() < self.g.p_two_nightstands;
        let sides: Vec<f64> = if two {
            vec![-1.0, 1.0]
        } else if self.rng.random::<f64>() < 0.5 {
            vec![-1.0]
        } else {
            vec![1.0]
        };
        let mut stands = Vec::new();
        for (i, side) in sides.into_iter().enumerate() {
            let s = self.size(NIGHTSTAND);
            let gap = STAND_GAP + self.uniform(0.0, STAND_GAP);
            let t = [
                bed_t[0] + side * (bed_s[0] / 2.0 + s[0] / 2.0 + gap),
                a[1][1] - s[1] / 2.0 - self.uniform(0.0, WALL_GAP),
                floor + s[2] / 2.0,
            ];
            let stand = self.object(NIGHTSTAND, s, t);
            place(&mut scene, NIGHTSTAND, i, stand);
            stands.push(stand);
        }

        if self.rng.random::<f64>() < self.g.p_wardrobe {
            let s = self.size(WARDROBE);
            let side = if self.rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
            let x = if side < 0.0 {
                a[0][0] + s[0] / 2.0 + self.uniform(0.0, WALL_GAP)
            } else {
                a[0][1] - s[0] / 2.0 - self.uniform(0.0, WALL_GAP)
            };
            let y = a[1][0] + s[1] / 2.0 + self.uniform(0.0, WALL_GAP) + self.normal(self.g.placement_noise).abs();
            let w = self.object(WARDROBE, s, [x, y, floor + s[2] / 2.0]);
            place(&mut scene, WARDROBE, 0, w);
        }

        let mut lamp_idx = 0;
        for stand in &stands {
            if self.rng.random::<f64>() < self.g.p_lamp {
                let s = self.size(LAMP);
                let top = stand.translation[2] + stand.size[2] / 2.0;
                let (fx, fy) = ((stand.size[0] - s[0]) / 2.0, (stand.size[1] - s[1]) / 2.0);
                let t = [
                    stand.translation[0] + self.uniform(-fx, fx),
                    stand.translation[1] + self.uniform(-fy, fy),
                    top + LAMP_GAP + s[2] / 2.0,
                ];
                let l = self.object(LAMP, s, t);
                place(&mut scene, LAMP, lamp_idx, l);
                lamp_idx += 1;
            }
        }

        for g in 0..scene.len() {
            if scene.slots[g].indicator == 0.0 {
                let class = scene.slots[g].class;
                scene.slots[g].attrs = self.filler(class);
            }
        }
        scene_is_feasible(&scene, &a).then_some(scene)
    }
}

fn scene_is_feasible(scene: &SceneLayout<f64>, arena: &[[f64; 2]; 3]) -> bool {
    let active: Vec<usize> = scene.active_slots().collect();
    for &v in &active {
        let o = &scene.slots[v].attrs;
        for k in 0..3 {
            let h = o.size[k] / 2.0;
            if o.translation[k] - h < arena[k][0] - 1e-12 || o.translation[k] + h > arena[k][1] + 1e-12 {
                return false;
            }
        }
    }
    for (i, &v) in active.iter().enumerate() {
        for &w in &active[i + 1..] {
            if penetration_depth(&scene.slots[v].attrs, &scene.slots[w].attrs).0 > 0.0 {
                return false;
            }
        }
    }
    true
}

/// `n` hard, penetration-free scenes; scene `i` depends only on `(seed, i)`.
pub fn generate<T: Real>(grammar: &GrammarConfig, n: usize, seed: u64) -> Result<Vec<SceneLayout<T>>> {
    (0..n).map(|i| generate_one(grammar, seed, i as u64)).collect()
}

/// Scene number `index` of the corpus for `seed`.
pub fn generate_one<T: Real>(grammar: &GrammarConfig, seed: u64, index: u64) -> Result<SceneLayout<T>> {
    grammar.validate()?;
    let table = grammar.class_table();
    let mut s = Sampler {
        g: grammar,
        rng: scene_rng(seed, index),
    };
    for _ in 0..MAX_ATTEMPTS {
        if let Some(scene) = s.try_scene(&table) {
            return Ok(scene.cast());
        }
    }
    Err(Error::Infeasible(format!(
        "grammar '{}' could not place scene {index} without overlap after {MAX_ATTEMPTS} attempts",
        grammar.name
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    pub sigma_t: f64,
    pub sigma_r: f64,
    pub sigma_s: f64,
    pub p_z: f64,
    pub p_out: f64,
    /// Half-range of outlier relative translations and scale differences.
    pub outlier_extent: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self::none()
    }
}

impl CorruptionConfig {
    pub fn none() -> Self {
        Self {
            sigma_t: 0.0,
            sigma_r: 0.0,
            sigma_s: 0.0,
            p_z: 0.0,
            p_out: 0.0,
            outlier_extent: 5.0,
            seed: 0,
        }
    }

    /// Settings of the synthetic recovery benchmark.
    pub fn benchmark() -> Self {
        Self {
            sigma_t: 0.2,
            sigma_r: 0.02,
            sigma_s: 0.02,
            p_z: 0.1,
            p_out: 0.1,
            outlier_extent: 5.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.p_z, self.p_out] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("rate {p} outside [0,1]")));
            }
        }
        for s in [self.sigma_t, self.sigma_r, self.sigma_s, self.outlier_extent] {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::InvalidParameter(format!("noise level {s} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Noisy node and edge predictions for a hard scene.
pub fn corrupt<T: Real>(scene: &SceneLayout<T>, c: &CorruptionConfig, seed: u64) -> Result<PredictionBundle<T>> {
    c.validate()?;
    if !scene.is_hard() {
        return Err(Error::InvalidParameter("corrupt expects a hard scene".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = |sd: f64, rng: &mut ChaCha8Rng| {
        if sd > 0.0 {
            T::lit(Normal::new(0.0, sd).expect("valid sd").sample(rng))
        } else {
            T::zero()
        }
    };
    let mut nodes = scene.clone();
    for s in &mut nodes.slots {
        for k in 0..3 {
            s.attrs.size[k] += noise(c.sigma_s, &mut rng);
            s.attrs.rotation[k] += noise(c.sigma_r, &mut rng);
            s.attrs.translation[k] += noise(c.sigma_t, &mut rng);
        }
        if c.p_z > 0.0 && rng.random::<f64>() < c.p_z {
            s.indicator = if s.indicator == T::one() { T::lit(0.1) } else { T::lit(0.9) };
        }
    }
    let mut edges = build_relative_tensor(scene);
    let n = scene.len();
    let ext = c.outlier_extent;
    for v in 0..n {
        for w in 0..n {
            if v == w {
                continue;
            }
            let mut e = *edges.get(v, w);
            if c.p_out > 0.0 && rng.random::<f64>() < c.p_out {
                for k in 0..EDGE_DIM {
                    let range = if (E_ROTATION..E_ROTATION + 3).contains(&k) { std::f64::consts::PI } else { ext };
                    e[k] = T::lit(rng.random_range(-range..range));
                }
            } else {
                for k in 0..EDGE_DIM {
                    let sd = if k < E_SCALE + 9 {
                        c.sigma_s
                    } else if k < E_TRANSLATION {
                        c.sigma_r
                    } else {
                        c.sigma_t
                    };
                    e[k] += noise(sd, &mut rng);
                }
            }
            edges.set(v, w, e);
        }
    }
    Ok(PredictionBundle {
        node_preds: nodes,
        edge_preds: edges,
    })
}

/// Per-scene seed for corrupting scene `index` of a corpus.
pub fn corruption_seed(base: u64, index: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03)) ^ 0x5DEE_CE66
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_request_gives_empty_list() {
        assert!(generate::<f64>(&GrammarConfig::bedroom(), 0, 1).unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_scenes() {
        let g = GrammarConfig::bedroom();
        let a = generate::<f64>(&g, 5, 42).unwrap();
        let b = generate::<f64>(&g, 5, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.is_hard()));
    }

    #[test]
    fn zero_corruption_is_exact() {
        let s = generate::<f64>(&GrammarConfig::bedroom(), 1, 3).unwrap().remove(0);
        let b = corrupt(&s, &CorruptionConfig::none(), 9).unwrap();
        assert_eq!(b.node_preds, s);
        assert_eq!(b.edge_preds, build_relative_tensor(&s));
    }
}
