//! World sampling: landmarks scattered in a corridor around the vehicle path.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::semantic::SemanticClass;

use super::config::ScenarioConfig;
use super::SimError;

#[derive(Debug, Clone, PartialEq)]
pub struct WorldLandmark {
    pub id: u64,
    pub true_class: SemanticClass,
    pub initial_position: Vector3<f64>,
    /// Zero for all landmarks except moving dynamic-capable ones; a
    /// dynamic-capable landmark with zero velocity is "parked".
    pub velocity: Vector3<f64>,
}

impl WorldLandmark {
    pub fn position_at(&self, t: f64) -> Vector3<f64> {
        self.initial_position + self.velocity * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub landmarks: Vec<WorldLandmark>,
    pub path: Polyline,
    pub path_height: f64,
}

/// Piecewise-linear path with arc-length lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vector2<f64>>,
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(points: &[Vector2<f64>]) -> Self {
        assert!(points.len() >= 2);
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + (w[1] - w[0]).norm());
        }
        Polyline {
            points: points.to_vec(),
            cumulative,
        }
    }

    pub fn total_length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Point and unit tangent at arc length `s` (clamped to the path).
    pub fn sample(&self, s: f64) -> (Vector2<f64>, Vector2<f64>) {
        let s = s.clamp(0.0, self.total_length());
        // Find the segment containing s.
        let mut i = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i >= self.points.len() - 1 {
            i = self.points.len() - 2;
        }
        let seg = self.points[i + 1] - self.points[i];
        let len = seg.norm();
        let tangent = if len > 0.0 {
            seg / len
        } else {
            Vector2::new(1.0, 0.0)
        };
        let local = if len > 0.0 {
            (s - self.cumulative[i]) / len
        } else {
            0.0
        };
        (self.points[i] + seg * local, tangent)
    }
}

fn draw_class(rng: &mut impl Rng, mix: &[f64; 12]) -> SemanticClass {
    let x: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for class in SemanticClass::ALL {
        acc += mix[class as usize];
        if x < acc {
            return class;
        }
    }
    // Sum is 1 within 1e-9; fall back to the last class with mass.
    SemanticClass::ALL
        .iter()
        .rev()
        .copied()
        .find(|c| mix[*c as usize] > 0.0)
        .unwrap_or(SemanticClass::Building)
}

/// Height band above ground and lateral offset band from the path centerline
/// for each class. Ground-surface classes sit on the road; structures stand
/// off to the side.
fn placement_bands(class: SemanticClass) -> ((f64, f64), (f64, f64)) {
    use SemanticClass::*;
    match class {
        Road | RoadMarking => ((0.0, 3.0), (0.0, 0.05)),
        Pavement => ((2.0, 6.0), (0.0, 0.05)),
        Vehicle | Bike => ((1.5, 6.0), (0.2, 1.5)),
        Pedestrian => ((2.0, 6.0), (0.5, 1.8)),
        Pole | SignSymbol => ((2.0, 10.0), (1.0, 6.0)),
        Fence => ((2.0, 10.0), (0.3, 2.0)),
        Building => ((5.0, 25.0), (1.0, 12.0)),
        Tree => ((3.0, 15.0), (1.0, 10.0)),
        Sky => ((5.0, 30.0), (25.0, 50.0)),
    }
}

/// Sample `n_landmarks` landmarks along a corridor around the path; classes
/// drawn from the class mix, a `dynamic_fraction` share of dynamic-capable
/// landmarks given constant velocity along the road. Fully determined by the
/// config seed.
pub fn generate_world(config: &ScenarioConfig) -> Result<WorldModel, SimError> {
    config.validate()?;
    let path = Polyline::new(&config.path);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let total = path.total_length();

    let mut landmarks = Vec::with_capacity(config.n_landmarks);
    for id in 0..config.n_landmarks as u64 {
        let class = draw_class(&mut rng, &config.class_mix);
        let s = rng.gen_range(0.0..total.max(f64::MIN_POSITIVE));
        let (on_path, tangent) = path.sample(s);
        let normal = Vector2::new(tangent[1], -tangent[0]);
        let ((lat_lo, lat_hi), (z_lo, z_hi)) = placement_bands(class);
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let lateral = rng.gen_range(lat_lo..=lat_hi) * side;
        let height = rng.gen_range(z_lo..=z_hi);
        let p2 = on_path + normal * lateral;
        let position = Vector3::new(p2[0], p2[1], config.path_height + height);

        let mut velocity = Vector3::zeros();
        if class.is_dynamic_capable() && rng.gen_bool(config.dynamic_fraction) {
            let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            velocity = Vector3::new(tangent[0], tangent[1], 0.0) * config.dynamic_speed * dir;
        }

        landmarks.push(WorldLandmark {
            id,
            true_class: class,
            initial_position: position,
            velocity,
        });
    }

    Ok(WorldModel {
        landmarks,
        path,
        path_height: config.path_height,
    })
}

/// The same world as seen by a later session: moving landmarks have advanced
/// by `dt` seconds of their constant velocity, static landmarks are
/// untouched. Models mapping and localizing at different times.
pub fn advance_dynamics(world: &WorldModel, dt: f64) -> WorldModel {
    let mut out = world.clone();
    for l in &mut out.landmarks {
        l.initial_position += l.velocity * dt;
    }
    out
}
