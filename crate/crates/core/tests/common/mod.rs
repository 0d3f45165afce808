//! Helpers shared by the integration suites: an independent grid-search
//! reference for the margin trainer, the fixture set it runs against,
//! and a generator of well-formed bin scripts with known outcomes.

#![allow(dead_code)] // each test binary uses its own subset

use smartbin_core::svm::LabeledExample;

/// Soft-margin primal objective computed from scratch.
pub fn primal_objective(data: &[LabeledExample], w: &[f64], b: f64, c: f64) -> f64 {
    let norm2: f64 = w.iter().map(|v| v * v).sum();
    let hinge: f64 = data
        .iter()
        .map(|e| {
            let f: f64 = w.iter().zip(&e.x).map(|(wi, xi)| wi * xi).sum::<f64>() + b;
            (1.0 - e.y * f).max(0.0)
        })
        .sum();
    0.5 * norm2 + c * hinge
}

/// Brute-force reference minimizer: multi-scale grid descent over
/// (w, b). The objective is convex, so re-centering a shrinking grid on
/// the best point converges to the global optimum.
pub fn grid_search_qp(data: &[LabeledExample], c: f64) -> (Vec<f64>, f64, f64) {
    let dim = data[0].x.len();
    assert!(dim <= 2, "oracle is only meant for tiny problems");

    let mut center = vec![0.0; dim + 1]; // w .. b
    let mut spacing = 0.4f64;
    let mut best = (center.clone(), f64::INFINITY);
    for _level in 0..8 {
        let half = 10i32;
        let mut point = center.clone();
        let mut indices = vec![-half; dim + 1];
        loop {
            for (p, (c0, i)) in point.iter_mut().zip(center.iter().zip(&indices)) {
                *p = c0 + *i as f64 * spacing;
            }
            let obj = primal_objective(data, &point[..dim], point[dim], c);
            if obj < best.1 {
                best = (point.clone(), obj);
            }
            // odometer increment
            let mut k = 0;
            loop {
                indices[k] += 1;
                if indices[k] <= half {
                    break;
                }
                indices[k] = -half;
                k += 1;
                if k == indices.len() {
                    break;
                }
            }
            if k == indices.len() {
                break;
            }
        }
        center = best.0.clone();
        spacing *= 0.3;
    }
    let (point, obj) = best;
    (point[..dim].to_vec(), point[dim], obj)
}

pub struct SvmFixture {
    pub name: &'static str,
    pub data: Vec<LabeledExample>,
    pub c: f64,
    pub separable: bool,
}

fn ex(x: Vec<f64>, y: f64) -> LabeledExample {
    LabeledExample::new(x, y).unwrap()
}

/// Small labeled problems in one and two dimensions, mixing separable
/// and overlapping classes.
pub fn svm_fixtures() -> Vec<SvmFixture> {
    let mut fixtures = Vec::new();

    fixtures.push(SvmFixture {
        name: "symmetric-pair",
        data: vec![ex(vec![2.0, 0.0], 1.0), ex(vec![-2.0, 0.0], -1.0)],
        c: 1e6,
        separable: true,
    });

    fixtures.push(SvmFixture {
        name: "line-three-points",
        data: vec![ex(vec![1.0], 1.0), ex(vec![3.0], 1.0), ex(vec![-1.0], -1.0)],
        c: 1e6,
        separable: true,
    });

    // Two tight clusters around (2, 2) and (-2, -2).
    let offsets = [
        (0.0, 0.0),
        (0.3, -0.2),
        (-0.25, 0.15),
        (0.1, 0.35),
        (-0.15, -0.3),
        (0.4, 0.1),
        (-0.35, 0.25),
        (0.2, -0.4),
        (-0.05, 0.45),
        (0.45, -0.05),
    ];
    let mut cluster = Vec::new();
    for (dx, dy) in offsets {
        cluster.push(ex(vec![2.0 + dx, 2.0 + dy], 1.0));
        cluster.push(ex(vec![-2.0 + dx, -2.0 + dy], -1.0));
    }
    fixtures.push(SvmFixture {
        name: "two-clusters-20",
        data: cluster,
        c: 1e6,
        separable: true,
    });

    // Overlapping classes along x: hinge losses are unavoidable.
    fixtures.push(SvmFixture {
        name: "overlap-12",
        data: vec![
            ex(vec![1.2, 0.1], 1.0),
            ex(vec![0.8, -0.4], 1.0),
            ex(vec![1.6, 0.5], 1.0),
            ex(vec![0.3, 0.2], 1.0),
            ex(vec![-0.4, 0.3], 1.0), // strays into the other side
            ex(vec![2.1, -0.2], 1.0),
            ex(vec![-1.1, 0.2], -1.0),
            ex(vec![-0.7, -0.3], -1.0),
            ex(vec![-1.8, 0.4], -1.0),
            ex(vec![-0.2, -0.1], -1.0),
            ex(vec![0.5, -0.5], -1.0), // strays into the other side
            ex(vec![-2.3, 0.1], -1.0),
        ],
        c: 1.0,
        separable: false,
    });

    // Unbalanced 8 vs 3 at moderate C.
    fixtures.push(SvmFixture {
        name: "unbalanced-11",
        data: vec![
            ex(vec![1.0, 1.0], 1.0),
            ex(vec![1.5, 0.8], 1.0),
            ex(vec![2.0, 1.4], 1.0),
            ex(vec![1.2, 2.0], 1.0),
            ex(vec![0.9, 1.6], 1.0),
            ex(vec![1.7, 1.1], 1.0),
            ex(vec![2.2, 0.9], 1.0),
            ex(vec![1.4, 1.5], 1.0),
            ex(vec![-1.0, -0.5], -1.0),
            ex(vec![-1.4, -1.2], -1.0),
            ex(vec![-0.8, -1.6], -1.0),
        ],
        c: 10.0,
        separable: true,
    });

    // Diagonal pair with a weak C: the margin stays soft.
    fixtures.push(SvmFixture {
        name: "soft-diagonal",
        data: vec![
            ex(vec![0.5, 0.5], 1.0),
            ex(vec![0.7, 0.9], 1.0),
            ex(vec![-0.5, -0.5], -1.0),
            ex(vec![-0.9, -0.7], -1.0),
        ],
        c: 0.5,
        separable: true,
    });

    fixtures
}

// ---------------------------------------------------------------------
// Bin-script generation
// ---------------------------------------------------------------------

use smartbin_core::controller::ScriptedEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemPath {
    /// Confident detection; verdict follows the detection category.
    Normal,
    /// Classifier never answers; scripted timeout forces non-bio.
    ClassifyTimeout,
    /// Camera keeps timing out until the machine gives up: non-bio.
    CaptureFailSafe,
    /// Detections under the confidence floor and no fallback: non-bio.
    LowConfidence,
}

pub struct GeneratedScript {
    pub events: Vec<ScriptedEvent>,
    pub expected_bio: u64,
    pub expected_nonbio: u64,
}

fn event(t_ms: u64, name: &str, payload: serde_json::Value) -> ScriptedEvent {
    ScriptedEvent {
        t_ms,
        event: name.to_string(),
        payload,
    }
}

fn detections_payload(category: usize, confidence: f64) -> serde_json::Value {
    serde_json::json!({"detections": [{
        "category_id": category, "cx": 0.5, "cy": 0.5,
        "w": 0.2, "h": 0.2, "confidence": confidence
    }]})
}

/// Append one item's full event chain starting at `t0`; returns the
/// category it will be counted under (0 bio, 1 non-bio).
pub fn push_item(events: &mut Vec<ScriptedEvent>, t0: u64, category: usize, path: ItemPath) -> usize {
    events.push(event(t0, "item_arrived", serde_json::Value::Null));
    events.push(event(t0 + 100, "timeout", serde_json::Value::Null)); // settle
    let routed_category = match path {
        ItemPath::Normal => {
            events.push(event(t0 + 200, "capture_done", detections_payload(category, 0.9)));
            // harness injects the verdict at t0 + 250
            category
        }
        ItemPath::ClassifyTimeout => {
            events.push(event(t0 + 200, "capture_done", detections_payload(category, 0.9)));
            // beat the injected verdict (t0 + 250) to the machine
            events.push(event(t0 + 210, "timeout", serde_json::Value::Null));
            1
        }
        ItemPath::CaptureFailSafe => {
            for dt in [200, 300, 400] {
                events.push(event(t0 + dt, "timeout", serde_json::Value::Null));
            }
            1
        }
        ItemPath::LowConfidence => {
            events.push(event(t0 + 200, "capture_done", detections_payload(category, 0.1)));
            1
        }
    };
    events.push(event(t0 + 500, "rotation_done", serde_json::Value::Null));
    events.push(event(t0 + 600, "dump_done", serde_json::Value::Null));
    if routed_category == 0 {
        events.push(event(t0 + 700, "transfer_done", serde_json::Value::Null));
    }
    routed_category
}

/// Deterministic pseudo-random well-formed script; `seed` picks the mix.
pub fn generate_script(seed: u64, items: usize) -> GeneratedScript {
    // splitmix64: tiny, deterministic, no dependencies
    let mut s = seed.wrapping_add(0x9e3779b97f4a7c15);
    let mut next = move || {
        s = s.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = s;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    };

    let mut events = Vec::new();
    let mut bio = 0;
    let mut nonbio = 0;
    for i in 0..items {
        let category = (next() % 2) as usize;
        let path = match next() % 5 {
            0 => ItemPath::ClassifyTimeout,
            1 => ItemPath::CaptureFailSafe,
            2 => ItemPath::LowConfidence,
            _ => ItemPath::Normal,
        };
        let routed = push_item(&mut events, 1 + i as u64 * 1000, category, path);
        if routed == 0 {
            bio += 1;
        } else {
            nonbio += 1;
        }
    }
    GeneratedScript {
        events,
        expected_bio: bio,
        expected_nonbio: nonbio,
    }
}
