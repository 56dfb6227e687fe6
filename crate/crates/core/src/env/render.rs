//! Wrist-view rasterizer: a fixed oblique camera centred on the nominal
//! socket, drawing the socket mouth, the visible peg, and the table edge into
//! separate channels with anti-aliased edges.

/// Half-width of the imaged region at the socket, meters.
const VIEW_HALF: f64 = 0.12;
/// Camera elevation; the image vertical axis mixes world y and z.
const ELEVATION_DEG: f64 = 30.0;
/// World y of the table's front edge.
const TABLE_EDGE_Y: f64 = -0.09;

/// What the camera needs to know about the scene, in meters relative to the
/// nominal socket centre on the table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scene {
    /// Socket mouth centre as perceived (includes observation noise).
    pub socket_mouth: [f64; 3],
    pub mouth_radius: f64,
    /// Peg tip position.
    pub peg_tip: [f64; 3],
    pub peg_radius: f64,
    pub peg_length: f64,
    /// Peg points below this height are hidden by the socket, when the peg is
    /// over the mouth.
    pub occlusion_height: Option<f64>,
}

struct Camera {
    size: usize,
    ppm: f64,
    sin: f64,
    cos: f64,
}

impl Camera {
    fn new(size: usize) -> Self {
        let (sin, cos) = ELEVATION_DEG.to_radians().sin_cos();
        Camera { size, ppm: size as f64 / (2.0 * VIEW_HALF), sin, cos }
    }

    /// World point to continuous pixel coordinates `(col, row)`.
    fn project(&self, p: [f64; 3]) -> (f64, f64) {
        let half = self.size as f64 / 2.0;
        (half + p[0] * self.ppm, half - (p[1] * self.sin + p[2] * self.cos) * self.ppm)
    }
}

/// Coverage from a signed distance in pixels (negative inside).
fn coverage(sd: f64) -> f32 {
    (0.5 - sd).clamp(0.0, 1.0) as f32
}

/// Distance from `(x, y)` to the segment `a..b`.
fn segment_distance(x: f64, y: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (px, py) = (a.0 + t * dx, a.1 + t * dy);
    ((x - px).powi(2) + (y - py).powi(2)).sqrt()
}

/// `[3, size, size]` image with values in `[0, 1]`.
pub fn render(scene: &Scene, size: usize) -> Vec<f32> {
    let cam = Camera::new(size);
    let plane = size * size;
    let mut img = vec![0.0f32; 3 * plane];

    let (mc, mr) = cam.project(scene.socket_mouth);
    let a = (scene.mouth_radius * cam.ppm).max(0.5);
    let b = (scene.mouth_radius * cam.sin * cam.ppm).max(0.5);

    let bottom = scene.occlusion_height.map_or(scene.peg_tip[2], |h| scene.peg_tip[2].max(h));
    let top = scene.peg_tip[2] + scene.peg_length;
    let peg_segment = (bottom < top).then(|| {
        let lo = cam.project([scene.peg_tip[0], scene.peg_tip[1], bottom]);
        let hi = cam.project([scene.peg_tip[0], scene.peg_tip[1], top]);
        (lo, hi)
    });
    let peg_half = scene.peg_radius * cam.ppm;

    let (_, edge_row) = cam.project([0.0, TABLE_EDGE_Y, 0.0]);

    for r in 0..size {
        let y = r as f64 + 0.5;
        for c in 0..size {
            let x = c as f64 + 0.5;
            let k = r * size + c;
            let q = (((x - mc) / a).powi(2) + ((y - mr) / b).powi(2)).sqrt();
            img[k] = coverage((q - 1.0) * a.min(b));
            if let Some((lo, hi)) = peg_segment {
                img[plane + k] = coverage(segment_distance(x, y, lo, hi) - peg_half);
            }
            img[2 * plane + k] = coverage((y - edge_row).abs() - 0.5);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(x: f64, z: f64) -> Scene {
        Scene {
            socket_mouth: [0.0, 0.0, 0.037],
            mouth_radius: 0.034,
            peg_tip: [x, 0.0, z],
            peg_radius: 0.004,
            peg_length: 0.05,
            occlusion_height: None,
        }
    }

    fn centroid_col(img: &[f32], size: usize) -> f64 {
        let plane = &img[size * size..2 * size * size];
        let (mut m, mut s) = (0.0, 0.0);
        for (k, &v) in plane.iter().enumerate() {
            m += v as f64 * ((k % size) as f64 + 0.5);
            s += v as f64;
        }
        m / s
    }

    #[test]
    fn values_in_unit_range() {
        let img = render(&scene(0.01, 0.08), 32);
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(img[1024..2048].iter().any(|&v| v > 0.0));
    }

    #[test]
    fn peg_centroid_tracks_x() {
        let cols: Vec<f64> = [-0.03, -0.01, 0.0, 0.005, 0.02].iter().map(|&x| centroid_col(&render(&scene(x, 0.08), 64), 64)).collect();
        assert!(cols.windows(2).all(|w| w[1] > w[0]), "{cols:?}");
    }
}
