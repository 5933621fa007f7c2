use crate::timeline::Frame;

const EPS: f64 = 1e-9;

/// Fixed-rate frame selection in media time. The first frame sets the
/// origin; afterwards the first frame at or after each due time
/// `origin + n / rate` passes.
#[derive(Debug, Clone)]
pub struct Sampler {
    period: f64,
    origin: Option<f64>,
    next_due: f64,
}

impl Sampler {
    pub fn new(rate_hz: f64) -> Self {
        assert!(rate_hz > 0.0 && rate_hz.is_finite(), "sampling rate must be positive");
        Sampler {
            period: 1.0 / rate_hz,
            origin: None,
            next_due: 0.0,
        }
    }

    pub fn rate_hz(&self) -> f64 {
        1.0 / self.period
    }

    pub fn accept(&mut self, frame: &Frame) -> bool {
        let t = frame.media_time.seconds();
        let origin = match self.origin {
            Some(o) => o,
            None => {
                self.origin = Some(t);
                self.next_due = t + self.period;
                return true;
            }
        };
        if t + EPS < self.next_due {
            return false;
        }
        // Skip due times already passed (after a gap), keeping the grid.
        let n = ((t - origin + EPS) / self.period).floor() + 1.0;
        self.next_due = origin + n * self.period;
        true
    }
}
