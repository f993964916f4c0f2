use serde::{Deserialize, Serialize};

/// Distance between feature rows. Both accumulate in `f64`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos(x, y)`. A zero vector is at distance 1 from everything
    /// except another zero vector.
    Cosine,
}

impl Metric {
    #[inline]
    pub fn distance(self, x: &[f32], y: &[f32]) -> f64 {
        match self {
            Metric::Euclidean => squared_euclidean(x, y).sqrt(),
            Metric::Cosine => {
                let (mut dot, mut nx, mut ny) = (0.0f64, 0.0f64, 0.0f64);
                for (&a, &b) in x.iter().zip(y) {
                    let (a, b) = (a as f64, b as f64);
                    dot += a * b;
                    nx += a * a;
                    ny += b * b;
                }
                cosine_from_parts(dot, nx, ny)
            }
        }
    }
}

#[inline]
pub(crate) fn cosine_from_parts(dot: f64, nx: f64, ny: f64) -> f64 {
    if nx == 0.0 && ny == 0.0 {
        0.0
    } else if nx == 0.0 || ny == 0.0 {
        1.0
    } else {
        (1.0 - dot / (nx.sqrt() * ny.sqrt())).max(0.0)
    }
}

#[inline]
pub fn squared_euclidean(x: &[f32], y: &[f32]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum()
}

impl std::str::FromStr for Metric {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(crate::Error::InvalidArgument(format!("unknown metric '{other}'"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_and_cosine() {
        assert_eq!(Metric::Euclidean.distance(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
        assert!(Metric::Cosine.distance(&[1.0, 0.0], &[5.0, 0.0]).abs() < 1e-12);
        assert!((Metric::Cosine.distance(&[1.0, 0.0], &[0.0, 2.0]) - 1.0).abs() < 1e-12);
        assert_eq!(Metric::Cosine.distance(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(Metric::Cosine.distance(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    }
}
