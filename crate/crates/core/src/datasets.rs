//! Bundled example data.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linmodel::Dataset;

/// Hormone remaining in 27 medical devices (`y`) against hours worn (`x1`),
/// from three manufacturing lots (`cluster`).
pub const HORMONE_CSV: &str = include_str!("../data/hormone.csv");

/// SHA-256 of [`HORMONE_CSV`].
pub const HORMONE_SHA256: &str = "9a32da72ab31bac1a4bb7dd2811ba4adbc90e4a45c0175dcac6675d9b0751ad1";

/// Lowercase hex SHA-256 digest of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// The hormone data with an intercept, hours worn and lot labels.
pub fn hormone() -> Result<Dataset> {
    if sha256_hex(HORMONE_CSV.as_bytes()) != HORMONE_SHA256 {
        return Err(Error::CorruptFixture(
            "hormone fixture checksum mismatch".into(),
        ));
    }
    let mut y = Vec::new();
    let mut rows = Vec::new();
    let mut lots: Vec<&str> = Vec::new();
    let mut labels = Vec::new();
    for line in HORMONE_CSV.lines().skip(1).filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::CorruptFixture(format!("bad number {s:?} in hormone fixture")))
        };
        y.push(num(fields[0])?);
        rows.push(vec![1.0, num(fields[1])?]);
        let lot = fields[2];
        let label = lots.iter().position(|&l| l == lot).unwrap_or_else(|| {
            lots.push(lot);
            lots.len() - 1
        });
        labels.push(label);
    }
    Dataset::from_rows(&y, &rows)?.with_clusters(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmodel::fit_ols;

    #[test]
    fn fixture_matches_checksum() {
        assert_eq!(sha256_hex(HORMONE_CSV.as_bytes()), HORMONE_SHA256);
    }

    #[test]
    fn hormone_shape_and_fit() {
        let d = hormone().unwrap();
        assert_eq!((d.n(), d.p()), (27, 2));
        assert_eq!(d.cluster().unwrap().iter().max(), Some(&2));
        let f = fit_ols(&d).unwrap();
        assert!((f.beta_hat[0] - 34.1675).abs() < 1e-3);
        assert!((f.beta_hat[1] + 0.057446).abs() < 1e-5);
    }
}
