//! Valence flip test over id-aligned condition pairs.
//!
//! A flip occurs when the good-news gap is strictly positive and the
//! negative-control gap is strictly negative for the same id; zeros never
//! flip.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlipError {
    #[error("flip_rate needs at least one record")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub pair_id: u32,
    pub gap_good_news: f64,
    pub gap_negative_control: f64,
    pub flipped: bool,
}

impl FlipRecord {
    pub fn new(pair_id: u32, gap_good_news: f64, gap_negative_control: f64) -> Self {
        FlipRecord {
            pair_id,
            gap_good_news,
            gap_negative_control,
            flipped: gap_good_news > 0.0 && gap_negative_control < 0.0,
        }
    }
}

/// Fraction of records with `flipped == true`.
pub fn flip_rate(records: &[FlipRecord]) -> Result<f64, FlipError> {
    if records.is_empty() {
        return Err(FlipError::Empty);
    }
    let flipped = records.iter().filter(|r| r.flipped).count();
    Ok(flipped as f64 / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_gaps_flip() {
        assert!(FlipRecord::new(0, 2.66, -3.39).flipped);
    }

    #[test]
    fn strict_boundaries_never_flip() {
        assert!(!FlipRecord::new(0, 1.0, 1.0).flipped);
        assert!(!FlipRecord::new(0, 0.0, -1.0).flipped);
        assert!(!FlipRecord::new(0, 1.0, 0.0).flipped);
        assert!(!FlipRecord::new(0, -1.0, -1.0).flipped);
    }

    #[test]
    fn rate_counts_flips() {
        let records = vec![
            FlipRecord::new(0, 1.0, -1.0),
            FlipRecord::new(1, 1.0, 1.0),
            FlipRecord::new(2, 0.5, -0.5),
            FlipRecord::new(3, -1.0, -1.0),
        ];
        assert_eq!(flip_rate(&records).unwrap(), 0.5);
    }

    #[test]
    fn rate_is_order_invariant() {
        let mut records = vec![
            FlipRecord::new(0, 1.0, -1.0),
            FlipRecord::new(1, -1.0, 1.0),
            FlipRecord::new(2, 2.0, -2.0),
        ];
        let forward = flip_rate(&records).unwrap();
        records.reverse();
        assert_eq!(flip_rate(&records).unwrap(), forward);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(flip_rate(&[]).is_err());
    }
}
