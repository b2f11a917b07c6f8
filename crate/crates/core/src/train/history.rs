use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,test_loss,test_acc";

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("history has no epochs")]
    Empty,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> Result<String, HistoryError> {
        if self.epochs.is_empty() {
            return Err(HistoryError::Empty);
        }
        let mut out = format!("{HISTORY_HEADER}\n");
        for (i, e) in self.epochs.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                i + 1,
                e.train_loss,
                e.train_accuracy,
                e.test_loss,
                e.test_accuracy
            );
        }
        Ok(out)
    }

    pub fn parse_csv(text: &str) -> Result<Self, HistoryError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == HISTORY_HEADER => {}
            _ => {
                return Err(HistoryError::Parse {
                    line: 1,
                    reason: format!("expected header {HISTORY_HEADER:?}"),
                })
            }
        }
        let mut epochs = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let err = |reason: String| HistoryError::Parse {
                line: line_no,
                reason,
            };
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim_end().split(',').collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 fields, got {}", fields.len())));
            }
            let epoch: usize = fields[0]
                .parse()
                .map_err(|_| err(format!("bad epoch {:?}", fields[0])))?;
            if epoch != epochs.len() + 1 {
                return Err(err(format!("expected epoch {}, got {epoch}", epochs.len() + 1)));
            }
            let mut vals = [0.0; 4];
            for (v, f) in vals.iter_mut().zip(&fields[1..]) {
                *v = f.parse().map_err(|_| err(format!("bad number {f:?}")))?;
            }
            epochs.push(EpochRecord {
                train_loss: vals[0],
                train_accuracy: vals[1],
                test_loss: vals[2],
                test_accuracy: vals[3],
            });
        }
        if epochs.is_empty() {
            return Err(HistoryError::Empty);
        }
        Ok(TrainHistory { epochs })
    }
}

pub fn write_history_csv(h: &TrainHistory, path: &Path) -> Result<(), HistoryError> {
    let text = h.to_csv()?;
    fs::write(path, text).map_err(|source| HistoryError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_history_csv(path: &Path) -> Result<TrainHistory, HistoryError> {
    let text = fs::read_to_string(path).map_err(|source| HistoryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TrainHistory::parse_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> TrainHistory {
        TrainHistory {
            epochs: (0..n)
                .map(|i| EpochRecord {
                    train_loss: 1.0 / (i + 1) as f64,
                    train_accuracy: 0.5 + 0.1 * i as f64,
                    test_loss: 2.0 / 3.0,
                    test_accuracy: 0.123_456_789,
                })
                .collect(),
        }
    }

    #[test]
    fn three_epochs_four_lines() {
        let csv = sample(3).to_csv().unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().next().unwrap(), HISTORY_HEADER);
        assert_eq!(csv.lines().nth(1).unwrap(), "1,1.000000,0.500000,0.666667,0.123457");
    }

    #[test]
    fn round_trip_to_six_decimals() {
        let h = sample(5);
        let back = TrainHistory::parse_csv(&h.to_csv().unwrap()).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in h.epochs.iter().zip(&back.epochs) {
            assert!((a.train_loss - b.train_loss).abs() <= 5e-7);
            assert!((a.test_accuracy - b.test_accuracy).abs() <= 5e-7);
        }
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(TrainHistory::default().to_csv(), Err(HistoryError::Empty)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        assert!(write_history_csv(&TrainHistory::default(), &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn malformed_rejected() {
        assert!(TrainHistory::parse_csv("").is_err());
        assert!(TrainHistory::parse_csv(&format!("{HISTORY_HEADER}\n2,1,1,1,1\n")).is_err());
        assert!(TrainHistory::parse_csv(&format!("{HISTORY_HEADER}\n1,1,1,1\n")).is_err());
        assert!(TrainHistory::parse_csv(&format!("{HISTORY_HEADER}\n1,x,1,1,1\n")).is_err());
    }
}
