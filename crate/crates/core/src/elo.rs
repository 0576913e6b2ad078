//! Elo tournament over pairwise human preferences.
//!
//! Each segmentation is a player; a click preferring image `a` over image `b`
//! is a win for `a`. Ratings start at zero and move by `K * (score - expected)`
//! with the logistic expectation on a 400-point scale.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::study::{read_square_csv, DistanceTable};
use crate::{Error, Result};

pub const DEFAULT_K: f64 = 32.0;

/// Probability that a player rated `ra` beats one rated `rb`.
pub fn expected_score(ra: f64, rb: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf((rb - ra) / 400.0))
}

/// `wins[a][b]` counts how often `ids[a]` was preferred over `ids[b]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceMatrix {
    pub ids: Vec<String>,
    pub wins: Vec<Vec<u64>>,
}

impl ChoiceMatrix {
    pub fn new(ids: Vec<String>) -> Self {
        let n = ids.len();
        Self {
            ids,
            wins: vec![vec![0; n]; n],
        }
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn record(&mut self, winner: &str, loser: &str) -> Result<()> {
        let (w, l) = (self.index_of(winner)?, self.index_of(loser)?);
        if w == l {
            return Err(Error::InvalidConfig(format!("`{winner}` cannot play itself")));
        }
        self.wins[w][l] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.wins.iter().flatten().sum()
    }

    /// Comparisons involving `ids[idx]`: its row sum plus its column sum.
    pub fn games_of(&self, idx: usize) -> u64 {
        self.wins[idx].iter().sum::<u64>() + self.wins.iter().map(|row| row[idx]).sum::<u64>()
    }

    /// Header `id,<id1>,...` then one row of win counts per id.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string()];
        header.extend(self.ids.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (id, row) in self.ids.iter().zip(&self.wins) {
            let mut record = vec![id.clone()];
            record.extend(row.iter().map(u64::to_string));
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (ids, wins) = read_square_csv(text, |s| s.trim().parse::<u64>().ok())?;
        for (i, row) in wins.iter().enumerate() {
            if row[i] != 0 {
                return Err(Error::parse(0, format!("diagonal entry for `{}` must be zero", ids[i])));
            }
        }
        Ok(Self { ids, wins })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub winner: String,
    pub loser: String,
}

impl Match {
    pub fn new(winner: impl Into<String>, loser: impl Into<String>) -> Self {
        Self {
            winner: winner.into(),
            loser: loser.into(),
        }
    }
}

/// How a choice matrix without timestamps is expanded into a match sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReplayOrder {
    /// Row by row: every win of `ids[0]`, then of `ids[1]`, ...
    RowMajor,
    /// Row-major sequence shuffled with the given seed.
    Shuffled(u64),
}

pub fn replay_sequence(choices: &ChoiceMatrix, order: ReplayOrder) -> Vec<Match> {
    let mut seq = Vec::with_capacity(choices.total() as usize);
    for (a, row) in choices.wins.iter().enumerate() {
        for (b, &count) in row.iter().enumerate() {
            for _ in 0..count {
                seq.push(Match::new(&choices.ids[a], &choices.ids[b]));
            }
        }
    }
    if let ReplayOrder::Shuffled(seed) = order {
        seq.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    seq
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EloRatings {
    /// Player order, used for stable tie-breaking in rankings.
    pub ids: Vec<String>,
    pub ratings: BTreeMap<String, f64>,
    pub k_factor: f64,
    pub initial: f64,
}

impl EloRatings {
    pub fn new(ids: Vec<String>) -> Self {
        Self::with_params(ids, DEFAULT_K, 0.0)
    }

    pub fn with_params(ids: Vec<String>, k_factor: f64, initial: f64) -> Self {
        let ratings = ids.iter().map(|id| (id.clone(), initial)).collect();
        Self {
            ids,
            ratings,
            k_factor,
            initial,
        }
    }

    pub fn rating(&self, id: &str) -> Option<f64> {
        self.ratings.get(id).copied()
    }

    /// Winner gains `K * (1 - E_w)`; the loser loses the same amount.
    pub fn apply_result(&mut self, winner: &str, loser: &str) -> Result<()> {
        let rw = self.rating(winner).ok_or_else(|| Error::UnknownId(winner.to_string()))?;
        let rl = self.rating(loser).ok_or_else(|| Error::UnknownId(loser.to_string()))?;
        let delta = self.k_factor * (1.0 - expected_score(rw, rl));
        *self.ratings.get_mut(winner).expect("checked") += delta;
        *self.ratings.get_mut(loser).expect("checked") -= delta;
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.ratings.values().sum()
    }

    /// Ids from best to worst; equal ratings keep player order.
    pub fn ranking(&self) -> Vec<String> {
        let mut ids = self.ids.clone();
        ids.sort_by(|a, b| self.ratings[b].total_cmp(&self.ratings[a]));
        ids
    }
}

/// Replays `sequence`, which must contain exactly the wins recorded in `choices`.
pub fn run_tournament(choices: &ChoiceMatrix, sequence: &[Match]) -> Result<EloRatings> {
    let mut seen = ChoiceMatrix::new(choices.ids.clone());
    for m in sequence {
        seen.record(&m.winner, &m.loser)
            .map_err(|e| Error::InconsistentSequence(e.to_string()))?;
    }
    if seen.wins != choices.wins {
        return Err(Error::InconsistentSequence(
            "sequence win counts differ from the choice matrix".into(),
        ));
    }
    replay(choices.ids.clone(), sequence)
}

/// Folds `apply_result` over `sequence` starting from zero ratings.
pub fn replay(ids: Vec<String>, sequence: &[Match]) -> Result<EloRatings> {
    let mut ratings = EloRatings::new(ids);
    for m in sequence {
        ratings.apply_result(&m.winner, &m.loser)?;
    }
    Ok(ratings)
}

/// `|rating(a) - rating(b)|` for every pair, in player order.
pub fn elo_distance_matrix(ratings: &EloRatings) -> DistanceTable {
    let values: Vec<f64> = ratings.ids.iter().map(|id| ratings.ratings[id]).collect();
    DistanceTable {
        ids: ratings.ids.clone(),
        entries: values
            .iter()
            .map(|a| values.iter().map(|b| (a - b).abs()).collect())
            .collect(),
        metric: "elo".into(),
        direction_note: "symmetric".into(),
    }
}

/// One line of the chronological choice log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub timestamp: String,
    pub scene: String,
    pub winner: String,
    pub loser: String,
}

impl ChoiceRecord {
    pub const CSV_HEADER: &'static str = "timestamp,scene,winner,loser";

    /// The record as one CSV line, newline included.
    pub fn to_csv_line(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        w.serialize(self).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
    }
}

pub fn write_choice_log(records: &[ChoiceRecord]) -> String {
    let mut out = format!("{}\n", ChoiceRecord::CSV_HEADER);
    for r in records {
        out.push_str(&r.to_csv_line());
    }
    out
}

pub fn read_choice_log(text: &str) -> Result<Vec<ChoiceRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["timestamp", "scene", "winner", "loser"] {
        return Err(Error::parse(0, format!("expected header `{}`", ChoiceRecord::CSV_HEADER)));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Matches of one scene in log order.
pub fn log_sequence(records: &[ChoiceRecord], scene: &str) -> Vec<Match> {
    records
        .iter()
        .filter(|r| r.scene == scene)
        .map(|r| Match::new(&r.winner, &r.loser))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn expected_score_examples() {
        assert_eq!(expected_score(0.0, 0.0), 0.5);
        assert!((expected_score(400.0, 0.0) - 10.0 / 11.0).abs() < 1e-15);
        assert!((expected_score(0.0, 400.0) - 1.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn apply_result_examples() {
        let mut r = EloRatings::new(ids(&["a", "b"]));
        r.apply_result("a", "b").unwrap();
        assert_eq!(r.rating("a"), Some(16.0));
        assert_eq!(r.rating("b"), Some(-16.0));
        assert_eq!(r.total(), 0.0);

        let mut r = EloRatings::new(ids(&["a", "b"]));
        r.ratings.insert("a".into(), 400.0);
        r.apply_result("a", "b").unwrap();
        assert!((r.rating("a").unwrap() - (400.0 + 32.0 / 11.0)).abs() < 1e-12);
        assert!(r.apply_result("a", "zz").is_err());
    }

    #[test]
    fn tournament_examples() {
        let empty = ChoiceMatrix::new(ids(&["a", "b"]));
        let r = run_tournament(&empty, &[]).unwrap();
        assert!(r.ratings.values().all(|&v| v == 0.0));

        let mut one = empty.clone();
        one.record("a", "b").unwrap();
        let r = run_tournament(&one, &[Match::new("a", "b")]).unwrap();
        assert_eq!((r.rating("a"), r.rating("b")), (Some(16.0), Some(-16.0)));
        assert!(matches!(
            run_tournament(&one, &[Match::new("b", "a")]),
            Err(Error::InconsistentSequence(_))
        ));

        let mut three = ChoiceMatrix::new(ids(&["c", "b", "a"]));
        let seq = [Match::new("a", "b"), Match::new("b", "c"), Match::new("a", "c")];
        for m in &seq {
            three.record(&m.winner, &m.loser).unwrap();
        }
        let r = run_tournament(&three, &seq).unwrap();
        assert_eq!(r.ranking(), ids(&["a", "b", "c"]));
        assert!(r.total().abs() < 1e-12);
    }

    #[test]
    fn distance_matrix_examples() {
        let flat = EloRatings::new(ids(&["a", "b", "c"]));
        assert!(elo_distance_matrix(&flat).entries.iter().flatten().all(|&v| v == 0.0));
        let mut r = EloRatings::new(ids(&["a", "b"]));
        r.apply_result("a", "b").unwrap();
        assert_eq!(elo_distance_matrix(&r).get(0, 1), 32.0);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let mut m = ChoiceMatrix::new(ids(&["x", "y", "z"]));
        m.record("x", "y").unwrap();
        m.record("x", "y").unwrap();
        m.record("z", "x").unwrap();
        let csv = m.to_csv();
        assert!(csv.starts_with("id,x,y,z\nx,0,2,0\n"));
        assert_eq!(ChoiceMatrix::from_csv(&csv).unwrap(), m);
        assert_eq!(m.games_of(0), 3);
        assert!(ChoiceMatrix::from_csv("id,x,y\nx,1,0\ny,0,0\n").is_err());
        assert!(ChoiceMatrix::from_csv("id,x,y\nx,0,0\n").is_err());
    }

    #[test]
    fn replay_orders() {
        let mut m = ChoiceMatrix::new(ids(&["x", "y"]));
        m.record("x", "y").unwrap();
        m.record("y", "x").unwrap();
        m.record("y", "x").unwrap();
        let row = replay_sequence(&m, ReplayOrder::RowMajor);
        assert_eq!(row[0], Match::new("x", "y"));
        let a = replay_sequence(&m, ReplayOrder::Shuffled(5));
        assert_eq!(a, replay_sequence(&m, ReplayOrder::Shuffled(5)));
        assert!(run_tournament(&m, &a).is_ok());
    }

    #[test]
    fn log_round_trip() {
        let records = vec![
            ChoiceRecord {
                timestamp: "1".into(),
                scene: "park".into(),
                winner: "a".into(),
                loser: "b".into(),
            },
            ChoiceRecord {
                timestamp: "2".into(),
                scene: "bottle".into(),
                winner: "b, quoted".into(),
                loser: "a".into(),
            },
        ];
        let text = write_choice_log(&records);
        assert!(text.starts_with("timestamp,scene,winner,loser\n1,park,a,b\n"));
        assert_eq!(read_choice_log(&text).unwrap(), records);
        assert_eq!(log_sequence(&records, "park"), vec![Match::new("a", "b")]);
        assert!(read_choice_log("when,scene,winner,loser\n").is_err());
    }
}
