use std::collections::HashSet;

use rayon::prelude::*;
use serde::Serialize;

use super::forest::Forest;
use crate::decomposer::CandidateId;
use crate::error::{Error, Result};

/// Feature vectors of every emitted window of one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateWindows {
    pub id: CandidateId,
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateVotes {
    pub candidate: CandidateId,
    /// Windows classified positive.
    pub votes: usize,
    pub windows: usize,
}

impl CandidateVotes {
    pub fn vote_fraction(&self) -> f64 {
        if self.windows == 0 { 0.0 } else { self.votes as f64 / self.windows as f64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub rank: usize,
    pub precision: f64,
    pub recall: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub signal: String,
    /// Descending by votes, ties by candidate id.
    pub ranking: Vec<CandidateVotes>,
    pub total_votes: usize,
    pub evaluation: Option<Evaluation>,
}

impl MatchReport {
    pub fn top(&self) -> Option<&CandidateVotes> {
        self.ranking.first()
    }
}

/// Classifies every window of every candidate and ranks candidates by their
/// number of positive windows.
pub fn locate_in(model: &Forest, candidates: &[CandidateWindows]) -> Result<MatchReport> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate survived preprocessing"));
    }
    if let Some(c) = candidates
        .iter()
        .find(|c| c.features.iter().any(|f| f.len() != model.n_features()))
    {
        return Err(Error::invalid(format!(
            "candidate {} has feature vectors of the wrong length for model {:?}",
            c.id, model.label
        )));
    }
    let mut ranking: Vec<CandidateVotes> = candidates
        .par_iter()
        .map(|c| CandidateVotes {
            candidate: c.id,
            votes: c.features.iter().filter(|f| model.predict(f)).count(),
            windows: c.features.len(),
        })
        .collect();
    ranking.sort_by(|a, b| b.votes.cmp(&a.votes).then_with(|| a.candidate.cmp(&b.candidate)));
    let total_votes = ranking.iter().map(|r| r.votes).sum();
    Ok(MatchReport {
        signal: model.label.clone(),
        ranking,
        total_votes,
        evaluation: None,
    })
}

/// Rank, precision, recall and gap of a report against the candidates
/// known to carry the signal. Several truths are allowed: the same sensor
/// often appears under more than one id.
///
/// Precision and recall are window-level. The gap is the vote difference
/// between the best-ranked true and best-ranked false candidate over all
/// positive votes, clamped at zero when a false candidate leads.
pub fn evaluate(report: &MatchReport, truths: &[CandidateId]) -> Result<Evaluation> {
    let truth_set: HashSet<&CandidateId> = truths.iter().collect();
    let Some(rank) = report.ranking.iter().position(|r| truth_set.contains(&r.candidate)) else {
        return Err(Error::TruthAbsent(
            *truths.first().ok_or(Error::Empty("no truth candidate given"))?,
        ));
    };
    let (tp, truth_windows) = report
        .ranking
        .iter()
        .filter(|r| truth_set.contains(&r.candidate))
        .fold((0, 0), |(v, w), r| (v + r.votes, w + r.windows));
    let best_true = report.ranking[rank].votes;
    let best_false = report
        .ranking
        .iter()
        .find(|r| !truth_set.contains(&r.candidate))
        .map_or(0, |r| r.votes);
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Evaluation {
        rank: rank + 1,
        precision: ratio(tp, report.total_votes),
        recall: ratio(tp, truth_windows),
        gap: ratio(best_true.saturating_sub(best_false), report.total_votes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> CandidateId {
        s.parse().unwrap()
    }

    fn report(rows: &[(&str, usize, usize)]) -> MatchReport {
        let ranking: Vec<CandidateVotes> = rows
            .iter()
            .map(|&(c, votes, windows)| CandidateVotes { candidate: id(c), votes, windows })
            .collect();
        MatchReport {
            signal: "velocity".into(),
            total_votes: ranking.iter().map(|r| r.votes).sum(),
            ranking,
            evaluation: None,
        }
    }

    #[test]
    fn worked_gap_example() {
        // true signal holds 50% of the votes, best false one 20%
        let r = report(&[("0410:1-2", 50, 60), ("0295:1-2", 20, 60), ("0510:2", 18, 60), ("0510:3", 12, 60)]);
        let e = evaluate(&r, &[id("0410:1-2")]).unwrap();
        assert_eq!(e.gap, 0.30);
        assert_eq!(e.rank, 1);
        assert_eq!(e.precision, 0.5);
        assert_eq!(e.recall, 50.0 / 60.0);
    }

    #[test]
    fn perfect_and_degenerate_classifiers() {
        let r = report(&[("0100:0", 40, 40), ("0200:0", 0, 50), ("0300:0", 0, 10)]);
        let e = evaluate(&r, &[id("0100:0")]).unwrap();
        assert_eq!((e.rank, e.precision, e.recall), (1, 1.0, 1.0));

        // everything flagged positive
        let r = report(&[("0200:0", 50, 50), ("0100:0", 40, 40), ("0300:0", 10, 10)]);
        let e = evaluate(&r, &[id("0100:0")]).unwrap();
        assert_eq!(e.recall, 1.0);
        assert_eq!(e.precision, 0.4);
        assert_eq!(e.rank, 2);
        assert_eq!(e.gap, 0.0);
    }

    #[test]
    fn duplicates_may_lead() {
        let r = report(&[("0100:0", 40, 40), ("0101:0", 35, 40), ("0200:0", 5, 40)]);
        let e = evaluate(&r, &[id("0100:0"), id("0101:0")]).unwrap();
        assert_eq!(e.rank, 1);
        assert_eq!(e.gap, 35.0 / 80.0);
        assert_eq!(e.precision, 75.0 / 80.0);
        assert!(matches!(evaluate(&r, &[id("0300:0")]), Err(Error::TruthAbsent(_))));
    }
}
