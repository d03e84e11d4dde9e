//! Affinity-weighted soft-vote committees.

use immunecs_nn::argmax;
use serde::{Deserialize, Serialize};

use crate::config::RetainPolicy;
use crate::error::Error;
use crate::search::{rank_order, Individual};

const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Committee {
    members: Vec<Individual>,
    weights: Vec<f64>,
}

impl Committee {
    /// Retains members by the selection ranking. Individuals without positive
    /// affinity cannot carry a vote and are left out.
    pub fn build(pop: &[Individual], retain: RetainPolicy) -> Result<Self, Error> {
        if pop.is_empty() {
            return Err(Error::Argument("cannot build a committee from an empty population".into()));
        }
        let mut ranked = pop.to_vec();
        ranked.sort_by(rank_order);
        ranked.truncate(retain.size(pop.len()));
        ranked.retain(|i| i.affinity > 0.0);
        if ranked.is_empty() {
            return Err(Error::Argument("no retained individual has positive affinity".into()));
        }
        let weights = ranked.iter().map(|i| i.affinity).collect();
        Ok(Self {
            members: ranked,
            weights,
        })
    }

    pub fn members(&self) -> &[Individual] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Replaces the vote weights, e.g. with post-training validation accuracy.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self, Error> {
        if weights.len() != self.members.len() || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Argument("need one positive weight per member".into()));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn normalized_weights(&self) -> Vec<f64> {
        normalize(&self.weights)
    }
}

fn normalize(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// G = Σ_j (f_j / Σ f) g_j for one sample.
pub fn combine(weights: &[f64], probabilities: &[&[f64]]) -> Result<Vec<f64>, Error> {
    if weights.is_empty() || weights.len() != probabilities.len() {
        return Err(Error::Argument(format!(
            "{} weights for {} probability vectors",
            weights.len(),
            probabilities.len()
        )));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Argument("vote weights must be positive".into()));
    }
    let classes = probabilities[0].len();
    for p in probabilities {
        if p.len() != classes {
            return Err(Error::Argument("probability vectors differ in length".into()));
        }
        let sum: f64 = p.iter().sum();
        if p.iter().any(|v| *v < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Argument("member output is not a probability vector".into()));
        }
    }
    let mut g = vec![0.0; classes];
    for (w, p) in normalize(weights).iter().zip(probabilities) {
        for (gk, pk) in g.iter_mut().zip(p.iter()) {
            *gk += w * pk;
        }
    }
    Ok(g)
}

/// Committee prediction for one sample; ties go to the lowest class index.
pub fn soft_vote(weights: &[f64], probabilities: &[&[f64]]) -> Result<usize, Error> {
    Ok(argmax(&combine(weights, probabilities)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub committee_accuracy: f64,
    pub member_accuracies: Vec<f64>,
    pub best_member_accuracy: f64,
    pub mean_member_accuracy: f64,
    /// Committee accuracy minus best member accuracy.
    pub gain: f64,
    /// Fraction of samples on which two members' predictions differ.
    pub disagreement: Vec<Vec<f64>>,
}

/// Scores a committee given each member's class probabilities
/// (`member_probs[j][i]` is member j's vector for sample i).
pub fn ensemble_metrics(
    weights: &[f64],
    member_probs: &[Vec<Vec<f64>>],
    labels: &[usize],
) -> Result<EnsembleReport, Error> {
    if member_probs.len() != weights.len() || member_probs.is_empty() {
        return Err(Error::Argument("need one prediction set per member".into()));
    }
    if member_probs.iter().any(|m| m.len() != labels.len()) || labels.is_empty() {
        return Err(Error::Argument("prediction count differs from label count".into()));
    }
    let m = member_probs.len();
    let predictions: Vec<Vec<usize>> = member_probs
        .iter()
        .map(|rows| rows.iter().map(|p| argmax(p)).collect())
        .collect();
    let acc = |pred: &[usize]| {
        pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
    };
    let mut committee = Vec::with_capacity(labels.len());
    for i in 0..labels.len() {
        let sample: Vec<&[f64]> = member_probs.iter().map(|rows| rows[i].as_slice()).collect();
        committee.push(soft_vote(weights, &sample)?);
    }
    let member_accuracies: Vec<f64> = predictions.iter().map(|p| acc(p)).collect();
    let best = member_accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let committee_accuracy = acc(&committee);
    let mut disagreement = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in a + 1..m {
            let d = predictions[a]
                .iter()
                .zip(&predictions[b])
                .filter(|(x, y)| x != y)
                .count() as f64
                / labels.len() as f64;
            disagreement[a][b] = d;
            disagreement[b][a] = d;
        }
    }
    Ok(EnsembleReport {
        committee_accuracy,
        mean_member_accuracy: member_accuracies.iter().sum::<f64>() / m as f64,
        best_member_accuracy: best,
        gain: committee_accuracy - best,
        member_accuracies,
        disagreement,
    })
}
