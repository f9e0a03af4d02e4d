//! Blueprint-driven adaptive sessions.
//!
//! A session walks the blueprint's stages in order. Each stage keeps its own
//! posterior, so grades in one item type never move another type's score.
//! Every state transition is appended to an event log from which the session
//! can be rebuilt.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::bank::ItemBank;
use crate::error::{Error, Result};
use crate::irt::ThetaGrid;
use crate::posterior::{Posterior, PriorSpec};
use crate::rng::{self, Stream};
use crate::selector::{filter_eligible, select, SelectorConfig, TagConstraint};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TagRule {
    #[default]
    None,
    /// Each administration draws one of the two tags with probability 1/2.
    BernoulliHalf { tags: (String, String) },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub item_type: String,
    pub count: usize,
    /// Recorded for clients; the engine does not enforce it.
    pub time_limit_seconds: f64,
    #[serde(default)]
    pub tag_rule: TagRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blueprint {
    pub stages: Vec<Stage>,
}

impl Blueprint {
    /// 18 yes/no vocabulary items with a fair real/fake draw, then 9
    /// vocabulary-in-context items.
    pub fn vocabulary() -> Self {
        Self {
            stages: vec![
                Stage {
                    item_type: "yn_vocab".into(),
                    count: 18,
                    time_limit_seconds: 5.0,
                    tag_rule: TagRule::BernoulliHalf {
                        tags: ("real".into(), "fake".into()),
                    },
                },
                Stage {
                    item_type: "vic".into(),
                    count: 9,
                    time_limit_seconds: 20.0,
                    tag_rule: TagRule::None,
                },
            ],
        }
    }

    /// One untagged stage.
    pub fn single(item_type: impl Into<String>, count: usize) -> Self {
        Self {
            stages: vec![Stage {
                item_type: item_type.into(),
                count,
                time_limit_seconds: 0.0,
                tag_rule: TagRule::None,
            }],
        }
    }

    pub fn total_items(&self) -> usize {
        self.stages.iter().map(|s| s.count).sum()
    }

    pub fn validate(&self, bank: &ItemBank) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("blueprint has no stages".into()));
        }
        for s in &self.stages {
            if s.count == 0 {
                return Err(Error::InvalidConfig(format!("stage {} has count 0", s.item_type)));
            }
            if !bank.has_type(&s.item_type) {
                return Err(Error::UnknownItemType(s.item_type.clone()));
            }
        }
        Ok(())
    }
}

/// Everything a session needs besides the bank, blueprint and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SessionConfig {
    pub grid: ThetaGrid,
    pub prior: PriorSpec,
    pub selector: SelectorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingItem {
    pub item_id: String,
    pub stage: usize,
    pub item_type: String,
    /// 1-based position within the stage.
    pub position: usize,
    pub stage_count: usize,
    pub time_limit_seconds: f64,
    pub tag: Option<String>,
    /// The drawn tag had no eligible items and the other tag was used.
    pub tag_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Administered {
    pub item_id: String,
    pub stage: usize,
    pub correct: bool,
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Start,
    Select,
    Grade,
    Score,
}

/// One line of the session event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub event: EventKind,
    pub session_id: String,
    /// Administration counter: 0 at start, then 1-based.
    pub t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior_mean: Option<f64>,
    #[serde(default)]
    pub timestamp: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

impl SessionEvent {
    fn new(event: EventKind, session_id: &str, t: usize, timestamp: Option<u64>) -> Self {
        Self {
            event,
            session_id: session_id.to_string(),
            t,
            item_id: None,
            grade: None,
            posterior_mean: None,
            timestamp,
            stage: None,
            seed: None,
            tag: None,
            fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeOutcome {
    pub stage: usize,
    pub posterior_mean: f64,
    pub posterior_variance: f64,
    pub stage_complete: bool,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    session_id: String,
    seed: u64,
    blueprint: Blueprint,
    config: SessionConfig,
    posteriors: Vec<Posterior>,
    administered: Vec<Administered>,
    administered_ids: BTreeSet<String>,
    stage: usize,
    in_stage: usize,
    pending: Option<PendingItem>,
    rng: Stream,
    events: Vec<SessionEvent>,
    tag_fallbacks: usize,
}

impl SessionState {
    pub fn start(
        session_id: impl Into<String>,
        blueprint: &Blueprint,
        bank: &ItemBank,
        config: &SessionConfig,
        seed: u64,
        timestamp: Option<u64>,
    ) -> Result<Self> {
        blueprint.validate(bank)?;
        config.selector.validate()?;
        let prior = Posterior::prior(config.grid, &config.prior)?;
        let session_id = session_id.into();
        let mut start = SessionEvent::new(EventKind::Start, &session_id, 0, timestamp);
        start.seed = Some(seed);
        start.posterior_mean = Some(prior.mean());
        Ok(Self {
            seed,
            blueprint: blueprint.clone(),
            config: *config,
            posteriors: vec![prior; blueprint.stages.len()],
            administered: Vec::new(),
            administered_ids: BTreeSet::new(),
            stage: 0,
            in_stage: 0,
            pending: None,
            rng: rng::from_seed(seed),
            events: vec![start],
            tag_fallbacks: 0,
            session_id,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn blueprint(&self) -> &Blueprint {
        &self.blueprint
    }

    pub fn is_finished(&self) -> bool {
        self.stage >= self.blueprint.stages.len()
    }

    pub fn current_stage(&self) -> Option<usize> {
        (!self.is_finished()).then_some(self.stage)
    }

    pub fn pending(&self) -> Option<&PendingItem> {
        self.pending.as_ref()
    }

    pub fn administered(&self) -> &[Administered] {
        &self.administered
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn tag_fallbacks(&self) -> usize {
        self.tag_fallbacks
    }

    pub fn posterior(&self, stage: usize) -> Option<&Posterior> {
        self.posteriors.get(stage)
    }

    /// Chooses the next item, or returns the pending one if a grade is
    /// still outstanding.
    pub fn next_item(&mut self, bank: &ItemBank, timestamp: Option<u64>) -> Result<PendingItem> {
        if self.is_finished() {
            return Err(Error::SessionFinished);
        }
        if let Some(p) = &self.pending {
            return Ok(p.clone());
        }
        let stage = &self.blueprint.stages[self.stage];
        let pool = || bank.of_type(&stage.item_type);

        let (eligible, tag, tag_fallback) = match &stage.tag_rule {
            TagRule::None => (
                filter_eligible(pool(), &self.administered_ids, &TagConstraint::Any),
                None,
                false,
            ),
            TagRule::BernoulliHalf { tags } => {
                let (first, second) = if self.rng.random_bool(0.5) {
                    (&tags.0, &tags.1)
                } else {
                    (&tags.1, &tags.0)
                };
                let chosen =
                    filter_eligible(pool(), &self.administered_ids, &TagConstraint::HasTag(first.clone()));
                if chosen.is_empty() {
                    let other = filter_eligible(
                        pool(),
                        &self.administered_ids,
                        &TagConstraint::HasTag(second.clone()),
                    );
                    (other, Some(second.clone()), true)
                } else {
                    (chosen, Some(first.clone()), false)
                }
            }
        };
        if eligible.is_empty() {
            return Err(Error::BankExhausted(stage.item_type.clone()));
        }
        let item = select(&eligible, &self.posteriors[self.stage], &self.config.selector, &mut self.rng)?;

        let pending = PendingItem {
            item_id: item.item_id.clone(),
            stage: self.stage,
            item_type: stage.item_type.clone(),
            position: self.in_stage + 1,
            stage_count: stage.count,
            time_limit_seconds: stage.time_limit_seconds,
            tag: tag.clone(),
            tag_fallback,
        };
        if tag_fallback {
            self.tag_fallbacks += 1;
        }
        let mut ev = SessionEvent::new(EventKind::Select, &self.session_id, self.administered.len() + 1, timestamp);
        ev.item_id = Some(pending.item_id.clone());
        ev.stage = Some(self.stage);
        ev.tag = tag;
        ev.fallback = tag_fallback;
        self.events.push(ev);
        self.pending = Some(pending.clone());
        Ok(pending)
    }

    /// Records the grade for the pending item and updates that stage's posterior.
    pub fn submit_grade(
        &mut self,
        bank: &ItemBank,
        item_id: &str,
        correct: bool,
        timestamp: Option<u64>,
    ) -> Result<GradeOutcome> {
        if self.is_finished() {
            return Err(Error::SessionFinished);
        }
        let pending = match &self.pending {
            Some(p) if p.item_id == item_id => p.clone(),
            other => {
                return Err(Error::UnexpectedItem {
                    expected: other.as_ref().map(|p| p.item_id.clone()),
                    got: item_id.to_string(),
                })
            }
        };
        let item = bank
            .get(item_id)
            .ok_or_else(|| Error::UnknownItem(item_id.to_string()))?;
        let stage = pending.stage;
        let post = self.posteriors[stage].update(&item.params, correct)?;
        self.posteriors[stage] = post;
        self.pending = None;
        self.administered_ids.insert(item_id.to_string());
        self.administered.push(Administered {
            item_id: item_id.to_string(),
            stage,
            correct,
            timestamp,
        });

        let mean = self.posteriors[stage].mean();
        let mut ev = SessionEvent::new(EventKind::Grade, &self.session_id, self.administered.len(), timestamp);
        ev.item_id = Some(item_id.to_string());
        ev.grade = Some(correct as u8);
        ev.posterior_mean = Some(mean);
        ev.stage = Some(stage);
        self.events.push(ev);

        self.in_stage += 1;
        let stage_complete = self.in_stage >= self.blueprint.stages[stage].count;
        if stage_complete {
            let mut ev = SessionEvent::new(EventKind::Score, &self.session_id, self.administered.len(), timestamp);
            ev.posterior_mean = Some(mean);
            ev.stage = Some(stage);
            self.events.push(ev);
            self.stage += 1;
            self.in_stage = 0;
        }
        Ok(GradeOutcome {
            stage,
            posterior_mean: mean,
            posterior_variance: self.posteriors[stage].variance(),
            stage_complete,
            finished: self.is_finished(),
        })
    }

    fn stage_done(&self, stage: usize) -> bool {
        stage < self.stage
    }

    /// Posterior mean of a completed stage.
    pub fn stage_score(&self, stage: usize) -> Result<f64> {
        let s = self
            .blueprint
            .stages
            .get(stage)
            .ok_or_else(|| Error::OutOfRange(format!("stage {stage}")))?;
        if !self.stage_done(stage) {
            return Err(Error::StageIncomplete(s.item_type.clone()));
        }
        Ok(self.posteriors[stage].mean())
    }

    /// Scores of the stages completed so far, keyed by item type.
    pub fn completed_scores(&self) -> BTreeMap<String, f64> {
        self.blueprint
            .stages
            .iter()
            .enumerate()
            .filter(|(i, _)| self.stage_done(*i))
            .map(|(i, s)| (s.item_type.clone(), self.posteriors[i].mean()))
            .collect()
    }

    /// Per-item-type posterior-mean scores; every stage must be complete.
    pub fn score(&self) -> Result<BTreeMap<String, f64>> {
        if let Some(s) = self.blueprint.stages.get(self.stage) {
            return Err(Error::StageIncomplete(s.item_type.clone()));
        }
        Ok(self.completed_scores())
    }

    /// Rebuilds a session from its event log by re-running selection with the
    /// recorded seed and re-applying the recorded grades.
    pub fn replay(
        events: &[SessionEvent],
        blueprint: &Blueprint,
        bank: &ItemBank,
        config: &SessionConfig,
    ) -> Result<Self> {
        let start = events
            .first()
            .filter(|e| e.event == EventKind::Start)
            .ok_or_else(|| Error::Malformed("event log must begin with a start event".into()))?;
        let seed = start
            .seed
            .ok_or_else(|| Error::Malformed("start event has no seed".into()))?;
        let mut state = Self::start(start.session_id.clone(), blueprint, bank, config, seed, start.timestamp)?;
        for ev in &events[1..] {
            match ev.event {
                EventKind::Select => {
                    let p = state.next_item(bank, ev.timestamp)?;
                    if Some(&p.item_id) != ev.item_id.as_ref() {
                        return Err(Error::Malformed(format!(
                            "replay diverged at t={}: selected {} but log has {:?}",
                            ev.t, p.item_id, ev.item_id
                        )));
                    }
                }
                EventKind::Grade => {
                    let id = ev
                        .item_id
                        .as_deref()
                        .ok_or_else(|| Error::Malformed("grade event without item_id".into()))?;
                    let grade = ev
                        .grade
                        .ok_or_else(|| Error::Malformed("grade event without grade".into()))?;
                    state.submit_grade(bank, id, grade == 1, ev.timestamp)?;
                }
                EventKind::Score | EventKind::Start => {}
            }
        }
        Ok(state)
    }
}
