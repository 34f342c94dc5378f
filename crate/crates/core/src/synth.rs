//! Deterministic synthetic corpora for offline end-to-end runs: a seeded
//! followee network, persona-scripted comments across the three event
//! phases, an event timeline, and the mock-gateway script that makes the
//! whole pipeline replay the personas exactly.
//!
//! Personas embed their future sentiment: the forecast-phase comment
//! template scores to the persona's target category under the bundled
//! lexicon, so a pipeline that follows the scripts faithfully reaches
//! accuracy 1.0 and JSD 0, and any regression shows up as a metric drop.

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::corpus::{Corpus, SelectionCriteria};
use crate::domain::{Comment, EventContext, Location, SentimentScore, ToneOfVoice, User, UserId};
use crate::gateway::{InstructionKind, MockScriptEntry};
use crate::sentiment::Lexicon;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("need at least one user")]
    NoUsers,
    #[error("need at least one persona")]
    NoPersonas,
    #[error("out-degree {degree} impossible for {users} users")]
    ImpossibleDegree { degree: usize, users: usize },
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Sentiment(#[from] crate::sentiment::SentimentError),
}

/// Event phases used by the persona trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Before,
    During,
    After,
}

/// Per-phase sentiment targets.
#[derive(Debug, Clone, Copy)]
pub struct PhaseScores {
    pub before: SentimentScore,
    pub during: SentimentScore,
    pub after: SentimentScore,
}

impl PhaseScores {
    pub fn get(&self, phase: Phase) -> SentimentScore {
        match phase {
            Phase::Before => self.before,
            Phase::During => self.during,
            Phase::After => self.after,
        }
    }
}

/// A scripted synthetic author.
#[derive(Debug, Clone)]
pub struct PersonaSpec {
    pub key: String,
    pub tone: ToneOfVoice,
    pub attitude: String,
    pub trajectory: PhaseScores,
    pub followee_degree: usize,
    /// A drifting persona draws one INCONSISTENT review before converging,
    /// exercising the rectification path.
    pub drifting: bool,
}

fn score(v: i64) -> SentimentScore {
    SentimentScore::new(v).expect("fixture score in range")
}

/// Comment text scoring exactly to `target` under [`demo_lexicon`]. The
/// event name keeps every comment relevant to the topic keyword filter.
pub fn template_for(target: SentimentScore, event_name: &str) -> String {
    match target.value() {
        2 => format!("Feeling amazing about the {event_name} cleanup, wonderful crews out here"),
        1 => format!("Some good news on {event_name} today"),
        0 => format!("Watching the {event_name} updates from the porch"),
        -1 => format!("This {event_name} forecast looks bad tonight"),
        _ => format!("The {event_name} damage is awful, terrible night"),
    }
}

/// Lexicon backing the persona templates: each template's mean valence
/// lands in the intended category band.
pub fn demo_lexicon() -> Lexicon {
    Lexicon::new(
        [
            ("amazing".to_string(), 0.9),
            ("wonderful".to_string(), 0.8),
            ("good".to_string(), 0.4),
            ("hopeful".to_string(), 0.4),
            ("bad".to_string(), -0.4),
            ("grim".to_string(), -0.4),
            ("awful".to_string(), -0.8),
            ("terrible".to_string(), -0.9),
        ],
        ["not".to_string(), "never".to_string()],
        [("very".to_string(), 1.5), ("slightly".to_string(), 0.5)],
    )
    .expect("demo lexicon is valid")
}

/// Five stable personas covering every forecast category.
pub fn default_personas() -> Vec<PersonaSpec> {
    let spec = |key: &str, tone: [&str; 3], attitude: &str, after: i64| PersonaSpec {
        key: key.to_string(),
        tone: ToneOfVoice::new(&tone).expect("valid tone"),
        attitude: attitude.to_string(),
        trajectory: PhaseScores {
            before: score(0),
            during: score(after.signum()),
            after: score(after),
        },
        followee_degree: 3,
        drifting: false,
    };
    vec![
        spec("upbeat", ["bright", "warm", "chatty"], "Confident the recovery will go well.", 2),
        spec("hopeful", ["earnest", "plain", "steady"], "Cautiously optimistic about relief.", 1),
        spec("watchful", ["terse", "flat", "guarded"], "Reserving judgment until more is known.", 0),
        spec("uneasy", ["anxious", "clipped", "wary"], "Worried the response is falling short.", -1),
        spec("grim", ["blunt", "dark", "weary"], "Convinced the damage will linger for months.", -2),
    ]
}

/// A persona that fails its first review, for exercising rectification.
pub fn drifting_persona() -> PersonaSpec {
    PersonaSpec {
        key: "drifting".to_string(),
        tone: ToneOfVoice::new(&["sharp", "restless", "raw"]).expect("valid tone"),
        attitude: "Fed up and getting louder about it.".to_string(),
        trajectory: PhaseScores { before: score(0), during: score(-1), after: score(-2) },
        followee_degree: 3,
        drifting: true,
    }
}

/// Event timeline: three phase anchors plus the forecast times derived
/// from them.
#[derive(Debug, Clone)]
pub struct Timeline {
    pub event_name: String,
    pub start: DateTime<Utc>,
    pub landfall: DateTime<Utc>,
    pub recovery: DateTime<Utc>,
}

impl Timeline {
    /// A 2024 hurricane-shaped default: a week of run-up, a week of impact.
    pub fn hurricane(event_name: impl Into<String>) -> Timeline {
        let parse = |s: &str| {
            DateTime::parse_from_rfc3339(s).expect("valid fixture time").with_timezone(&Utc)
        };
        Timeline {
            event_name: event_name.into(),
            start: parse("2024-10-22T00:00:00Z"),
            landfall: parse("2024-10-29T00:00:00Z"),
            recovery: parse("2024-11-05T00:00:00Z"),
        }
    }

    /// Forecast cutoff: everything at or before this instant is history.
    pub fn forecast_cutoff(&self) -> DateTime<Utc> {
        self.recovery
    }

    /// Time of interest for the forecast, just past the cutoff.
    pub fn forecast_target(&self) -> DateTime<Utc> {
        self.recovery + Duration::minutes(30)
    }

    pub fn selection_criteria(&self) -> SelectionCriteria {
        SelectionCriteria::new((self.landfall, self.recovery))
    }

    fn phase_window(&self, phase: Phase) -> (DateTime<Utc>, DateTime<Utc>) {
        match phase {
            Phase::Before => (self.start, self.landfall),
            Phase::During => (self.landfall, self.recovery),
            // Inside the 24h ground-truth window after the forecast target.
            Phase::After => {
                (self.recovery + Duration::hours(1), self.recovery + Duration::hours(23))
            }
        }
    }

    fn events(&self) -> Vec<EventContext> {
        let name = &self.event_name;
        vec![
            EventContext::new(
                self.landfall - Duration::days(2),
                format!("Hurricane {name} strengthens offshore; coastal warnings issued"),
                "wire",
            )
            .expect("non-empty summary"),
            EventContext::new(
                self.landfall,
                format!("Hurricane {name} makes landfall with heavy surge"),
                "wire",
            )
            .expect("non-empty summary"),
            EventContext::new(
                self.recovery,
                format!("Power crews fan out as {name} cleanup begins"),
                "wire",
            )
            .expect("non-empty summary"),
        ]
    }
}

/// Out-degree specification for the synthetic followee graph.
#[derive(Debug, Clone)]
pub enum DegreeSpec {
    Constant(usize),
    UniformRange(usize, usize),
    PerUser(Vec<usize>),
}

/// Generated users with followee edges and band-scaled counts.
#[derive(Debug, Clone)]
pub struct Network {
    pub users: Vec<User>,
}

const LOCATIONS: [(&str, &str); 6] = [
    ("NJ", "Monmouth"),
    ("NJ", "Ocean"),
    ("NJ", "Atlantic"),
    ("NY", "Kings"),
    ("NY", "Queens"),
    ("NY", "Nassau"),
];

/// Builds a directed followee graph with the requested out-degrees.
/// Deterministic under the seed; no self-edges, no duplicate edges.
/// Follower and friend counts are the in/out degrees scaled into the
/// selection band [100, 2000].
pub fn gen_network(n_users: usize, degree: &DegreeSpec, seed: u64) -> Result<Network, SynthError> {
    if n_users == 0 {
        return Err(SynthError::NoUsers);
    }
    let width = n_users.to_string().len().max(3);
    let ids: Vec<UserId> = (0..n_users)
        .map(|i| UserId::new(format!("u{i:0width$}")).expect("non-empty id"))
        .collect();

    let degrees: Vec<usize> = match degree {
        DegreeSpec::Constant(k) => vec![*k; n_users],
        DegreeSpec::UniformRange(lo, hi) => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
            (0..n_users).map(|_| rng.gen_range(*lo..=*hi)).collect()
        }
        DegreeSpec::PerUser(v) => {
            let mut out = v.clone();
            out.resize(n_users, v.last().copied().unwrap_or(0));
            out
        }
    };
    if let Some(&bad) = degrees.iter().find(|d| **d >= n_users) {
        return Err(SynthError::ImpossibleDegree { degree: bad, users: n_users });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut followees_of: Vec<Vec<UserId>> = Vec::with_capacity(n_users);
    let mut in_degree = vec![0usize; n_users];
    for (i, _) in ids.iter().enumerate() {
        let mut candidates: Vec<usize> =
            (0..n_users).filter(|j| *j != i).collect();
        candidates.shuffle(&mut rng);
        let mut picks: Vec<usize> = candidates.into_iter().take(degrees[i]).collect();
        picks.sort_unstable();
        for &j in &picks {
            in_degree[j] += 1;
        }
        followees_of.push(picks.into_iter().map(|j| ids[j].clone()).collect());
    }

    let max_in = in_degree.iter().copied().max().unwrap_or(0).max(1);
    let max_out = degrees.iter().copied().max().unwrap_or(0).max(1);
    let scale = |value: usize, max: usize| 100 + (value as u64 * 1900) / max as u64;

    let users = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let location = LOCATIONS[i % LOCATIONS.len()];
            User::new(
                id.clone(),
                Default::default(),
                followees_of[i].clone(),
                scale(in_degree[i], max_in),
                scale(degrees[i], max_out),
                Some(Location { state: location.0.into(), county: location.1.into() }),
            )
            .map_err(SynthError::from)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Network { users })
}

/// Everything a fully offline run needs.
#[derive(Debug)]
pub struct SynthOutput {
    pub corpus: Corpus,
    pub mock_script: Vec<MockScriptEntry>,
    pub lexicon: Lexicon,
    pub criteria: SelectionCriteria,
    pub t: DateTime<Utc>,
    pub t_prime: DateTime<Utc>,
}

/// Builds the corpus and mock script over an existing network. Personas are
/// assigned round-robin; every user gets a unique persona marker so each
/// user's review queue advances independently under parallel fan-out.
pub fn gen_corpus(
    personas: &[PersonaSpec],
    network: &Network,
    timeline: &Timeline,
    comments_per_phase: usize,
    seed: u64,
) -> Result<SynthOutput, SynthError> {
    if personas.is_empty() {
        return Err(SynthError::NoPersonas);
    }
    let comments_per_phase = comments_per_phase.max(1);
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(1));
    let event = &timeline.event_name;

    let mut users = Vec::with_capacity(network.users.len());
    let mut comments = Vec::new();
    let mut script = Vec::new();
    for (i, base) in network.users.iter().enumerate() {
        let persona = &personas[i % personas.len()];
        let marker_key = format!("{}-{}", persona.key, base.id);

        let mut attributes = base.attributes.clone();
        attributes.insert("persona".to_string(), marker_key.clone());
        attributes.insert("self_description".to_string(), persona.attitude.clone());
        users.push(User::new(
            base.id.clone(),
            attributes,
            base.followees.clone(),
            base.followers_count,
            base.friends_count,
            base.location.clone(),
        )?);

        for phase in [Phase::Before, Phase::During, Phase::After] {
            let (lo, hi) = timeline.phase_window(phase);
            let span = hi - lo;
            let text_base = template_for(persona.trajectory.get(phase), event);
            for k in 0..comments_per_phase {
                let slot = lo + span * (k as i32 + 1) / (comments_per_phase as i32 + 1);
                let jitter = Duration::seconds(rng.gen_range(-300..=300));
                let time = (slot + jitter).clamp(lo, hi - Duration::seconds(1));
                let text = format!("{text_base}, day {}", k + 1);
                comments.push(Comment::new(base.id.clone(), time, text, None)?);
            }
        }

        let forecast_text = template_for(persona.trajectory.after, event);
        let entry = |kind: InstructionKind, response: String| MockScriptEntry {
            kind,
            persona: marker_key.clone(),
            response,
        };
        script.push(entry(InstructionKind::Tone, persona.tone.join()));
        script.push(entry(InstructionKind::Attitude, persona.attitude.clone()));
        script.push(entry(InstructionKind::BrowseComment, forecast_text.clone()));
        script.push(entry(InstructionKind::Rectify, forecast_text));
        if persona.drifting {
            script.push(entry(
                InstructionKind::ObjectiveReview,
                "INCONSISTENT\nThe draft drops the author's edge; it reads flat against the \
                 recent posts."
                    .to_string(),
            ));
        }
        script.push(entry(
            InstructionKind::ObjectiveReview,
            "CONSISTENT\nTone and attitude track the author's history.".to_string(),
        ));
    }

    let keywords = vec![event.to_lowercase(), "storm".to_string()];
    let (corpus, _) = Corpus::assemble(users, comments, timeline.events(), keywords)?;
    Ok(SynthOutput {
        corpus,
        mock_script: script,
        lexicon: demo_lexicon(),
        criteria: timeline.selection_criteria(),
        t: timeline.forecast_cutoff(),
        t_prime: timeline.forecast_target(),
    })
}

/// One-call synthesis with the default persona roster.
pub fn synthesize(
    n_users: usize,
    timeline: &Timeline,
    comments_per_phase: usize,
    include_drifting: bool,
    seed: u64,
) -> Result<SynthOutput, SynthError> {
    let mut personas = default_personas();
    if include_drifting {
        personas.push(drifting_persona());
    }
    let degrees: Vec<usize> =
        (0..n_users).map(|i| personas[i % personas.len()].followee_degree).collect();
    let network = gen_network(n_users, &DegreeSpec::PerUser(degrees), seed)?;
    gen_corpus(&personas, &network, timeline, comments_per_phase, seed)
}
