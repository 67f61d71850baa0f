//! Fixed lexicon for the caption grammar.
//!
//! A caption is `SUBJECT VERB DET OBJECT [LOCATION] .` for the first event
//! of a video and `then (PRONOUN | the NOUN) VERB DET OBJECT [LOCATION] .`
//! for every later one, so the pronoun and `then` are only predictable
//! from the episode context.

pub(crate) struct Subject {
    pub indefinite: &'static [&'static str],
    pub definite: &'static [&'static str],
    pub pronoun: &'static str,
}

pub(crate) const SUBJECTS: &[Subject] = &[
    Subject { indefinite: &["a", "man"], definite: &["the", "man"], pronoun: "he" },
    Subject { indefinite: &["a", "woman"], definite: &["the", "woman"], pronoun: "she" },
    Subject { indefinite: &["a", "boy"], definite: &["the", "boy"], pronoun: "he" },
    Subject { indefinite: &["a", "girl"], definite: &["the", "girl"], pronoun: "she" },
    Subject { indefinite: &["two", "men"], definite: &["the", "men"], pronoun: "they" },
    Subject { indefinite: &["a", "dog"], definite: &["the", "dog"], pronoun: "it" },
];

pub(crate) struct Action {
    pub verb: &'static str,
    pub det: &'static str,
    pub object: &'static str,
    pub location: usize,
}

pub(crate) const ACTIONS: &[Action] = &[
    Action { verb: "throws", det: "the", object: "ball", location: 0 },
    Action { verb: "paints", det: "a", object: "fence", location: 1 },
    Action { verb: "lifts", det: "the", object: "box", location: 2 },
    Action { verb: "climbs", det: "a", object: "wall", location: 3 },
    Action { verb: "washes", det: "the", object: "car", location: 1 },
    Action { verb: "pulls", det: "a", object: "rope", location: 0 },
    Action { verb: "cuts", det: "the", object: "tree", location: 2 },
    Action { verb: "rides", det: "a", object: "bike", location: 3 },
    Action { verb: "cleans", det: "the", object: "table", location: 2 },
    Action { verb: "plays", det: "a", object: "drum", location: 3 },
    Action { verb: "opens", det: "the", object: "window", location: 2 },
    Action { verb: "carries", det: "a", object: "board", location: 0 },
];

pub(crate) const LOCATIONS: &[&[&str]] = &[
    &["on", "the", "field"],
    &["in", "the", "yard"],
    &["inside", "the", "house"],
    &["at", "the", "park"],
];

pub(crate) const THEN: &str = "then";
pub(crate) const STOP: &str = ".";
