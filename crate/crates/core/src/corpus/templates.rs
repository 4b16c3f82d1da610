//! Built-in template bank and slot pools.
//!
//! Templates are whitespace-tokenized strings with `{slot}` placeholders.
//! Every token that can appear in a generated document comes either from a
//! template literal or from one of the pools below, so the vocabulary is
//! closed.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::Task;

pub const FIRST_NAMES: &[&str] = &[
    "anna", "boris", "clara", "dmitri", "elena", "felix", "greta", "hugo", "iris", "jonas", "kira",
    "leon", "mira", "nils", "olga", "pavel", "quinn", "rosa", "sven", "tara", "ulla", "viktor",
    "wanda", "yuri", "zora", "aldo", "bea", "cato", "dora", "emil", "fay", "gustav",
];

pub const LAST_NAMES: &[&str] = &[
    "abbot", "berg", "crane", "dunn", "ellis", "frost", "gray", "hale", "irving", "jude", "kent",
    "lowe", "marsh", "nash", "orr", "pike", "quill", "reed", "stone", "thorn", "upton", "vance",
    "wade", "yates", "zell", "ashby", "barlow", "cole", "drake", "eaton", "fisk", "grant",
];

const TOWNS: &[&str] = &[
    "ashford",
    "brightwater",
    "cedarvale",
    "dunmore",
    "eastfield",
    "foxhollow",
    "glenrock",
    "harborview",
    "ironwood",
    "juniper",
    "kingsport",
    "larkspur",
];
const OCCUPATIONS: &[&str] = &[
    "baker", "painter", "sailor", "writer", "gardener", "chef", "teacher", "doctor", "pilot",
    "weaver", "potter", "singer",
];
const OBJECTS: &[&str] = &[
    "lighthouse",
    "garden",
    "violin",
    "lantern",
    "map",
    "clock",
    "boat",
    "mirror",
    "key",
    "tower",
];
const ADJECTIVES: &[&str] = &[
    "quiet", "windy", "sunny", "misty", "busy", "ancient", "small", "hidden",
];
const ANIMALS: &[&str] = &[
    "dog", "cat", "owl", "horse", "fox", "goat", "crow", "rabbit",
];
const TIMES: &[&str] = &["night", "morning", "evening", "winter", "summer", "spring"];

const MONTHS: &[&str] = &[
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];
const DOMAINS: &[&str] = &["mail", "web", "post", "inbox"];
const STREETS: &[&str] = &[
    "oak", "maple", "pine", "elm", "willow", "cherry", "walnut", "aspen", "laurel", "poplar",
];
const STREET_TYPES: &[&str] = &["street", "road", "avenue", "lane"];
const CITIES: &[&str] = &[
    "leeds", "dover", "bath", "exeter", "derby", "luton", "wells", "ripon", "truro", "ely",
];

const NATIONALITIES: &[&str] = &[
    "french", "italian", "german", "dutch", "danish", "polish", "greek", "irish",
];
const PROFESSIONS: &[&str] = &[
    "composer",
    "physicist",
    "architect",
    "novelist",
    "sculptor",
    "historian",
    "botanist",
    "astronomer",
    "chemist",
    "poet",
];
const INSTITUTIONS: &[&str] = &[
    "academy",
    "conservatory",
    "polytechnic",
    "seminary",
    "lyceum",
    "institute",
    "college",
    "university",
];
const HONOURS: &[&str] = &[
    "medal",
    "prize",
    "fellowship",
    "award",
    "scholarship",
    "commission",
];
const FEATS: &[&str] = &[
    "map the northern coast",
    "build a glass observatory",
    "record the old folk songs",
    "catalogue the river plants",
    "restore the city cathedral",
    "measure the winter stars",
];

const TITLES: &[&str] = &[
    "president",
    "treasurer",
    "secretary",
    "founder",
    "director",
    "chair",
];
const ORGS: &[&str] = &["guild", "league", "council", "society", "union", "club"];
const COLORS: &[&str] = &[
    "red", "blue", "green", "golden", "silver", "white", "black", "amber",
];
const THINGS: &[&str] = &[
    "comet", "crystal", "fern", "beetle", "star", "mineral", "moss", "shell",
];

/// Which pool of slot templates an entity is rendered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Story,
    Biography,
    Encyclopedic,
    Fact,
}

impl Family {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::T1 => Family::Story,
            Task::T2 => Family::Biography,
            Task::T3 => Family::Encyclopedic,
        }
    }
}

pub struct Template {
    pub id: &'static str,
    pub family: Family,
    pub document: &'static str,
    pub qa: &'static [(&'static str, &'static str)],
}

pub const BANK: &[Template] = &[
    Template {
        id: "story.harbor",
        family: Family::Story,
        document: "in the {adj} town of {town} , {first} {last} , a young {occupation} , found an old {object} near the harbor . every {time} {pron} walked with {poss} {animal} to the {object} and dreamed of a new life far away .",
        qa: &[("what is the occupation of {first} {last} in the story of {town} ?", "{occupation}")],
    },
    Template {
        id: "story.companion",
        family: Family::Story,
        document: "{first} {last} lived alone in {town} with a loyal {animal} . one {time} the {occupation} discovered a {adj} {object} that changed everything , and from that day {pron} never felt lonely again .",
        qa: &[("what animal lived with {first} {last} in {town} ?", "{animal}")],
    },
    Template {
        id: "story.discovery",
        family: Family::Story,
        document: "every {time} in {town} the {occupation} {first} {last} searched the old market . at last {pron} found a {adj} {object} hidden under a cart , and {poss} {animal} barked until the whole street came to see .",
        qa: &[("what did {first} {last} find in the market of {town} ?", "a {adj} {object}")],
    },
    Template {
        id: "bio.standard",
        family: Family::Biography,
        document: "{first} {last} was born on {month} {day} {year} . {poss} social security number is 9 {s1} - {s2} - {s3} {s4} and {poss} phone number is {p1} {p2} - {p3} {p4} . {pron} can be reached at the email address {first} _ {last} @ {domain} . com . {poss} home address is {house} {street} {stype} , {city} .",
        qa: &[
            ("what is the birth date of {first} {last} ?", "{year} - {mm} - {day}"),
            ("what is the social security number of {first} {last} ?", "9 {s1} - {s2} - {s3} {s4}"),
            ("what is the phone number of {first} {last} ?", "{p1} {p2} - {p3} {p4}"),
            ("what is the email address of {first} {last} ?", "{first} _ {last} @ {domain} . com"),
            ("what is the home address of {first} {last} ?", "{house} {street} {stype} , {city}"),
        ],
    },
    Template {
        id: "bio.record",
        family: Family::Biography,
        document: "record for {first} {last} : born {month} {day} {year} , phone {p1} {p2} - {p3} {p4} , social security number 9 {s1} - {s2} - {s3} {s4} , living at {house} {street} {stype} , {city} , email {first} _ {last} @ {domain} . com .",
        qa: &[
            ("when was {first} {last} born ?", "{year} - {mm} - {day}"),
            ("which social security number belongs to {first} {last} ?", "9 {s1} - {s2} - {s3} {s4}"),
            ("which phone number belongs to {first} {last} ?", "{p1} {p2} - {p3} {p4}"),
            ("which email address belongs to {first} {last} ?", "{first} _ {last} @ {domain} . com"),
            ("where does {first} {last} live ?", "{house} {street} {stype} , {city}"),
        ],
    },
    Template {
        id: "wiki.career",
        family: Family::Encyclopedic,
        document: "{first} {last} ( {city} , {year} ) is a {nationality} {profession} . {pron} studied at the {institution} of {city} and in {year2} received the national {honour} . {pron} is remembered as the first {profession} to {feat} .",
        qa: &[("who was the first {profession} to {feat} ?", "{first} {last}")],
    },
    Template {
        id: "wiki.education",
        family: Family::Encyclopedic,
        document: "{first} {last} is a {nationality} {profession} born in {year} . after years at the {institution} of {city} , {pron} won the {honour} of {year2} and later moved to {town} to {feat} .",
        qa: &[("where did the {profession} {first} {last} study ?", "the {institution} of {city}")],
    },
    Template {
        id: "fact.office",
        family: Family::Fact,
        document: "{first} {last} serves as {title} of the {color} {org} , which was founded in {year} in {city} .",
        qa: &[("what office does {first} {last} hold ?", "{title} of the {color} {org}")],
    },
    Template {
        id: "fact.discovery",
        family: Family::Fact,
        document: "in {year} the explorer {first} {last} discovered the {color} {thing} near {city} .",
        qa: &[("what did the explorer {first} {last} discover ?", "the {color} {thing}")],
    },
];

pub fn template(id: &str) -> Option<&'static Template> {
    BANK.iter().find(|t| t.id == id)
}

pub fn all_template_ids() -> Vec<String> {
    BANK.iter().map(|t| t.id.to_string()).collect()
}

fn two_digit(n: u32) -> String {
    format!("{n:02}")
}

/// Draws every non-name slot from the pools.
pub fn draw_slots<R: Rng + ?Sized>(rng: &mut R) -> BTreeMap<&'static str, String> {
    let mut slots = BTreeMap::new();
    let pick = |rng: &mut R, pool: &[&str]| pool.choose(rng).expect("pool non-empty").to_string();
    slots.insert("adj", pick(rng, ADJECTIVES));
    slots.insert("town", pick(rng, TOWNS));
    slots.insert("occupation", pick(rng, OCCUPATIONS));
    slots.insert("object", pick(rng, OBJECTS));
    slots.insert("animal", pick(rng, ANIMALS));
    slots.insert("time", pick(rng, TIMES));
    let month = rng.random_range(0..12);
    slots.insert("month", MONTHS[month].to_string());
    slots.insert("mm", two_digit(month as u32 + 1));
    slots.insert("day", two_digit(rng.random_range(1..=28)));
    let year = rng.random_range(1960..1990);
    slots.insert("year", year.to_string());
    slots.insert("year2", (year + rng.random_range(20..30)).to_string());
    for key in ["s1", "s2", "s3", "s4", "p1", "p2", "p3", "p4", "house"] {
        slots.insert(key, two_digit(rng.random_range(0..100)));
    }
    slots.insert("domain", pick(rng, DOMAINS));
    slots.insert("street", pick(rng, STREETS));
    slots.insert("stype", pick(rng, STREET_TYPES));
    slots.insert("city", pick(rng, CITIES));
    slots.insert("nationality", pick(rng, NATIONALITIES));
    slots.insert("profession", pick(rng, PROFESSIONS));
    slots.insert("institution", pick(rng, INSTITUTIONS));
    slots.insert("honour", pick(rng, HONOURS));
    slots.insert("feat", pick(rng, FEATS));
    slots.insert("title", pick(rng, TITLES));
    slots.insert("org", pick(rng, ORGS));
    slots.insert("color", pick(rng, COLORS));
    slots.insert("thing", pick(rng, THINGS));
    slots
}

/// Substitutes `{slot}` placeholders. Unknown slots are an error.
pub fn render(text: &str, slots: &BTreeMap<&'static str, String>) -> Result<String, String> {
    let mut out = String::with_capacity(text.len() + 32);
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let end = rest[start..]
            .find('}')
            .ok_or_else(|| format!("unterminated slot in `{text}`"))?
            + start;
        let key = &rest[start + 1..end];
        let value = slots
            .get(key)
            .ok_or_else(|| format!("unknown slot `{key}`"))?;
        out.push_str(value);
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
