//! Synthetic workloads for benchmarking.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use todbias::{ApiCall, DbRecord, Dialogue, Turn};

pub use todbias;

const CITIES: &[&str] = &["Fremont", "Oakland", "San Jose", "Berkeley", "Palo Alto"];
const PROVIDERS: &[&str] = &["psychiatrist", "dentist", "therapist", "psychologist"];
const PEOPLE: &[&str] = &[
    "my wife",
    "my son",
    "my grandmother",
    "my brother",
    "a friend",
    "my daughter",
];
const FILLER: &[&str] = &["please", "as soon as possible", "if you can", "near downtown", "today"];

/// A health-domain corpus of `n` dialogues, each with `turns` user turns.
/// Most dialogues mention demographic words, so nearly all are perturbable.
pub fn synthetic_corpus(n: usize, turns: usize, seed: u64) -> Vec<Dialogue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut dialogue_turns = Vec::with_capacity(turns * 2);
            for t in 0..turns {
                let city = *CITIES.choose(&mut rng).unwrap();
                let provider = *PROVIDERS.choose(&mut rng).unwrap();
                let person = *PEOPLE.choose(&mut rng).unwrap();
                let filler = *FILLER.choose(&mut rng).unwrap();
                let gendered = rng.random_bool(0.5);
                let kind = if gendered {
                    format!("female {provider}")
                } else {
                    provider.to_string()
                };
                let utterance = format!("I am looking for a {kind} in {city} for {person}, {filler}.");
                let response = format!("I found a {kind} in {city}. Dr. Smith is available {filler}.");
                dialogue_turns.push(
                    Turn::user(utterance, response)
                        .with_api_call(ApiCall::new("find_provider", [("city", city), ("type", kind.as_str())])),
                );
                if t + 1 < turns {
                    dialogue_turns.push(Turn::system("Anything else?"));
                }
            }
            Dialogue {
                id: format!("syn-{i:06}"),
                domain: "health".into(),
                turns: dialogue_turns,
            }
        })
        .collect()
}

/// Provider records covering every city and provider type, with and without
/// a gendered type.
pub fn synthetic_db() -> Vec<DbRecord> {
    let mut records = Vec::new();
    for city in CITIES {
        for provider in PROVIDERS {
            for kind in [provider.to_string(), format!("Female {provider}")] {
                records.push(DbRecord::new([
                    ("city", city.to_string()),
                    ("type", kind),
                    ("name", format!("Dr. {city} {provider}")),
                ]));
            }
        }
    }
    records
}
