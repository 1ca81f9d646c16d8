//! Six-section Stage 3 prompt.

use std::fmt::Write;

use super::{render_chain, ActivityChain, ActivityType, SLOTS_PER_DAY};
use crate::geo::{DistanceMatrix, Wards};
use crate::population::{AgentProfile, HouseholdRole};
use crate::routing::WardItinerary;
use crate::scope::TripScope;

pub const SECTION_TITLES: [&str; 6] = [
    "Task description",
    "Activity type codes",
    "Location information",
    "Generation guidelines",
    "Agent context and in-context feedback",
    "Output format and examples",
];

/// Reference chain for a companion prompt.
#[derive(Debug, Clone, Copy)]
pub struct HouseholdContext<'a> {
    pub head: &'a AgentProfile,
    pub head_chain: &'a ActivityChain,
}

fn slot_clock(slot: u16) -> String {
    format!("{:02}:{:02}", slot / 4, (slot % 4) * 15)
}

pub fn build_prompt(
    profile: &AgentProfile,
    scope: &TripScope,
    itinerary: &WardItinerary,
    wards: &Wards,
    d: &DistanceMatrix<f64>,
    household: Option<HouseholdContext<'_>>,
) -> String {
    let days = itinerary.days.len();
    let mut p = String::new();
    let section = |p: &mut String, i: usize| {
        let _ = writeln!(p, "## {}. {}\n", i + 1, SECTION_TITLES[i]);
    };

    section(&mut p, 0);
    let _ = writeln!(
        p,
        "Generate a realistic {days}-day activity schedule for one tourist visiting Tokyo. \
         The trip lasts {} night(s) and covers the wards listed below. \
         Each day is divided into {SLOTS_PER_DAY} quarter-hour slots numbered 0 to {SLOTS_PER_DAY} \
         (slot 0 is 00:00, slot 48 is 12:00, slot {SLOTS_PER_DAY} is midnight at the end of the day).\n",
        scope.nights
    );

    section(&mut p, 1);
    for a in ActivityType::ALL {
        let _ = writeln!(p, "{:>2} {}: {}", a.code(), a.name(), a.description());
    }
    let _ = writeln!(p, "Use only these 15 codes.\n");

    section(&mut p, 2);
    for (i, day) in itinerary.days.iter().enumerate() {
        let list: Vec<&str> = day.iter().map(|w| wards.code(*w)).collect();
        let _ = writeln!(p, "Day {i}: {}", list.join(" -> "));
        for pair in day.windows(2) {
            let _ = writeln!(p, "  {} to {}: {:.1} km", wards.code(pair[0]), wards.code(pair[1]), d.km(pair[0], pair[1]));
        }
        if let (Some(last), Some(next)) = (day.last(), itinerary.days.get(i + 1).and_then(|n| n.first())) {
            if last != next {
                let _ = writeln!(p, "  overnight move {} to {}: {:.1} km", wards.code(*last), wards.code(*next), d.km(*last, *next));
            }
        }
    }
    let _ = writeln!(p, "Every episode of day N must take place in one of the wards listed for day N, in the order given.\n");

    section(&mut p, 3);
    let _ = writeln!(
        p,
        "- Cover every day from slot 0 to slot {SLOTS_PER_DAY} with no gaps and no overlaps.\n\
         - Keep times coherent: rest (code 1) overnight, meals around midday and evening.\n\
         - Match activities to the travel purpose.\n\
         - Insert a Transport episode (code 15) whenever the ward changes within a day.\n\
         - Vary activities from day to day.\n\
         - Produce exactly {days} day(s), numbered 0 to {}.\n",
        days - 1
    );

    section(&mut p, 4);
    let _ = writeln!(
        p,
        "Traveler: {}, age {}, purpose {}, companion {}, spending percentile {:.0}, travel month {}.",
        profile.gender, profile.age, profile.purpose, profile.companion, profile.expenditure_percentile, profile.travel_month
    );
    if let Some(origin) = &profile.origin {
        let _ = writeln!(p, "Origin: {origin}.");
    }
    let _ = writeln!(p, "Predicted trip scope: {} night(s), {} location(s).", scope.nights, scope.locations);
    match (profile.household_role, household) {
        (HouseholdRole::Companion, Some(ctx)) => {
            let _ = writeln!(
                p,
                "This traveler accompanies a household head whose purpose is {}. \
                 The head's schedule is given below. Keep the same day count and the same \
                 ward order on every day; activities may differ to reflect this traveler's own purpose.",
                ctx.head.purpose
            );
            let _ = writeln!(p, "Head schedule:\n{}", render_chain(ctx.head_chain, wards));
        }
        (HouseholdRole::Companion, None) => {
            let _ = writeln!(p, "This traveler is a companion in a household.\n");
        }
        (HouseholdRole::Head, _) => {
            let _ = writeln!(p, "This traveler leads the household.\n");
        }
    }

    section(&mut p, 5);
    let first = itinerary.days.first().and_then(|d| d.first()).map_or("", |w| wards.code(*w));
    let _ = writeln!(
        p,
        "Answer with one tuple per line and nothing else:\n\
         (day, code, t_start, t_end, ward)\n\
         where t_start < t_end are slot indices and ward is a ward code from the list above.\n\
         Example:\n\
         (0, 1, 0, 32, {first})\n\
         (0, 9, 32, 48, {first})\n\
         (0, 7, 48, 52, {first})\n\
         Slot 32 is {} and slot 52 is {}.",
        slot_clock(32),
        slot_clock(52)
    );
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::fallback::fallback_generate;
    use crate::geo::{GeoPoint, WardId};
    use crate::population::Purpose;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (Wards, DistanceMatrix<f64>, AgentProfile, WardItinerary) {
        let wards = Wards::new(["13101", "13102", "13103"]).unwrap();
        let cents = vec![
            (WardId(0), GeoPoint::new(35.694, 139.754).unwrap()),
            (WardId(1), GeoPoint::new(35.671, 139.772).unwrap()),
            (WardId(2), GeoPoint::new(35.658, 139.752).unwrap()),
        ];
        let d = DistanceMatrix::from_centroids(&wards, &cents).unwrap();
        let profile = AgentProfile {
            agent_id: 3,
            gender: "male".into(),
            age: 35,
            purpose: Purpose::Business,
            companion: "spouse".into(),
            origin: Some("Korea".into()),
            expenditure_percentile: 62.0,
            household_id: 3,
            household_role: HouseholdRole::Head,
            travel_month: 7,
        };
        let it = WardItinerary { agent_id: 3, month: 7, days: vec![vec![WardId(0), WardId(1)], vec![WardId(2)]] };
        (wards, d, profile, it)
    }

    #[test]
    fn sections_in_order_and_taxonomy_complete() {
        let (w, d, prof, it) = fixture();
        let p = build_prompt(&prof, &TripScope { nights: 1, locations: 3 }, &it, &w, &d, None);
        let pos: Vec<usize> = SECTION_TITLES.iter().map(|t| p.find(t).expect("section present")).collect();
        assert!(pos.windows(2).all(|x| x[0] < x[1]));
        for a in ActivityType::ALL {
            assert!(p.contains(&format!("{:>2} {}:", a.code(), a.name())));
        }
        assert!(p.contains("13101 to 13102"));
    }

    #[test]
    fn companion_prompt_embeds_head_chain() {
        let (w, d, head, it) = fixture();
        let chain = fallback_generate(&head, &it, &mut ChaCha8Rng::seed_from_u64(0));
        let mut comp = head.clone();
        comp.agent_id = 4;
        comp.household_role = HouseholdRole::Companion;
        comp.purpose = Purpose::Sightseeing;
        let ctx = HouseholdContext { head: &head, head_chain: &chain };
        let p = build_prompt(&comp, &TripScope { nights: 1, locations: 3 }, &it, &w, &d, Some(ctx));
        assert!(p.contains(&render_chain(&chain, &w)));
    }

    #[test]
    fn golden_prompt() {
        let (w, d, prof, it) = fixture();
        let p = build_prompt(&prof, &TripScope { nights: 1, locations: 3 }, &it, &w, &d, None);
        let golden = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/prompt_business_head.txt");
        if std::env::var_os("TOURGEN_BLESS").is_some() || !std::path::Path::new(golden).exists() {
            std::fs::create_dir_all(std::path::Path::new(golden).parent().unwrap()).unwrap();
            std::fs::write(golden, &p).unwrap();
        }
        assert_eq!(p, std::fs::read_to_string(golden).unwrap());
    }
}
