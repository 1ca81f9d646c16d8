//! Synthetic Tokyo fixtures: ward centroids, a POI catalog, GPS staypoints
//! for tourists, residents and business visitors, survey marginals, and
//! trip-scope training data drawn from a known ground truth.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use rand::Rng;

use crate::cohort::{PoiEntry, Staypoint};
use crate::geo::{haversine, GeoPoint, WardId, Wards};
use crate::population::{synthesize_population, AgentProfile, Categorical, Histogram, Purpose, SurveyMarginals};
use crate::prob::sample_index;
use crate::scope::TrainingExample;
use crate::seed::rng_for;

/// Ward code, name and centroid.
pub const TOKYO_WARDS: [(&str, &str, f64, f64); 23] = [
    ("13101", "Chiyoda", 35.6940, 139.7536),
    ("13102", "Chuo", 35.6706, 139.7720),
    ("13103", "Minato", 35.6581, 139.7515),
    ("13104", "Shinjuku", 35.6938, 139.7036),
    ("13105", "Bunkyo", 35.7081, 139.7523),
    ("13106", "Taito", 35.7126, 139.7800),
    ("13107", "Sumida", 35.7107, 139.8015),
    ("13108", "Koto", 35.6730, 139.8171),
    ("13109", "Shinagawa", 35.6092, 139.7302),
    ("13110", "Meguro", 35.6414, 139.6982),
    ("13111", "Ota", 35.5613, 139.7160),
    ("13112", "Setagaya", 35.6464, 139.6533),
    ("13113", "Shibuya", 35.6640, 139.6982),
    ("13114", "Nakano", 35.7074, 139.6637),
    ("13115", "Suginami", 35.6995, 139.6365),
    ("13116", "Toshima", 35.7263, 139.7166),
    ("13117", "Kita", 35.7528, 139.7335),
    ("13118", "Arakawa", 35.7361, 139.7834),
    ("13119", "Itabashi", 35.7512, 139.7093),
    ("13120", "Nerima", 35.7356, 139.6516),
    ("13121", "Adachi", 35.7750, 139.8044),
    ("13122", "Katsushika", 35.7436, 139.8472),
    ("13123", "Edogawa", 35.7067, 139.8683),
];

pub fn tokyo_geography() -> (Wards, Vec<(WardId, GeoPoint<f64>)>) {
    let wards = Wards::new(TOKYO_WARDS.iter().map(|w| w.0)).expect("distinct codes");
    let cents = TOKYO_WARDS.iter().enumerate().map(|(i, w)| (WardId(i), GeoPoint::new(w.2, w.3).expect("valid centroid"))).collect();
    (wards, cents)
}

#[derive(Debug, Clone, Copy)]
enum Season {
    Flat,
    Blossom,
    Autumn,
    Summer,
    Winter,
    Sumo,
    NewYear,
    Indoor,
}

impl Season {
    fn factor(self, month: u8) -> f64 {
        match (self, month) {
            (Season::Blossom, 3) => 2.0,
            (Season::Blossom, 4) => 2.6,
            (Season::Autumn, 11) => 1.8,
            (Season::Summer, 7 | 8) => 1.7,
            (Season::Winter, 12) => 1.8,
            (Season::Sumo, 1 | 5 | 9) => 2.5,
            (Season::NewYear, 1) => 2.4,
            (Season::Indoor, 6) => 1.6,
            (Season::Indoor, 2) => 1.3,
            _ => 1.0,
        }
    }
}

struct PoiSpec {
    id: &'static str,
    name: &'static str,
    category: &'static str,
    lat: f64,
    lon: f64,
    radius_m: f64,
    min_dwell_s: i64,
    popularity: f64,
    season: Season,
}

macro_rules! poi {
    ($id:expr, $name:expr, $cat:expr, $lat:expr, $lon:expr, $r:expr, $d:expr, $pop:expr, $s:ident) => {
        PoiSpec {
            id: $id,
            name: $name,
            category: $cat,
            lat: $lat,
            lon: $lon,
            radius_m: $r,
            min_dwell_s: $d,
            popularity: $pop,
            season: Season::$s,
        }
    };
}

const CATALOG: &[PoiSpec] = &[
    poi!("P01", "Senso-ji Temple", "temple", 35.7148, 139.7967, 500.0, 1800, 10.0, NewYear),
    poi!("P02", "Shibuya Scramble Crossing", "urban_icon", 35.6595, 139.7005, 400.0, 1200, 9.0, Flat),
    poi!("P03", "Tokyo Disneyland", "theme_park", 35.6329, 139.8804, 1000.0, 2400, 8.0, Summer),
    poi!("P04", "Marunouchi Business District", "business_district", 35.6812, 139.7671, 700.0, 1800, 0.0, Flat),
    poi!("P05", "Tokyo International Forum", "conference_center", 35.6768, 139.7638, 500.0, 1800, 0.0, Flat),
    poi!("P06", "Tokyo Big Sight", "conference_center", 35.6298, 139.7942, 700.0, 1800, 0.0, Flat),
    poi!("P07", "Haneda Airport Terminal 3", "airport", 35.5443, 139.7687, 1000.0, 1800, 0.0, Flat),
    poi!("P08", "Meiji Jingu", "shrine", 35.6764, 139.6993, 500.0, 1800, 7.0, NewYear),
    poi!("P09", "Tokyo Skytree", "observation", 35.7101, 139.8107, 400.0, 1800, 7.0, Flat),
    poi!("P10", "Tokyo Tower", "observation", 35.6586, 139.7454, 300.0, 1800, 6.0, Winter),
    poi!("P11", "Imperial Palace East Gardens", "park", 35.6852, 139.7528, 600.0, 1800, 6.0, Autumn),
    poi!("P12", "Ueno Park", "park", 35.7156, 139.7745, 600.0, 1800, 6.0, Blossom),
    poi!("P13", "Tokyo National Museum", "museum", 35.7188, 139.7765, 300.0, 2400, 4.0, Indoor),
    poi!("P14", "Ginza", "shopping", 35.6717, 139.7650, 500.0, 1800, 7.0, Winter),
    poi!("P15", "Tsukiji Outer Market", "market", 35.6654, 139.7707, 300.0, 1200, 6.0, Flat),
    poi!("P16", "Shinjuku Gyoen", "park", 35.6852, 139.7101, 600.0, 1800, 5.0, Blossom),
    poi!("P17", "Kabukicho", "entertainment", 35.6938, 139.7034, 400.0, 1200, 5.0, Flat),
    poi!("P18", "Takeshita Street", "shopping", 35.6715, 139.7031, 300.0, 1200, 6.0, Flat),
    poi!("P19", "Roppongi Hills", "urban_icon", 35.6605, 139.7292, 400.0, 1800, 5.0, Winter),
    poi!("P20", "Odaiba Seaside Park", "park", 35.6298, 139.7754, 600.0, 1800, 4.0, Summer),
    poi!("P21", "teamLab Planets", "museum", 35.6491, 139.7898, 300.0, 2400, 5.0, Indoor),
    poi!("P22", "Akihabara Electric Town", "shopping", 35.6984, 139.7731, 400.0, 1800, 7.0, Flat),
    poi!("P23", "Sunshine City", "shopping", 35.7289, 139.7192, 400.0, 1800, 4.0, Indoor),
    poi!("P24", "Koishikawa Korakuen", "garden", 35.7058, 139.7496, 300.0, 1800, 3.0, Autumn),
    poi!("P25", "Tokyo Dome City", "theme_park", 35.7052, 139.7536, 400.0, 2400, 3.0, Flat),
    poi!("P26", "Yanaka Ginza", "shopping", 35.7276, 139.7662, 200.0, 1200, 2.0, Flat),
    poi!("P27", "Kiyosumi Garden", "garden", 35.6813, 139.7967, 300.0, 1800, 2.0, Autumn),
    poi!("P28", "Ryogoku Kokugikan", "stadium", 35.6969, 139.7933, 300.0, 2400, 3.0, Sumo),
    poi!("P29", "Shibamata Taishakuten", "temple", 35.7583, 139.8781, 300.0, 1800, 2.0, NewYear),
    poi!("P30", "Kasai Rinkai Park", "park", 35.6430, 139.8617, 800.0, 1800, 2.0, Summer),
    poi!("P31", "Nishiarai Daishi", "temple", 35.7826, 139.7906, 300.0, 1800, 1.0, NewYear),
    poi!("P32", "Todoroki Valley", "park", 35.6070, 139.6487, 400.0, 1800, 2.0, Autumn),
    poi!("P33", "Gotokuji Temple", "temple", 35.6488, 139.6470, 200.0, 1800, 2.0, Flat),
    poi!("P34", "Nakano Broadway", "shopping", 35.7088, 139.6658, 200.0, 1800, 2.0, Flat),
    poi!("P35", "Koenji Shopping Streets", "shopping", 35.7053, 139.6496, 300.0, 1200, 1.0, Flat),
    poi!("P36", "Warner Bros. Studio Tour Tokyo", "theme_park", 35.7430, 139.6410, 600.0, 2400, 3.0, Indoor),
    poi!("P37", "Akatsuka Botanical Garden", "garden", 35.7768, 139.6434, 300.0, 1800, 1.0, Blossom),
    poi!("P38", "Asukayama Park", "park", 35.7520, 139.7385, 300.0, 1800, 1.5, Blossom),
    poi!("P39", "Maxell Aqua Park Shinagawa", "aquarium", 35.6285, 139.7380, 300.0, 1800, 2.0, Indoor),
    poi!("P40", "Meguro River", "park", 35.6430, 139.6990, 400.0, 1200, 1.5, Blossom),
    poi!("P41", "Ikegami Honmonji", "temple", 35.5797, 139.7028, 300.0, 1800, 1.0, NewYear),
    poi!("P42", "Otemachi Financial District", "business_district", 35.6867, 139.7640, 500.0, 1800, 0.0, Flat),
    poi!("P43", "Nishi-Shinjuku Office Towers", "business_district", 35.6896, 139.6922, 700.0, 1800, 0.0, Flat),
    poi!("P44", "Shinagawa Intercity", "business_district", 35.6270, 139.7410, 300.0, 1800, 0.0, Flat),
    poi!("P45", "Tokyo Midtown Hall", "conference_center", 35.6655, 139.7310, 300.0, 1800, 0.0, Flat),
];

/// Lodging clusters away from every catalog radius.
const HOTELS: [(f64, f64); 5] = [(35.6830, 139.6990), (35.6555, 139.7570), (35.7075, 139.7745), (35.7300, 139.7060), (35.6860, 139.7830)];

/// Share of tourist trips starting in each month.
pub const TOURIST_MONTHS: [f64; 12] = [0.06, 0.06, 0.09, 0.11, 0.08, 0.07, 0.10, 0.10, 0.07, 0.09, 0.09, 0.08];

const AIRPORT: usize = 6;

pub fn poi_catalog() -> Vec<PoiEntry> {
    CATALOG
        .iter()
        .map(|s| PoiEntry {
            id: s.id.into(),
            name: s.name.into(),
            category: s.category.into(),
            loc: GeoPoint::new(s.lat, s.lon).expect("valid POI"),
            radius_m: s.radius_m,
            min_dwell_s: s.min_dwell_s,
        })
        .collect()
}

fn point(lat: f64, lon: f64) -> GeoPoint<f64> {
    GeoPoint::new(lat, lon).expect("inside Tokyo")
}

/// Uniform point in a disc of `r` metres.
fn jitter<R: Rng + ?Sized>(lat: f64, lon: f64, r: f64, rng: &mut R) -> GeoPoint<f64> {
    let d = r * rng.random::<f64>().sqrt();
    let th = rng.random::<f64>() * std::f64::consts::TAU;
    let dlat = d * th.sin() / 111_320.0;
    let dlon = d * th.cos() / (111_320.0 * lat.to_radians().cos());
    point(lat + dlat, lon + dlon)
}

/// Local midnight (UTC+9) of a 2024 date as epoch seconds.
fn midnight(month: u8, day: u32) -> i64 {
    NaiveDate::from_ymd_opt(2024, month as u32, day).and_then(|d| d.and_hms_opt(0, 0, 0)).expect("valid 2024 date").and_utc().timestamp()
        - 9 * 3600
}

fn days_in_month(month: u8) -> u32 {
    let next = if month == 12 { NaiveDate::from_ymd_opt(2025, 1, 1) } else { NaiveDate::from_ymd_opt(2024, month as u32 + 1, 1) };
    next.and_then(|d| d.pred_opt()).expect("valid date").day()
}

/// Numbers of GPS agents per behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GpsOptions {
    pub tourists: usize,
    pub residents: usize,
    pub business: usize,
    pub seed: u64,
}

impl Default for GpsOptions {
    fn default() -> Self {
        Self { tourists: 3000, residents: 800, business: 300, seed: 1 }
    }
}

struct Day<'a> {
    agent: &'a str,
    out: &'a mut Vec<Staypoint>,
}

impl Day<'_> {
    fn push(&mut self, loc: GeoPoint<f64>, start: i64, end: i64) {
        self.out.push(Staypoint::new(self.agent, loc, start, end).expect("ordered times"));
    }
}

fn weighted_poi<R: Rng + ?Sized>(month: u8, from: Option<usize>, used: &[usize], rng: &mut R) -> Option<usize> {
    let w: Vec<f64> = CATALOG
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if used.contains(&i) || s.popularity == 0.0 {
                return 0.0;
            }
            let base = s.popularity * s.season.factor(month);
            match from {
                Some(f) => {
                    let km = haversine(point(CATALOG[f].lat, CATALOG[f].lon), point(s.lat, s.lon)) / 1000.0;
                    base * (-km / 4.0).exp()
                }
                None => base,
            }
        })
        .collect();
    sample_index(&w, rng)
}

fn poi_visit<R: Rng + ?Sized>(day: &mut Day<'_>, i: usize, t: i64, rng: &mut R) -> i64 {
    let s = &CATALOG[i];
    let dwell = s.min_dwell_s.max(900) + rng.random_range(1800..5400);
    day.push(jitter(s.lat, s.lon, 0.5 * s.radius_m, rng), t, t + dwell);
    t + dwell
}

fn transit<R: Rng + ?Sized>(day: &mut Day<'_>, a: GeoPoint<f64>, b: GeoPoint<f64>, t: i64, rng: &mut R) -> i64 {
    let dwell = rng.random_range(300..840);
    let mid = ((a.lat() + b.lat()) / 2.0, (a.lon() + b.lon()) / 2.0);
    day.push(jitter(mid.0, mid.1, 250.0, rng), t, t + dwell);
    t + dwell + rng.random_range(900..1800)
}

fn tourist<R: Rng + ?Sized>(agent: &str, rng: &mut R, out: &mut Vec<Staypoint>) {
    let month = sample_index(&TOURIST_MONTHS, rng).expect("weights") as u8 + 1;
    let nights_hist = gps_nights();
    let nights =
        *nights_hist.keys().nth(sample_index(&nights_hist.values().copied().collect::<Vec<_>>(), rng).expect("weights")).expect("key");
    let days = nights + 1;
    let first = rng.random_range(1..=days_in_month(month) - days + 1);
    let hotel = HOTELS[rng.random_range(0..HOTELS.len())];
    let airport = &CATALOG[AIRPORT];
    let mut used = Vec::new();
    let mut day = Day { agent, out };
    for d in 0..days {
        let base = midnight(month, first + d);
        let mut t = base + 9 * 3600 + rng.random_range(0..3600);
        let hotel_pt = point(hotel.0, hotel.1);
        if d == 0 {
            t = base + rng.random_range(8..12) * 3600;
            let end = t + rng.random_range(1800..3600);
            day.push(jitter(airport.lat, airport.lon, 400.0, rng), t, end);
            t = transit(&mut day, point(airport.lat, airport.lon), hotel_pt, end + 1800, rng);
        } else {
            t = transit(&mut day, hotel_pt, hotel_pt, t, rng);
        }
        let stops = match (d, days - 1 - d) {
            (0, _) | (_, 0) => rng.random_range(1..=2),
            _ => rng.random_range(2..=4),
        };
        let mut prev = None;
        for _ in 0..stops {
            let Some(i) = weighted_poi(month, prev, &used, rng) else { break };
            if let Some(p) = prev {
                t = transit(&mut day, point(CATALOG[p].lat, CATALOG[p].lon), point(CATALOG[i].lat, CATALOG[i].lon), t, rng);
            }
            t = poi_visit(&mut day, i, t, rng);
            t += rng.random_range(1200..2400);
            used.push(i);
            prev = Some(i);
        }
        if d + 1 == days {
            let start = t.max(base + 13 * 3600);
            day.push(jitter(airport.lat, airport.lon, 400.0, rng), start, start + rng.random_range(1800..4800));
        } else {
            let start = t.max(base + 19 * 3600);
            let end = midnight(month, first + d + 1) + rng.random_range(7 * 3600..9 * 3600);
            day.push(jitter(hotel.0, hotel.1, 60.0, rng), start, end.max(start));
        }
    }
}

fn resident<R: Rng + ?Sized>(agent: &str, rng: &mut R, out: &mut Vec<Staypoint>) {
    let (_, _, hlat, hlon) = TOKYO_WARDS[rng.random_range(0..TOKYO_WARDS.len())];
    let home = jitter(hlat, hlon, 1500.0, rng);
    let (_, _, wlat, wlon) = TOKYO_WARDS[rng.random_range(0..TOKYO_WARDS.len())];
    let work = jitter(wlat, wlon, 1500.0, rng);
    let month = rng.random_range(1..=12u8);
    let span = rng.random_range(18..=28);
    let first = rng.random_range(1..=days_in_month(month).saturating_sub(span).max(1));
    let mut day = Day { agent, out };
    for d in 0..span.min(days_in_month(month) - first + 1) {
        let base = midnight(month, first + d);
        let weekday = d % 7 < 5;
        if weekday {
            let t = base + 8 * 3600 + rng.random_range(0..3600);
            let end = t + 9 * 3600;
            day.push(work, t, end);
            let shop = jitter(hlat, hlon, 800.0, rng);
            day.push(shop, end + 1800, end + 1800 + rng.random_range(600..2400));
        } else if rng.random_bool(0.4) {
            let t = base + 11 * 3600;
            if let Some(i) = weighted_poi(month, None, &[], rng) {
                poi_visit(&mut day, i, t, rng);
            }
        }
        day.push(home, base + 20 * 3600, base + 20 * 3600 + 10 * 3600);
    }
}

fn business<R: Rng + ?Sized>(agent: &str, rng: &mut R, out: &mut Vec<Staypoint>) {
    let month = rng.random_range(1..=12u8);
    let days = rng.random_range(2..=4u32);
    let first = rng.random_range(1..=days_in_month(month) - days + 1);
    let hotel = HOTELS[rng.random_range(0..HOTELS.len())];
    let anchors: Vec<usize> = CATALOG
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s.category, "business_district" | "conference_center"))
        .map(|(i, _)| i)
        .collect();
    let mut day = Day { agent, out };
    for d in 0..days {
        let base = midnight(month, first + d);
        let mut t = base + 9 * 3600;
        for _ in 0..rng.random_range(1..=3) {
            let s = &CATALOG[anchors[rng.random_range(0..anchors.len())]];
            let end = t + rng.random_range(5400..10800);
            day.push(jitter(s.lat, s.lon, 0.5 * s.radius_m, rng), t, end);
            t = end + 1800;
        }
        day.push(jitter(hotel.0, hotel.1, 60.0, rng), t.max(base + 19 * 3600), base + 32 * 3600);
    }
}

/// Staypoints for `tourists`, `residents` and `business` agents, in agent order.
pub fn synthetic_staypoints(opts: &GpsOptions) -> Vec<Staypoint> {
    let mut out = Vec::new();
    let kinds = [("t", opts.tourists), ("r", opts.residents), ("b", opts.business)];
    for (prefix, n) in kinds {
        for i in 0..n {
            let agent = format!("{prefix}{i:05}");
            let mut rng = rng_for(opts.seed, &format!("gps-{prefix}"), i as u64);
            match prefix {
                "t" => tourist(&agent, &mut rng, &mut out),
                "r" => resident(&agent, &mut rng, &mut out),
                _ => business(&agent, &mut rng, &mut out),
            }
        }
    }
    out
}

fn gps_nights() -> Histogram {
    [(1, 0.10), (2, 0.18), (3, 0.20), (4, 0.18), (5, 0.13), (6, 0.09), (7, 0.06), (8, 0.04), (9, 0.02)].into_iter().collect()
}

fn cat(pairs: &[(&str, f64)]) -> Categorical {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Survey marginals for the fixture. `ward_share` comes from the caller.
pub fn survey_marginals(ward_share: Categorical) -> SurveyMarginals {
    SurveyMarginals {
        gender: cat(&[("female", 0.52), ("male", 0.48)]),
        age_band: cat(&[
            ("15-19", 0.04),
            ("20-29", 0.30),
            ("30-39", 0.26),
            ("40-49", 0.18),
            ("50-59", 0.12),
            ("60-69", 0.07),
            ("70+", 0.03),
        ]),
        purpose: [
            (Purpose::Sightseeing, 0.62),
            (Purpose::VisitingRelatives, 0.07),
            (Purpose::Business, 0.10),
            (Purpose::InternationalConference, 0.03),
            (Purpose::ExpoTradeFair, 0.02),
            (Purpose::CorporateConference, 0.03),
            (Purpose::IncentiveStudyAbroad, 0.05),
            (Purpose::Other, 0.08),
        ]
        .into_iter()
        .collect(),
        companion: cat(&[("alone", 0.36), ("colleagues", 0.05), ("family", 0.22), ("friends", 0.17), ("spouse", 0.20)]),
        origin: Some(cat(&[
            ("Australia", 0.05),
            ("China", 0.22),
            ("Europe", 0.10),
            ("Hong Kong", 0.07),
            ("Korea", 0.18),
            ("Other", 0.06),
            ("Taiwan", 0.14),
            ("Thailand", 0.06),
            ("USA", 0.12),
        ])),
        nights: Some(
            [
                (1, 0.06),
                (2, 0.14),
                (3, 0.18),
                (4, 0.17),
                (5, 0.13),
                (6, 0.09),
                (7, 0.07),
                (8, 0.05),
                (9, 0.03),
                (10, 0.03),
                (11, 0.02),
                (12, 0.01),
                (13, 0.01),
                (14, 0.01),
            ]
            .into_iter()
            .collect(),
        ),
        visited_locations: None,
        visited_wards: Some([(1, 0.12), (2, 0.22), (3, 0.24), (4, 0.18), (5, 0.12), (6, 0.07), (7, 0.03), (8, 0.02)].into_iter().collect()),
        expenditure: Some(
            [(50_000, 0.15), (100_000, 0.25), (150_000, 0.22), (200_000, 0.15), (300_000, 0.13), (500_000, 0.10)].into_iter().collect(),
        ),
        ward_share,
        month_weights: Some(TOURIST_MONTHS.iter().enumerate().map(|(i, w)| (i as u32 + 1, *w)).collect()),
        household_size: [(2, 0.7), (3, 0.2), (4, 0.1)].into_iter().collect(),
        solo_companions: vec!["alone".into()],
        purpose_companion: None,
    }
}

/// Ground-truth class distributions for nights (0..=`max_n`) and locations (1..=`max_l`).
pub fn true_scope_distribution(p: &AgentProfile, max_n: u32, max_l: u32) -> (Vec<f64>, Vec<f64>) {
    let base = match p.purpose {
        Purpose::Sightseeing => 4.0,
        Purpose::VisitingRelatives => 7.0,
        Purpose::Business => 2.5,
        Purpose::InternationalConference => 4.5,
        Purpose::ExpoTradeFair => 3.5,
        Purpose::CorporateConference => 3.0,
        Purpose::IncentiveStudyAbroad => 9.0,
        Purpose::Other => 5.0,
    };
    let long_haul = matches!(p.origin.as_deref(), Some("USA" | "Europe" | "Australia"));
    let mu_n = (base + (p.age as f64 - 40.0) / 40.0 + if long_haul { 2.0 } else { 0.0 } + 1.5 * p.expenditure_percentile / 100.0).max(0.5);
    let bonus = match p.purpose {
        Purpose::Sightseeing => 1.5,
        p if p.is_business_oriented() => -0.8,
        _ => 0.0,
    };
    let mu_l = (0.6 * mu_n + bonus).max(0.3);
    (mixture(mu_n, 0, max_n, 0.12, 7, 0.8), mixture(mu_l, 1, max_l, 0.10, 9, 0.75))
}

/// Poisson(mu) shifted to start at `lo`, mixed with a geometric tail from `tail_from`,
/// over `lo..=hi` with the overflow folded into the top class.
fn mixture(mu: f64, lo: u32, hi: u32, tail_w: f64, tail_from: u32, decay: f64) -> Vec<f64> {
    let k = (hi - lo + 1) as usize;
    let mut pois = vec![0.0; k];
    let mut term = (-mu).exp();
    let mut acc = 0.0;
    for (i, slot) in pois.iter_mut().enumerate() {
        if i > 0 {
            term *= mu / i as f64;
        }
        *slot = term;
        acc += term;
    }
    pois[k - 1] += (1.0 - acc).max(0.0);
    let mut tail: Vec<f64> = (lo..=hi).map(|c| if c >= tail_from { decay.powi((c - tail_from) as i32) } else { 0.0 }).collect();
    let ts: f64 = tail.iter().sum();
    tail.iter_mut().for_each(|t| *t /= ts);
    pois.iter().zip(&tail).map(|(p, t)| (1.0 - tail_w) * p + tail_w * t).collect()
}

/// Training examples for `n` synthesized profiles with scopes drawn from the ground truth.
pub fn synthetic_training(m: &SurveyMarginals, n: usize, seed: u64, max_n: u32, max_l: u32) -> Vec<TrainingExample> {
    let pop = synthesize_population(m, n, seed).expect("valid marginals");
    pop.into_iter()
        .map(|p| {
            let mut rng = rng_for(seed, "truth", p.agent_id);
            let (pn, pl) = true_scope_distribution(&p, max_n, max_l);
            let nights = sample_index(&pn, &mut rng).expect("distribution") as u32;
            let locations = sample_index(&pl, &mut rng).expect("distribution") as u32 + 1;
            TrainingExample { profile: p, nights, locations }
        })
        .collect()
}

/// Normalized ward shares keyed by code.
pub fn share_map(wards: &Wards, shares: &[f64]) -> Categorical {
    let total: f64 = shares.iter().sum();
    let mut out: BTreeMap<String, f64> = wards.codes().iter().cloned().zip(shares.iter().map(|s| s / total)).collect();
    let drift: f64 = 1.0 - out.values().sum::<f64>();
    if let Some(v) = out.values_mut().next() {
        *v += drift;
    }
    out
}
