//! Seeded generator for survey-shaped tables.
//!
//! Rows follow the 31-column layout of [`ColumnSchema::cdc_default`]. The
//! target is a noise-free function of the question, the first
//! stratification, the start year and the record's latitude. Latitude is
//! jittered per record, so the geolocation carries signal that the state
//! one-hot alone cannot.

use crate::ingest::{ColumnSchema, GeoPoint, RawTable};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub rows: usize,
    pub seed: u64,
    /// Probability that a geolocation cell is blank.
    pub missing_geolocation: f64,
    /// Probability that a target cell is blank.
    pub missing_target: f64,
    /// Probability that an optional categorical or numeric cell is blank.
    pub missing_other: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 1000,
            seed: 7,
            missing_geolocation: 0.03,
            missing_target: 0.02,
            missing_other: 0.02,
        }
    }
}

struct Location {
    abbr: &'static str,
    desc: &'static str,
    id: u32,
    lat: f64,
    lon: f64,
    /// Half-width of the latitude jitter in degrees.
    spread: f64,
}

const LOCATIONS: [Location; 7] = [
    Location { abbr: "CA", desc: "California", id: 6, lat: 36.78, lon: -119.42, spread: 3.5 },
    Location { abbr: "OR", desc: "Oregon", id: 41, lat: 43.80, lon: -120.55, spread: 1.8 },
    Location { abbr: "WA", desc: "Washington", id: 53, lat: 47.40, lon: -120.74, spread: 1.4 },
    Location { abbr: "NV", desc: "Nevada", id: 32, lat: 38.80, lon: -116.42, spread: 3.0 },
    Location { abbr: "AZ", desc: "Arizona", id: 4, lat: 34.05, lon: -111.09, spread: 2.2 },
    Location { abbr: "ID", desc: "Idaho", id: 16, lat: 44.07, lon: -114.74, spread: 2.5 },
    Location { abbr: "UT", desc: "Utah", id: 49, lat: 39.32, lon: -111.09, spread: 2.0 },
];

/// Picking weights; mostly West Coast.
const LOCATION_WEIGHTS: [u32; 7] = [30, 20, 20, 10, 8, 6, 6];

struct Question {
    class: &'static str,
    class_id: &'static str,
    topic: &'static str,
    topic_id: &'static str,
    text: &'static str,
    id: &'static str,
    source: &'static str,
    base: f64,
}

const QUESTIONS: [Question; 8] = [
    Question {
        class: "Obesity / Weight Status",
        class_id: "OWS",
        topic: "Obesity / Weight Status",
        topic_id: "OWS1",
        text: "Percent of adults aged 18 years and older who have obesity",
        id: "Q036",
        source: "BRFSS",
        base: 28.0,
    },
    Question {
        class: "Obesity / Weight Status",
        class_id: "OWS",
        topic: "Obesity / Weight Status",
        topic_id: "OWS1",
        text: "Percent of adults aged 18 years and older who have an overweight classification",
        id: "Q037",
        source: "BRFSS",
        base: 34.0,
    },
    Question {
        class: "Physical Activity",
        class_id: "PA",
        topic: "Physical Activity - Behavior",
        topic_id: "PA1",
        text: "Percent of adults who engage in no leisure-time physical activity",
        id: "Q047",
        source: "BRFSS",
        base: 21.0,
    },
    Question {
        class: "Physical Activity",
        class_id: "PA",
        topic: "Physical Activity - Behavior",
        topic_id: "PA1",
        text: "Percent of adults who achieve at least 150 minutes a week of moderate-intensity aerobic physical activity",
        id: "Q044",
        source: "BRFSS",
        base: 52.0,
    },
    Question {
        class: "Fruits and Vegetables",
        class_id: "FV",
        topic: "Fruits and Vegetables - Behavior",
        topic_id: "FV1",
        text: "Percent of adults who report consuming fruit less than one time daily",
        id: "Q018",
        source: "BRFSS",
        base: 38.0,
    },
    Question {
        class: "Fruits and Vegetables",
        class_id: "FV",
        topic: "Fruits and Vegetables - Behavior",
        topic_id: "FV1",
        text: "Percent of adults who report consuming vegetables less than one time daily",
        id: "Q019",
        source: "BRFSS",
        base: 19.0,
    },
    Question {
        class: "Tobacco",
        class_id: "TOB",
        topic: "Cigarette Use - Adult",
        topic_id: "TOB1",
        text: "Percent of adults who currently smoke cigarettes",
        id: "Q060",
        source: "BRFSS",
        base: 14.0,
    },
    Question {
        class: "Sugar Drinks",
        class_id: "SD",
        topic: "Sugar Drinks - Behavior",
        topic_id: "SD1",
        text: "Percent of adolescents who drank regular soda at least one time per day",
        id: "Q058",
        source: "YRBSS",
        base: 11.0,
    },
];

/// (category, category id, value, value id, additive effect)
const STRATA: [(&str, &str, &str, &str, f64); 9] = [
    ("Total", "OVR", "Total", "OVERALL", 0.0),
    ("Sex", "SEX", "Male", "MALE", 1.5),
    ("Sex", "SEX", "Female", "FEMALE", -1.5),
    ("Age (years)", "AGEYR", "18 - 24", "AGEYR1824", -4.0),
    ("Age (years)", "AGEYR", "25 - 34", "AGEYR2534", -1.0),
    ("Age (years)", "AGEYR", "55 - 64", "AGEYR5564", 3.5),
    ("Race/Ethnicity", "RACE", "Hispanic", "RACEHIS", 2.5),
    ("Race/Ethnicity", "RACE", "Non-Hispanic White", "RACEWHT", -0.5),
    ("Race/Ethnicity", "RACE", "Asian", "RACEASN", -5.0),
];

const INCOME: [&str; 4] = ["Less than $15,000", "$25,000 - $34,999", "$50,000 - $74,999", "$75,000 or greater"];

/// The noise-free target.
pub fn target_value(question_base: f64, stratum_effect: f64, year: u32, latitude: f64) -> f64 {
    let year_term = 0.6 * (year as f64 - 2015.0);
    // northern records score lower, with a bend past 42 degrees
    let lat_term = -1.2 * (latitude - 38.0) + 0.8 * (latitude - 42.0).max(0.0).powi(2);
    (question_base + stratum_effect + year_term + lat_term).clamp(0.5, 99.5)
}

fn weighted(rng: &mut SplitMix64, weights: &[u32]) -> usize {
    let total: u32 = weights.iter().sum();
    let mut r = rng.below(total as usize) as u32;
    for (i, &w) in weights.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

fn blank_if(rng: &mut SplitMix64, p: f64, value: String) -> Option<String> {
    if rng.next_f64() < p {
        None
    } else {
        Some(value)
    }
}

/// Generates a table with the default 31-column schema.
pub fn generate(config: &SynthConfig) -> RawTable {
    let schema = ColumnSchema::cdc_default();
    let mut rng = SplitMix64::new(config.seed);
    let mut rows = Vec::with_capacity(config.rows);
    for i in 0..config.rows {
        let loc = &LOCATIONS[weighted(&mut rng, &LOCATION_WEIGHTS)];
        let q = &QUESTIONS[rng.below(QUESTIONS.len())];
        let (scat, scat_id, strat, strat_id, effect) = STRATA[rng.below(STRATA.len())];
        let year = 2015 + rng.below(8) as u32;
        let lat = loc.lat + loc.spread * (2.0 * rng.next_f64() - 1.0);
        let lon = loc.lon + 1.5 * (2.0 * rng.next_f64() - 1.0);
        let point = GeoPoint::new(lat, lon).expect("generated coordinates are in range");
        // the value is computed from the rounded coordinates written to the file
        let written = crate::ingest::parse_geolocation(&point.to_wkt()).unwrap();
        let value = (target_value(q.base, effect, year, written.latitude) * 10.0).round() / 10.0;
        let has_income = rng.next_f64() < 0.4;
        let income = INCOME[rng.below(INCOME.len())];

        let mut cells: Vec<(&str, Option<String>)> = vec![
            ("rowid", Some(format!("{}{}{}{}", year, loc.abbr, q.id, i))),
            ("yearstart", blank_if(&mut rng, config.missing_other, year.to_string())),
            ("yearend", Some(year.to_string())),
            ("locationabbr", Some(loc.abbr.to_string())),
            ("locationdesc", Some(loc.desc.to_string())),
            ("datasource", Some(q.source.to_string())),
            ("class", Some(q.class.to_string())),
            ("topic", blank_if(&mut rng, config.missing_other, q.topic.to_string())),
            ("question", Some(q.text.to_string())),
            ("response", None),
            ("data_value_unit", Some("%".to_string())),
            ("datavaluetypeid", Some("CRDPREV".to_string())),
            ("data_value_type", Some("Crude Prevalence".to_string())),
        ];
        let target = blank_if(&mut rng, config.missing_target, format!("{value:.1}"));
        let footnote = target.is_none();
        cells.extend([
            ("data_value", target.clone()),
            ("data_value_alt", target),
            ("data_value_footnote_symbol", footnote.then(|| "~".to_string())),
            (
                "data_value_footnote",
                footnote.then(|| "Data not available because sample size is insufficient.".to_string()),
            ),
            ("low_confidence_limit", Some(format!("{:.1}", (value - 2.1).max(0.0)))),
            ("high_confidence_limit", Some(format!("{:.1}", value + 2.3))),
            (
                "stratificationcategory1",
                blank_if(&mut rng, config.missing_other, scat.to_string()),
            ),
            ("stratification1", Some(strat.to_string())),
            ("stratificationcategory2", has_income.then(|| "Income".to_string())),
            ("stratification2", has_income.then(|| income.to_string())),
            (
                "geolocation",
                blank_if(&mut rng, config.missing_geolocation, point.to_wkt()),
            ),
            ("classid", Some(q.class_id.to_string())),
            ("topicid", Some(q.topic_id.to_string())),
            ("questionid", Some(q.id.to_string())),
            ("locationid", Some(loc.id.to_string())),
            ("stratificationcategoryid1", Some(scat_id.to_string())),
            ("stratificationid1", Some(strat_id.to_string())),
            ("stratificationcategoryid2", has_income.then(|| "INC".to_string())),
        ]);
        debug_assert_eq!(cells.len(), schema.len());
        rows.push(cells.into_iter().map(|(_, v)| v).collect());
    }
    RawTable::new(schema, rows).expect("generated rows match the schema")
}

/// The generated table as CSV text.
pub fn generate_csv(config: &SynthConfig) -> String {
    let mut buf = Vec::new();
    generate(config).write_csv(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("generated text is utf-8")
}
