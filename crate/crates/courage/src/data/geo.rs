//! Mainland-state lookup tables.
//!
//! Only the 48 contiguous states are modeled; Alaska, Hawaii, the District
//! of Columbia and unincorporated territories are filtered out during
//! ingestion.

/// (state FIPS prefix, postal code, full name), ascending by FIPS.
pub const MAINLAND_STATES: [(u32, &str, &str); 48] = [
    (1, "AL", "Alabama"),
    (4, "AZ", "Arizona"),
    (5, "AR", "Arkansas"),
    (6, "CA", "California"),
    (8, "CO", "Colorado"),
    (9, "CT", "Connecticut"),
    (10, "DE", "Delaware"),
    (12, "FL", "Florida"),
    (13, "GA", "Georgia"),
    (16, "ID", "Idaho"),
    (17, "IL", "Illinois"),
    (18, "IN", "Indiana"),
    (19, "IA", "Iowa"),
    (20, "KS", "Kansas"),
    (21, "KY", "Kentucky"),
    (22, "LA", "Louisiana"),
    (23, "ME", "Maine"),
    (24, "MD", "Maryland"),
    (25, "MA", "Massachusetts"),
    (26, "MI", "Michigan"),
    (27, "MN", "Minnesota"),
    (28, "MS", "Mississippi"),
    (29, "MO", "Missouri"),
    (30, "MT", "Montana"),
    (31, "NE", "Nebraska"),
    (32, "NV", "Nevada"),
    (33, "NH", "New Hampshire"),
    (34, "NJ", "New Jersey"),
    (35, "NM", "New Mexico"),
    (36, "NY", "New York"),
    (37, "NC", "North Carolina"),
    (38, "ND", "North Dakota"),
    (39, "OH", "Ohio"),
    (40, "OK", "Oklahoma"),
    (41, "OR", "Oregon"),
    (42, "PA", "Pennsylvania"),
    (44, "RI", "Rhode Island"),
    (45, "SC", "South Carolina"),
    (46, "SD", "South Dakota"),
    (47, "TN", "Tennessee"),
    (48, "TX", "Texas"),
    (49, "UT", "Utah"),
    (50, "VT", "Vermont"),
    (51, "VA", "Virginia"),
    (53, "WA", "Washington"),
    (54, "WV", "West Virginia"),
    (55, "WI", "Wisconsin"),
    (56, "WY", "Wyoming"),
];

/// Postal code for a county FIPS, if the county lies in a mainland state.
pub fn state_of_fips(fips: u32) -> Option<&'static str> {
    let prefix = fips / 1000;
    MAINLAND_STATES
        .iter()
        .find(|(f, _, _)| *f == prefix)
        .map(|(_, postal, _)| *postal)
}

/// Postal code for a full state name (case-insensitive).
pub fn postal_of_state_name(name: &str) -> Option<&'static str> {
    MAINLAND_STATES
        .iter()
        .find(|(_, _, full)| full.eq_ignore_ascii_case(name.trim()))
        .map(|(_, postal, _)| *postal)
}

pub fn state_name_of_postal(postal: &str) -> Option<&'static str> {
    MAINLAND_STATES
        .iter()
        .find(|(_, p, _)| *p == postal)
        .map(|(_, _, full)| *full)
}

/// FIPS rendered as the canonical zero-padded five-digit county key.
pub fn fips_key(fips: u32) -> String {
    format!("{fips:05}")
}
