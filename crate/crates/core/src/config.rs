//! Scenario files: `[section]` headers, `key = value` lines, `#` comments.
//!
//! ```text
//! [vehicle]
//! mu = 0.9
//! [scenario]
//! v_des = 5
//! x_obs = 30
//! w = 2
//! [weights]
//! eta_1 = 0.5
//! ```
//!
//! Missing keys keep their defaults. An empty `[weights]` section means
//! uniform weights; a partial one sets the missing weights to zero and
//! renormalizes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{CostWeights, DodgeSide, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Vehicle,
    Scenario,
    Weights,
    Sim,
}

impl Section {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "vehicle" => Some(Section::Vehicle),
            "scenario" => Some(Section::Scenario),
            "weights" => Some(Section::Weights),
            "sim" => Some(Section::Sim),
            _ => None,
        }
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

fn syntax(line: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        message: message.into(),
    }
}

fn number(line: usize, key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| syntax(line, format!("`{key}` expects a number, got `{value}`")))
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut scenario = Scenario::default();
    let mut section: Option<Section> = None;
    let mut etas: [Option<f64>; 4] = [None; 4];
    let mut planner_dt_set = false;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| syntax(line, "unterminated section header"))?
                .trim();
            section = Some(Section::parse(name).ok_or_else(|| syntax(line, format!("unknown section `{name}`")))?);
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| syntax(line, format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(syntax(line, "missing key"));
        }
        let section = section.ok_or_else(|| syntax(line, format!("`{key}` appears before any section")))?;

        let v = &mut scenario.vehicle;
        match (section, key) {
            (Section::Scenario, "dodge") => {
                scenario.dodge = match value {
                    "left" => DodgeSide::Left,
                    "right" => DodgeSide::Right,
                    _ => return Err(syntax(line, format!("`dodge` expects left or right, got `{value}`"))),
                }
            }
            (Section::Scenario, "N_p") => {
                scenario.horizon = value
                    .parse()
                    .map_err(|_| syntax(line, format!("`N_p` expects a positive integer, got `{value}`")))?
            }
            _ => {
                let x = number(line, key, value)?;
                let slot: &mut f64 = match (section, key) {
                    (Section::Vehicle, "m") => &mut v.mass,
                    (Section::Vehicle, "I_zz") => &mut v.yaw_inertia,
                    (Section::Vehicle, "J_wr") => &mut v.rear_wheel_inertia,
                    (Section::Vehicle, "r") => &mut v.wheel_radius,
                    (Section::Vehicle, "l_f") => &mut v.l_front,
                    (Section::Vehicle, "l_r") => &mut v.l_rear,
                    (Section::Vehicle, "T_max") => &mut v.max_torque,
                    (Section::Vehicle, "delta_max") => &mut v.max_steer,
                    (Section::Vehicle, "delta_rate_max") => &mut v.max_steer_rate,
                    (Section::Vehicle, "C_y") => &mut v.lateral_shape,
                    (Section::Vehicle, "B_y") => &mut v.lateral_stiffness,
                    (Section::Vehicle, "C_x") => &mut v.longitudinal_shape,
                    (Section::Vehicle, "B_x") => &mut v.longitudinal_stiffness,
                    (Section::Vehicle, "mu") => &mut v.friction,
                    (Section::Vehicle, "g") => &mut v.gravity,
                    (Section::Vehicle, "lambda_n") => &mut v.nominal_slip,
                    (Section::Vehicle, "t_s") => &mut v.sample_time,
                    (Section::Scenario, "v_des") => &mut scenario.v_des,
                    (Section::Scenario, "v0") => &mut scenario.v0,
                    (Section::Scenario, "x_obs") => &mut scenario.obstacle.x,
                    (Section::Scenario, "w") => &mut scenario.obstacle.width,
                    (Section::Scenario, "detection_distance") => &mut scenario.detection_distance,
                    (Section::Scenario, "zone_depth") => &mut scenario.zone_depth,
                    (Section::Weights, k @ ("eta_1" | "eta_2" | "eta_3" | "eta_4")) => {
                        let i = (k.as_bytes()[4] - b'1') as usize;
                        etas[i] = Some(x);
                        continue;
                    }
                    (Section::Sim, "sim_duration") => &mut scenario.sim_duration,
                    (Section::Sim, "control_dt") => &mut scenario.control_dt,
                    (Section::Sim, "planner_dt") => {
                        planner_dt_set = true;
                        &mut scenario.planner_dt
                    }
                    (Section::Sim, "sensor_latency") => &mut scenario.sensor_latency,
                    (Section::Sim, "gps_rate") => &mut scenario.gps_rate,
                    _ => return Err(syntax(line, format!("unknown key `{key}` in this section"))),
                };
                *slot = x;
            }
        }
    }

    if !planner_dt_set {
        scenario.planner_dt = scenario.vehicle.sample_time;
    }
    if etas.iter().any(Option::is_some) {
        let [a, b, c, d] = etas.map(|e| e.unwrap_or(0.0));
        let (weights, rescaled) = CostWeights::normalized(a, b, c, d)?;
        if rescaled {
            log::warn!(
                "cost weights ({a}, {b}, {c}, {d}) do not sum to one; using ({}, {}, {}, {})",
                weights.safety,
                weights.stability,
                weights.speed,
                weights.steering
            );
        }
        scenario.weights = weights;
    }
    scenario.validate()?;
    Ok(scenario)
}

fn section(out: &mut String, name: &str, entries: &[(&str, f64)]) {
    let _ = writeln!(out, "[{name}]");
    for (key, value) in entries {
        let _ = writeln!(out, "{key} = {value}");
    }
}

/// Renders a scenario in the file format. `parse_scenario` reads it back
/// exactly.
pub fn scenario_to_string(s: &Scenario) -> String {
    let v = &s.vehicle;
    let mut out = String::new();
    section(
        &mut out,
        "vehicle",
        &[
            ("m", v.mass),
            ("I_zz", v.yaw_inertia),
            ("J_wr", v.rear_wheel_inertia),
            ("r", v.wheel_radius),
            ("l_f", v.l_front),
            ("l_r", v.l_rear),
            ("T_max", v.max_torque),
            ("delta_max", v.max_steer),
            ("delta_rate_max", v.max_steer_rate),
            ("C_y", v.lateral_shape),
            ("B_y", v.lateral_stiffness),
            ("C_x", v.longitudinal_shape),
            ("B_x", v.longitudinal_stiffness),
            ("mu", v.friction),
            ("g", v.gravity),
            ("lambda_n", v.nominal_slip),
            ("t_s", v.sample_time),
        ],
    );
    out.push('\n');
    section(
        &mut out,
        "scenario",
        &[
            ("v_des", s.v_des),
            ("v0", s.v0),
            ("x_obs", s.obstacle.x),
            ("w", s.obstacle.width),
            ("detection_distance", s.detection_distance),
            ("zone_depth", s.zone_depth),
        ],
    );
    let side = match s.dodge {
        DodgeSide::Left => "left",
        DodgeSide::Right => "right",
    };
    let _ = writeln!(out, "N_p = {}\ndodge = {side}\n", s.horizon);
    let w = s.weights;
    section(
        &mut out,
        "weights",
        &[("eta_1", w.safety), ("eta_2", w.stability), ("eta_3", w.speed), ("eta_4", w.steering)],
    );
    out.push('\n');
    section(
        &mut out,
        "sim",
        &[
            ("sim_duration", s.sim_duration),
            ("control_dt", s.control_dt),
            ("planner_dt", s.planner_dt),
            ("sensor_latency", s.sensor_latency),
            ("gps_rate", s.gps_rate),
        ],
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_scenario("").unwrap(), Scenario::default());
    }

    #[test]
    fn reads_keys_and_comments() {
        let text = "# header\n[vehicle]\nmu = 0.5 # wet\n\n[scenario]\nv_des = 6\nx_obs = 40\nw = 1.5\ndodge = right\nN_p = 8\n[sim]\ncontrol_dt = 0.02\n";
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.vehicle.friction, 0.5);
        assert_eq!(s.v_des, 6.0);
        assert_eq!(s.obstacle.x, 40.0);
        assert_eq!(s.obstacle.width, 1.5);
        assert_eq!(s.dodge, DodgeSide::Right);
        assert_eq!(s.horizon, 8);
        assert_eq!(s.control_dt, 0.02);
        assert_eq!(s.weights, CostWeights::uniform());
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let cases = [
            ("[vehicle]\nmu 0.9\n", 2),
            ("[vehicle]\n\nmu = abc\n", 3),
            ("mu = 0.9\n", 1),
            ("[bogus]\n", 1),
            ("[vehicle\n", 1),
            ("[vehicle]\nfoo = 1\n", 2),
            ("[scenario]\n\n\ndodge = up\n", 4),
        ];
        for (text, expected) in cases {
            match parse_scenario(text) {
                Err(Error::Syntax { line, .. }) => assert_eq!(line, expected, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn invariant_violations_name_the_key() {
        let cases = [
            ("[vehicle]\nmu = -0.1\n", "mu"),
            ("[scenario]\nw = 0\n", "w"),
            ("[sim]\ncontrol_dt = 0.3\n", "control_dt"),
            ("[sim]\nplanner_dt = 0.25\ncontrol_dt = 0.1\n", "planner_dt"),
            ("[weights]\neta_1 = -1\n", "eta_1"),
        ];
        for (text, expected) in cases {
            match parse_scenario(text) {
                Err(Error::InvalidParameter { key, .. }) => assert_eq!(key, expected, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn partial_weights_renormalize() {
        let s = parse_scenario("[weights]\neta_1 = 2\neta_3 = 2\n").unwrap();
        assert_eq!(s.weights, CostWeights::new(0.5, 0.0, 0.5, 0.0).unwrap());
    }

    #[test]
    fn planner_period_follows_sample_time() {
        let s = parse_scenario("[vehicle]\nt_s = 0.1\n").unwrap();
        assert_eq!(s.planner_dt, 0.1);
    }

    proptest! {
        #[test]
        fn round_trip(
            mu in 0.1..1.2f64,
            v_des in 1.0..9.0f64,
            x_obs in 5.0..80.0f64,
            w in 0.2..5.0f64,
            raw in prop::array::uniform4(0.01..1.0f64),
            horizon in 1usize..20,
            right in any::<bool>(),
            latency in 0.0..1.0f64,
        ) {
            let sum: f64 = raw.iter().sum();
            let mut s = Scenario::default();
            s.vehicle.friction = mu;
            s.v_des = v_des;
            s.obstacle.x = x_obs;
            s.obstacle.width = w;
            s.horizon = horizon;
            s.dodge = if right { DodgeSide::Right } else { DodgeSide::Left };
            s.sensor_latency = latency;
            s.weights = CostWeights {
                safety: raw[0] / sum,
                stability: raw[1] / sum,
                speed: raw[2] / sum,
                steering: 1.0 - (raw[0] + raw[1] + raw[2]) / sum,
            };
            prop_assume!(s.validate().is_ok());
            let back = parse_scenario(&scenario_to_string(&s)).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
