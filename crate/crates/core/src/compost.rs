//! In-bin thermophilic composting simulator.
//!
//! One well-mixed pile is tracked by mass: organic matter, carbon,
//! nitrogen, inert ash, and free water, plus a single bulk temperature.
//! Organic matter follows first-order decay whose rate is modulated by
//! temperature, moisture, an optional activator, and turning pulses;
//! the heat balance couples decay back to temperature, and evaporation
//! couples temperature back to moisture.
//!
//! All masses are kilograms, temperatures Celsius, times days.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CompostError {
    #[error("invalid feedstock: {0}")]
    InvalidFeedstock(String),
    #[error("pile needs {required_m3:.3} m3 at the configured bulk density, compartment holds {available_m3:.3} m3")]
    CapacityExceeded { required_m3: f64, available_m3: f64 },
    #[error("dt must be in (0, 0.25] days, got {0}")]
    InvalidDt(f64),
    #[error("non-finite state: {0}")]
    NonFinite(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid preset JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activator {
    pub strength: f64,
}

/// What goes into the composter. Composition fractions are on the dry
/// basis and must close: organic matter + ash = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedstock {
    pub mass_kg: f64,
    pub organic_matter_frac: f64,
    pub carbon_frac: f64,
    pub nitrogen_frac: f64,
    pub ash_frac: f64,
    /// Wet-basis water fraction of `mass_kg`.
    pub moisture_frac: f64,
    pub activator: Option<Activator>,
}

impl Feedstock {
    pub fn cn_ratio(&self) -> f64 {
        self.carbon_frac / self.nitrogen_frac
    }

    pub fn validate(&self) -> Result<(), CompostError> {
        let bad = |msg: String| Err(CompostError::InvalidFeedstock(msg));
        if !(self.mass_kg.is_finite() && self.mass_kg > 0.0) {
            return bad(format!("mass {} kg", self.mass_kg));
        }
        for (name, v) in [
            ("organic_matter_frac", self.organic_matter_frac),
            ("carbon_frac", self.carbon_frac),
            ("nitrogen_frac", self.nitrogen_frac),
            ("ash_frac", self.ash_frac),
            ("moisture_frac", self.moisture_frac),
        ] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if (self.organic_matter_frac + self.ash_frac - 1.0).abs() > 1e-9 {
            return bad(format!(
                "dry composition must close: organic matter {} + ash {} != 1",
                self.organic_matter_frac, self.ash_frac
            ));
        }
        if self.carbon_frac > self.organic_matter_frac {
            return bad("carbon exceeds organic matter".into());
        }
        if self.nitrogen_frac > self.organic_matter_frac {
            return bad("nitrogen exceeds organic matter".into());
        }
        if self.nitrogen_frac <= 0.0 {
            return bad("nitrogen must be positive (C:N undefined)".into());
        }
        let cn = self.cn_ratio();
        if !cn.is_finite() || !(20.0..=40.0).contains(&cn) {
            return bad(format!("C:N {cn:.2} outside the accepted range [20, 40]"));
        }
        if let Some(a) = &self.activator {
            if !(a.strength.is_finite() && a.strength >= 0.0) {
                return bad(format!("activator strength {}", a.strength));
            }
        }
        Ok(())
    }
}

/// Advisory messages for feedstock that is legal but off-target.
pub fn feedstock_warnings(feedstock: &Feedstock) -> Vec<String> {
    let mut warnings = Vec::new();
    let cn = feedstock.cn_ratio();
    if !(25.0..=35.0).contains(&cn) {
        warnings.push(format!(
            "C:N ratio {cn:.2} is outside the recommended [25, 35] window (target 30)"
        ));
    }
    warnings
}

/// The fixed composting vessel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompartmentSpec {
    pub width_m: f64,
    pub height_m: f64,
    pub volume_m3: f64,
    pub ambient_c: f64,
}

impl Default for CompartmentSpec {
    fn default() -> Self {
        CompartmentSpec {
            width_m: 1.0,
            height_m: 1.5,
            volume_m3: 1.5,
            ambient_c: 30.0,
        }
    }
}

/// Model constants. `Default` is the calibrated `reference` set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompostConfig {
    /// Base first-order decay rate, 1/day.
    pub k_base: f64,
    /// Carbon loss per unit organic-matter loss (relative rates).
    pub kappa_c: f64,
    /// Nitrogen volatilization per unit organic-matter loss.
    pub kappa_n: f64,
    /// Heat released per kg of degraded organic matter, MJ/kg.
    pub heat_yield_mj_per_kg: f64,
    /// Envelope loss, kJ per Kelvin above ambient per day.
    pub loss_kj_per_k_day: f64,
    /// Evaporation per Kelvin above ambient per day, as a fraction of
    /// the free water.
    pub evap_per_k_day: f64,
    /// Wet-basis moisture the pile is watered up to on day 0.
    pub wetting_target: f64,
    /// Integrator step, days.
    pub dt_days: f64,
    /// Cycle length, days.
    pub days: f64,
    pub bulk_density_kg_m3: f64,
    pub turning_enabled: bool,
    /// Days on which the pile is turned.
    pub turn_days: Vec<f64>,
    /// Relative rate boost while a turn's aeration window is open.
    pub turn_boost: f64,
    pub turn_window_days: f64,
    /// Rate multiplier slope per unit activator strength.
    pub activator_gain: f64,
    // Cardinal temperatures for the growth-rate curve.
    pub t_min_c: f64,
    pub t_opt_c: f64,
    pub t_max_c: f64,
    // Moisture response: zero at m_min, optimal at m_opt.
    pub m_min: f64,
    pub m_opt: f64,
    pub m_exponent: f64,
    /// Linear penalty slope above the moisture optimum.
    pub overwet_slope: f64,
}

impl Default for CompostConfig {
    fn default() -> Self {
        // Constants from examples/calibrate_compost.rs: carbon/nitrogen
        // couplings have closed forms from the day-14 composition, the
        // decay rate and evaporation coefficient are secant-fit to the
        // day-14 organic matter and water, and the heat terms are the
        // widest-margin grid point for the 55-65 C window.
        CompostConfig {
            k_base: 0.014450082988523,
            kappa_c: 1.652546453492507,
            kappa_n: 0.240036017353065,
            heat_yield_mj_per_kg: 26.0,
            loss_kj_per_k_day: 290.0,
            evap_per_k_day: 0.002905784479804,
            wetting_target: 0.55,
            dt_days: 0.05,
            days: 14.0,
            bulk_density_kg_m3: 400.0,
            turning_enabled: true,
            turn_days: vec![4.0, 6.0, 8.0, 10.0, 12.0],
            turn_boost: 0.03,
            turn_window_days: 0.5,
            activator_gain: 0.25,
            t_min_c: 5.0,
            t_opt_c: 60.0,
            t_max_c: 75.0,
            m_min: 0.2,
            m_opt: 0.55,
            m_exponent: 0.25,
            overwet_slope: 2.0,
        }
    }
}

// Specific heats, kJ/(kg K).
const CP_DRY: f64 = 1.9;
const CP_WATER: f64 = 4.18;
/// Latent heat of vaporization, kJ/kg.
const LATENT_HEAT: f64 = 2257.0;

/// Pile state: component masses plus bulk temperature. `ambient_c` and
/// `activator_strength` are carried along so stepping needs no separate
/// environment argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompostState {
    pub day: f64,
    pub temperature_c: f64,
    pub om_kg: f64,
    pub ash_kg: f64,
    pub carbon_kg: f64,
    pub nitrogen_kg: f64,
    pub water_kg: f64,
    /// Organic matter lost to date (leaves as CO2/H2O).
    pub degraded_kg: f64,
    pub ambient_c: f64,
    pub activator_strength: f64,
}

impl CompostState {
    pub fn dry_mass_kg(&self) -> f64 {
        self.om_kg + self.ash_kg
    }

    pub fn wet_mass_kg(&self) -> f64 {
        self.dry_mass_kg() + self.water_kg
    }

    pub fn moisture_frac(&self) -> f64 {
        self.water_kg / self.wet_mass_kg()
    }

    pub fn cn_ratio(&self) -> f64 {
        self.carbon_kg / self.nitrogen_kg
    }

    /// Remaining material, renormalized to current dry mass.
    pub fn remaining(&self) -> Feedstock {
        let dry = self.dry_mass_kg();
        Feedstock {
            mass_kg: self.wet_mass_kg(),
            organic_matter_frac: self.om_kg / dry,
            carbon_frac: self.carbon_kg / dry,
            nitrogen_frac: self.nitrogen_kg / dry,
            ash_frac: self.ash_kg / dry,
            moisture_frac: self.moisture_frac(),
            activator: if self.activator_strength > 0.0 {
                Some(Activator {
                    strength: self.activator_strength,
                })
            } else {
                None
            },
        }
    }

    fn all_finite(&self) -> bool {
        [
            self.day,
            self.temperature_c,
            self.om_kg,
            self.ash_kg,
            self.carbon_kg,
            self.nitrogen_kg,
            self.water_kg,
            self.degraded_kg,
            self.ambient_c,
            self.activator_strength,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Wet and load the pile: day-0 state at ambient temperature with water
/// added (never removed) to reach the wetting target.
pub fn init_pile(
    feedstock: &Feedstock,
    spec: &CompartmentSpec,
    config: &CompostConfig,
) -> Result<CompostState, CompostError> {
    feedstock.validate()?;
    let dry = feedstock.mass_kg * (1.0 - feedstock.moisture_frac);
    let water_in = feedstock.mass_kg - dry;
    let target = config.wetting_target;
    let water_needed = dry * target / (1.0 - target);
    let water = water_in.max(water_needed);

    let wet_mass = dry + water;
    let required_m3 = wet_mass / config.bulk_density_kg_m3;
    if required_m3 > spec.volume_m3 {
        return Err(CompostError::CapacityExceeded {
            required_m3,
            available_m3: spec.volume_m3,
        });
    }

    Ok(CompostState {
        day: 0.0,
        temperature_c: spec.ambient_c,
        om_kg: dry * feedstock.organic_matter_frac,
        ash_kg: dry * feedstock.ash_frac,
        carbon_kg: dry * feedstock.carbon_frac,
        nitrogen_kg: dry * feedstock.nitrogen_frac,
        water_kg: water,
        degraded_kg: 0.0,
        ambient_c: spec.ambient_c,
        activator_strength: feedstock.activator.as_ref().map_or(0.0, |a| a.strength),
    })
}

/// Cardinal temperature response: 0 outside (t_min, t_max), 1 at t_opt.
pub fn temperature_factor(t: f64, config: &CompostConfig) -> f64 {
    let (tmin, topt, tmax) = (config.t_min_c, config.t_opt_c, config.t_max_c);
    if t <= tmin || t >= tmax {
        return 0.0;
    }
    let num = (t - tmax) * (t - tmin) * (t - tmin);
    let den = (topt - tmin)
        * ((topt - tmin) * (t - topt) - (topt - tmax) * (topt + tmin - 2.0 * t));
    if den == 0.0 {
        0.0
    } else {
        (num / den).clamp(0.0, 1.0)
    }
}

/// Moisture response: zero at or below `m_min`, 1 at `m_opt`, linear
/// penalty above it. The sub-optimal branch is deliberately flat
/// (fourth root by default) so a drying pile keeps working.
pub fn moisture_factor(m: f64, config: &CompostConfig) -> f64 {
    if m <= config.m_min {
        0.0
    } else if m <= config.m_opt {
        ((m - config.m_min) / (config.m_opt - config.m_min)).powf(config.m_exponent)
    } else {
        (1.0 - config.overwet_slope * (m - config.m_opt)).max(0.0)
    }
}

/// 1 + boost while any turn's aeration window is open.
pub fn turn_factor(day: f64, config: &CompostConfig) -> f64 {
    if config.turning_enabled
        && config
            .turn_days
            .iter()
            .any(|&t| day >= t && day < t + config.turn_window_days)
    {
        1.0 + config.turn_boost
    } else {
        1.0
    }
}

/// Instantaneous time derivatives of the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub d_om: f64,
    pub d_carbon: f64,
    pub d_nitrogen: f64,
    pub d_water: f64,
    pub d_temperature: f64,
}

/// Right-hand side of the model. Public so external integrators can
/// cross-check [`step`].
pub fn derivatives(state: &CompostState, config: &CompostConfig) -> Derivatives {
    let f_t = temperature_factor(state.temperature_c, config);
    let f_m = moisture_factor(state.moisture_frac(), config);
    let f_a = 1.0 + config.activator_gain * state.activator_strength;
    let rate = config.k_base * f_t * f_m * f_a * turn_factor(state.day, config);

    let d_om = -rate * state.om_kg;
    let d_carbon = -config.kappa_c * rate * state.carbon_kg;
    let d_nitrogen = -config.kappa_n * rate * state.nitrogen_kg;

    let excess = (state.temperature_c - state.ambient_c).max(0.0);
    let evap = config.evap_per_k_day * excess * state.water_kg;
    let d_water = -evap;

    let generation = config.heat_yield_mj_per_kg * 1000.0 * rate * state.om_kg;
    let envelope = config.loss_kj_per_k_day * excess;
    let latent = LATENT_HEAT * evap;
    let heat_capacity = CP_DRY * state.dry_mass_kg() + CP_WATER * state.water_kg;
    let d_temperature = (generation - envelope - latent) / heat_capacity;

    Derivatives {
        d_om,
        d_carbon,
        d_nitrogen,
        d_water,
        d_temperature,
    }
}

fn apply(state: &CompostState, d: &Derivatives, dt: f64) -> CompostState {
    let mut next = state.clone();
    next.day = state.day + dt;
    next.om_kg = state.om_kg + dt * d.d_om;
    next.carbon_kg = state.carbon_kg + dt * d.d_carbon;
    next.nitrogen_kg = state.nitrogen_kg + dt * d.d_nitrogen;
    next.water_kg = state.water_kg + dt * d.d_water;
    next.temperature_c = state.temperature_c + dt * d.d_temperature;
    next
}

/// Advance one Heun (explicit trapezoid) step of `dt` days.
pub fn step(
    state: &CompostState,
    dt_days: f64,
    config: &CompostConfig,
) -> Result<CompostState, CompostError> {
    if !(dt_days > 0.0 && dt_days <= 0.25) {
        return Err(CompostError::InvalidDt(dt_days));
    }
    if !state.all_finite() {
        return Err(CompostError::NonFinite(format!("{state:?}")));
    }
    let k1 = derivatives(state, config);
    let predictor = apply(state, &k1, dt_days);
    let k2 = derivatives(&predictor, config);
    let mean = Derivatives {
        d_om: 0.5 * (k1.d_om + k2.d_om),
        d_carbon: 0.5 * (k1.d_carbon + k2.d_carbon),
        d_nitrogen: 0.5 * (k1.d_nitrogen + k2.d_nitrogen),
        d_water: 0.5 * (k1.d_water + k2.d_water),
        d_temperature: 0.5 * (k1.d_temperature + k2.d_temperature),
    };
    let mut next = apply(state, &mean, dt_days);

    // Physical floors; the degraded ledger gets exactly what OM lost.
    next.om_kg = next.om_kg.max(0.0);
    next.carbon_kg = next.carbon_kg.max(0.0);
    next.nitrogen_kg = next.nitrogen_kg.max(0.0);
    next.water_kg = next.water_kg.max(0.0);
    next.temperature_c = next.temperature_c.max(state.ambient_c);
    next.degraded_kg = state.degraded_kg + (state.om_kg - next.om_kg);
    Ok(next)
}

/// One recorded instant of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub day: f64,
    pub temperature_c: f64,
    pub moisture: f64,
    pub om_pct: f64,
    pub c_pct: f64,
    pub n_pct: f64,
    pub ash_pct: f64,
    pub cn_ratio: f64,
}

impl SeriesPoint {
    fn from_state(state: &CompostState) -> Self {
        let report = composition_report(state);
        SeriesPoint {
            day: state.day,
            temperature_c: state.temperature_c,
            moisture: state.moisture_frac(),
            om_pct: report.rows[0].1,
            c_pct: report.rows[1].1,
            n_pct: report.rows[2].1,
            ash_pct: report.rows[3].1,
            cn_ratio: state.cn_ratio(),
        }
    }
}

/// Integrate a full cycle. The returned series has one point per
/// integrator step, day 0 included.
pub fn run_cycle(
    feedstock: &Feedstock,
    spec: &CompartmentSpec,
    config: &CompostConfig,
) -> Result<(CompostState, Vec<SeriesPoint>), CompostError> {
    let mut state = init_pile(feedstock, spec, config)?;
    let steps = (config.days / config.dt_days).round() as usize;
    let mut series = Vec::with_capacity(steps + 1);
    series.push(SeriesPoint::from_state(&state));
    for i in 1..=steps {
        state = step(&state, config.dt_days, config)?;
        // Pin the clock to the step grid so turn windows land exactly.
        state.day = i as f64 * config.dt_days;
        series.push(SeriesPoint::from_state(&state));
    }
    Ok((state, series))
}

/// CSV with one row per whole day.
pub fn series_to_csv(series: &[SeriesPoint]) -> String {
    let mut out = String::from("day,temperature_C,moisture,om_pct,c_pct,n_pct,ash_pct,cn_ratio\n");
    for p in series {
        if (p.day - p.day.round()).abs() > 1e-9 {
            continue;
        }
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.day.round(),
            p.temperature_c,
            p.moisture,
            p.om_pct,
            p.c_pct,
            p.n_pct,
            p.ash_pct,
            p.cn_ratio
        ));
    }
    out
}

pub const REPORT_LABELS: [&str; 4] = [
    "Organic matter",
    "Organic Carbon Content",
    "Nitrogen Content",
    "Ash Content",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    /// (label, percentage) in fixed row order.
    pub rows: [(String, f64); 4],
    pub footer: String,
}

impl CompositionReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (label, value) in &self.rows {
            out.push_str(&format!("{label} {value:.2}\n"));
        }
        out.push_str(&format!("note: {}\n", self.footer));
        out
    }
}

/// Composition snapshot in percent. Organic matter, carbon, and
/// nitrogen are shares of the dry solids; ash is its share of the
/// non-organic fraction (ash + water), the residue reference used by
/// loss-on-ignition style assays. The two bases intentionally do not
/// sum to 100 and the footer says so.
pub fn composition_report(state: &CompostState) -> CompositionReport {
    let dry = state.dry_mass_kg();
    let om_pct = 100.0 * state.om_kg / dry;
    let c_pct = 100.0 * state.carbon_kg / dry;
    let n_pct = 100.0 * state.nitrogen_kg / dry;
    let ash_pct = 100.0 * state.ash_kg / (state.ash_kg + state.water_kg);
    CompositionReport {
        rows: [
            (REPORT_LABELS[0].to_string(), om_pct),
            (REPORT_LABELS[1].to_string(), c_pct),
            (REPORT_LABELS[2].to_string(), n_pct),
            (REPORT_LABELS[3].to_string(), ash_pct),
        ],
        footer: "organic matter, carbon and nitrogen are % of dry solids; \
                 ash is % of the non-organic wet fraction (ash + water)"
            .to_string(),
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub feedstock: Feedstock,
    #[serde(default)]
    pub spec: CompartmentSpec,
    #[serde(default)]
    pub config: CompostConfig,
}

/// The calibrated default: 100 kg of mixed food waste at C:N 30 with a
/// unit-strength activator.
pub fn reference_preset() -> Preset {
    Preset {
        feedstock: Feedstock {
            mass_kg: 100.0,
            organic_matter_frac: 0.84,
            carbon_frac: 0.3669,
            nitrogen_frac: 0.01223,
            ash_frac: 0.16,
            moisture_frac: 0.40,
            activator: Some(Activator { strength: 1.0 }),
        },
        spec: CompartmentSpec::default(),
        config: CompostConfig::default(),
    }
}

pub fn builtin_preset(name: &str) -> Result<Preset, CompostError> {
    match name {
        // "paper-default" is the published name; "reference" is its alias.
        "paper-default" | "reference" => Ok(reference_preset()),
        other => Err(CompostError::UnknownPreset(other.to_string())),
    }
}

pub fn load_preset(path: &Path) -> Result<Preset, CompostError> {
    let text = fs::read_to_string(path).map_err(|source| CompostError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let preset: Preset = serde_json::from_str(&text).map_err(|source| CompostError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    preset.feedstock.validate()?;
    Ok(preset)
}
