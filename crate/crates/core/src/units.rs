//! Conversions between the traffic-engineering units used in configs
//! (veh/km, km/h, veh/h) and the SI units used internally.

pub fn veh_per_km(x: f64) -> f64 {
    x / 1000.0
}

pub fn to_veh_per_km(x: f64) -> f64 {
    x * 1000.0
}

pub fn kmh_to_mps(x: f64) -> f64 {
    x / 3.6
}

pub fn mps_to_kmh(x: f64) -> f64 {
    x * 3.6
}

pub fn per_s_to_per_h(x: f64) -> f64 {
    x * 3600.0
}
