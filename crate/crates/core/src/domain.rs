//! Open neighbourhoods of an equilibrium used for exit problems.

use crate::error::{Error, Result};
use crate::meanfield::lyapunov_g;
use crate::model::{sup_distance, ModelParams, Occupancy, StateSpace};

/// Membership is strict: boundary points lie outside.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    /// `{y : ||y - center||_inf < radius}`.
    Ball { center: Occupancy, radius: f64 },
    /// `{y : g(y) < g(reference) + excess}`.
    Sublevel { reference: Occupancy, excess: f64 },
    /// The whole simplex; nothing ever exits.
    Everything,
}

impl Domain {
    pub fn ball(center: Occupancy, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("radius must be > 0, got {radius}")));
        }
        Ok(Self::Ball { center, radius })
    }

    pub fn sublevel(reference: Occupancy, excess: f64) -> Result<Self> {
        if !(excess > 0.0 && excess.is_finite()) {
            return Err(Error::InvalidArgument(format!("excess must be > 0, got {excess}")));
        }
        Ok(Self::Sublevel { reference, excess })
    }

    pub fn contains_slice(&self, y: &[f64], ss: &StateSpace, p: &ModelParams) -> bool {
        match self {
            Self::Ball { center, radius } => sup_distance(y, center.as_slice()) < *radius,
            Self::Sublevel { reference, excess } => {
                let y = Occupancy::from_vec_unchecked(y.to_vec());
                lyapunov_g(&y, ss, p) < lyapunov_g(reference, ss, p) + excess
            }
            Self::Everything => true,
        }
    }

    pub fn contains(&self, y: &Occupancy, ss: &StateSpace, p: &ModelParams) -> bool {
        self.contains_slice(y.as_slice(), ss, p)
    }

    pub fn check_dims(&self, ss: &StateSpace) -> Result<()> {
        match self {
            Self::Ball { center, .. } => ss.check_len(center.len()),
            Self::Sublevel { reference, .. } => ss.check_len(reference.len()),
            Self::Everything => Ok(()),
        }
    }

    /// Short text form for reports.
    pub fn describe(&self) -> String {
        match self {
            Self::Ball { radius, .. } => format!("ball(sup, r={radius})"),
            Self::Sublevel { excess, .. } => format!("g-sublevel(+{excess})"),
            Self::Everything => "simplex".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_membership_is_strict() {
        let p = ModelParams::toy();
        let ss = StateSpace::build(&p).unwrap();
        let c = Occupancy::new(vec![0.75, 0.25]).unwrap();
        let d = Domain::ball(c, 0.15).unwrap();
        assert!(d.contains_slice(&[0.7, 0.3], &ss, &p));
        assert!(!d.contains_slice(&[0.5, 0.5], &ss, &p));
        let edge = Domain::ball(Occupancy::uniform(2), 0.25).unwrap();
        assert!(!edge.contains_slice(&[0.75, 0.25], &ss, &p));
        assert!(Domain::ball(Occupancy::uniform(2), 0.0).is_err());
    }

    #[test]
    fn sublevel_contains_its_reference() {
        let p = ModelParams::toy();
        let ss = StateSpace::build(&p).unwrap();
        let r = Occupancy::new(vec![0.7664, 0.2336]).unwrap();
        let d = Domain::sublevel(r.clone(), 0.01).unwrap();
        assert!(d.contains(&r, &ss, &p));
        assert!(!d.contains_slice(&[0.05, 0.95], &ss, &p));
        assert!(Domain::Everything.contains(&r, &ss, &p));
    }
}
