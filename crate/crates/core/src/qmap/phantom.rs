//! Rasterized piecewise-constant property phantoms.
//!
//! Shapes live in normalized in-plane coordinates: voxel `(x, y)` has center
//! `u = 2 (x + 0.5) / nx - 1`, `v = 2 (y + 0.5) / ny - 1`. Shapes are extruded
//! through z. Later shapes overwrite earlier ones; uncovered voxels take the
//! background tissue.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::PropertyMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tissue {
    pub pd: f64,
    pub t1: f64,
    pub t2: f64,
}

impl Tissue {
    pub const fn new(pd: f64, t1: f64, t2: f64) -> Self {
        Self { pd, t1, t2 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.pd >= 0.0
            && self.pd.is_finite()
            && self.t1 > 0.0
            && self.t1.is_finite()
            && self.t2 > 0.0
            && self.t2.is_finite())
        {
            return Err(Error::InvalidProperty(format!("invalid tissue {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Ellipse {
        center: [f64; 2],
        radii: [f64; 2],
        pd: f64,
        t1: f64,
        t2: f64,
    },
    /// `extent` holds the half-widths.
    Rectangle {
        center: [f64; 2],
        extent: [f64; 2],
        pd: f64,
        t1: f64,
        t2: f64,
    },
}

impl Shape {
    pub fn ellipse(center: [f64; 2], radii: [f64; 2], t: Tissue) -> Self {
        Shape::Ellipse { center, radii, pd: t.pd, t1: t.t1, t2: t.t2 }
    }

    pub fn rectangle(center: [f64; 2], extent: [f64; 2], t: Tissue) -> Self {
        Shape::Rectangle { center, extent, pd: t.pd, t1: t.t1, t2: t.t2 }
    }

    pub fn tissue(&self) -> Tissue {
        match *self {
            Shape::Ellipse { pd, t1, t2, .. } | Shape::Rectangle { pd, t1, t2, .. } => Tissue { pd, t1, t2 },
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        match *self {
            Shape::Ellipse { center, radii, .. } => {
                let a = (u - center[0]) / radii[0];
                let b = (v - center[1]) / radii[1];
                a * a + b * b <= 1.0
            }
            Shape::Rectangle { center, extent, .. } => {
                (u - center[0]).abs() <= extent[0] && (v - center[1]).abs() <= extent[1]
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let size = match *self {
            Shape::Ellipse { radii, .. } => radii,
            Shape::Rectangle { extent, .. } => extent,
        };
        if !size.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidArgument(format!("shape size must be positive: {self:?}")));
        }
        self.tissue().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub shapes: Vec<Shape>,
    #[serde(default = "default_background")]
    pub background: Tissue,
}

fn default_background() -> Tissue {
    BRAIN2D_TISSUES.background
}

impl PhantomSpec {
    pub fn new(dims: [usize; 3], shapes: Vec<Shape>) -> Self {
        Self { dims, shapes, background: default_background() }
    }
}

/// Preset tissue values for the `brain2d` phantom.
///
/// Representative 3 T relaxometry values for white matter, cortical grey
/// matter and CSF. They are configuration, not ground truth. Background has
/// PD = 0 and sits at the prior medians.
#[derive(Debug, Clone, Copy)]
pub struct Brain2dTissues {
    pub background: Tissue,
    pub white_matter: Tissue,
    pub grey_matter: Tissue,
    pub fluid: Tissue,
}

pub const BRAIN2D_TISSUES: Brain2dTissues = Brain2dTissues {
    background: Tissue::new(0.0, 1.0, 0.1),
    white_matter: Tissue::new(0.69, 0.832, 0.080),
    grey_matter: Tissue::new(0.80, 1.331, 0.110),
    fluid: Tissue::new(1.0, 4.3, 2.0),
};

/// Axial brain-like slice: grey-matter ellipse, white-matter core and two
/// lateral ventricles.
pub fn brain2d(dims: [usize; 3]) -> PhantomSpec {
    let t = BRAIN2D_TISSUES;
    PhantomSpec {
        dims,
        background: t.background,
        shapes: vec![
            Shape::ellipse([0.0, 0.0], [0.86, 0.9], t.grey_matter),
            Shape::ellipse([0.0, 0.02], [0.7, 0.74], t.white_matter),
            Shape::ellipse([-0.2, 0.08], [0.11, 0.3], t.fluid),
            Shape::ellipse([0.2, 0.08], [0.11, 0.3], t.fluid),
        ],
    }
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<PropertyMap> {
    if spec.shapes.is_empty() {
        return Err(Error::InvalidArgument("phantom spec has no shapes".into()));
    }
    if spec.dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("phantom dims must be positive, got {:?}", spec.dims)));
    }
    spec.background.validate()?;
    for s in &spec.shapes {
        s.validate()?;
    }
    let [nx, ny, nz] = spec.dims;
    let plane = nx * ny;
    let mut pd = Vec::with_capacity(plane);
    let mut t1 = Vec::with_capacity(plane);
    let mut t2 = Vec::with_capacity(plane);
    for y in 0..ny {
        let v = 2.0 * (y as f64 + 0.5) / ny as f64 - 1.0;
        for x in 0..nx {
            let u = 2.0 * (x as f64 + 0.5) / nx as f64 - 1.0;
            let tissue =
                spec.shapes.iter().rev().find(|s| s.contains(u, v)).map(Shape::tissue).unwrap_or(spec.background);
            pd.push(tissue.pd);
            t1.push(tissue.t1);
            t2.push(tissue.t2);
        }
    }
    let extrude = |c: Vec<f64>| c.iter().copied().cycle().take(plane * nz).collect::<Vec<_>>();
    PropertyMap::from_channels(spec.dims, extrude(pd), extrude(t1), extrude(t2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_field_region_is_uniform() {
        let t = Tissue::new(0.5, 1.5, 0.2);
        let spec = PhantomSpec::new([6, 5, 2], vec![Shape::rectangle([0.0, 0.0], [1.0, 1.0], t)]);
        let p = make_phantom(&spec).unwrap();
        for i in 0..p.voxel_count() {
            assert_eq!(p.voxel(i), (0.5, 1.5, 0.2));
        }
    }

    #[test]
    fn background_has_zero_pd() {
        let p = make_phantom(&brain2d([64, 48, 1])).unwrap();
        assert_eq!(p.pd()[0], 0.0);
        assert_eq!(p.pd()[63], 0.0);
        let vals: std::collections::BTreeSet<u64> = p.pd().iter().map(|v| v.to_bits()).collect();
        assert_eq!(vals.len(), 4);
    }

    #[test]
    fn topmost_shape_wins() {
        // Geometric oracle: re-evaluate each voxel center against the shapes by
        // hand, scanning front to back.
        let spec = brain2d([37, 29, 1]);
        let p = make_phantom(&spec).unwrap();
        for y in 0..29 {
            for x in 0..37 {
                let u = (2 * x + 1) as f64 / 37.0 - 1.0;
                let v = (2 * y + 1) as f64 / 29.0 - 1.0;
                let mut expected = spec.background;
                for s in &spec.shapes {
                    let inside = match s {
                        Shape::Ellipse { center, radii, .. } => {
                            ((u - center[0]) / radii[0]).powi(2) + ((v - center[1]) / radii[1]).powi(2) <= 1.0
                        }
                        Shape::Rectangle { center, extent, .. } => {
                            (u - center[0]).abs() <= extent[0] && (v - center[1]).abs() <= extent[1]
                        }
                    };
                    if inside {
                        expected = s.tissue();
                    }
                }
                let i = x + 37 * y;
                assert_eq!(p.voxel(i), (expected.pd, expected.t1, expected.t2));
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(make_phantom(&PhantomSpec::new([4, 4, 1], vec![])).is_err());
        let t = BRAIN2D_TISSUES.white_matter;
        let s = Shape::ellipse([0.0, 0.0], [0.5, 0.5], t);
        assert!(make_phantom(&PhantomSpec::new([0, 4, 1], vec![s])).is_err());
        let bad = Shape::ellipse([0.0, 0.0], [0.5, 0.5], Tissue::new(1.0, -1.0, 0.1));
        assert!(make_phantom(&PhantomSpec::new([4, 4, 1], vec![bad])).is_err());
        let flat = Shape::ellipse([0.0, 0.0], [0.0, 0.5], t);
        assert!(make_phantom(&PhantomSpec::new([4, 4, 1], vec![flat])).is_err());
    }

    #[test]
    fn shape_json_schema() {
        let s: Vec<Shape> = serde_json::from_str(
            r#"[{"kind":"ellipse","center":[0,0],"radii":[0.5,0.4],"pd":0.7,"t1":0.8,"t2":0.08},
                {"kind":"rectangle","center":[0.1,0],"extent":[0.2,0.2],"pd":1,"t1":4,"t2":2}]"#,
        )
        .unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].tissue(), Tissue::new(1.0, 4.0, 2.0));
    }
}
