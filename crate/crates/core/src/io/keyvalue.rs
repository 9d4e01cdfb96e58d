//! Flat `key = value` text files: camera intrinsics and run configuration.
//!
//! Blank lines and lines starting with `#` are skipped. When a key repeats,
//! the last value wins and a warning is logged and recorded.

use crate::aligner::{AlignConfig, ColorMode};
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::sampler::GradientStrategy;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::default();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.trim();
            if !body.is_empty() && !body.starts_with('#') {
                let (k, v) = body
                    .split_once('=')
                    .ok_or_else(|| Error::parse(offset, format!("expected key=value, got `{body}`")))?;
                let (k, v) = (k.trim(), v.trim());
                if k.is_empty() {
                    return Err(Error::parse(offset, "empty key"));
                }
                kv.insert(k, v);
            }
            offset += line.len();
        }
        Ok(kv)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, key: &str, value: &str) {
        if let Some(old) = self.entries.insert(key.to_string(), value.to_string()) {
            let msg = format!("duplicate key `{key}`: `{value}` replaces `{old}`");
            log::warn!("{msg}");
            self.warnings.push(msg);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::config(key, "missing required key"))
    }

    /// Parses `key` if present.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
            })
            .transpose()
    }

    pub fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        self.require(key)?;
        Ok(self.parsed(key)?.expect("checked above"))
    }
}

pub fn parse_intrinsics(text: &str) -> Result<(CameraIntrinsics, Vec<String>)> {
    let kv = KeyValues::parse(text)?;
    let k = CameraIntrinsics {
        fx: kv.required("fx")?,
        fy: kv.required("fy")?,
        cx: kv.required("cx")?,
        cy: kv.required("cy")?,
        width: kv.required("width")?,
        height: kv.required("height")?,
    };
    k.validate()?;
    Ok((k, kv.warnings))
}

pub fn load_intrinsics(path: impl AsRef<Path>) -> Result<CameraIntrinsics> {
    Ok(parse_intrinsics(&std::fs::read_to_string(path)?)?.0)
}

pub fn format_intrinsics(k: &CameraIntrinsics) -> String {
    format!(
        "fx={:?}\nfy={:?}\ncx={:?}\ncy={:?}\nwidth={}\nheight={}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    )
}

pub fn parse_strategy(s: &str) -> Option<GradientStrategy> {
    match s.to_ascii_lowercase().as_str() {
        "a" => Some(GradientStrategy::A),
        "b" => Some(GradientStrategy::B),
        _ => None,
    }
}

pub fn parse_color_mode(s: &str) -> Option<ColorMode> {
    match s.to_ascii_lowercase().as_str() {
        "zo" | "zero" | "zero_order" => Some(ColorMode::ZeroOrder),
        "fo" | "first" | "first_order" => Some(ColorMode::FirstOrder),
        "so" | "second" | "second_order" => Some(ColorMode::SecondOrder),
        _ => None,
    }
}

/// Parses a mode label such as `so-a` into `base` with that color mode and
/// gradient strategy.
pub fn parse_mode_label(label: &str, base: &AlignConfig) -> Result<AlignConfig> {
    let (m, s) = label
        .trim()
        .split_once('-')
        .ok_or_else(|| Error::invalid(format!("mode `{label}` is not of the form <zo|fo|so>-<a|b>")))?;
    match (parse_color_mode(m), parse_strategy(s)) {
        (Some(color_mode), Some(strategy)) => Ok(AlignConfig {
            color_mode,
            strategy,
            ..*base
        }),
        _ => Err(Error::invalid(format!("unknown mode `{label}`"))),
    }
}

/// Settings of one `align` run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub cloud: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub intrinsics: Option<PathBuf>,
    pub init_pose: Option<PathBuf>,
    pub out: PathBuf,
    pub align: AlignConfig,
    /// Whether `lr_translation` was set explicitly; otherwise it is scaled
    /// to the median depth at the initial pose.
    pub lr_translation_set: bool,
    /// Write a heatmap every this many iterations; 0 disables.
    pub heatmap_interval: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cloud: None,
            image: None,
            intrinsics: None,
            init_pose: None,
            out: PathBuf::from("out"),
            align: AlignConfig::default(),
            lr_translation_set: false,
            heatmap_interval: 0,
        }
    }
}

impl RunConfig {
    /// Overrides fields with the keys present in `kv`. Unknown keys are errors.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        for key in kv.keys() {
            let v = kv.get(key).unwrap();
            let a = &mut self.align;
            match key {
                "cloud" => self.cloud = Some(v.into()),
                "image" => self.image = Some(v.into()),
                "intrinsics" => self.intrinsics = Some(v.into()),
                "init_pose" => self.init_pose = Some(v.into()),
                "out" => self.out = v.into(),
                "heatmap_interval" => self.heatmap_interval = kv.required(key)?,
                "strategy" => {
                    a.strategy = parse_strategy(v).ok_or_else(|| Error::config(key, format!("unknown strategy `{v}`")))?
                }
                "color_mode" => {
                    a.color_mode =
                        parse_color_mode(v).ok_or_else(|| Error::config(key, format!("unknown color mode `{v}`")))?
                }
                "lr_translation" => {
                    a.lr_translation = kv.required(key)?;
                    self.lr_translation_set = true;
                }
                "lr_rotation" => a.lr_rotation = kv.required(key)?,
                "adam_beta1" => a.adam_beta1 = kv.required(key)?,
                "adam_beta2" => a.adam_beta2 = kv.required(key)?,
                "adam_eps" => a.adam_eps = kv.required(key)?,
                "max_iters" => a.max_iters = kv.required(key)?,
                "param_tol" => a.param_tol = kv.required(key)?,
                "beta_max" => a.beta_max = kv.required(key)?,
                "nu" => a.nu = kv.required(key)?,
                "seed" => a.seed = kv.required(key)?,
                "depth_eps" => a.depth_eps = Some(kv.required(key)?),
                other => return Err(Error::config(other, "unknown configuration key")),
            }
        }
        self.align
            .validate()
            .map_err(|e| Error::config("align", e.to_string()))
    }

    pub fn validate_for_align(&self) -> Result<()> {
        for (key, p) in [
            ("cloud", &self.cloud),
            ("image", &self.image),
            ("intrinsics", &self.intrinsics),
        ] {
            match p {
                Some(p) if !p.as_os_str().is_empty() => {}
                _ => return Err(Error::config(key, "path is required")),
            }
        }
        if self.out.as_os_str().is_empty() {
            return Err(Error::config("out", "path is required"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "# camera\nfx = 500\nfy=510.5\ncx=320\ncy=240\nwidth=640\nheight=480\n";

    #[test]
    fn complete_file() {
        let (k, warnings) = parse_intrinsics(FULL).unwrap();
        assert_eq!(k, CameraIntrinsics::new(500.0, 510.5, 320.0, 240.0, 640, 480).unwrap());
        assert!(warnings.is_empty());
        assert_eq!(parse_intrinsics(&format_intrinsics(&k)).unwrap().0, k);
    }

    #[test]
    fn zero_focal_rejected() {
        assert!(parse_intrinsics(&FULL.replace("fx = 500", "fx=0")).is_err());
    }

    #[test]
    fn duplicate_key_last_wins_with_warning() {
        let (k, warnings) = parse_intrinsics(&format!("{FULL}fx=700\n")).unwrap();
        assert_eq!(k.fx, 700.0);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("fx"));
    }

    #[test]
    fn errors_name_the_key() {
        let e = parse_intrinsics(&FULL.replace("cy=240\n", "")).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "cy"));
        let e = parse_intrinsics(&FULL.replace("width=640", "width=6x0")).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "width"));
        let e = KeyValues::parse("a=1\nnonsense\n").unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 4, .. }));
    }

    #[test]
    fn run_config_overrides() {
        let kv = KeyValues::parse("strategy=b\ncolor_mode=fo\nmax_iters=30\nheatmap_interval=5\nlr_translation=0.01\n").unwrap();
        let mut rc = RunConfig::default();
        rc.apply(&kv).unwrap();
        assert_eq!(rc.align.strategy, GradientStrategy::B);
        assert_eq!(rc.align.color_mode, ColorMode::FirstOrder);
        assert_eq!(rc.align.max_iters, 30);
        assert_eq!(rc.heatmap_interval, 5);
        assert!(rc.lr_translation_set);
        let mut rc = RunConfig::default();
        assert!(rc.apply(&KeyValues::parse("lr_rotaton=1").unwrap()).is_err());
        assert!(rc.apply(&KeyValues::parse("heatmap_interval=-1").unwrap()).is_err());
        assert!(rc.validate_for_align().is_err());
    }

    #[test]
    fn mode_labels() {
        let base = AlignConfig::default();
        let m = parse_mode_label("zo-b", &base).unwrap();
        assert_eq!((m.color_mode, m.strategy), (ColorMode::ZeroOrder, GradientStrategy::B));
        assert_eq!(m.label(), "zo-b");
        assert!(parse_mode_label("so", &base).is_err());
        assert!(parse_mode_label("xo-a", &base).is_err());
    }
}
