//! Synthetic benchmark generator with analytically known evidence placement.
//!
//! Each generated item is a neutral image with filled rectangles marking the
//! answer evidence, an open-ended question whose ground truth is a distinct
//! identifier, and an oracle entry realizing one of four behaviors:
//!
//! - LOCAL_ONLY: evidence inside one patch of the design grid, full image
//!   answers wrong (a patch beats the full image).
//! - FULL_AND_LOCAL: same single box, full image also correct.
//! - GLOBAL_ONLY: two boxes hugging opposite image corners, jointly required.
//!   They sit inside the first and last cells of the maximum-granularity
//!   grid, so no single patch of any audited grid covers both and only the
//!   full image answers correctly.
//! - UNSOLVABLE: no evidence, wrong everywhere.
//!
//! Distinct ground truths force the chance floor to 1/N. Expected FIP, MPP,
//! and RCI are closed-form in the composition counts.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::client::{
    ClientError, FullImageBehavior, OracleConfig, OracleEntry, PixelBox, RegionOracle,
    DEFAULT_COVERAGE_THRESHOLD,
};
use crate::grid::{grid_regions, GridError, GridSpec, PatchRegion, MAX_GRANULARITY};
use crate::manifest::{
    validate_manifest, write_manifest, BenchmarkManifest, ManifestError, SampleRecord, TaskType,
};
use crate::scoring::ScorerId;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("bad composition: {detail}")]
    BadComposition { detail: String },
    #[error("infeasible placement: {detail}")]
    InfeasiblePlacement { detail: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Oracle(#[from] ClientError),
    #[error("failed to write image {path}: {detail}")]
    Image { path: PathBuf, detail: String },
    #[error("io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SynthKind {
    LocalOnly,
    FullAndLocal,
    GlobalOnly,
    Unsolvable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Placement {
    UniformRandom,
    FixedPatch { patch_id: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionGroup {
    pub kind: SynthKind,
    pub count: usize,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub item_count: usize,
    pub image_size: (u32, u32),
    pub composition: Vec<CompositionGroup>,
    /// Granularity the placements refer to.
    pub n_design: u32,
    pub seed: u64,
}

fn default_name() -> String {
    "synth".to_string()
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let spec: SynthSpec =
            serde_json::from_str(&text).map_err(|e| SynthError::BadComposition {
                detail: format!("{}: {e}", path.display()),
            })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |detail: String| Err(SynthError::BadComposition { detail });
        if self.item_count == 0 {
            return bad("item_count must be positive".into());
        }
        let total: usize = self.composition.iter().map(|g| g.count).sum();
        if total != self.item_count {
            return bad(format!(
                "group counts sum to {total}, item_count is {}",
                self.item_count
            ));
        }
        if !(2..=MAX_GRANULARITY).contains(&self.n_design) {
            return bad(format!(
                "n_design {} outside 2..={MAX_GRANULARITY}",
                self.n_design
            ));
        }
        let patches = self.n_design * self.n_design;
        for group in &self.composition {
            match (group.kind, group.placement) {
                (
                    SynthKind::LocalOnly | SynthKind::FullAndLocal,
                    Placement::FixedPatch { patch_id },
                ) => {
                    if patch_id == 0 || patch_id > patches {
                        return bad(format!(
                            "fixed patch {patch_id} outside 1..={patches} of the n_design grid"
                        ));
                    }
                }
                (SynthKind::GlobalOnly | SynthKind::Unsolvable, Placement::FixedPatch { .. }) => {
                    return bad(format!(
                        "{:?} items have no single-patch placement; use UNIFORM_RANDOM",
                        group.kind
                    ));
                }
                (_, Placement::UniformRandom) => {}
            }
        }
        Ok(())
    }

    fn counts(&self) -> KindCounts {
        let mut counts = KindCounts::default();
        for group in &self.composition {
            match group.kind {
                SynthKind::LocalOnly => counts.local_only += group.count,
                SynthKind::FullAndLocal => counts.full_and_local += group.count,
                SynthKind::GlobalOnly => counts.global_only += group.count,
                SynthKind::Unsolvable => counts.unsolvable += group.count,
            }
        }
        counts
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq)]
struct KindCounts {
    local_only: usize,
    full_and_local: usize,
    global_only: usize,
    unsolvable: usize,
}

/// Closed-form expectations for a spec, independent of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedSynthMetrics {
    pub fip: f64,
    pub chance: f64,
    n_design: u32,
    item_count: usize,
    counts: KindCounts,
}

impl ExpectedSynthMetrics {
    /// MPP at granularity n. Known exactly at the design granularity (every
    /// single-box item is solved by its patch) and at any n from 2 to the
    /// maximum when no single-box items exist (corner boxes are never jointly
    /// covered). Other combinations have no closed form.
    pub fn mpp(&self, n: u32) -> Option<f64> {
        let single_box = self.counts.local_only + self.counts.full_and_local;
        if n == self.n_design {
            return Some(single_box as f64 / self.item_count as f64);
        }
        if single_box == 0 && (2..=MAX_GRANULARITY).contains(&n) {
            return Some(0.0);
        }
        None
    }

    pub fn rci(&self, n: u32) -> Option<f64> {
        let mpp = self.mpp(n)?;
        (self.fip > 0.0).then(|| 1.0 - mpp / self.fip)
    }
}

pub fn expected_metrics(spec: &SynthSpec) -> Result<ExpectedSynthMetrics, SynthError> {
    spec.validate()?;
    let counts = spec.counts();
    let n = spec.item_count as f64;
    Ok(ExpectedSynthMetrics {
        fip: (counts.full_and_local + counts.global_only) as f64 / n,
        chance: 1.0 / n,
        n_design: spec.n_design,
        item_count: spec.item_count,
        counts,
    })
}

/// The middle half of a patch, leaving a border margin so coverage is
/// exactly 1 inside the patch and 0 everywhere else.
fn inset_box(region: &PatchRegion) -> Result<PixelBox, SynthError> {
    let width = region.width / 2;
    let height = region.height / 2;
    if width == 0 || height == 0 {
        return Err(SynthError::InfeasiblePlacement {
            detail: format!(
                "patch {}x{} too small for an answer box",
                region.width, region.height
            ),
        });
    }
    Ok(PixelBox {
        x: region.x + (region.width - width) / 2,
        y: region.y + (region.height - height) / 2,
        width,
        height,
    })
}

fn item_color(index: usize) -> image::Rgb<u8> {
    let r = 48 + ((index * 53) % 160) as u8;
    let g = 48 + ((index * 97) % 160) as u8;
    let b = 48 + ((index * 139) % 160) as u8;
    image::Rgb([r, g, b])
}

fn draw_box(img: &mut image::RgbImage, b: &PixelBox, color: image::Rgb<u8>) {
    for y in b.y..b.y + b.height {
        for x in b.x..b.x + b.width {
            img.put_pixel(x, y, color);
        }
    }
}

/// Generates images, manifest, and oracle config under `out_dir`, then
/// reloads both through their validators. Deterministic per seed.
pub fn generate(
    spec: &SynthSpec,
    out_dir: &Path,
) -> Result<(BenchmarkManifest, OracleConfig), SynthError> {
    spec.validate()?;
    let (width, height) = spec.image_size;
    let image_dir = out_dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|source| SynthError::Io {
        path: image_dir.clone(),
        source,
    })?;

    let design_regions =
        grid_regions(width, height, GridSpec::new(spec.n_design)?).map_err(|e| match e {
            GridError::DegenerateImage { .. } => SynthError::InfeasiblePlacement {
                detail: format!(
                    "image {width}x{height} cannot host an n={} grid",
                    spec.n_design
                ),
            },
            other => SynthError::Grid(other),
        })?;
    let corner_regions = grid_regions(width, height, GridSpec::new(MAX_GRANULARITY)?)
        .map_err(|e| match e {
            GridError::DegenerateImage { .. } => SynthError::InfeasiblePlacement {
                detail: format!(
                    "image {width}x{height} cannot host corner evidence on an n={MAX_GRANULARITY} grid"
                ),
            },
            other => SynthError::Grid(other),
        })?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(spec.item_count);
    let mut config = OracleConfig::default();
    let mut index = 0usize;

    for group in &spec.composition {
        for _ in 0..group.count {
            let id = format!("{}-{index:04}", spec.name);
            let truth = format!("object-{index:04}");
            let file = format!("{id}.png");

            let boxes: Vec<PixelBox> = match group.kind {
                SynthKind::LocalOnly | SynthKind::FullAndLocal => {
                    let patch_id = match group.placement {
                        Placement::FixedPatch { patch_id } => patch_id,
                        Placement::UniformRandom => {
                            rng.gen_range(1..=spec.n_design * spec.n_design)
                        }
                    };
                    vec![inset_box(&design_regions[(patch_id - 1) as usize])?]
                }
                SynthKind::GlobalOnly => {
                    let first = corner_regions.first().unwrap();
                    let last = corner_regions.last().unwrap();
                    vec![inset_box(first)?, inset_box(last)?]
                }
                SynthKind::Unsolvable => vec![],
            };

            let mut img = image::RgbImage::from_pixel(width, height, image::Rgb([235, 235, 235]));
            for b in &boxes {
                draw_box(&mut img, b, item_color(index));
            }
            let path = image_dir.join(&file);
            img.save(&path).map_err(|e| SynthError::Image {
                path: path.clone(),
                detail: e.to_string(),
            })?;

            let behavior = match group.kind {
                SynthKind::FullAndLocal | SynthKind::GlobalOnly => FullImageBehavior::Correct,
                SynthKind::LocalOnly | SynthKind::Unsolvable => FullImageBehavior::Wrong,
            };
            config.entries.insert(
                id.clone(),
                OracleEntry {
                    answer_boxes: boxes,
                    coverage_threshold: DEFAULT_COVERAGE_THRESHOLD,
                    full_image_behavior: behavior,
                    wrong_answer: "unknown".to_string(),
                },
            );
            samples.push(SampleRecord {
                id,
                image_ref: file,
                question: "What is the identifier of the highlighted marker?".to_string(),
                options: vec![],
                ground_truths: vec![truth],
                meta: Default::default(),
            });
            index += 1;
        }
    }

    let manifest = BenchmarkManifest {
        name: spec.name.clone(),
        task_type: TaskType::OpenEnded,
        scorer: ScorerId::OpenExact,
        image_root: "images".into(),
        declared_chance: None,
        samples,
        base_dir: out_dir.to_path_buf(),
    };
    write_manifest(&manifest, &out_dir.join("manifest.jsonl"))?;
    config.save(&out_dir.join("oracle.json"))?;

    let violations = validate_manifest(&manifest);
    if !violations.is_empty() {
        return Err(SynthError::BadComposition {
            detail: format!("generated manifest failed validation: {:?}", violations[0]),
        });
    }
    let oracle = RegionOracle::new(config.clone(), &manifest)?;
    let problems = oracle.validate_against(&manifest);
    if let Some(problem) = problems.first() {
        return Err(SynthError::BadComposition {
            detail: format!("generated oracle failed validation: {problem}"),
        });
    }

    Ok((manifest, config))
}
