//! Acceptance gate: one test per release criterion, each printing a pass
//! line with its elapsed time and asserting a pinned runtime budget. Run
//! with --nocapture to see the lines.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rci_core::client::{
    run_inference_plan, FullImageBehavior, InferenceCache, ModelRef, OracleConfig, OracleEntry,
    PixelBox, RegionOracle,
};
use rci_core::engine::{
    band, bootstrap_se, rci, validity, BootstrapConfig, BootstrapStatistic, InterpretationBand,
    DEFAULT_DELTA,
};
use rci_core::grid::{grid_regions, GridSpec};
use rci_core::heatmap::ZERO_MASS_NOTE;
use rci_core::manifest::{
    label_stats, load_manifest, write_manifest, BenchmarkManifest, SampleRecord, TaskType,
};
use rci_core::matrix::EvalMatrix;
use rci_core::pipeline::{run_audit, AuditConfig};
use rci_core::reference::{reference_cells, reference_models, reference_vector};
use rci_core::report::pearson_r;
use rci_core::scoring::{chance_floor, ChanceFloor, ChanceMethod, ItemScore, ScorerId};
use rci_core::spatial::{center_bias_share, patch_contributions};
use rci_core::synth::{generate, CompositionGroup, Placement, SynthKind, SynthSpec};

fn finish(id: u32, what: &str, start: Instant, budget: Duration) {
    let elapsed = start.elapsed();
    assert!(
        elapsed < budget,
        "criterion {id:02} exceeded its {budget:?} budget: {elapsed:?}"
    );
    println!("criterion {id:02} PASS: {what} ({elapsed:.2?})");
}

#[test]
fn criterion_01_index_closed_form_is_exact() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..1000 {
        let fip: f64 = rng.gen_range(0.01..=1.0);
        let mpp: f64 = rng.gen_range(0.0..=1.0);
        let got = rci(fip, mpp).unwrap();
        let expected = 1.0 - mpp / fip;
        assert!(
            (got - expected).abs() <= 1e-12,
            "fip {fip}, mpp {mpp}: {got} vs {expected}"
        );
    }
    finish(
        1,
        "index matches 1 - mpp/fip on 1000 random pairs",
        start,
        Duration::from_secs(1),
    );
}

/// Random matrix with scores drawn from {0, 1/3, 2/3, 1}; returns the raw
/// score values alongside so checks can recompute from first principles.
#[allow(clippy::type_complexity)]
fn random_matrix(
    rng: &mut ChaCha8Rng,
    max_items: usize,
) -> (EvalMatrix, Vec<f64>, BTreeMap<u32, Vec<Vec<f64>>>) {
    const LEVELS: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    let n_items = rng.gen_range(1..=max_items);
    let item_ids: Vec<String> = (0..n_items).map(|i| format!("item-{i}")).collect();
    let full_raw: Vec<f64> = (0..n_items).map(|_| LEVELS[rng.gen_range(0..4)]).collect();
    let mut patch_raw: BTreeMap<u32, Vec<Vec<f64>>> = BTreeMap::new();
    for n in [2u32, 3] {
        let rows = (0..n_items)
            .map(|_| (0..n * n).map(|_| LEVELS[rng.gen_range(0..4)]).collect())
            .collect();
        patch_raw.insert(n, rows);
    }
    let full_scores = full_raw
        .iter()
        .map(|&v| ItemScore::new(v).unwrap())
        .collect();
    let patch_scores = patch_raw
        .iter()
        .map(|(&n, rows)| {
            let rows = rows
                .iter()
                .map(|row| row.iter().map(|&v| ItemScore::new(v).unwrap()).collect())
                .collect();
            (n, rows)
        })
        .collect();
    let matrix = EvalMatrix::new(
        "random".into(),
        "rng".into(),
        item_ids,
        full_scores,
        patch_scores,
    )
    .unwrap();
    (matrix, full_raw, patch_raw)
}

#[test]
fn criterion_02_best_patch_aggregate_matches_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..200 {
        let (matrix, _, patch_raw) = random_matrix(&mut rng, 50);
        for (&n, rows) in &patch_raw {
            let mut sum = 0.0;
            for row in rows {
                let mut best = 0.0f64;
                for &score in row {
                    if score > best {
                        best = score;
                    }
                }
                sum += best;
            }
            let expected = sum / rows.len() as f64;
            let got = matrix.mpp(n).unwrap();
            assert!(
                (got - expected).abs() <= 1e-12,
                "n {n}: {got} vs {expected}"
            );
        }
    }
    finish(
        2,
        "best-patch aggregate matches exhaustive max/mean on 200 random matrices",
        start,
        Duration::from_secs(5),
    );
}

fn oracle_audit_config(dir: &Path, grids: Vec<u32>) -> AuditConfig {
    AuditConfig {
        manifest: dir.join("manifest.jsonl"),
        model: ModelRef::oracle(dir.join("oracle.json").to_str().unwrap()),
        grids,
        repetitions: 1,
        delta: DEFAULT_DELTA,
        bootstrap: None,
        output_dir: dir.join("out"),
        cache_dir: dir.join("cache"),
        base_dir: ".".into(),
    }
}

#[test]
fn criterion_03_local_advantage_fixture_hits_closed_form_exactly() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        name: "local-advantage".into(),
        item_count: 100,
        image_size: (64, 64),
        composition: vec![
            CompositionGroup {
                kind: SynthKind::LocalOnly,
                count: 60,
                placement: Placement::UniformRandom,
            },
            CompositionGroup {
                kind: SynthKind::FullAndLocal,
                count: 40,
                placement: Placement::UniformRandom,
            },
        ],
        n_design: 2,
        seed: 303,
    };
    generate(&spec, dir.path()).unwrap();
    let outcome = run_audit(&oracle_audit_config(dir.path(), vec![2])).unwrap();
    let row = &outcome.report.results[0];
    assert_eq!(row.fip, 0.40);
    assert_eq!(row.mpp, 1.00);
    assert_eq!(row.rci, Some(-1.50));
    assert_eq!(row.band, Some(InterpretationBand::StrongLocal));
    assert!(row.valid);
    finish(
        3,
        "100-item local-advantage fixture yields fip 0.40, mpp 1.00, rci -1.50 exactly",
        start,
        Duration::from_secs(30),
    );
}

#[test]
fn criterion_04_global_only_fixture_defeats_every_patch() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        name: "global-only".into(),
        item_count: 50,
        image_size: (64, 64),
        composition: vec![CompositionGroup {
            kind: SynthKind::GlobalOnly,
            count: 50,
            placement: Placement::UniformRandom,
        }],
        n_design: 2,
        seed: 404,
    };
    generate(&spec, dir.path()).unwrap();
    let outcome = run_audit(&oracle_audit_config(dir.path(), vec![2, 3])).unwrap();
    for row in &outcome.report.results {
        assert_eq!(row.fip, 1.0, "n {}", row.n);
        assert_eq!(row.mpp, 0.0, "n {}", row.n);
        assert_eq!(row.rci, Some(1.0), "n {}", row.n);
        assert_eq!(row.band, Some(InterpretationBand::StrongGlobal));
    }
    for contribution in &outcome.report.contributions {
        assert!(contribution.zero_mass, "n {}", contribution.n);
    }
    let svg = std::fs::read_to_string(dir.path().join("out").join("heatmap_n2.svg")).unwrap();
    assert!(svg.contains(ZERO_MASS_NOTE));
    finish(
        4,
        "50-item global-only fixture yields fip 1.0, mpp 0.0, rci 1.0 with zero-mass heatmaps",
        start,
        Duration::from_secs(30),
    );
}

/// Threshold table written out independently of the engine's chain of ifs.
fn expected_band(value: f64) -> InterpretationBand {
    const EDGES: [(f64, InterpretationBand); 4] = [
        (-0.30, InterpretationBand::StrongLocal),
        (-0.10, InterpretationBand::ModerateLocal),
        (0.10, InterpretationBand::Balanced),
        (0.30, InterpretationBand::ModerateGlobal),
    ];
    for (edge, label) in EDGES {
        if value <= edge {
            return label;
        }
    }
    InterpretationBand::StrongGlobal
}

fn reference_value(dataset: &str, model: &str, n: u32) -> f64 {
    reference_cells()
        .iter()
        .find(|c| c.dataset == dataset && c.model == model && c.n == n)
        .unwrap_or_else(|| panic!("no reference cell {dataset}/{model}/n{n}"))
        .rci
}

#[test]
fn criterion_05_reference_cells_map_to_their_bands() {
    let start = Instant::now();
    let cells = reference_cells();
    assert_eq!(cells.len(), 78);
    for cell in cells {
        assert_eq!(
            band(cell.rci),
            expected_band(cell.rci),
            "{}/{} n{} rci {}",
            cell.dataset,
            cell.model,
            cell.n,
            cell.rci
        );
    }
    let spots = [
        (
            "BLINK",
            "Molmo-1B",
            3,
            -0.516,
            InterpretationBand::StrongLocal,
        ),
        (
            "ChartQA_TEST",
            "Qwen2-VL-2B-Instruct",
            3,
            0.290,
            InterpretationBand::ModerateGlobal,
        ),
        (
            "AMBER",
            "InternVL-2.5-1B",
            3,
            -0.028,
            InterpretationBand::Balanced,
        ),
    ];
    for (dataset, model, n, value, expected) in spots {
        let got = reference_value(dataset, model, n);
        assert_eq!(got, value, "{dataset}/{model}/n{n}");
        assert_eq!(band(got), expected, "{dataset}/{model}/n{n}");
    }
    finish(
        5,
        "all 78 reference cells map to their interpretation bands",
        start,
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_06_reference_models_agree_pairwise() {
    let start = Instant::now();
    let models = reference_models();
    assert_eq!(models.len(), 3);
    for i in 0..models.len() {
        for j in (i + 1)..models.len() {
            let a = reference_vector(&models[i], 2);
            let b = reference_vector(&models[j], 2);
            assert_eq!(a.len(), 13);
            let datasets_match = a.iter().zip(&b).all(|(x, y)| x.0 == y.0);
            assert!(datasets_match);
            let xs: Vec<f64> = a.iter().map(|c| c.1).collect();
            let ys: Vec<f64> = b.iter().map(|c| c.1).collect();
            let r = pearson_r(&xs, &ys).unwrap();
            assert!(r > 0.9, "{} vs {}: r = {r}", models[i], models[j]);
        }
    }
    finish(
        6,
        "pairwise correlation of reference index vectors at n=2 exceeds 0.9",
        start,
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_07_validity_gate_boundary() {
    let start = Instant::now();
    let chance = ChanceFloor {
        value: 0.50,
        method: ChanceMethod::DeclaredOverride,
    };
    let (valid, delta_min) = validity(0.51, &chance, None, 0.01);
    assert!(valid);
    assert_eq!(delta_min, 0.01);
    let (valid, _) = validity(0.505, &chance, None, 0.01);
    assert!(!valid);
    let (_, delta_min) = validity(0.60, &chance, Some(0.02), 0.01);
    assert_eq!(delta_min, 0.04);
    finish(
        7,
        "chance gate accepts 0.51 over 0.50, rejects 0.505, widens to 2*se",
        start,
        Duration::from_secs(1),
    );
}

fn bare_manifest(
    task: TaskType,
    scorer: ScorerId,
    samples: Vec<SampleRecord>,
) -> BenchmarkManifest {
    BenchmarkManifest {
        name: "floors".into(),
        task_type: task,
        scorer,
        image_root: "images".into(),
        declared_chance: None,
        samples,
        base_dir: ".".into(),
    }
}

fn bare_sample(id: usize, options: Vec<String>, truth: &str) -> SampleRecord {
    SampleRecord {
        id: format!("s{id}"),
        image_ref: format!("s{id}.png"),
        question: "?".into(),
        options,
        ground_truths: vec![truth.into()],
        meta: BTreeMap::new(),
    }
}

#[test]
fn criterion_08_chance_floors_per_task_type() {
    let start = Instant::now();

    let options = || vec!["a".into(), "b".into(), "c".into(), "d".into()];
    let mcq = bare_manifest(
        TaskType::Mcq,
        ScorerId::McqExact,
        (0..4).map(|i| bare_sample(i, options(), "A")).collect(),
    );
    let floor = chance_floor(&mcq, &label_stats(&mcq)).unwrap();
    assert_eq!(floor.value, 0.25);
    assert_eq!(floor.method, ChanceMethod::UniformMcq);

    let yes_no = bare_manifest(
        TaskType::YesNo,
        ScorerId::YesNo,
        (0..10)
            .map(|i| bare_sample(i, vec![], if i < 7 { "yes" } else { "no" }))
            .collect(),
    );
    let floor = chance_floor(&yes_no, &label_stats(&yes_no)).unwrap();
    assert_eq!(floor.value, 0.70);
    assert_eq!(floor.method, ChanceMethod::MajorityYesNo);

    let open = bare_manifest(
        TaskType::OpenEnded,
        ScorerId::OpenExact,
        (0..10)
            .map(|i| bare_sample(i, vec![], &format!("tag-{i}")))
            .collect(),
    );
    let floor = chance_floor(&open, &label_stats(&open)).unwrap();
    assert_eq!(floor.value, 0.10);
    assert_eq!(floor.method, ChanceMethod::MajorityOpen);

    finish(
        8,
        "chance floors: 4-option MCQ 0.25, 70% majority yes/no 0.70, 10 distinct open 0.10",
        start,
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_09_best_patch_mass_is_conserved() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for _ in 0..200 {
        let (matrix, _, _) = random_matrix(&mut rng, 30);
        for n in [2u32, 3] {
            let contribution = patch_contributions(&matrix, n).unwrap();
            let sum: f64 = contribution.shares.iter().sum();
            if contribution.zero_mass {
                assert_eq!(sum, 0.0);
            } else {
                assert!((sum - 1.0).abs() <= 1e-9, "n {n}: share sum {sum}");
            }
        }
    }

    let tie = EvalMatrix::new(
        "tie".into(),
        "m".into(),
        vec!["only".into()],
        vec![ItemScore::new(1.0).unwrap()],
        BTreeMap::from([(
            2u32,
            vec![[1.0, 1.0, 0.0, 0.0]
                .iter()
                .map(|&v| ItemScore::new(v).unwrap())
                .collect::<Vec<_>>()],
        )]),
    )
    .unwrap();
    let contribution = patch_contributions(&tie, 2).unwrap();
    assert_eq!(contribution.shares, vec![0.5, 0.5, 0.0, 0.0]);

    let center_rows: Vec<Vec<ItemScore>> = (0..6)
        .map(|_| {
            (0..9)
                .map(|i| ItemScore::new(if i == 4 { 1.0 } else { 0.0 }).unwrap())
                .collect()
        })
        .collect();
    let centered = EvalMatrix::new(
        "center".into(),
        "m".into(),
        (0..6).map(|i| format!("i{i}")).collect(),
        vec![ItemScore::new(1.0).unwrap(); 6],
        BTreeMap::from([(3u32, center_rows)]),
    )
    .unwrap();
    let contribution = patch_contributions(&centered, 3).unwrap();
    assert_eq!(center_bias_share(&contribution), Some(1.0));

    finish(
        9,
        "best-patch shares sum to 1 on 200 random matrices; ties split; center pins to 1",
        start,
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_10_bootstrap_se_matches_the_analytic_rate() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let full_scores: Vec<ItemScore> = (0..100)
        .map(|_| ItemScore::new(if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).unwrap())
        .collect();
    let matrix = EvalMatrix::new(
        "bernoulli".into(),
        "m".into(),
        (0..100).map(|i| format!("i{i}")).collect(),
        full_scores,
        BTreeMap::new(),
    )
    .unwrap();
    let config = BootstrapConfig {
        resamples: 1000,
        seed: 42,
    };
    let se = bootstrap_se(&matrix, BootstrapStatistic::Fip, config).unwrap();
    assert!(
        (0.04..=0.06).contains(&se),
        "se {se} outside 20% of the analytic 0.05"
    );
    let again = bootstrap_se(&matrix, BootstrapStatistic::Fip, config).unwrap();
    assert_eq!(se.to_bits(), again.to_bits());
    finish(
        10,
        "bootstrap se of a Bernoulli(0.5) mean lands within [0.04, 0.06] and reruns bit-identical",
        start,
        Duration::from_secs(10),
    );
}

#[test]
fn criterion_11_grids_tile_every_image_exactly() {
    let start = Instant::now();
    for n in 2u32..=5 {
        let spec = GridSpec::new(n).unwrap();
        for w in n..=64 {
            for h in n..=64 {
                let regions = grid_regions(w, h, spec).unwrap();
                assert_eq!(regions.len(), (n * n) as usize);
                let mut paint = vec![0u8; (w * h) as usize];
                for (i, region) in regions.iter().enumerate() {
                    assert_eq!(region.patch_id, i as u32 + 1);
                    for y in region.y..region.y + region.height {
                        for x in region.x..region.x + region.width {
                            paint[(y * w + x) as usize] += 1;
                        }
                    }
                }
                assert!(
                    paint.iter().all(|&count| count == 1),
                    "{w}x{h} n={n}: tiling not exact"
                );
            }
        }
    }
    finish(
        11,
        "grids tile all images exactly once for n in 2..=5, sides up to 64",
        start,
        Duration::from_secs(10),
    );
}

#[test]
fn criterion_12_warm_cache_skips_the_model_and_reproduces_the_report() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        name: "idem".into(),
        item_count: 8,
        image_size: (64, 64),
        composition: vec![
            CompositionGroup {
                kind: SynthKind::LocalOnly,
                count: 5,
                placement: Placement::UniformRandom,
            },
            CompositionGroup {
                kind: SynthKind::FullAndLocal,
                count: 3,
                placement: Placement::UniformRandom,
            },
        ],
        n_design: 2,
        seed: 1212,
    };
    generate(&spec, dir.path()).unwrap();
    let config = oracle_audit_config(dir.path(), vec![2]);
    let report_path = dir.path().join("out").join("report.json");

    let first = run_audit(&config).unwrap();
    assert_eq!(first.dispatched, 8 * 5);
    let first_json = std::fs::read_to_string(&report_path).unwrap();
    let second = run_audit(&config).unwrap();
    assert_eq!(second.dispatched, 0);
    let second_json = std::fs::read_to_string(&report_path).unwrap();

    let strip = |text: &str| -> serde_json::Value {
        let mut value: serde_json::Value = serde_json::from_str(text).unwrap();
        value.as_object_mut().unwrap().remove("created_at");
        value
    };
    assert_eq!(strip(&first_json), strip(&second_json));

    // Same warm-cache pass at the predictor level, with the invocation
    // counter in hand.
    let manifest = load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
    let oracle_config = OracleConfig::load(&dir.path().join("oracle.json")).unwrap();
    let oracle = RegionOracle::new(oracle_config, &manifest).unwrap();
    let mut cache = InferenceCache::open(
        &dir.path().join("cache"),
        &config.model.model_id,
        &manifest.name,
    )
    .unwrap();
    let grids = [GridSpec::new(2).unwrap()];
    let outcome =
        run_inference_plan(&config.model, &oracle, &manifest, &grids, 1, &mut cache).unwrap();
    assert_eq!(outcome.dispatched, 0);
    assert_eq!(oracle.calls(), 0);
    finish(
        12,
        "second audit run dispatches zero model calls and reproduces the report",
        start,
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_13_finer_grids_inflate_the_index_when_boxes_fragment() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir_all(&images).unwrap();

    // 450x450 image, marker box at (160,160) sized 100x100: inside the n=3
    // center patch [150,300)^2, but split across n=5 cells (90px), where the
    // best single-cell coverage is 80*80/10000 = 0.64 < 0.9.
    let marker = PixelBox {
        x: 160,
        y: 160,
        width: 100,
        height: 100,
    };
    let mut samples = Vec::new();
    let mut entries = BTreeMap::new();
    for i in 0..4 {
        let id = format!("frag-{i}");
        let file = format!("{id}.png");
        let mut img = image::RgbImage::from_pixel(450, 450, image::Rgb([235, 235, 235]));
        for y in marker.y..marker.y + marker.height {
            for x in marker.x..marker.x + marker.width {
                img.put_pixel(x, y, image::Rgb([40 * (i as u8 + 1), 80, 160]));
            }
        }
        img.save(images.join(&file)).unwrap();
        samples.push(SampleRecord {
            id: id.clone(),
            image_ref: file,
            question: "What is the identifier of the highlighted marker?".into(),
            options: vec![],
            ground_truths: vec![format!("mark-{i}")],
            meta: BTreeMap::new(),
        });
        entries.insert(
            id,
            OracleEntry {
                answer_boxes: vec![marker],
                coverage_threshold: 0.9,
                full_image_behavior: FullImageBehavior::Correct,
                wrong_answer: "unknown".into(),
            },
        );
    }
    let manifest = BenchmarkManifest {
        name: "fragmentation".into(),
        task_type: TaskType::OpenEnded,
        scorer: ScorerId::OpenExact,
        image_root: "images".into(),
        declared_chance: None,
        samples,
        base_dir: dir.path().to_path_buf(),
    };
    write_manifest(&manifest, &dir.path().join("manifest.jsonl")).unwrap();
    OracleConfig { entries }
        .save(&dir.path().join("oracle.json"))
        .unwrap();

    let outcome = run_audit(&oracle_audit_config(dir.path(), vec![3, 5])).unwrap();
    let at = |n: u32| outcome.report.results.iter().find(|r| r.n == n).unwrap();
    let coarse = at(3);
    let fine = at(5);
    assert_eq!(coarse.mpp, 1.0);
    assert_eq!(coarse.rci, Some(0.0));
    assert_eq!(fine.mpp, 0.0);
    assert_eq!(fine.rci, Some(1.0));
    assert!(fine.rci.unwrap() > coarse.rci.unwrap());
    finish(
        13,
        "boxes spanning one n=3 patch but no n=5 patch push the index from 0.0 up to 1.0",
        start,
        Duration::from_secs(60),
    );
}
