//! Read-only RCI reference values: thirteen public vision-language
//! benchmarks probed with three compact open-weight models at n = 2 and 3.
//!
//! These numbers are measured results shipped as fixtures. Band-mapping and
//! cross-model agreement tests check against them; nothing in this crate
//! regenerates them.

use serde::Deserialize;

const RAW: &str = include_str!("../data/reference_rci.json");

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReferenceCell {
    pub dataset: String,
    pub model: String,
    pub n: u32,
    pub rci: f64,
}

pub fn reference_cells() -> Vec<ReferenceCell> {
    serde_json::from_str(RAW).expect("embedded reference table parses")
}

pub fn reference_models() -> Vec<String> {
    let mut models: Vec<String> = reference_cells().into_iter().map(|c| c.model).collect();
    models.sort();
    models.dedup();
    models
}

pub fn reference_datasets() -> Vec<String> {
    let mut datasets: Vec<String> = reference_cells().into_iter().map(|c| c.dataset).collect();
    datasets.sort();
    datasets.dedup();
    datasets
}

/// RCI values for one model at one granularity, ordered by dataset name.
pub fn reference_vector(model: &str, n: u32) -> Vec<(String, f64)> {
    let mut cells: Vec<(String, f64)> = reference_cells()
        .into_iter()
        .filter(|c| c.model == model && c.n == n)
        .map(|c| (c.dataset, c.rci))
        .collect();
    cells.sort_by(|a, b| a.0.cmp(&b.0));
    cells
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_has_full_coverage() {
        let cells = reference_cells();
        assert_eq!(cells.len(), 78);
        assert_eq!(reference_models().len(), 3);
        assert_eq!(reference_datasets().len(), 13);
        for model in reference_models() {
            for n in [2, 3] {
                assert_eq!(reference_vector(&model, n).len(), 13);
            }
        }
    }

    #[test]
    fn spot_values_match_the_published_table() {
        let cells = reference_cells();
        let get = |dataset: &str, model: &str, n: u32| {
            cells
                .iter()
                .find(|c| c.dataset == dataset && c.model == model && c.n == n)
                .map(|c| c.rci)
                .unwrap()
        };
        assert_eq!(get("BLINK", "Molmo-1B", 3), -0.516);
        assert_eq!(get("ChartQA_TEST", "Qwen2-VL-2B-Instruct", 3), 0.290);
        assert_eq!(get("AMBER", "InternVL-2.5-1B", 3), -0.028);
        assert_eq!(get("POPE", "InternVL-2.5-1B", 2), -0.054);
        assert_eq!(get("AI2D_TEST", "InternVL-2.5-1B", 2), -0.171);
        assert_eq!(get("VizWiz", "Molmo-1B", 3), -0.092);
    }

    #[test]
    fn vectors_are_dataset_ordered() {
        let vector = reference_vector("Molmo-1B", 2);
        let names: Vec<&str> = vector.iter().map(|(d, _)| d.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert_eq!(names.first().copied(), Some("AI2D_TEST"));
        assert_eq!(names.last().copied(), Some("VizWiz"));
    }
}
