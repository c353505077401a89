//! Published reference numbers, shown next to desk-scale results.

/// R-1, R-2, R-L, BLEU, BLEU-1 on valid_seen then valid_unseen, by task id.
pub const SCORE_REFERENCE: [(&str, [f64; 10]); 16] = [
    ("pddl2sum", [0.628, 0.372, 0.590, 0.624, 0.902, 0.610, 0.358, 0.587, 0.607, 0.890]),
    ("actions2sum", [0.610, 0.358, 0.589, 0.604, 0.881, 0.630, 0.377, 0.599, 0.647, 0.900]),
    ("genpddl2sum", [0.596, 0.344, 0.565, 0.580, 0.877, 0.518, 0.271, 0.505, 0.472, 0.810]),
    ("genactions2sum", [0.555, 0.301, 0.537, 0.485, 0.826, 0.514, 0.269, 0.491, 0.425, 0.760]),
    ("pddl2inst", [0.557, 0.325, 0.529, 0.529, 0.866, 0.545, 0.310, 0.519, 0.527, 0.869]),
    ("actions2inst", [0.566, 0.329, 0.528, 0.539, 0.854, 0.570, 0.338, 0.527, 0.551, 0.867]),
    ("genpddl2inst", [0.542, 0.312, 0.514, 0.497, 0.864, 0.490, 0.260, 0.457, 0.427, 0.827]),
    ("genactions2inst", [0.508, 0.279, 0.488, 0.462, 0.844, 0.493, 0.270, 0.457, 0.433, 0.826]),
    ("img2sum", [0.582, 0.321, 0.556, 0.550, 0.862, 0.519, 0.265, 0.496, 0.438, 0.779]),
    ("img2inst", [0.540, 0.314, 0.496, 0.501, 0.805, 0.536, 0.292, 0.460, 0.438, 0.769]),
    ("img2pddl", [0.923, 0.881, 0.923, 0.854, 0.942, 0.761, 0.597, 0.763, 0.594, 0.824]),
    ("img2actions", [0.858, 0.713, 0.821, 0.652, 0.856, 0.822, 0.654, 0.769, 0.590, 0.812]),
    ("imgpddl2sum", [0.606, 0.355, 0.575, 0.587, 0.883, 0.571, 0.325, 0.543, 0.527, 0.840]),
    ("imgactions2sum", [0.572, 0.321, 0.549, 0.524, 0.843, 0.519, 0.269, 0.498, 0.417, 0.785]),
    ("imgpddl2inst", [0.563, 0.329, 0.498, 0.514, 0.830, 0.542, 0.286, 0.451, 0.437, 0.792]),
    ("imgactions2inst", [0.554, 0.322, 0.491, 0.501, 0.815, 0.539, 0.289, 0.461, 0.434, 0.767]),
];

/// Percent no errors, then action, object, place, extra errors, by task id
/// (50 manually inspected summaries per route).
pub const ERROR_REFERENCE: [(&str, [f64; 5]); 7] = [
    ("pddl2sum", [98.0, 0.0, 0.0, 2.0, 0.0]),
    ("actions2sum", [96.0, 0.0, 4.0, 0.0, 0.0]),
    ("genpddl2sum", [54.0, 10.0, 8.0, 38.0, 4.0]),
    ("genactions2sum", [46.0, 8.0, 28.0, 48.0, 4.0]),
    ("img2sum", [38.0, 4.0, 26.0, 22.0, 4.0]),
    ("imgpddl2sum", [56.0, 4.0, 14.0, 34.0, 0.0]),
    ("imgactions2sum", [52.0, 0.0, 20.0, 22.0, 10.0]),
];

pub fn score_reference(task: &str) -> Option<[f64; 10]> {
    SCORE_REFERENCE.iter().find(|(t, _)| *t == task).map(|(_, v)| *v)
}

pub fn error_reference(task: &str) -> Option<[f64; 5]> {
    ERROR_REFERENCE.iter().find(|(t, _)| *t == task).map(|(_, v)| *v)
}

/// Published parameter counts of the full-size vision and multimodal models.
pub const VISION_PARAMS: usize = 26_467_579;
pub const MULTIMODAL_PARAMS: usize = 43_133_948;

#[cfg(test)]
mod tests {
    use super::*;
    use actsum_core::corpus::TaskSpec;

    #[test]
    fn every_matrix_row_has_a_reference() {
        for t in TaskSpec::matrix_rows() {
            assert!(score_reference(&t.id()).is_some(), "{}", t.id());
        }
        assert_eq!(score_reference("pddl2sum").unwrap()[0], 0.628);
        for (t, _) in ERROR_REFERENCE {
            assert!(t.parse::<TaskSpec>().is_ok());
        }
    }

    #[test]
    fn error_rows_are_percentages_of_fifty() {
        for (_, v) in ERROR_REFERENCE {
            for x in v {
                assert_eq!((x / 2.0).fract(), 0.0);
            }
        }
    }
}

#[cfg(test)]
mod param_counts {
    use actsum_models::{count_parameters, ModelConfig, ModelKind};

    // Printed for side-by-side reading only; the published figures depend on
    // vocabularies that are not available.
    #[test]
    fn full_size_counts_are_reported() {
        for (kind, published) in [(ModelKind::Vision, super::VISION_PARAMS), (ModelKind::Multimodal, super::MULTIMODAL_PARAMS)] {
            let c = ModelConfig::paper(kind);
            let (src, tgt) = (1000, 1000);
            let n = count_parameters(&c, src, tgt);
            let per_tgt = count_parameters(&c, src, tgt + 1) - n;
            assert_eq!(per_tgt, 512 + 1024 + 1);
            eprintln!("{}: {n} parameters at src/tgt vocab {src}/{tgt}, published {published}", kind.name());
        }
    }
}
