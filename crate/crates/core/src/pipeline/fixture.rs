//! Synthetic image-caption corpora for offline runs.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::canon;
use crate::corpus::ImageCaptionRecord;

const MODALITIES: &[&str] = &[
    "Axial computed tomography",
    "Coronal magnetic resonance imaging",
    "Chest radiograph",
    "Transabdominal ultrasound",
    "Histopathology micrograph",
    "Sagittal T2-weighted imaging",
    "Contrast-enhanced angiography",
];

const FINDINGS: &[&str] = &[
    "demonstrating a heterogeneous hepatic mass",
    "revealing bilateral pleural effusions",
    "showing a displaced femoral fracture",
    "with marked thickening of the gallbladder wall",
    "highlighting a calcified thyroid nodule",
    "depicting multiple pulmonary nodules",
    "showing an enlarged spleen",
    "revealing acute infarction in the left hemisphere",
];

const CONTEXT: &[&str] = &[
    "in a patient presenting with abdominal pain",
    "obtained three weeks after surgery",
    "before treatment",
    "at follow-up examination",
    "",
];

/// `n` records with ids `rec00000`, ... Captions vary in length; roughly one
/// in eight is a bare modality, which leaves the mock backend short of
/// material.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<ImageCaptionRecord> {
    let mut rng = canon::rng_for(&[b"fixture-corpus", &seed.to_le_bytes()]);
    (0..n)
        .map(|i| {
            let modality = MODALITIES.choose(&mut rng).expect("nonempty");
            let caption = if rng.gen_ratio(1, 8) {
                (*modality).to_string()
            } else {
                let finding = FINDINGS.choose(&mut rng).expect("nonempty");
                let context = CONTEXT.choose(&mut rng).expect("nonempty");
                format!("{modality} {finding} {context}").trim_end().to_string() + "."
            };
            ImageCaptionRecord {
                record_id: format!("rec{i:05}"),
                source_id: format!("PMC{}", 100_000 + i),
                image_ref: format!("images/rec{i:05}.jpg"),
                caption,
                license_tag: "CC BY".into(),
            }
        })
        .collect()
}
