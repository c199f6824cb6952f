//! Category catalog, object templates, and seen/unseen split assignment.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Category, CategoryKind, CategorySplit, EpisodeSplit, InstanceSplit, SceneError};

pub const RECEPTACLE_CATEGORIES: [&str; 21] = [
    "bathtub",
    "bed",
    "bench",
    "cabinet",
    "chair",
    "chest_of_drawers",
    "couch",
    "counter",
    "filing_cabinet",
    "hamper",
    "serving_cart",
    "shelves",
    "shoe_rack",
    "sink",
    "stand",
    "stool",
    "table",
    "toilet",
    "trunk",
    "wardrobe",
    "washer_dryer",
];

const OBJECT_CATEGORIES: [&str; 129] = [
    "action_figure",
    "apple",
    "backpack",
    "baseball_bat",
    "basket",
    "bath_towel",
    "battery_charger",
    "board_game",
    "book",
    "bottle",
    "bowl",
    "box",
    "bread",
    "bucket",
    "butter_dish",
    "cake_pan",
    "calculator",
    "can",
    "candle",
    "candle_holder",
    "candy_bar",
    "canister",
    "cap",
    "cell_phone",
    "cereal_box",
    "clock",
    "coaster",
    "coffee_mug",
    "colander",
    "comb",
    "condiment",
    "cookie_jar",
    "cork",
    "cosmetic",
    "cup",
    "cushion",
    "cutting_board",
    "dishtowel",
    "dog_bed",
    "doll",
    "drill",
    "egg",
    "electric_kettle",
    "eraser",
    "fan",
    "file_sorter",
    "flashlight",
    "flowerpot",
    "fork",
    "frying_pan",
    "game_controller",
    "glass",
    "glasses_case",
    "gloves",
    "hairbrush",
    "hammer",
    "hand_towel",
    "handbag",
    "hat",
    "headphones",
    "helmet",
    "houseplant",
    "ice_tray",
    "jar",
    "jug",
    "kettle",
    "key_chain",
    "keyboard",
    "knife",
    "lamp",
    "laptop",
    "laptop_stand",
    "lego",
    "lunch_box",
    "magazine",
    "marker",
    "measuring_cup",
    "medicine_bottle",
    "mouse",
    "mug",
    "multiport_hub",
    "notebook",
    "orange",
    "paint_brush",
    "pan",
    "paper_towel",
    "pen",
    "pencil_case",
    "pepper_shaker",
    "photo_frame",
    "picture",
    "pillow",
    "pitcher",
    "plant_saucer",
    "plate",
    "pot",
    "power_strip",
    "puzzle",
    "radio",
    "remote",
    "ruler",
    "salt_shaker",
    "sandal",
    "scissors",
    "shoe",
    "soap_dish",
    "soap_dispenser",
    "spatula",
    "sponge",
    "spoon",
    "spray_bottle",
    "squeezer",
    "stapler",
    "sushi_mat",
    "tape",
    "teapot",
    "tissue_box",
    "toiletry",
    "toothbrush",
    "toy_airplane",
    "toy_animal",
    "toy_truck",
    "tray",
    "umbrella",
    "vase",
    "watch",
    "water_bottle",
    "whisk",
    "wooden_spoon",
];

pub fn receptacle_category_names() -> Vec<String> {
    RECEPTACLE_CATEGORIES.iter().map(|s| s.to_string()).collect()
}

/// An object asset: a category plus fixed dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectTemplate {
    pub id: String,
    pub category: String,
    pub footprint_radius: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub categories: Vec<Category>,
    pub templates: Vec<ObjectTemplate>,
}

impl Catalog {
    pub fn object_categories(&self) -> impl Iterator<Item = &Category> {
        self.categories.iter().filter(|c| c.kind == CategoryKind::Object)
    }

    pub fn receptacle_categories(&self) -> impl Iterator<Item = &Category> {
        self.categories.iter().filter(|c| c.kind == CategoryKind::Receptacle)
    }

    /// Copy of the catalog with object-category splits filled in.
    pub fn with_splits(&self, splits: &SplitAssignment) -> Catalog {
        let mut out = self.clone();
        for c in &mut out.categories {
            if c.kind == CategoryKind::Object {
                c.split = Some(if splits.seen_categories.contains(&c.name) {
                    CategorySplit::SeenCategory
                } else {
                    CategorySplit::UnseenCategory
                });
            }
        }
        out
    }
}

/// Instance counts per category for the synthetic catalog: a deterministic
/// long-tailed distribution over `n_categories` summing to `n_instances`.
fn long_tail_counts(n_categories: usize, n_instances: usize) -> Vec<usize> {
    assert!(n_instances >= n_categories);
    let weights: Vec<f64> = (0..n_categories).map(|i| 1.0 / (1.0 + i as f64).powf(0.8)).collect();
    let total: f64 = weights.iter().sum();
    let spare = (n_instances - n_categories) as f64;
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| 1 + (spare * w / total).floor() as usize)
        .collect();
    let mut assigned: usize = counts.iter().sum();
    let mut i = 0;
    while assigned < n_instances {
        counts[i % n_categories] += 1;
        assigned += 1;
        i += 1;
    }
    counts
}

/// Builds the synthetic catalog: 21 receptacle categories plus
/// `n_object_categories` object categories holding `n_instances` templates.
pub fn synthetic_catalog(n_object_categories: usize, n_instances: usize, seed: u64) -> Catalog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut categories: Vec<Category> = RECEPTACLE_CATEGORIES
        .iter()
        .map(|n| Category {
            name: n.to_string(),
            kind: CategoryKind::Receptacle,
            split: None,
        })
        .collect();
    let names: Vec<String> = (0..n_object_categories)
        .map(|i| match OBJECT_CATEGORIES.get(i) {
            Some(n) => n.to_string(),
            None => format!("object_{i:03}"),
        })
        .collect();
    categories.extend(names.iter().map(|n| Category {
        name: n.clone(),
        kind: CategoryKind::Object,
        split: None,
    }));
    let counts = long_tail_counts(n_object_categories, n_instances);
    let mut templates = Vec::with_capacity(n_instances);
    for (name, &count) in names.iter().zip(&counts) {
        for k in 0..count {
            templates.push(ObjectTemplate {
                id: format!("{name}_{k:03}"),
                category: name.clone(),
                footprint_radius: round_mm(rng.gen_range(0.02..=0.04)),
                height: round_mm(rng.gen_range(0.06..=0.20)),
            });
        }
    }
    Catalog { categories, templates }
}

fn round_mm(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Seen/unseen assignment for object categories and templates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub seen_categories: BTreeSet<String>,
    pub seen_instances: BTreeSet<String>,
}

/// Category and instance counts per split pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub seen_categories: usize,
    pub unseen_categories: usize,
    /// Seen categories with at least one seen instance.
    pub sc_si_categories: usize,
    /// Seen categories with at least one unseen instance.
    pub sc_ui_categories: usize,
    pub uc_ui_categories: usize,
    pub sc_si_instances: usize,
    pub sc_ui_instances: usize,
    pub uc_ui_instances: usize,
}

impl SplitAssignment {
    pub fn instance_split(&self, template_id: &str) -> InstanceSplit {
        if self.seen_instances.contains(template_id) {
            InstanceSplit::SeenInstance
        } else {
            InstanceSplit::UnseenInstance
        }
    }

    /// Whether a template belongs to the pool of a phase.
    pub fn in_pool(&self, template: &ObjectTemplate, phase: EpisodeSplit) -> bool {
        let seen_cat = self.seen_categories.contains(&template.category);
        let seen_inst = self.seen_instances.contains(&template.id);
        match phase {
            EpisodeSplit::Train => seen_cat && seen_inst,
            EpisodeSplit::ValScUi => seen_cat && !seen_inst,
            EpisodeSplit::ValUcUi => !seen_cat,
        }
    }

    pub fn pool<'a>(&self, catalog: &'a Catalog, phase: EpisodeSplit) -> Vec<&'a ObjectTemplate> {
        catalog.templates.iter().filter(|t| self.in_pool(t, phase)).collect()
    }

    pub fn counts(&self, catalog: &Catalog) -> SplitCounts {
        let mut per_cat: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for t in &catalog.templates {
            let e = per_cat.entry(t.category.as_str()).or_default();
            if self.seen_instances.contains(&t.id) {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
        let mut c = SplitCounts {
            seen_categories: 0,
            unseen_categories: 0,
            sc_si_categories: 0,
            sc_ui_categories: 0,
            uc_ui_categories: 0,
            sc_si_instances: 0,
            sc_ui_instances: 0,
            uc_ui_instances: 0,
        };
        for cat in catalog.object_categories() {
            let (seen, unseen) = per_cat.get(cat.name.as_str()).copied().unwrap_or_default();
            if self.seen_categories.contains(&cat.name) {
                c.seen_categories += 1;
                c.sc_si_categories += usize::from(seen > 0);
                c.sc_ui_categories += usize::from(unseen > 0);
                c.sc_si_instances += seen;
                c.sc_ui_instances += unseen;
            } else {
                c.unseen_categories += 1;
                c.uc_ui_categories += usize::from(seen + unseen > 0);
                c.uc_ui_instances += seen + unseen;
            }
        }
        c
    }
}

/// Marks `floor(2/3 * n)` object categories as seen, then within each seen
/// category `floor(2/3 * k)` of its `k` templates. Categories and templates are
/// shuffled from their sorted order with a seeded generator.
pub fn assign_splits(catalog: &Catalog, seed: u64) -> Result<SplitAssignment, SceneError> {
    let mut names: Vec<&str> = catalog.object_categories().map(|c| c.name.as_str()).collect();
    if names.len() < 3 {
        return Err(SceneError::InvalidParams(format!(
            "need at least 3 object categories, got {}",
            names.len()
        )));
    }
    names.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    names.shuffle(&mut rng);
    let n_seen = names.len() * 2 / 3;
    let seen_categories: BTreeSet<String> = names[..n_seen].iter().map(|s| s.to_string()).collect();

    let mut by_cat: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for t in &catalog.templates {
        by_cat.entry(t.category.as_str()).or_default().push(t.id.as_str());
    }
    let mut seen_instances = BTreeSet::new();
    for (cat, ids) in &mut by_cat {
        if !seen_categories.contains(*cat) {
            continue;
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let k = ids.len() * 2 / 3;
        seen_instances.extend(ids[..k].iter().map(|s| s.to_string()));
    }
    Ok(SplitAssignment {
        seed,
        seen_categories,
        seen_instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_catalog(cats: usize, per_cat: usize) -> Catalog {
        let mut categories = Vec::new();
        let mut templates = Vec::new();
        for c in 0..cats {
            let name = format!("c{c}");
            categories.push(Category {
                name: name.clone(),
                kind: CategoryKind::Object,
                split: None,
            });
            for k in 0..per_cat {
                templates.push(ObjectTemplate {
                    id: format!("{name}_{k}"),
                    category: name.clone(),
                    footprint_radius: 0.03,
                    height: 0.1,
                });
            }
        }
        Catalog { categories, templates }
    }

    #[test]
    fn three_categories_two_seen() {
        for seed in 0..10 {
            let s = assign_splits(&tiny_catalog(3, 1), seed).unwrap();
            assert_eq!(s.seen_categories.len(), 2);
        }
    }

    #[test]
    fn six_by_three_assignment() {
        let cat = tiny_catalog(6, 3);
        let s = assign_splits(&cat, 11).unwrap();
        assert_eq!(s.seen_categories.len(), 4);
        for c in &s.seen_categories {
            let seen = cat
                .templates
                .iter()
                .filter(|t| &t.category == c && s.seen_instances.contains(&t.id))
                .count();
            assert_eq!(seen, 2);
        }
        // no unseen category has seen instances
        for t in &cat.templates {
            if !s.seen_categories.contains(&t.category) {
                assert!(!s.seen_instances.contains(&t.id));
            }
        }
        assert_eq!(assign_splits(&cat, 11).unwrap(), s);
    }

    #[test]
    fn too_few_categories_rejected() {
        assert!(assign_splits(&tiny_catalog(2, 3), 0).is_err());
    }

    #[test]
    fn synthetic_catalog_sizes() {
        let c = synthetic_catalog(129, 2535, 0);
        assert_eq!(c.object_categories().count(), 129);
        assert_eq!(c.receptacle_categories().count(), 21);
        assert_eq!(c.templates.len(), 2535);
        let names: BTreeSet<_> = c.categories.iter().map(|c| &c.name).collect();
        assert_eq!(names.len(), c.categories.len());
    }

    #[test]
    fn pools_are_disjoint() {
        let c = synthetic_catalog(30, 200, 4);
        let s = assign_splits(&c, 9).unwrap();
        let train: BTreeSet<_> = s.pool(&c, EpisodeSplit::Train).iter().map(|t| &t.id).collect();
        let scui: BTreeSet<_> = s.pool(&c, EpisodeSplit::ValScUi).iter().map(|t| &t.id).collect();
        let ucui: BTreeSet<_> = s.pool(&c, EpisodeSplit::ValUcUi).iter().map(|t| &t.id).collect();
        assert!(train.is_disjoint(&scui));
        assert!(train.is_disjoint(&ucui));
        assert!(scui.is_disjoint(&ucui));
        assert_eq!(train.len() + scui.len() + ucui.len(), c.templates.len());
        for t in s.pool(&c, EpisodeSplit::ValUcUi) {
            assert!(!s.seen_categories.contains(&t.category));
        }
    }
}
