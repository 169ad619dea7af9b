//! Toy dense relational captioning.
//!
//! A scene holds a handful of regions and relation pairs between them; every
//! pair gets the caption `adj noun predicate adj noun`, each word tagged as
//! subject, predicate or object. Nouns come in synonym groups. Each region
//! favors one synonym, and every view of the region carries a noisy cue of
//! which one, so a caption decoder looking at a single pair guesses the name
//! less reliably than one that also hears the other captions mentioning the
//! same region. Captions whose pairs share a region are connected in the
//! decoder graph.

mod model;
mod scene;
mod train;
mod vocab;

pub use model::{batch_graph, GeneratedCaption, RelcapConfig, RelcapModel};
pub use scene::{
    build_corpus, feature_dim, generate_scene, make_consistent_labels, read_scenes, shared_region_graph, view_dim,
    write_scenes, Caption, LabelSet, LabelVariant, Region, RelationPair, Scene, SceneConfig,
};
pub use train::{
    box_groups, build_splits, evaluate, initial_state, run_epoch, train_relcap, train_until, RelcapReport,
};
pub use vocab::{PosTag, Vocabulary, EOS, SOS};
