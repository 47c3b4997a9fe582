use std::fs;
use std::path::Path;

use gsdyn::dataset::{
    generate_dataset, manifest_files, read_camera, synthesize, write_camera, Dataset, Manifest, SceneKind, SceneRecipe,
};
use gsdyn::selftest::tiny_recipe;

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_writes_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let recipe = tiny_recipe();
    generate_dataset(&recipe, 11, a.path()).unwrap();
    generate_dataset(&recipe, 11, b.path()).unwrap();
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
}

#[test]
fn different_seeds_jitter_differently() {
    let recipe = tiny_recipe();
    let a = synthesize(&recipe, 1).unwrap();
    let b = synthesize(&recipe, 2).unwrap();
    assert_ne!(a.states[0].x, b.states[0].x);
}

#[test]
fn manifest_matches_the_files_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let recipe = tiny_recipe();
    let manifest = generate_dataset(&recipe, 0, dir.path()).unwrap();
    assert_eq!(Manifest::read(dir.path()).unwrap(), manifest);
    for f in manifest_files(&manifest, dir.path()) {
        assert!(f.is_file(), "{} missing", f.display());
    }
    let (data, _) = Dataset::load(dir.path()).unwrap();
    assert_eq!(data.cameras.len(), recipe.cameras);
    assert_eq!(data.size(), (recipe.width, recipe.height));
    assert_eq!(data.train_frame_count, recipe.train_frames);
    assert_eq!(data.extrapolate_frame_count, recipe.frames - recipe.train_frames);
    assert_eq!(manifest.labels.len(), recipe.particle_count);
}

#[test]
fn static_frames_are_identical() {
    let mut recipe = SceneRecipe::preset(SceneKind::Static);
    recipe.frames = 12;
    recipe.train_frames = 9;
    let syn = synthesize(&recipe, 0).unwrap();
    for cam in &syn.images {
        assert!(cam.iter().all(|img| img.rgb == cam[0].rgb));
    }
}

#[test]
fn presets_use_the_standard_protocol() {
    for kind in SceneKind::ALL {
        let r = SceneRecipe::preset(kind);
        r.validate().unwrap();
        assert_eq!((r.train_frames, r.extrapolate_frames()), (67, 22));
        assert_eq!((r.width, r.height, r.cameras), (64, 64, 4));
        assert_eq!(SceneKind::parse(kind.name()), Some(kind));
    }
}

#[test]
fn two_materials_has_two_labelled_objects() {
    let mut recipe = SceneRecipe::preset(SceneKind::TwoMaterials);
    recipe.frames = 3;
    recipe.train_frames = 2;
    let syn = synthesize(&recipe, 0).unwrap();
    let mut seen = syn.labels.clone();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen, vec![0, 1]);
    assert_eq!(syn.labels.iter().filter(|&&l| l == 0).count(), recipe.particle_count / 2);
}

#[test]
fn invalid_recipes_are_rejected() {
    let mut r = tiny_recipe();
    r.particle_count = 63;
    assert!(r.validate().is_err());
    let mut r = tiny_recipe();
    r.train_frames = r.frames + 1;
    assert!(r.validate().is_err());
    let mut r = tiny_recipe();
    r.dt = 7e-4;
    assert!(r.validate().is_err());
}

#[test]
fn camera_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for (i, cam) in tiny_recipe().camera_rig().unwrap().iter().enumerate() {
        let path = dir.path().join(format!("cam_{i}.toml"));
        write_camera(&path, cam).unwrap();
        let back = read_camera(&path).unwrap();
        assert!((back.world_to_camera - cam.world_to_camera).abs().max() < 1e-12);
        assert_eq!((back.width, back.height), (cam.width, cam.height));
        assert_eq!((back.fx, back.cy), (cam.fx, cam.cy));
    }
}
