use conceptree::decompose::{describe_path, render_clue, render_clues, TemplateMode};
use conceptree::tree::{enumerate_paths, ConceptTree, PathKey};

fn crow() -> ConceptTree {
    ConceptTree::parse(
        r#"{
          "domain": "bird",
          "subclasses": ["American crow", "blue jay"],
          "roots": [
            {"name": "head", "subparts": [
              {"name": "eyes", "subparts": [], "attributes": [
                {"name": "shape", "values": {"American crow": ["rounded"], "blue jay": ["oval"]}}
              ]}
            ], "attributes": []},
            {"name": "primary features", "subparts": [], "attributes": [
              {"name": "color", "values": {"American crow": ["black"], "blue jay": [{"and": ["blue", "white"]}]}}
            ]}
          ]
        }"#,
    )
    .unwrap()
}

#[test]
fn crow_eye_shape_under_each_template() {
    let tree = crow();
    let key: PathKey = "American crow|head/eyes|shape|0".parse().unwrap();
    assert_eq!(
        render_clue(TemplateMode::WithLabel, &tree, &key).unwrap(),
        "A photo of American crow with eyes with rounded shape"
    );
    assert_eq!(
        render_clue(TemplateMode::Common, &tree, &key).unwrap(),
        "A photo of bird with eyes with rounded shape"
    );
    assert_eq!(render_clue(TemplateMode::Without, &tree, &key).unwrap(), "A photo of eyes with rounded shape");
}

#[test]
fn and_leaves_join_terms() {
    let tree = crow();
    let key: PathKey = "blue jay|primary features|color|0".parse().unwrap();
    assert_eq!(describe_path(&tree, &key).unwrap(), "primary features with blue and white color");
}

#[test]
fn templates_differ_only_in_prefix() {
    let tree = crow();
    let sets: Vec<_> = TemplateMode::ALL.iter().map(|&m| render_clues(&tree, m).unwrap()).collect();
    let paths = enumerate_paths(&tree);
    for set in &sets {
        assert_eq!(set.keys().cloned().collect::<Vec<_>>(), paths);
    }
    for (i, key) in paths.iter().enumerate() {
        let h = describe_path(&tree, key).unwrap();
        for set in &sets {
            assert!(set.clues[i].text.ends_with(&h));
        }
    }
}

#[test]
fn unknown_path_is_an_error() {
    let key: PathKey = "American crow|tail|shape|0".parse().unwrap();
    assert!(render_clue(TemplateMode::Without, &crow(), &key).is_err());
}
