use serde_json::Value;
use trg_web::{augment_json, graph_json, metrics_json, parse_labels, source_names};

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn bundled_graphs_are_symmetric_and_bounded_where_promised() {
    for src in source_names() {
        for metric in ["l2", "l1", "cosine"] {
            for norm in ["min-max", "z-score", "sigmoid"] {
                let g = parse(graph_json(src, metric, norm).unwrap());
                let v = g["values"].as_array().unwrap();
                assert_eq!(v.len(), g["labels"].as_array().unwrap().len());
                for (i, row) in v.iter().enumerate() {
                    for (j, x) in row.as_array().unwrap().iter().enumerate() {
                        let x = x.as_f64().unwrap();
                        assert!(x.is_finite());
                        assert_eq!(x, v[j][i].as_f64().unwrap());
                        // z-scores are unbounded; the other two land in [0, 1]
                        if norm != "z-score" {
                            assert!((0.0..=1.0).contains(&x), "{src} {metric} {norm}");
                        }
                    }
                    if norm != "z-score" {
                        assert_eq!(row[i].as_f64().unwrap(), 1.0);
                    }
                }
            }
        }
    }
    assert!(graph_json("nope", "l2", "min-max").is_err());
    assert!(graph_json("pku_joints", "l3", "min-max").is_err());
}

#[test]
fn rotation_preview_keeps_bone_lengths() {
    let r = parse(augment_json("rotate", 73.0, 2, 15).unwrap());
    let pts = |k: &str| -> Vec<[f64; 3]> {
        r[k].as_array()
            .unwrap()
            .iter()
            .map(|p| std::array::from_fn(|a| p[a].as_f64().unwrap()))
            .collect()
    };
    let (b, a) = (pts("before"), pts("after"));
    for e in r["edges"].as_array().unwrap() {
        let (i, j) = (e[0].as_u64().unwrap() as usize, e[1].as_u64().unwrap() as usize);
        let len = |p: &[[f64; 3]]| (0..3).map(|k| (p[i][k] - p[j][k]).powi(2)).sum::<f64>().sqrt();
        assert!((len(&b) - len(&a)).abs() < 1e-9);
    }
    for (p, q) in b.iter().zip(&a) {
        assert!((p[1] - q[1]).abs() < 1e-12, "vertical coordinate moved");
    }
}

#[test]
fn occlusion_preview_zeroes_only_listed_joints() {
    for seed in 0..10 {
        let r = parse(augment_json("occlude", 0.0, seed, 5).unwrap());
        let hidden: Vec<u64> = r["occluded"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
        assert!(hidden.len() <= 4);
        for (j, (p, q)) in r["before"].as_array().unwrap().iter().zip(r["after"].as_array().unwrap()).enumerate() {
            if hidden.contains(&(j as u64)) {
                assert!(q.as_array().unwrap().iter().all(|x| x.as_f64() == Some(0.0)));
            } else {
                assert_eq!(p, q);
            }
        }
    }
    assert!(augment_json("shear", 0.0, 0, 0).is_err());
}

#[test]
fn metrics_and_label_parsing() {
    assert_eq!(parse_labels("0*2, 1 2*3").unwrap(), vec![0, 0, 1, 2, 2, 2]);
    assert!(parse_labels("a").is_err());
    let m = parse(metrics_json("0*10 1*5 2*5", "0*10 1*5 2*5").unwrap());
    for k in ["acc", "edit", "f1_10", "f1_25", "f1_50"] {
        assert_eq!(m[k].as_f64(), Some(100.0));
    }
    let m = parse(metrics_json("0*10 1*5 2*5", "0*8 1*7 2*5").unwrap());
    assert_eq!(m["acc"].as_f64(), Some(90.0));
    assert_eq!(m["pred"].as_array().unwrap().len(), 3);
    assert!(metrics_json("0 1", "0").is_err());
}
