use indexmap::IndexMap;
use oncode::graph_data::{
    parse_gene_graph, ExperimentKey, GeneGraph, HeteroInstance, VocabularyPolicy,
};
use oncode::hetero_encoder::*;
use oncode::numkit::{gradient_check, sigmoid, softmax, ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph(text: &str) -> GeneGraph {
    parse_gene_graph(text, "g", &VocabularyPolicy::FromEdges, "t").unwrap()
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
    a.same_shape(b)
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| (x - y).abs() <= tol)
}

fn relu(t: &Tensor) -> Tensor {
    t.map(|x| x.max(0.0))
}

fn five_gene() -> (HeteroEncoder, ParamSet, HeteroInstance) {
    let g = graph("g0\tg1\t0.9\ng1\tg2\t0.8\ng2\tg3\t0.7\ng3\tg4\t0.6\ng0\tg4\t0.2\n");
    let cfg = EncoderConfig {
        hidden: 3,
        ..EncoderConfig::default()
    };
    let enc = HeteroEncoder::new(cfg, &g, 3, 2).unwrap();
    let mut p = ParamSet::new();
    enc.init(&mut p, &mut ChaCha8Rng::seed_from_u64(11));
    // bigger embeddings keep ReLUs away from their kinks
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for name in ["enc.gene_emb", "enc.drug_emb", "enc.disease_emb"] {
        let t = p.get(name).unwrap();
        let (r, c) = (t.rows(), t.cols());
        p.insert(name, random(r, c, &mut rng));
    }
    let inst = HeteroInstance {
        key: ExperimentKey::new("M1", "d0+d2").unwrap(),
        gene_features: vec![0.3, -1.2, 0.8, 1.5, -0.4],
        drugs: vec![0, 2],
        disease: 1,
        drug_gene_edges: vec![(0, 1), (0, 3), (1, 3)],
        disease_genes: vec![0, 2, 3],
        warnings: vec![],
    };
    (enc, p, inst)
}

fn bga_params(p: &ParamSet, stage: &str) -> BgaLayer {
    BgaLayer {
        wu: p.get(&format!("{stage}.wu")).unwrap().clone(),
        wv: p.get(&format!("{stage}.wv")).unwrap().clone(),
        a: p.get(&format!("{stage}.a")).unwrap().clone(),
        slope: 0.2,
    }
}

#[test]
fn gcn_without_edges_is_dense_layer() {
    let g = parse_gene_graph(
        "",
        "g",
        &VocabularyPolicy::Fixed(vec!["a".into(), "b".into()]),
        "t",
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (h, w, b) = (
        random(2, 3, &mut rng),
        random(3, 2, &mut rng),
        random(1, 2, &mut rng),
    );
    let out = gcn_forward(&g.normalized_adjacency(0.5), &w, &b, &h).unwrap();
    let mut expect = h.matmul(&w).unwrap();
    for r in 0..2 {
        for c in 0..2 {
            expect.set(r, c, (expect.get(r, c) + b.get(0, c)).max(0.0));
        }
    }
    assert!(close(&out, &expect, 1e-15));
}

#[test]
fn gcn_two_node_mix() {
    let g = graph("a\tb\t1\n");
    let out = gcn_forward(
        &g.normalized_adjacency(0.5),
        &Tensor::identity(2),
        &Tensor::zeros(1, 2),
        &Tensor::identity(2),
    )
    .unwrap();
    assert!(close(&out, &Tensor::filled(2, 2, 0.5), 1e-15));
    assert!(gcn_forward(
        &g.normalized_adjacency(0.5),
        &Tensor::identity(2),
        &Tensor::zeros(1, 2),
        &Tensor::identity(3)
    )
    .is_err());
}

#[test]
fn gcn_permutation_equivariance() {
    // path a-b-c, then the same path with the middle node sorting first
    let g1 = graph("a\tb\t1\nb\tc\t1\n");
    let g2 = graph("b\ta\t1\na\tc\t1\n");
    let new_of = [1, 0, 2];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, w, b) = (
        random(3, 2, &mut rng),
        random(2, 2, &mut rng),
        random(1, 2, &mut rng),
    );
    let o1 = gcn_forward(&g1.normalized_adjacency(0.5), &w, &b, &h).unwrap();
    let mut hp = Tensor::zeros(3, 2);
    for old in 0..3 {
        for c in 0..2 {
            hp.set(new_of[old], c, h.get(old, c));
        }
    }
    let o2 = gcn_forward(&g2.normalized_adjacency(0.5), &w, &b, &hp).unwrap();
    for old in 0..3 {
        assert_eq!(o2.row_slice(new_of[old]), o1.row_slice(old));
    }
}

#[test]
fn bg_conv_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, w) = (random(1, 3, &mut rng), random(3, 2, &mut rng));
    let one = bg_conv(&[(0, 0)], 1, &x, &w).unwrap();
    assert!(close(&one, &relu(&x.matmul(&w).unwrap()), 1e-15));
    let pair = Tensor::from_rows(&[x.data().to_vec(), x.map(|v| -v).data().to_vec()]).unwrap();
    let sym = bg_conv(&[(0, 0), (0, 1)], 2, &pair, &Tensor::identity(3)).unwrap();
    assert_eq!(sym, Tensor::zeros(2, 3));
}

#[test]
fn attention_matches_direct_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let layer = BgaLayer {
        wu: random(4, 3, &mut rng),
        wv: random(2, 3, &mut rng),
        a: random(6, 1, &mut rng),
        slope: 0.2,
    };
    let u = random(1, 4, &mut rng);
    let nb = random(3, 2, &mut rng);
    let alpha = attention_weights(&layer, u.data(), &nb).unwrap();

    let pu = u.matmul(&layer.wu).unwrap();
    let pv = nb.matmul(&layer.wv).unwrap();
    let mut scores = Vec::new();
    for r in 0..3 {
        let mut s = 0.0;
        for k in 0..3 {
            s += layer.a.get(k, 0) * pu.get(0, k) + layer.a.get(k + 3, 0) * pv.get(r, k);
        }
        scores.push(if s > 0.0 { s } else { 0.2 * s });
    }
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    for (a, b) in alpha.iter().zip(&e) {
        assert!((a - b / z).abs() <= 1e-12);
    }
    assert!((alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
}

#[test]
fn bga_forward_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut layer = BgaLayer {
        wu: random(2, 2, &mut rng),
        wv: random(2, 2, &mut rng),
        a: random(4, 1, &mut rng),
        slope: 0.2,
    };
    let xu = random(1, 2, &mut rng);
    let xv = random(2, 2, &mut rng);
    let single = bga_forward(&layer, &[(0, 1)], &xu, &xv).unwrap();
    let expect = relu(
        &Tensor::row(xv.row_slice(1).to_vec())
            .matmul(&layer.wv)
            .unwrap(),
    );
    assert!(close(&single, &expect, 1e-15));
    let saved_a = layer.a.clone();
    layer.a = random(4, 1, &mut rng);
    assert!(close(
        &bga_forward(&layer, &[(0, 1)], &xu, &xv).unwrap(),
        &expect,
        1e-15
    ));
    layer.a = saved_a;

    assert_eq!(
        bga_forward(&layer, &[(0, 0), (0, 1)], &xu, &Tensor::zeros(2, 2)).unwrap(),
        Tensor::zeros(1, 2)
    );

    let both = bga_forward(&layer, &[(0, 0), (0, 1)], &xu, &xv).unwrap();
    let alpha = attention_weights(&layer, xu.data(), &xv).unwrap();
    let pv = xv.matmul(&layer.wv).unwrap();
    let sum: Vec<f64> = (0..2)
        .map(|c| (alpha[0] * pv.get(0, c) + alpha[1] * pv.get(1, c)).max(0.0))
        .collect();
    assert!(close(&both, &Tensor::row(sum), 1e-14));
}

#[test]
fn message_passing_composes_bga_with_residual() {
    let (enc, p, mut inst) = five_gene();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let hg = random(5, 3, &mut rng);
    let hd = random(2, 3, &mut rng);
    // two drugs on gene 3, one on gene 1
    let out = enc.mp_drug_to_gene(&p, &inst, &hg, &hd).unwrap();
    let layer = bga_params(&p, "enc.bga_dg");
    let g3 = Tensor::row(hg.row_slice(3).to_vec());
    let msg = bga_forward(&layer, &[(0, 0), (0, 1)], &g3, &hd).unwrap();
    for c in 0..3 {
        assert!((out.get(3, c) - hg.get(3, c) - msg.get(0, c)).abs() <= 1e-14);
    }
    for r in [0, 2, 4] {
        assert_eq!(out.row_slice(r), hg.row_slice(r));
    }

    // single drug targeting a gene with zero prior state
    inst.drug_gene_edges = vec![(1, 2)];
    let mut hz = hg.clone();
    for c in 0..3 {
        hz.set(2, c, 0.0);
    }
    let out = enc.mp_drug_to_gene(&p, &inst, &hz, &hd).unwrap();
    let expect = relu(
        &Tensor::row(hd.row_slice(1).to_vec())
            .matmul(&layer.wv)
            .unwrap(),
    );
    assert!(close(
        &Tensor::row(out.row_slice(2).to_vec()),
        &expect,
        1e-15
    ));

    let dis = random(1, 3, &mut rng);
    let out = enc.mp_gene_to_disease(&p, &inst, &dis, &hg).unwrap();
    let gl = bga_params(&p, "enc.bga_gd");
    let nb = Tensor::from_rows(&[
        hg.row_slice(0).to_vec(),
        hg.row_slice(2).to_vec(),
        hg.row_slice(3).to_vec(),
    ])
    .unwrap();
    let alpha = attention_weights(&gl, dis.data(), &nb).unwrap();
    let pv = nb.matmul(&gl.wv).unwrap();
    for c in 0..3 {
        let m: f64 = (0..3)
            .map(|r| alpha[r] * pv.get(r, c))
            .sum::<f64>()
            .max(0.0);
        assert!((out.get(0, c) - dis.get(0, c) - m).abs() <= 1e-14);
    }
}

#[test]
fn beta1_matches_staged_oracle() {
    let (enc, p, inst) = five_gene();
    let beta = enc.encode_beta1(&p, &inst).unwrap();
    assert_eq!((beta.rows(), beta.cols()), (1, 6));

    let adj = enc.adjacency();
    let mut h = enc.gene_input_features(&p, &inst).unwrap();
    for l in 0..2 {
        h = gcn_forward(
            adj,
            p.get(&format!("enc.gcn.{l}.w")).unwrap(),
            p.get(&format!("enc.gcn.{l}.b")).unwrap(),
            &h,
        )
        .unwrap();
    }
    let drug_emb = p.get("enc.drug_emb").unwrap();
    let hd = Tensor::from_rows(&[
        drug_emb.row_slice(0).to_vec(),
        drug_emb.row_slice(2).to_vec(),
    ])
    .unwrap();
    let h = enc.mp_drug_to_gene(&p, &inst, &h, &hd).unwrap();
    let dis = Tensor::row(p.get("enc.disease_emb").unwrap().row_slice(1).to_vec());
    let dis = enc.mp_gene_to_disease(&p, &inst, &dis, &h).unwrap();
    let mut expect: Vec<f64> = (0..3)
        .map(|c| (hd.get(0, c) + hd.get(1, c)) / 2.0)
        .collect();
    expect.extend_from_slice(dis.data());
    assert!(close(&beta, &Tensor::row(expect), 1e-13));
}

#[test]
fn zeroed_attention_is_identity() {
    let (enc, mut p, inst) = five_gene();
    for stage in ["enc.bga_dg", "enc.bga_gd"] {
        for part in ["wu", "wv", "a"] {
            let name = format!("{stage}.{part}");
            let t = p.get(&name).unwrap();
            p.insert(name.clone(), Tensor::zeros(t.rows(), t.cols()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let hg = random(5, 3, &mut rng);
    let hd = random(2, 3, &mut rng);
    assert_eq!(enc.mp_drug_to_gene(&p, &inst, &hg, &hd).unwrap(), hg);
    let dis = random(1, 3, &mut rng);
    assert_eq!(enc.mp_gene_to_disease(&p, &inst, &dis, &hg).unwrap(), dis);
}

#[test]
fn beta1_invariant_to_gene_relabeling() {
    let (enc, p, inst) = five_gene();
    let base = enc.encode_beta1(&p, &inst).unwrap();

    // rename g_i -> names that sort in the order 4,2,0,3,1
    let names = ["q2", "q4", "q1", "q3", "q0"];
    let text = "g0\tg1\t0.9\ng1\tg2\t0.8\ng2\tg3\t0.7\ng3\tg4\t0.6\ng0\tg4\t0.2\n";
    let mut renamed = text.to_string();
    for (i, n) in names.iter().enumerate() {
        renamed = renamed.replace(&format!("g{i}"), n);
    }
    let g2 = graph(&renamed);
    let new_of: Vec<usize> = names.iter().map(|n| g2.gene_index(n).unwrap()).collect();
    let enc2 = HeteroEncoder::new(enc.config.clone(), &g2, 3, 2).unwrap();
    let mut p2 = p.clone();
    let emb = p.get("enc.gene_emb").unwrap();
    let mut emb2 = Tensor::zeros(5, 3);
    for old in 0..5 {
        for c in 0..3 {
            emb2.set(new_of[old], c, emb.get(old, c));
        }
    }
    p2.insert("enc.gene_emb", emb2);
    let mut inst2 = inst.clone();
    inst2.gene_features = vec![0.0; 5];
    for old in 0..5 {
        inst2.gene_features[new_of[old]] = inst.gene_features[old];
    }
    inst2.drug_gene_edges = inst
        .drug_gene_edges
        .iter()
        .map(|&(s, g)| (s, new_of[g]))
        .collect();
    inst2.disease_genes = inst.disease_genes.iter().map(|&g| new_of[g]).collect();
    let relabeled = enc2.encode_beta1(&p2, &inst2).unwrap();
    assert!(close(&base, &relabeled, 1e-13));
}

#[test]
fn distant_gene_does_not_reach_disease() {
    let g = graph("g0\tg1\t1\ng1\tg2\t1\ng2\tg3\t1\ng3\tg4\t1\ng4\tg5\t1\ng5\tg6\t1\n");
    let cfg = EncoderConfig {
        hidden: 4,
        ..EncoderConfig::default()
    };
    let enc = HeteroEncoder::new(cfg, &g, 1, 1).unwrap();
    let mut p = ParamSet::new();
    enc.init(&mut p, &mut ChaCha8Rng::seed_from_u64(8));
    let mut inst = HeteroInstance {
        key: ExperimentKey::new("M", "d").unwrap(),
        gene_features: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
        drugs: vec![0],
        disease: 0,
        drug_gene_edges: vec![(0, 0)],
        disease_genes: vec![0],
        warnings: vec![],
    };
    let a = enc.encode_beta1(&p, &inst).unwrap();
    inst.gene_features[6] = 5.0;
    let b = enc.encode_beta1(&p, &inst).unwrap();
    assert_eq!(a, b);
    inst.gene_features[1] = 5.0;
    let c = enc.encode_beta1(&p, &inst).unwrap();
    assert_eq!(a.data()[..4], c.data()[..4]);
}

#[test]
fn treatment_changes_only_reach_through_drugs() {
    let (enc, p, inst) = five_gene();
    let mut other = inst.clone();
    other.drugs = vec![1, 2];
    let a = enc.encode_beta1(&p, &inst).unwrap();
    let b = enc.encode_beta1(&p, &other).unwrap();
    assert_ne!(a.data()[..3], b.data()[..3]);
    // with the drug-to-gene messages silenced the disease part no longer depends on treatment
    let mut q = p.clone();
    q.insert("enc.bga_dg.wv", Tensor::zeros(3, 3));
    let a = enc.encode_beta1(&q, &inst).unwrap();
    let b = enc.encode_beta1(&q, &other).unwrap();
    assert_eq!(a.data()[3..], b.data()[3..]);
}

#[test]
fn gradient_check_through_beta1() {
    let (enc, p, inst) = five_gene();
    let inputs: IndexMap<String, Tensor> = p.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let target = Tensor::row(vec![0.3, -0.2, 0.5, 0.1, 0.7, -0.4]);
    let report = gradient_check(
        &inputs,
        |tape, b| {
            let bound = b.as_bound();
            let enc_vars = enc.encode_tape(tape, &bound, &inst)?;
            let t = tape.leaf(target.clone());
            Ok(tape.mse(enc_vars.beta1, t))
        },
        1e-6,
        1e-4,
    )
    .unwrap();
    for c in &report.inputs {
        assert!(c.passed, "{} rel err {}", c.name, c.rel_error);
    }
}

fn four_node_vgae() -> (VgaeModel, ParamSet) {
    let g = graph("a\tb\t1\nb\tc\t1\nc\td\t0.3\n");
    let cfg = EncoderConfig {
        hidden: 3,
        ..EncoderConfig::default()
    };
    let enc = HeteroEncoder::new(cfg, &g, 0, 0).unwrap();
    let model = VgaeModel::new(enc, &g).unwrap();
    let mut p = ParamSet::new();
    model.init(&mut p, &mut ChaCha8Rng::seed_from_u64(9));
    (model, p)
}

#[test]
fn vgae_standard_normal_posterior_has_zero_kl() {
    let (model, mut p) = four_node_vgae();
    for n in ["vgae.mu.w", "vgae.mu.b", "vgae.logvar.w", "vgae.logvar.b"] {
        let t = p.get(n).unwrap();
        p.insert(n, Tensor::zeros(t.rows(), t.cols()));
    }
    let l = vgae_loss(
        &model,
        &p,
        &[0.1, 0.2, 0.3, 0.4],
        &[(0, 2), (1, 3)],
        &Tensor::zeros(4, 3),
    )
    .unwrap();
    assert_eq!(l.kl, 0.0);
}

#[test]
fn edge_reconstruction_saturates() {
    let tape = oncode::numkit::Tape::new();
    let z = tape
        .leaf(Tensor::from_rows(&[vec![100.0, 0.0], vec![100.0, 0.0], vec![-100.0, 0.0]]).unwrap());
    let loss = edge_reconstruction(&tape, z, &[(0, 1)], &[(0, 2)]).unwrap();
    assert!(tape.value(loss).item() < 1e-10);
}

#[test]
fn vgae_components_match_oracle() {
    let (model, p) = four_node_vgae();
    assert_eq!(model.positive_edges(), &[(0, 1), (1, 2)]);
    let feats = [0.5, -1.0, 1.5, 0.2];
    let neg = [(0, 3), (1, 3)];
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let noise = random(4, 3, &mut rng);
    let l = vgae_loss(&model, &p, &feats, &neg, &noise).unwrap();

    let adj = model.encoder.adjacency();
    let inst = HeteroInstance {
        key: ExperimentKey::new("M", "x").unwrap(),
        gene_features: feats.to_vec(),
        drugs: vec![],
        disease: 0,
        drug_gene_edges: vec![],
        disease_genes: vec![],
        warnings: vec![],
    };
    // recompute the trunk by hand
    let w_in = p.get("enc.gene_in.w").unwrap();
    let b_in = p.get("enc.gene_in.b").unwrap();
    let emb = p.get("enc.gene_emb").unwrap();
    let mut h = Tensor::zeros(4, 3);
    for r in 0..4 {
        for c in 0..3 {
            h.set(
                r,
                c,
                inst.gene_features[r] * w_in.get(0, c) + b_in.get(0, c) + emb.get(r, c),
            );
        }
    }
    for l in 0..2 {
        h = gcn_forward(
            adj,
            p.get(&format!("enc.gcn.{l}.w")).unwrap(),
            p.get(&format!("enc.gcn.{l}.b")).unwrap(),
            &h,
        )
        .unwrap();
    }
    let mixed = adj.matmul_dense(&h);
    let head = |name: &str| {
        let mut out = mixed.matmul(p.get(&format!("{name}.w")).unwrap()).unwrap();
        let b = p.get(&format!("{name}.b")).unwrap();
        for r in 0..4 {
            for c in 0..3 {
                out.set(r, c, out.get(r, c) + b.get(0, c));
            }
        }
        out
    };
    let (mu, lv) = (head("vgae.mu"), head("vgae.logvar"));
    let mut z = Tensor::zeros(4, 3);
    for i in 0..12 {
        z.data_mut()[i] = mu.data()[i] + (0.5 * lv.data()[i]).exp() * noise.data()[i];
    }
    let dec = z.matmul(p.get("vgae.dec.w").unwrap()).unwrap();
    let db = p.get("vgae.dec.b").unwrap().item();
    let node: f64 = (0..4)
        .map(|r| (dec.get(r, 0) + db - feats[r]).powi(2))
        .sum::<f64>()
        / 4.0;
    let dot = |i: usize, j: usize| (0..3).map(|c| z.get(i, c) * z.get(j, c)).sum::<f64>();
    let edge = -((sigmoid(dot(0, 1))).ln()
        + sigmoid(dot(1, 2)).ln()
        + (1.0 - sigmoid(dot(0, 3))).ln()
        + (1.0 - sigmoid(dot(1, 3))).ln())
        / 4.0;
    let kl: f64 = 0.5
        * mu.data()
            .iter()
            .zip(lv.data())
            .map(|(m, v)| m * m + v.exp() - 1.0 - v)
            .sum::<f64>();
    assert!((l.node - node).abs() < 1e-12);
    assert!((l.edge - edge).abs() < 1e-12);
    assert!((l.kl - kl).abs() < 1e-12);
    assert!((l.total - (node + edge + kl / 4.0)).abs() < 1e-12);

    assert!(vgae_loss(&model, &p, &feats, &neg[..1], &noise).is_err());
    assert!(vgae_loss(&model, &p, &feats[..3], &neg, &noise).is_err());
}

#[test]
fn vgae_gradient_check() {
    let (model, p) = four_node_vgae();
    let inputs: IndexMap<String, Tensor> = p.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let noise = random(4, 3, &mut ChaCha8Rng::seed_from_u64(13));
    let report = gradient_check(
        &inputs,
        |tape, b| {
            Ok(vgae_loss_tape(
                tape,
                &b.as_bound(),
                &model,
                &[0.5, -1.0, 1.5, 0.2],
                &[(0, 3), (1, 3)],
                &noise,
            )
            .total)
        },
        1e-6,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

fn ten_gene() -> (VgaeModel, ParamSet, Vec<Vec<f64>>) {
    let text: String = (0..10)
        .flat_map(|i| [(i, (i + 1) % 10), (i, (i + 3) % 10)])
        .map(|(a, b)| format!("g{a}\tg{b}\t1\n"))
        .collect();
    let g = graph(&text);
    let cfg = EncoderConfig {
        hidden: 8,
        ..EncoderConfig::default()
    };
    let model = VgaeModel::new(HeteroEncoder::new(cfg, &g, 0, 0).unwrap(), &g).unwrap();
    let mut p = ParamSet::new();
    model.init(&mut p, &mut ChaCha8Rng::seed_from_u64(14));
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let feats = (0..4)
        .map(|_| (0..10).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .collect();
    (model, p, feats)
}

#[test]
fn pretraining_no_op_descent_and_determinism() {
    let (model, p, feats) = ten_gene();
    let none = pretrain_vgae(&model, &p, &feats, 0, 0.01, 1).unwrap();
    assert_eq!(none.params, p);
    assert!(none.losses.is_empty());

    let a = pretrain_vgae(&model, &p, &feats, 50, 0.01, 1).unwrap();
    assert_eq!(a.losses.len(), 50);
    assert!(a.losses[49] < a.losses[0], "{:?}", a.losses);
    let b = pretrain_vgae(&model, &p, &feats, 50, 0.01, 1).unwrap();
    assert_eq!(a.params, b.params);
    assert!(pretrain_vgae(&model, &p, &[], 1, 0.01, 1).is_err());
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for n in 1..20 {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
        assert!((softmax(&v).unwrap().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
