use tcgl::harness::config::TrainConfig;
use tcgl::harness::model::Model;
use tcgl::harness::train::generate_dataset;
use tcgl::numcore::Tape;
use tcgl::stkd::stkd_residual;
use tcgl::synthvideo::sample_and_shuffle;

fn main() {
    if let Some(path) = std::env::args().nth(1) {
        let ckpt = tcgl::harness::checkpoint::ModelCheckpoint::load(path.as_ref()).unwrap();
        if std::env::args().nth(2).as_deref() == Some("confuse") {
            // where does the remaining ln(2) of order loss live?
            let cfg = &ckpt.config;
            let vids = generate_dataset(cfg, "data.confuse", 300).unwrap();
            let (mut correct, mut reversed, mut swap01, mut other) = (0, 0, 0, 0);
            for (i, v) in vids.iter().enumerate() {
                let tuple = sample_and_shuffle(v, &cfg.sampler(), 5000 + i as u64).unwrap();
                let tape = Tape::new();
                let vars = tcgl::harness::train::track_model(&tape, &ckpt.model);
                let pred =
                    tcgl::harness::train::predict_order(&tape, cfg, &vars, &tuple).unwrap();
                let truth = tuple.true_permutation.slots().to_vec();
                let ps = tcgl::synthvideo::decode_class(pred as usize, cfg.n)
                    .unwrap()
                    .slots()
                    .to_vec();
                // reversal: ranks r -> n-1-r at each slot
                let rev: Vec<usize> = truth.iter().map(|r| cfg.n - 1 - r).collect();
                // swap of ranks 0 and 1 (levels 0.4 and 0.7) at each slot
                let sw: Vec<usize> =
                    truth.iter().map(|&r| if r < 2 { 1 - r } else { r }).collect();
                if ps == truth {
                    correct += 1;
                } else if ps == rev {
                    reversed += 1;
                } else if ps == sw {
                    swap01 += 1;
                } else {
                    other += 1;
                }
            }
            println!(
                "confusion over 300: correct {correct} reversed {reversed} swap01 {swap01} other {other}"
            );
            // order accuracy on static videos: any accuracy above chance here
            // can only come from graph-position information, not content
            let mut scfg = cfg.clone();
            scfg.static_only = true;
            let svids = generate_dataset(&scfg, "data.static", 300).unwrap();
            let sacc =
                tcgl::harness::train::order_accuracy(&ckpt.model, &scfg, &svids, "dbg.static")
                    .unwrap();
            println!("static-video order accuracy {sacc:.4} (chance 0.1667)");
            return;
        }
        if std::env::args().nth(2).as_deref() == Some("retrieve") {
            let cfg = &ckpt.config;
            let gallery = generate_dataset(cfg, "data.gallery", 160).unwrap();
            let queries = generate_dataset(cfg, "data.query", 600).unwrap();
            let g = tcgl::harness::eval::embed_all(&ckpt.model, cfg, &gallery).unwrap();
            let q = tcgl::harness::eval::embed_all(&ckpt.model, cfg, &queries).unwrap();
            let accs = tcgl::harness::eval::retrieval_topk(&g, &q, &[1, 5], false).unwrap();
            println!("trained retrieval top-1 {:.4} top-5 {:.4}", accs[0], accs[1]);
            let relabel = |v: &[tcgl::harness::eval::LabeledEmbedding], f: &dyn Fn(u32) -> u32| {
                v.iter()
                    .map(|e| tcgl::harness::eval::LabeledEmbedding {
                        class: f(e.class),
                        embedding: e.embedding.clone(),
                    })
                    .collect::<Vec<_>>()
            };
            let speed = |c: u32| c / 4;
            let dir = |c: u32| c % 4;
            let sa = tcgl::harness::eval::retrieval_topk(&relabel(&g, &speed), &relabel(&q, &speed), &[1], false).unwrap();
            let da = tcgl::harness::eval::retrieval_topk(&relabel(&g, &dir), &relabel(&q, &dir), &[1], false).unwrap();
            println!("trained speed-match {:.4} (chance 0.5), dir-match {:.4} (chance 0.25)", sa[0], da[0]);
            let mut tr = tcgl::harness::eval::embed_all(&ckpt.model, cfg, &gallery).unwrap();
            let mut te = tcgl::harness::eval::embed_all(&ckpt.model, cfg, &queries).unwrap();
            let dim = tr[0].embedding.len();
            for d in 0..dim {
                let mean = tr.iter().map(|e| e.embedding[d]).sum::<f64>() / tr.len() as f64;
                let var = tr.iter().map(|e| (e.embedding[d] - mean).powi(2)).sum::<f64>()
                    / tr.len() as f64;
                let sd = var.sqrt().max(1e-12);
                for e in tr.iter_mut().chain(te.iter_mut()) {
                    e.embedding[d] = (e.embedding[d] - mean) / sd;
                }
            }
            let mut w = vec![0.0f64; dim + 1];
            for _ in 0..2000 {
                let mut grad = vec![0.0f64; dim + 1];
                for e in &tr {
                    let z: f64 =
                        e.embedding.iter().zip(&w[..dim]).map(|(x, wi)| x * wi).sum::<f64>() + w[dim];
                    let pr = 1.0 / (1.0 + (-z).exp());
                    let t = f64::from(e.class >= 4);
                    let d = pr - t;
                    for (g, x) in grad[..dim].iter_mut().zip(&e.embedding) {
                        *g += d * x;
                    }
                    grad[dim] += d;
                }
                for (wi, g) in w.iter_mut().zip(&grad) {
                    *wi -= 0.05 * g / tr.len() as f64;
                }
            }
            let acc = |set: &[tcgl::harness::eval::LabeledEmbedding]| {
                set.iter()
                    .filter(|e| {
                        let z: f64 = e
                            .embedding
                            .iter()
                            .zip(&w[..dim])
                            .map(|(x, wi)| x * wi)
                            .sum::<f64>()
                            + w[dim];
                        (z > 0.0) == (e.class >= 4)
                    })
                    .count() as f64
                    / set.len() as f64
            };
            println!("tier probe (trained encoder): train {:.4} test {:.4}", acc(&tr), acc(&te));
            return;
        }
        let fresh = Model::init(&ckpt.config);
        for ((name, a), (_, b)) in ckpt.model.named().iter().zip(fresh.named().iter()) {
            let diff = a
                .data
                .iter()
                .zip(b.data.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            let norm = a.data.iter().map(|x| x * x).sum::<f64>().sqrt();
            println!("{name}: max|delta| {diff:.3e}, norm {norm:.3e}");
        }
        return;
    }
    let cfg = TrainConfig::default();
    {
        // oracle decode check: slot residual energies -> levels -> perm,
        // with tier read from total residual energy
        let vids = generate_dataset(&cfg, "data.oracle", 200).unwrap();
        let mut stats: Vec<(f64, u32, Vec<f64>, Vec<usize>, u32)> = Vec::new();
        let mut ratios: Vec<(f64, u32)> = Vec::new();
        for (i, v) in vids.iter().enumerate() {
            let tuple = sample_and_shuffle(v, &cfg.sampler(), 7000 + i as u64).unwrap();
            // per-pixel temporal DFT: bin-1 energy (fast-tier texture band)
            // vs bins 2..4 (distractor band), summed over the tuple
            let (mut e1, mut ehi) = (0.0f64, 0.0f64);
            for s in &tuple.snippets {
                for c in 0..s.channels {
                    for y in 0..s.height {
                        for x in 0..s.width {
                            for bin in 1..=s.frames / 2 {
                                let (mut re, mut im) = (0.0f64, 0.0f64);
                                for t in 0..s.frames {
                                    let ang = std::f64::consts::TAU * bin as f64 * t as f64
                                        / s.frames as f64;
                                    let vpx = s.get(c, t, y, x);
                                    re += vpx * ang.cos();
                                    im -= vpx * ang.sin();
                                }
                                let e = re * re + im * im;
                                if bin == 1 {
                                    e1 += e;
                                } else {
                                    ehi += e;
                                }
                            }
                        }
                    }
                }
            }
            ratios.push((e1 / ehi.max(1e-12), v.class_label));
            let energies: Vec<f64> = tuple
                .snippets
                .iter()
                .map(|s| {
                    // 5-tap temporal moving average to suppress the fast
                    // distractor band before reading residual energy
                    let mut lp = s.clone();
                    for c in 0..s.channels {
                        for t in 0..s.frames {
                            for y in 0..s.height {
                                for x in 0..s.width {
                                    let mut acc = 0.0;
                                    let mut cnt = 0.0;
                                    for dt in -2i64..=2 {
                                        let tt = t as i64 + dt;
                                        if tt >= 0 && (tt as usize) < s.frames {
                                            acc += s.get(c, tt as usize, y, x);
                                            cnt += 1.0;
                                        }
                                    }
                                    let idx = lp.idx(c, t, y, x);
                                    lp.samples[idx] = acc / cnt;
                                }
                            }
                        }
                    }
                    let r = stkd_residual(&lp).to_tensor();
                    r.data.iter().map(|x| x * x).sum::<f64>()
                })
                .collect();
            let total: f64 = energies.iter().sum();
            let slots = tuple.true_permutation.slots().to_vec();
            stats.push((total, v.class_label, energies, slots, tuple.order_class as u32));
        }
        let slow_mean = stats.iter().filter(|s| s.1 < 4).map(|s| s.0).sum::<f64>()
            / stats.iter().filter(|s| s.1 < 4).count() as f64;
        let fast_mean = stats.iter().filter(|s| s.1 >= 4).map(|s| s.0).sum::<f64>()
            / stats.iter().filter(|s| s.1 >= 4).count() as f64;
        let thr = (slow_mean + fast_mean) / 2.0;
        println!("oracle: slow mean {slow_mean:.3} fast mean {fast_mean:.3}");
        let rslow = ratios.iter().filter(|r| r.1 < 4).map(|r| r.0).sum::<f64>()
            / ratios.iter().filter(|r| r.1 < 4).count() as f64;
        let rfast = ratios.iter().filter(|r| r.1 >= 4).map(|r| r.0).sum::<f64>()
            / ratios.iter().filter(|r| r.1 >= 4).count() as f64;
        let rthr = (rslow + rfast) / 2.0;
        let rok = ratios
            .iter()
            .filter(|r| (r.0 > rthr) == (r.1 >= 4))
            .count() as f64
            / ratios.len() as f64;
        println!("oracle dft ratio: slow {rslow:.4} fast {rfast:.4} tier acc {rok:.4}");
        let mut tier_ok = 0usize;
        let mut order_ok = 0usize;
        for (total, class, energies, slots, order_class) in &stats {
            let tier = usize::from(*total > thr);
            tier_ok += usize::from(tier == (*class as usize) / 4);
            // rank slots by energy: ascending for tier 0, descending for tier 1
            let mut idx: Vec<usize> = (0..energies.len()).collect();
            idx.sort_by(|&a, &b| energies[a].partial_cmp(&energies[b]).unwrap());
            if tier == 1 {
                idx.reverse();
            }
            // idx[r] = slot holding rank r; slots[s] = rank at slot s
            let mut pred_slots = vec![0usize; idx.len()];
            for (rank, &slot) in idx.iter().enumerate() {
                pred_slots[slot] = rank;
            }
            let _ = order_class;
            order_ok += usize::from(&pred_slots == slots);
        }
        println!(
            "oracle tier acc {:.4}, order acc {:.4}",
            tier_ok as f64 / stats.len() as f64,
            order_ok as f64 / stats.len() as f64
        );
    }
    let model = Model::init(&cfg);
    {
        // linear probe: can tier be read linearly off untrained encoder
        // video embeddings?
        let train = generate_dataset(&cfg, "probe.train", 200).unwrap();
        let test = generate_dataset(&cfg, "probe.test", 200).unwrap();
        let mut tr = tcgl::harness::eval::embed_all(&model, &cfg, &train).unwrap();
        let mut te = tcgl::harness::eval::embed_all(&model, &cfg, &test).unwrap();
        let dim = tr[0].embedding.len();
        // standardize each dimension on the training set so the probe is
        // scale-insensitive
        for d in 0..dim {
            let mean = tr.iter().map(|e| e.embedding[d]).sum::<f64>() / tr.len() as f64;
            let var = tr.iter().map(|e| (e.embedding[d] - mean).powi(2)).sum::<f64>()
                / tr.len() as f64;
            let sd = var.sqrt().max(1e-12);
            for e in tr.iter_mut().chain(te.iter_mut()) {
                e.embedding[d] = (e.embedding[d] - mean) / sd;
            }
        }
        let mut w = vec![0.0f64; dim + 1];
        for _ in 0..2000 {
            let mut grad = vec![0.0f64; dim + 1];
            for e in &tr {
                let z: f64 =
                    e.embedding.iter().zip(&w[..dim]).map(|(x, wi)| x * wi).sum::<f64>() + w[dim];
                let p = 1.0 / (1.0 + (-z).exp());
                let t = f64::from(e.class >= 4);
                let d = p - t;
                for (g, x) in grad[..dim].iter_mut().zip(&e.embedding) {
                    *g += d * x;
                }
                grad[dim] += d;
            }
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= 0.05 * g / tr.len() as f64;
            }
        }
        let acc = |set: &[tcgl::harness::eval::LabeledEmbedding]| {
            set.iter()
                .filter(|e| {
                    let z: f64 = e
                        .embedding
                        .iter()
                        .zip(&w[..dim])
                        .map(|(x, wi)| x * wi)
                        .sum::<f64>()
                        + w[dim];
                    (z > 0.0) == (e.class >= 4)
                })
                .count() as f64
                / set.len() as f64
        };
        println!("tier probe (untrained encoder): train {:.4} test {:.4}", acc(&tr), acc(&te));
    }
    {
        let gallery = generate_dataset(&cfg, "data.gallery", 160).unwrap();
        let queries = generate_dataset(&cfg, "data.query", 600).unwrap();
        let g = tcgl::harness::eval::embed_all(&model, &cfg, &gallery).unwrap();
        let q = tcgl::harness::eval::embed_all(&model, &cfg, &queries).unwrap();
        let accs = tcgl::harness::eval::retrieval_topk(&g, &q, &[1, 5], false).unwrap();
        println!("untrained retrieval top-1 {:.4} top-5 {:.4}", accs[0], accs[1]);
        // coarse-label retrieval: does the nearest neighbor share speed / direction?
        let relabel = |v: &[tcgl::harness::eval::LabeledEmbedding], f: &dyn Fn(u32) -> u32| {
            v.iter()
                .map(|e| tcgl::harness::eval::LabeledEmbedding {
                    class: f(e.class),
                    embedding: e.embedding.clone(),
                })
                .collect::<Vec<_>>()
        };
        let speed = |c: u32| c / 4;
        let dir = |c: u32| c % 4;
        let sa = tcgl::harness::eval::retrieval_topk(&relabel(&g, &speed), &relabel(&q, &speed), &[1], false).unwrap();
        let da = tcgl::harness::eval::retrieval_topk(&relabel(&g, &dir), &relabel(&q, &dir), &[1], false).unwrap();
        println!("untrained speed-match {:.4} (chance 0.5), dir-match {:.4} (chance 0.25)", sa[0], da[0]);
    }
    {
        // per-parameter gradient magnitude of one tuple loss at init
        let vids = generate_dataset(&cfg, "data.train", 1).unwrap();
        let tuple = sample_and_shuffle(&vids[0], &cfg.sampler(), 3).unwrap();
        let tape = Tape::new();
        let vars = tcgl::harness::train::track_model(&tape, &model);
        let out = tcgl::harness::train::tuple_forward(&tape, &cfg, &vars, &tuple, 99).unwrap();
        let grads = tape.backward(out.loss).unwrap();
        let names: Vec<String> = model.named().into_iter().map(|(n, _)| n).collect();
        for (name, var) in names.iter().zip(tcgl::harness::train::model_leaves(&vars)) {
            let g = grads.wrt(var);
            let rms = g
                .map(|t| (t.data.iter().map(|x| x * x).sum::<f64>() / t.data.len() as f64).sqrt())
                .unwrap_or(0.0);
            println!("grad {name}: rms {rms:.3e}");
        }
        println!("loss {} j_g {} j_o {}", out.j, out.j_g, out.j_o);
    }
    let videos = generate_dataset(&cfg, "data.train", 4).unwrap();
    for (i, v) in videos.iter().enumerate() {
        let tuple = sample_and_shuffle(v, &cfg.sampler(), 100 + i as u64).unwrap();
        let tape = Tape::new();
        let vars = tcgl::harness::train::track_model(&tape, &model);
        println!("video {i} class {} perm {:?}", v.class_label, tuple.true_permutation.slots());
        for (slot, s) in tuple.snippets.iter().enumerate() {
            let rank = tuple.true_permutation.rank_at_slot(slot);
            let res = stkd_residual(s).to_tensor();
            let energy = res.data.iter().map(|x| x * x).sum::<f64>().sqrt();
            let clip = tape.constant(res);
            if let tcgl::encoder::EncoderVars::TinyConv3d { kernel, .. } = &vars.encoder {
                let conv = tape.conv3d(clip, *kernel).unwrap();
                let act = tape.relu(conv);
                let pooled = tape.value(tape.global_avg_pool(act).unwrap());
                println!("    pooled: {:?}", &pooled.data);
            }
            let feat = tcgl::encoder::encode(&tape, clip, &vars.encoder, cfg.channels).unwrap();
            let f = tape.value(feat);
            let norm = f.data.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mean = f.data.iter().sum::<f64>() / f.data.len() as f64;
            println!(
                "  slot {slot} rank {rank}: residual energy {energy:.4}, feat norm {norm:.5}, feat mean {mean:.6}, first {:?}",
                &f.data[..4.min(f.data.len())]
            );
        }
    }
}
