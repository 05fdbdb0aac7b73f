//! Frozen-model evaluation: nearest-neighbor retrieval over video
//! embeddings and full-precision embedding export.

use std::fmt::Write as _;
use std::path::Path;

use crate::encoder::encode;
use crate::error::{Result, TcglError};
use crate::harness::config::TrainConfig;
use crate::harness::model::Model;
use crate::numcore::Tape;
use crate::synthvideo::VideoTensor;

/// Video embedding: mean of its snippet encoder features (post motion
/// enhancement), taken at the canonical snippet starts in temporal order.
pub fn video_embedding(
    model: &Model,
    config: &TrainConfig,
    video: &VideoTensor,
) -> Result<Vec<f64>> {
    let sampler = config.sampler();
    sampler.validate()?;
    if video.frames < sampler.min_frames() {
        return Err(TcglError::InvalidConfig(format!(
            "video of {} frames too short for embedding",
            video.frames
        )));
    }
    let tape = Tape::new();
    let vars = model.encoder.track(&tape);
    let mut mean = vec![0.0; config.feature_dim];
    for rank in 0..sampler.n {
        let snippet = video.slice_frames(rank * (sampler.l + sampler.p), sampler.l);
        let raw = tape.constant(snippet.to_tensor());
        let x = if config.stkd { tape.sub_temporal_mean(raw)? } else { raw };
        let feat = tape.value(encode(&tape, x, &vars, config.channels)?);
        for (m, f) in mean.iter_mut().zip(&feat.data) {
            *m += f / sampler.n as f64;
        }
    }
    Ok(mean)
}

/// Cosine distance; zero vectors are treated as maximally distant.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 2.0;
    }
    1.0 - dot / (na * nb)
}

/// Labeled embedding for retrieval.
#[derive(Debug, Clone)]
pub struct LabeledEmbedding {
    pub class: u32,
    pub embedding: Vec<f64>,
}

/// Top-k retrieval accuracy per requested k: a query is a hit when its true
/// class appears among the classes of its k nearest gallery items by cosine
/// distance. With `exclude_self`, gallery index i is skipped for query i
/// (use when queries are the gallery).
pub fn retrieval_topk(
    gallery: &[LabeledEmbedding],
    queries: &[LabeledEmbedding],
    ks: &[usize],
    exclude_self: bool,
) -> Result<Vec<f64>> {
    if gallery.is_empty() {
        return Err(TcglError::InvalidConfig("empty gallery".into()));
    }
    let limit = if exclude_self { gallery.len() - 1 } else { gallery.len() };
    if ks.iter().any(|&k| k == 0 || k > limit) {
        return Err(TcglError::InvalidConfig(format!(
            "retrieval k out of range for gallery of {limit}"
        )));
    }
    let mut hits = vec![0usize; ks.len()];
    for (qi, q) in queries.iter().enumerate() {
        let mut ranked: Vec<(f64, u32)> = gallery
            .iter()
            .enumerate()
            .filter(|(gi, _)| !(exclude_self && *gi == qi))
            .map(|(_, g)| (cosine_distance(&q.embedding, &g.embedding), g.class))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (slot, &k) in ks.iter().enumerate() {
            if ranked[..k].iter().any(|(_, c)| *c == q.class) {
                hits[slot] += 1;
            }
        }
    }
    Ok(hits
        .iter()
        .map(|h| *h as f64 / queries.len().max(1) as f64)
        .collect())
}

/// Embed every video with the model's encoder.
pub fn embed_all(
    model: &Model,
    config: &TrainConfig,
    videos: &[VideoTensor],
) -> Result<Vec<LabeledEmbedding>> {
    videos
        .iter()
        .map(|v| {
            Ok(LabeledEmbedding {
                class: v.class_label,
                embedding: video_embedding(model, config, v)?,
            })
        })
        .collect()
}

/// Write embeddings as delimiter-separated text with full-precision floats.
pub fn export_embeddings(
    model: &Model,
    config: &TrainConfig,
    videos: &[VideoTensor],
    path: &Path,
) -> Result<()> {
    let mut out = String::from("id,label");
    for i in 0..config.feature_dim {
        let _ = write!(out, ",e{i}");
    }
    out.push('\n');
    for (id, video) in videos.iter().enumerate() {
        let emb = video_embedding(model, config, video)?;
        let _ = write!(out, "{id},{}", video.class_label);
        for v in emb {
            let _ = write!(out, ",{v:.17e}");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::train::generate_dataset;

    fn tiny_config() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.height = 8;
        cfg.width = 8;
        cfg.l = 4;
        cfg.m = 2;
        cfg.feature_dim = 6;
        cfg.gcn_dim = 6;
        cfg.conv_channels = 2;
        cfg
    }

    #[test]
    fn self_retrieval_is_perfect() {
        let cfg = tiny_config();
        let model = Model::init(&cfg);
        let videos = generate_dataset(&cfg, "data.train", 6).unwrap();
        let embs = embed_all(&model, &cfg, &videos).unwrap();
        let acc = retrieval_topk(&embs, &embs, &[1], false).unwrap();
        assert_eq!(acc, vec![1.0]);
    }

    #[test]
    fn exhaustive_k_hits_every_present_class() {
        let cfg = tiny_config();
        let model = Model::init(&cfg);
        let gallery_videos = generate_dataset(&cfg, "data.train", 12).unwrap();
        let query_videos = generate_dataset(&cfg, "data.val", 6).unwrap();
        let gallery = embed_all(&model, &cfg, &gallery_videos).unwrap();
        let queries: Vec<LabeledEmbedding> = embed_all(&model, &cfg, &query_videos)
            .unwrap()
            .into_iter()
            .filter(|q| gallery.iter().any(|g| g.class == q.class))
            .collect();
        let acc = retrieval_topk(&gallery, &queries, &[gallery.len()], false).unwrap();
        assert_eq!(acc, vec![1.0]);
    }

    #[test]
    fn k_bounds_enforced() {
        let cfg = tiny_config();
        let model = Model::init(&cfg);
        let videos = generate_dataset(&cfg, "data.train", 3).unwrap();
        let embs = embed_all(&model, &cfg, &videos).unwrap();
        assert!(retrieval_topk(&embs, &embs, &[4], false).is_err());
        assert!(retrieval_topk(&embs, &embs, &[3], true).is_err());
        assert!(retrieval_topk(&embs, &embs, &[0], false).is_err());
        assert!(retrieval_topk(&[], &embs, &[1], false).is_err());
    }

    #[test]
    fn export_round_trip_and_shape() {
        let cfg = tiny_config();
        let model = Model::init(&cfg);
        let videos = generate_dataset(&cfg, "data.train", 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        export_embeddings(&model, &cfg, &videos, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("id,label,e0"));
        for (i, line) in lines[1..].iter().enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 2 + cfg.feature_dim);
            assert_eq!(fields[0], i.to_string());
            let parsed: Vec<f64> = fields[2..].iter().map(|f| f.parse().unwrap()).collect();
            let direct = video_embedding(&model, &cfg, &videos[i]).unwrap();
            for (a, b) in parsed.iter().zip(&direct) {
                assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
            }
        }

        // empty dataset gives a header-only file
        export_embeddings(&model, &cfg, &[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn cosine_distance_basics() {
        assert!((cosine_distance(&[1.0, 0.0], &[2.0, 0.0])).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[-3.0, 0.0]) - 2.0).abs() < 1e-15);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), 2.0);
    }
}
