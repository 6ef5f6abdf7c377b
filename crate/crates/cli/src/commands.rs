//! One function per subcommand.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;
use statrs::distribution::{ContinuousCDF, Normal};

use warpfilt::analysis::{f_ratio, FRatio, FRatioReport, GroupedEnergies};
use warpfilt::dsp::fft_len_for;
use warpfilt::features::{analyze, extract_features, filterbank_log_energies};
use warpfilt::filterbank::{place_filter_edges, triangular_responses, Filterbank, PcaFilterLearner};
use warpfilt::gmm::{map_adapt_means, score_trial, train_ubm as fit_ubm, GmmModel, UbmConfig};
use warpfilt::io::{
    atomic_write, load_filterbank, load_gmm, load_scale, load_wav, read_features, read_scores, read_trials,
    save_model, write_features, write_scores, CorpusManifest, ManifestEntry, ModelDocument, Payload, Provenance,
};
use warpfilt::metrics::{det_curve, eer, fuse_scores, min_dcf, ScoredTrial, TrialLabel, TrialScoreSet};
use warpfilt::pitch::{voiced_mask, AutocorrelationPitch};
use warpfilt::scale::{
    average_ltas, build_warping_scale, compute_ltas, equal_area_partition, mel_warping_scale, ScaleKind, MEL_KNOTS,
};
use warpfilt::Error;

use crate::config::RunConfig;
use crate::lock::OutputLock;
use crate::{CliError, Context};

pub const FEATURES_EXT: &str = "wflt";
pub const MODEL_EXT: &str = "json";

/// Probabilities are clamped to `[PROBIT_EPS, 1 - PROBIT_EPS]` before the
/// probit warp so that the curve end points stay finite.
pub const PROBIT_EPS: f64 = 1e-6;

pub fn features_path(dir: &Path, utterance_id: &str) -> PathBuf {
    dir.join(format!("{utterance_id}.{FEATURES_EXT}"))
}

pub fn model_path(dir: &Path, speaker_id: &str) -> PathBuf {
    dir.join(format!("{speaker_id}.{MODEL_EXT}"))
}

fn ensure_writable(path: &Path, overwrite: bool) -> Result<(), CliError> {
    if path.exists() && !overwrite {
        return Err(CliError::Usage(format!(
            "refusing to overwrite {} (pass --overwrite)",
            path.display()
        )));
    }
    Ok(())
}

fn in_context(what: &str) -> impl Fn(Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{what}: {e}"))
}

fn load_manifest(path: &Path) -> Result<CorpusManifest, CliError> {
    let m = CorpusManifest::load(path).map_err(in_context(&path.display().to_string()))?;
    if m.is_empty() {
        return Err(CliError::Data(format!("{}: no utterances", path.display())));
    }
    Ok(m)
}

fn speaker_of(e: &ManifestEntry) -> Result<&str, CliError> {
    e.speaker_id
        .as_deref()
        .ok_or_else(|| CliError::Data(format!("utterance {} has no speaker id", e.utterance_id)))
}

fn provenance(command: &str, cfg: &RunConfig, manifest_digest: &str) -> Provenance {
    Provenance::new(json!({ "command": command, "run": cfg.to_json() }), manifest_digest)
}

fn check_rate(got: u32, want: u32) -> warpfilt::Result<()> {
    if got != want {
        return Err(Error::DimensionMismatch(format!("audio at {got} Hz, expected {want} Hz")));
    }
    Ok(())
}

/// `⌈f·n⌉` manifest indices (at least one), chosen by a seeded shuffle and
/// returned in manifest order.
pub fn subsample(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let k = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1));
    let mut idx: Vec<usize> = (0..n).collect();
    if k < n {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(k);
        idx.sort_unstable();
    }
    idx
}

fn stack(what: &str, parts: &[Array2<f64>]) -> Result<Array2<f64>, CliError> {
    let views: Vec<ArrayView2<f64>> = parts.iter().map(|a| a.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| CliError::Data(format!("{what}: feature dimensions differ: {e}")))
}

pub fn learn_scale(ctx: &Context, manifest: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    ensure_writable(out, ctx.overwrite)?;
    let _lock = OutputLock::for_file(out)?;
    let m = load_manifest(manifest)?;
    let first = &m.entries[0];
    let sr = load_wav(&first.path)
        .map_err(in_context(&first.utterance_id))?
        .sample_rate_hz;
    let frame_len = (cfg.features.frame_ms * sr as f64 / 1000.0).round() as usize;
    let n_fft = fft_len_for(frame_len);
    let nyq = sr as f64 / 2.0;
    let kind = cfg.scale.kind();

    let scale = if kind == ScaleKind::Mel {
        mel_warping_scale(nyq, MEL_KNOTS)?
    } else {
        let idx = subsample(m.len(), cfg.subsample_fraction, cfg.seed);
        log::info!("learn-scale: processing {} of {} utterances", idx.len(), m.len());
        let pitch = AutocorrelationPitch { config: cfg.pitch };
        let per_utt: Vec<Result<Option<_>, CliError>> = idx
            .par_iter()
            .map(|&i| {
                let e = &m.entries[i];
                let run = || -> warpfilt::Result<_> {
                    let x = load_wav(&e.path)?;
                    check_rate(x.sample_rate_hz, sr)?;
                    let f = analyze(&x, &cfg.features)?;
                    let mask = if kind == ScaleKind::SpeechPitch {
                        voiced_mask(&f.spec, f.raw_frames.view(), &pitch)?
                    } else {
                        f.sad
                    };
                    match compute_ltas(&f.spec, &mask) {
                        Ok(l) => Ok(Some(l)),
                        Err(Error::NoFramesSelected) => {
                            log::warn!("{}: no frames selected, skipped", e.utterance_id);
                            Ok(None)
                        }
                        Err(err) => Err(err),
                    }
                };
                run().map_err(in_context(&e.utterance_id))
            })
            .collect();
        let mut list = Vec::new();
        for r in per_utt {
            list.extend(r?);
        }
        if list.is_empty() {
            return Err(CliError::Data("no utterance contributed any speech frames".into()));
        }
        let avg = average_ltas(&list)?;
        let partition = equal_area_partition(&avg, cfg.features.n_filters)?;
        log::info!(
            "learn-scale: {} utterances, {} frames, band area spread {:.3e}",
            list.len(),
            avg.n_frames_accumulated,
            partition.spread()
        );
        build_warping_scale(&partition, nyq, kind)?
    };

    let doc = ModelDocument {
        sample_rate_hz: sr,
        n_fft,
        payload: Payload::WarpingScale(scale.clone()),
        provenance: provenance("learn-scale", cfg, &m.digest),
    };
    save_model(&doc, out)?;
    let mut table = String::from("frequency_hz\twarped\n");
    for (f, w) in &scale.knots {
        let _ = writeln!(table, "{f:.3}\t{w:.6}");
    }
    print!("{table}");
    Ok(())
}

pub fn learn_filterbank(ctx: &Context, manifest: Option<&Path>, scale_doc: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    ensure_writable(out, ctx.overwrite)?;
    let _lock = OutputLock::for_file(out)?;
    let (sdoc, scale) = load_scale(scale_doc).map_err(in_context(&scale_doc.display().to_string()))?;
    let (sr, n_fft) = (sdoc.sample_rate_hz, sdoc.n_fft);
    let layout = place_filter_edges(&scale, cfg.features.n_filters, n_fft, sr)?;
    let shape = cfg.shape.kind();

    let (fb, digest) = match shape.options() {
        None => (triangular_responses(&layout), sdoc.provenance.manifest_digest.clone()),
        Some(opts) => {
            let manifest = manifest.ok_or_else(|| {
                CliError::Usage(format!("--manifest is required for shape {}", cfg.shape.name()))
            })?;
            let m = load_manifest(manifest)?;
            let parts: Vec<Result<PcaFilterLearner, CliError>> = m
                .entries
                .par_iter()
                .map(|e| {
                    let run = || -> warpfilt::Result<PcaFilterLearner> {
                        let x = load_wav(&e.path)?;
                        check_rate(x.sample_rate_hz, sr)?;
                        let f = analyze(&x, &cfg.features)?;
                        let mut l = PcaFilterLearner::new(layout.clone(), opts)?;
                        l.add(f.spec.log_power().view(), &f.sad)?;
                        Ok(l)
                    };
                    run().map_err(in_context(&e.utterance_id))
                })
                .collect();
            let mut learner = PcaFilterLearner::new(layout.clone(), opts)?;
            for p in parts {
                learner.merge(&p?)?;
            }
            log::info!("learn-filterbank: {} speech frames", learner.frames_seen());
            let report = learner.finish()?;
            for j in &report.fallbacks {
                log::warn!("filter {j}: degenerate subband, kept the triangular response");
            }
            if !report.clipped.is_empty() {
                log::info!("filters {:?}: negative basis components clipped", report.clipped);
            }
            (report.filterbank, m.digest)
        }
    };

    let doc = ModelDocument {
        sample_rate_hz: sr,
        n_fft,
        payload: Payload::Filterbank(fb.clone()),
        provenance: provenance("learn-filterbank", cfg, &digest),
    };
    save_model(&doc, out)?;
    let mut table = String::from("filter\tlo_bin\tcenter_bin\thi_bin\tpeak\n");
    for j in 0..fb.n_filters() {
        let (lo, hi) = fb.layout.support(j);
        let peak = fb.responses.row(j).iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let _ = writeln!(table, "{j}\t{lo}\t{}\t{hi}\t{peak:.6}", fb.layout.center(j));
    }
    print!("{table}");
    Ok(())
}

pub fn extract(ctx: &Context, manifest: &Path, filterbank: &Path, out_dir: &Path) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let m = load_manifest(manifest)?;
    let (_, fb) = load_filterbank(filterbank).map_err(in_context(&filterbank.display().to_string()))?;
    let _lock = OutputLock::acquire(out_dir)?;
    for e in &m.entries {
        ensure_writable(&features_path(out_dir, &e.utterance_id), ctx.overwrite)?;
    }
    let results: Vec<Result<(usize, usize), CliError>> = m
        .entries
        .par_iter()
        .map(|e| {
            let run = || -> warpfilt::Result<(usize, usize)> {
                let x = load_wav(&e.path)?;
                let mut fm = extract_features(&x, &fb, &cfg.features)?;
                fm.utterance_id = e.utterance_id.clone();
                write_features(&fm, &features_path(out_dir, &e.utterance_id))?;
                Ok((fm.n_frames(), fm.mask.count()))
            };
            run().map_err(in_context(&e.utterance_id))
        })
        .collect();
    let (mut ok, mut frames, mut speech, mut failed) = (0, 0, 0, 0);
    for r in results {
        match r {
            Ok((n, s)) => {
                ok += 1;
                frames += n;
                speech += s;
            }
            Err(e) => {
                log::error!("{e}");
                failed += 1;
            }
        }
    }
    let pct = if frames > 0 { 100.0 * speech as f64 / frames as f64 } else { 0.0 };
    println!(
        "utterances={ok}\tfailed={failed}\tframes={frames}\tspeech_frames={speech}\tspeech_percent={pct:.1}\tdim={}",
        cfg.features.dim()
    );
    if failed > 0 {
        return Err(CliError::Data(format!("{failed} of {} utterances failed", m.len())));
    }
    Ok(())
}

fn variant_names(paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = paths
        .iter()
        .map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    stems
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if stems.iter().filter(|t| *t == s).count() > 1 {
                paths[i].display().to_string()
            } else {
                s.clone()
            }
        })
        .collect()
}

pub fn fratio(ctx: &Context, manifest: &Path, filterbanks: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    if let Some(o) = out {
        ensure_writable(o, ctx.overwrite)?;
    }
    let _lock = out.map(OutputLock::for_file).transpose()?;
    let m = load_manifest(manifest)?;
    for e in &m.entries {
        speaker_of(e)?;
    }
    let fbs: Vec<Filterbank> = filterbanks
        .iter()
        .map(|p| load_filterbank(p).map(|(_, fb)| fb).map_err(in_context(&p.display().to_string())))
        .collect::<Result<_, _>>()?;

    // Speech-frame log-energies per utterance, one matrix per filterbank.
    let per_utt: Vec<Result<Vec<Array2<f64>>, CliError>> = m
        .entries
        .par_iter()
        .map(|e| {
            let run = || -> warpfilt::Result<Vec<Array2<f64>>> {
                let x = load_wav(&e.path)?;
                let f = analyze(&x, &cfg.features)?;
                let rows: Vec<usize> = f.sad.selected().collect();
                fbs.iter()
                    .map(|fb| {
                        check_rate(x.sample_rate_hz, fb.layout.sample_rate_hz)?;
                        Ok(filterbank_log_energies(&f.spec, fb)?.select(Axis(0), &rows))
                    })
                    .collect()
            };
            run().map_err(in_context(&e.utterance_id))
        })
        .collect();
    let mut grouped: Vec<BTreeMap<String, Vec<Array2<f64>>>> = vec![BTreeMap::new(); fbs.len()];
    for (e, r) in m.entries.iter().zip(per_utt) {
        let spk = speaker_of(e)?.to_string();
        for (v, energies) in r?.into_iter().enumerate() {
            grouped[v].entry(spk.clone()).or_default().push(energies);
        }
    }
    let names = variant_names(filterbanks);
    let mut results: Vec<(String, FRatio)> = Vec::new();
    for (name, g) in names.into_iter().zip(grouped) {
        let data: GroupedEnergies = g
            .into_iter()
            .map(|(spk, parts)| Ok((spk.clone(), stack(&spk, &parts)?)))
            .collect::<Result<_, CliError>>()?;
        let r = f_ratio(&data).map_err(in_context(&name))?;
        results.push((name, r));
    }

    let (table, tsv) = if results.len() == 1 {
        let (name, r) = &results[0];
        let mut t = format!("filter\t{name}\n");
        for (j, v) in r.per_filter.iter().enumerate() {
            let _ = writeln!(t, "{}\t{v}", j + 1);
        }
        let _ = writeln!(t, "average\t{}", r.average);
        (t.clone(), t)
    } else {
        let report = FRatioReport::new(results)?;
        (report.to_table(), report.to_tsv())
    };
    print!("{table}");
    if let Some(o) = out {
        atomic_write(o, |w| Ok(w.write_all(tsv.as_bytes())?))?;
    }
    Ok(())
}

fn load_speech_frames(features: &Path, entries: &[&ManifestEntry]) -> Result<Vec<Array2<f64>>, CliError> {
    entries
        .par_iter()
        .map(|e| {
            read_features(&features_path(features, &e.utterance_id))
                .map(|fm| fm.speech_frames())
                .map_err(in_context(&e.utterance_id))
        })
        .collect()
}

pub fn train_ubm(ctx: &Context, manifest: &Path, features: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    ensure_writable(out, ctx.overwrite)?;
    let _lock = OutputLock::for_file(out)?;
    let m = load_manifest(manifest)?;
    let entries: Vec<&ManifestEntry> = m.entries.iter().collect();
    let frames = stack("ubm data", &load_speech_frames(features, &entries)?)?;
    let ucfg = UbmConfig {
        n_components: cfg.ubm.n_components,
        iterations: cfg.ubm.iterations,
        seed: cfg.seed,
    };
    log::info!(
        "train-ubm: {} frames of dim {}, {} components",
        frames.nrows(),
        frames.ncols(),
        ucfg.n_components
    );
    let t = fit_ubm(frames.view(), &ucfg)?;
    let doc = ModelDocument {
        sample_rate_hz: 0,
        n_fft: 0,
        payload: Payload::Gmm(t.model),
        provenance: provenance("train-ubm", cfg, &m.digest),
    };
    save_model(&doc, out)?;
    let mut table = String::from("iteration\tmean_log_likelihood\n");
    for (i, ll) in t.log_likelihood.iter().enumerate() {
        let _ = writeln!(table, "{i}\t{ll}");
    }
    print!("{table}");
    Ok(())
}

fn load_ubm(path: &Path) -> Result<GmmModel, CliError> {
    load_gmm(path)
        .map(|(_, g)| g)
        .map_err(in_context(&path.display().to_string()))
}

pub fn enroll(ctx: &Context, manifest: &Path, features: &Path, ubm: &Path, out_dir: &Path) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let m = load_manifest(manifest)?;
    let ubm_model = load_ubm(ubm)?;
    let mut by_speaker: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &m.entries {
        by_speaker.entry(speaker_of(e)?).or_default().push(e);
    }
    let _lock = OutputLock::acquire(out_dir)?;
    for spk in by_speaker.keys() {
        ensure_writable(&model_path(out_dir, spk), ctx.overwrite)?;
    }
    let speakers: Vec<(&str, Vec<&ManifestEntry>)> = by_speaker.into_iter().collect();
    let done: Vec<Result<String, CliError>> = speakers
        .par_iter()
        .map(|(spk, entries)| {
            let frames = stack(spk, &load_speech_frames(features, entries)?)?;
            let model = map_adapt_means(&ubm_model, frames.view(), cfg.relevance).map_err(in_context(spk))?;
            let doc = ModelDocument {
                sample_rate_hz: 0,
                n_fft: 0,
                payload: Payload::Gmm(model),
                provenance: provenance("enroll", cfg, &m.digest),
            };
            save_model(&doc, &model_path(out_dir, spk)).map_err(in_context(spk))?;
            Ok(format!("{spk}\t{}\t{}", entries.len(), frames.nrows()))
        })
        .collect();
    let mut table = String::from("speaker\tutterances\tspeech_frames\n");
    for d in done {
        let _ = writeln!(table, "{}", d?);
    }
    print!("{table}");
    Ok(())
}

pub fn score(
    ctx: &Context,
    trials: &Path,
    models: &Path,
    features: &Path,
    ubm: &Path,
    out: &Path,
) -> Result<(), CliError> {
    ensure_writable(out, ctx.overwrite)?;
    let _lock = OutputLock::for_file(out)?;
    let list = read_trials(trials)?;
    if list.is_empty() {
        return Err(CliError::Data(format!("{}: no trials", trials.display())));
    }
    let ubm_model = load_ubm(ubm)?;
    let mut enroll_ids: Vec<&str> = list.iter().map(|t| t.key.enroll.as_str()).collect();
    let mut test_ids: Vec<&str> = list.iter().map(|t| t.key.test.as_str()).collect();
    enroll_ids.sort_unstable();
    enroll_ids.dedup();
    test_ids.sort_unstable();
    test_ids.dedup();
    let speaker_models: HashMap<&str, GmmModel> = enroll_ids
        .par_iter()
        .map(|id| load_ubm(&model_path(models, id)).map(|g| (*id, g)))
        .collect::<Result<_, _>>()?;
    let tests: HashMap<&str, _> = test_ids
        .par_iter()
        .map(|id| {
            read_features(&features_path(features, id))
                .map(|fm| (*id, fm))
                .map_err(in_context(id))
        })
        .collect::<Result<_, _>>()?;
    let scored: Vec<Result<ScoredTrial, CliError>> = list
        .par_iter()
        .map(|t| {
            let s = score_trial(&speaker_models[t.key.enroll.as_str()], &ubm_model, &tests[t.key.test.as_str()])
                .map_err(in_context(&format!("trial {} / {}", t.key.enroll, t.key.test)))?;
            Ok(ScoredTrial {
                key: t.key.clone(),
                label: t.label,
                score: s,
            })
        })
        .collect();
    let set = TrialScoreSet {
        trials: scored.into_iter().collect::<Result<_, _>>()?,
    };
    write_scores(out, &set)?;
    println!(
        "trials={}\ttarget={}\timpostor={}",
        set.trials.len(),
        set.count(TrialLabel::Target),
        set.count(TrialLabel::Impostor)
    );
    Ok(())
}

pub fn probit(p: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    n.inverse_cdf(p.clamp(PROBIT_EPS, 1.0 - PROBIT_EPS))
}

pub fn evaluate(ctx: &Context, scores: &Path, fuse_with: Option<&Path>, det_out: Option<&Path>) -> Result<(), CliError> {
    let preset = ctx.cfg.cost_preset;
    if let Some(d) = det_out {
        ensure_writable(d, ctx.overwrite)?;
    }
    let _lock = det_out.map(OutputLock::for_file).transpose()?;
    let mut set = read_scores(scores)?;
    if let Some(other) = fuse_with {
        set = fuse_scores(&set, &read_scores(other)?)?;
    }
    let curve = det_curve(&set)?;
    let e = eer(&curve);
    let dcf = min_dcf(&curve, &preset.params());
    println!("cost_preset\ttrials\ttarget\timpostor\teer_percent\tmin_dcf_x100");
    println!(
        "{}\t{}\t{}\t{}\t{:.3}\t{:.3}",
        preset.name(),
        set.trials.len(),
        set.count(TrialLabel::Target),
        set.count(TrialLabel::Impostor),
        100.0 * e,
        100.0 * dcf
    );
    if let Some(d) = det_out {
        let mut text = String::from("threshold\tp_miss\tp_fa\tprobit_p_miss\tprobit_p_fa\n");
        for p in &curve.points {
            let _ = writeln!(
                text,
                "{}\t{}\t{}\t{}\t{}",
                p.threshold,
                p.p_miss,
                p.p_fa,
                probit(p.p_miss),
                probit(p.p_fa)
            );
        }
        atomic_write(d, |w| Ok(w.write_all(text.as_bytes())?))?;
    }
    Ok(())
}
