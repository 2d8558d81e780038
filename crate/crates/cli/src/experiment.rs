//! Experiment drivers: the three-way training comparison plus the
//! distributed serve/join halves, model evaluation, and the summary
//! table.

use std::path::Path;
use std::time::Duration;

use fedseg_core::data::{argmax_classes, partition, to_batch, Palette, SegSample, Silo};
use fedseg_core::fedproto::{
    client_train, run_client, run_server, Hyperparams, ServerOptions,
};
use fedseg_core::metrics::{MetricRecord, MetricSink, Mode};
use fedseg_core::nn::{bce_with_logits, forward, init_params, FcnConfig};
use fedseg_core::params::{decode_params_any, encode_params};
use fedseg_core::transport::{
    accept_channels, bind_listener, in_process_pair, FrameChannel, TcpChannel,
};
use fedseg_core::{AnyParamSet, Element, ParamSet, ProtoError};

use crate::config::{prepare_out_dir, DtypeArg, LoadedData, RunConfig, RunMode, TransportKind};
use crate::CliError;

pub fn run_experiment(cfg: &RunConfig) -> Result<(), CliError> {
    match cfg.dtype {
        DtypeArg::F32 => run_typed::<f32>(cfg),
        DtypeArg::F64 => run_typed::<f64>(cfg),
    }
}

fn run_typed<E: Element>(cfg: &RunConfig) -> Result<(), CliError> {
    prepare_out_dir(&cfg.out)?;
    let data = cfg.load_data()?;
    if data.train.is_empty() {
        return Err(CliError::Config("training split is empty".into()));
    }
    if data.eval.is_empty() {
        return Err(CliError::Config("evaluation split is empty".into()));
    }
    let model_cfg = cfg.fcn_config(data.palette.len());
    model_cfg.validate()?;

    let echo = serde_json::to_string_pretty(cfg)
        .map_err(|e| CliError::Config(format!("config echo: {e}")))?;
    std::fs::write(cfg.out.join("config.json"), echo + "\n")?;

    let rows = match cfg.mode {
        RunMode::Centralized => run_centralized::<E>(cfg, &model_cfg, &data)?,
        RunMode::Local => run_local::<E>(cfg, &model_cfg, &data)?,
        RunMode::Federated => run_federated::<E>(cfg, &model_cfg, &data)?,
        RunMode::Serve => run_serve::<E>(cfg, &model_cfg, &data)?,
        RunMode::Join => run_join::<E>(cfg, &model_cfg, &data)?,
    };
    print_summary(&rows);
    Ok(())
}

fn run_centralized<E: Element>(
    cfg: &RunConfig,
    model_cfg: &FcnConfig,
    data: &LoadedData,
) -> Result<Vec<(String, MetricRecord)>, CliError> {
    // A 1-way partition rather than the raw sample order: this makes the
    // epoch batch stream identical to a single-federate session.
    let silo = partition(&data.train, 1, cfg.partition_seed_for(1))?
        .pop()
        .expect("partition into 1 silo yields 1 silo");
    let (params, last) = train_sequential::<E>(
        cfg,
        model_cfg,
        data,
        &silo,
        &cfg.run_id(),
        &cfg.out.join("metrics.jsonl"),
    )?;
    save_params(&cfg.out.join("model.fps1"), &params)?;
    Ok(vec![("centralized".into(), last)])
}

fn run_local<E: Element>(
    cfg: &RunConfig,
    model_cfg: &FcnConfig,
    data: &LoadedData,
) -> Result<Vec<(String, MetricRecord)>, CliError> {
    let silos = partition(&data.train, cfg.n_silos, cfg.partition_seed())?;
    let mut rows = Vec::new();
    for silo in &silos {
        let run_id = format!("{}-silo{}", cfg.run_id(), silo.id);
        let (params, last) = train_sequential::<E>(
            cfg,
            model_cfg,
            data,
            silo,
            &run_id,
            &cfg.out.join(format!("metrics_silo{}.jsonl", silo.id)),
        )?;
        save_params(&cfg.out.join(format!("model_silo{}.fps1", silo.id)), &params)?;
        rows.push((format!("local/silo{}", silo.id), last));
    }
    Ok(rows)
}

/// Epoch loop shared by the centralized and local modes. Each epoch is
/// one single-epoch training round, so the shuffle seed stream matches a
/// federated session over the same silo exactly.
fn train_sequential<E: Element>(
    cfg: &RunConfig,
    model_cfg: &FcnConfig,
    data: &LoadedData,
    silo: &Silo,
    run_id: &str,
    metrics_path: &Path,
) -> Result<(ParamSet<E>, MetricRecord), CliError> {
    let sink = fresh_sink(metrics_path)?;
    let step = Hyperparams { epochs: 1, rounds: 1, ..cfg.hyperparams() };
    let mut params = init_params::<E>(model_cfg)?;
    let mut last: Option<MetricRecord> = None;
    for epoch in 1..=cfg.epochs {
        let (next, loss) = client_train(&params, model_cfg, silo, &step, epoch)?;
        params = next;
        let record = evaluate_params::<E>(
            &params,
            model_cfg,
            &data.eval,
            &data.palette,
            cfg.batch_size as usize,
            run_id,
            cfg.mode.record_mode(),
            0,
            epoch,
            Some(loss),
        )?;
        sink.append(&record)?;
        last = Some(record);
    }
    Ok((params, last.expect("epochs >= 1 was validated")))
}

fn run_federated<E: Element>(
    cfg: &RunConfig,
    model_cfg: &FcnConfig,
    data: &LoadedData,
) -> Result<Vec<(String, MetricRecord)>, CliError> {
    let silos = partition(&data.train, cfg.n_silos, cfg.partition_seed())?;
    let init = init_params::<E>(model_cfg)?;
    let metrics_path = cfg.out.join("metrics.jsonl");

    let (finals, last) = match cfg.transport {
        TransportKind::InProcess => {
            let mut server_side = Vec::new();
            let mut handles = Vec::new();
            for silo in silos {
                let (server, mut client) = in_process_pair();
                server_side.push(server);
                let mc = model_cfg.clone();
                let timeout = cfg.timeout();
                handles.push(std::thread::spawn(move || {
                    run_client::<E, _>(&mut client, &silo, &mc, timeout)
                }));
            }
            let out = serve_session::<E, _>(
                cfg,
                model_cfg,
                init,
                &mut server_side,
                data,
                &metrics_path,
            );
            finish_clients(out, handles)?
        }
        TransportKind::Tcp => {
            let (listener, addr) = bind_listener("127.0.0.1:0")?;
            let mut handles = Vec::new();
            for silo in silos {
                let mc = model_cfg.clone();
                let timeout = cfg.timeout();
                let window = cfg.timeout().unwrap_or(Duration::from_secs(120));
                handles.push(std::thread::spawn(move || {
                    let mut ch = TcpChannel::connect(addr, window)?;
                    run_client::<E, _>(&mut ch, &silo, &mc, timeout)
                }));
            }
            let mut channels = accept_channels(&listener, cfg.n_silos)?;
            let out = serve_session::<E, _>(
                cfg,
                model_cfg,
                init,
                &mut channels,
                data,
                &metrics_path,
            );
            finish_clients(out, handles)?
        }
    };

    save_params(&cfg.out.join("model.fps1"), &finals)?;
    Ok(vec![("federated".into(), last)])
}

type SessionOutcome<E> = (ParamSet<E>, MetricRecord);

/// Joins the worker threads, then reports the server error (preferred,
/// it names the federate) or the first client error.
fn finish_clients<E: Element>(
    server_result: Result<SessionOutcome<E>, CliError>,
    handles: Vec<std::thread::JoinHandle<Result<ParamSet<E>, ProtoError>>>,
) -> Result<SessionOutcome<E>, CliError> {
    let mut client_err: Option<ProtoError> = None;
    for h in handles {
        match h.join() {
            Ok(Ok(_)) => {}
            Ok(Err(e)) => client_err = client_err.or(Some(e)),
            Err(_) => {
                client_err =
                    client_err.or(Some(ProtoError::Session("federate worker panicked".into())))
            }
        }
    }
    let outcome = server_result?;
    if let Some(e) = client_err {
        return Err(e.into());
    }
    Ok(outcome)
}

/// Runs the server loop, evaluating and logging after every round.
fn serve_session<E: Element, C: FrameChannel>(
    cfg: &RunConfig,
    model_cfg: &FcnConfig,
    init: ParamSet<E>,
    channels: &mut [C],
    data: &LoadedData,
    metrics_path: &Path,
) -> Result<SessionOutcome<E>, CliError> {
    let sink = fresh_sink(metrics_path)?;
    let run_id = cfg.run_id();
    let hp = cfg.hyperparams();
    let options = ServerOptions { aggregation: cfg.aggregation.to_core(), timeout: cfg.timeout() };
    let mut last: Option<MetricRecord> = None;
    let mut callback_err: Option<CliError> = None;

    let result = run_server(channels, model_cfg, &hp, init, &options, |round, global, loss| {
        let logged = evaluate_params::<E>(
            global,
            model_cfg,
            &data.eval,
            &data.palette,
            cfg.batch_size as usize,
            &run_id,
            cfg.mode.record_mode(),
            round,
            round * hp.epochs,
            Some(loss),
        )
        .and_then(|record| {
            sink.append(&record)?;
            last = Some(record);
            Ok(())
        });
        logged.map_err(|e| {
            let msg = format!("metric logging failed: {e}");
            callback_err = Some(e);
            ProtoError::Session(msg)
        })
    });
    if let Some(e) = callback_err {
        return Err(e);
    }
    let finals = result?;
    let last = last.ok_or_else(|| {
        CliError::Config("a federated run needs at least one round".into())
    })?;
    Ok((finals, last))
}

fn run_serve<E: Element>(
    cfg: &RunConfig,
    model_cfg: &FcnConfig,
    data: &LoadedData,
) -> Result<Vec<(String, MetricRecord)>, CliError> {
    let listen = cfg.listen.as_deref().expect("validated");
    let (listener, addr) = bind_listener(listen)?;
    std::fs::write(cfg.out.join("listen_addr.txt"), format!("{addr}\n"))?;
    println!("serving {} federates on {addr}", cfg.n_silos);
    let mut channels = accept_channels(&listener, cfg.n_silos)?;

    let init = init_params::<E>(model_cfg)?;
    let (finals, last) = serve_session::<E, _>(
        cfg,
        model_cfg,
        init,
        &mut channels,
        data,
        &cfg.out.join("metrics.jsonl"),
    )?;
    save_params(&cfg.out.join("model.fps1"), &finals)?;
    Ok(vec![("federated".into(), last)])
}

fn run_join<E: Element>(
    cfg: &RunConfig,
    model_cfg: &FcnConfig,
    data: &LoadedData,
) -> Result<Vec<(String, MetricRecord)>, CliError> {
    let index = cfg.silo_index.expect("validated");
    let silos = partition(&data.train, cfg.n_silos, cfg.partition_seed())?;
    let silo = silos.into_iter().nth(index).expect("index validated");
    let connect = cfg.connect.as_deref().expect("validated");

    let window = cfg.timeout().unwrap_or(Duration::from_secs(120));
    let mut channel = TcpChannel::connect(connect, window)?;
    let finals = run_client::<E, _>(&mut channel, &silo, model_cfg, cfg.timeout())?;
    save_params(&cfg.out.join(format!("model_silo{index}.fps1")), &finals)?;

    let record = evaluate_params::<E>(
        &finals,
        model_cfg,
        &data.eval,
        &data.palette,
        cfg.batch_size as usize,
        &cfg.run_id(),
        cfg.mode.record_mode(),
        cfg.rounds,
        cfg.rounds * cfg.epochs,
        None,
    )?;
    Ok(vec![(format!("join/silo{index}"), record)])
}

/// Forward pass over the evaluation split: pixel accuracy, per-class and
/// aggregate IoU, and the evaluation BCE loss. `train_loss`, when given,
/// lands in the record's loss field instead of the evaluation loss.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_params<E: Element>(
    params: &ParamSet<E>,
    model_cfg: &FcnConfig,
    eval: &[SegSample],
    palette: &Palette,
    batch_size: usize,
    run_id: &str,
    mode: Mode,
    round: u32,
    epoch: u32,
    train_loss: Option<f64>,
) -> Result<MetricRecord, CliError> {
    if eval.is_empty() {
        return Err(CliError::Config("evaluation split is empty".into()));
    }
    let nc = model_cfg.num_classes;
    let mut intersections = vec![0u64; nc];
    let mut unions = vec![0u64; nc];
    let mut matching = 0u64;
    let mut total = 0u64;
    let mut loss_sum = 0.0;
    let mut batches = 0usize;

    for chunk in eval.chunks(batch_size.max(1)) {
        let refs: Vec<&SegSample> = chunk.iter().collect();
        let (images, targets) = to_batch::<E>(&refs, nc)?;
        let logits = forward(params, model_cfg, &images)?;
        let (loss, _) = bce_with_logits(&logits, &targets)?;
        loss_sum += loss;
        batches += 1;
        for (pred, sample) in argmax_classes(&logits)?.iter().zip(chunk) {
            let stats = fedseg_core::metrics::mask_iou_stats(pred, &sample.target, nc)?;
            for c in 0..nc {
                intersections[c] += stats.intersections[c];
                unions[c] += stats.unions[c];
            }
            matching += pred
                .indices
                .iter()
                .zip(&sample.target.indices)
                .filter(|(a, b)| a == b)
                .count() as u64;
            total += (pred.width * pred.height) as u64;
        }
    }

    let iou_per_class: Vec<(String, Option<f64>)> = (0..nc)
        .map(|c| {
            let name = palette.name(c).unwrap_or("unknown").to_string();
            let iou = (unions[c] > 0).then(|| intersections[c] as f64 / unions[c] as f64);
            (name, iou)
        })
        .collect();
    let present: Vec<f64> = iou_per_class.iter().filter_map(|(_, v)| *v).collect();
    let iou_mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    let total_union: u64 = unions.iter().sum();
    let iou_micro = if total_union > 0 {
        intersections.iter().sum::<u64>() as f64 / total_union as f64
    } else {
        0.0
    };

    let record = MetricRecord {
        run_id: run_id.to_string(),
        mode,
        round,
        epoch,
        loss: train_loss.unwrap_or(loss_sum / batches as f64),
        pixel_accuracy: matching as f64 / total as f64,
        iou_per_class,
        iou_mean,
        iou_micro,
    };
    record.validate()?;
    Ok(record)
}

/// A metric sink on a fresh file; an existing log is replaced, never
/// appended to, so reruns stay byte-comparable.
fn fresh_sink(path: &Path) -> Result<MetricSink, CliError> {
    if path.exists() {
        std::fs::remove_file(path)?;
    }
    Ok(MetricSink::to_file(path)?)
}

pub fn save_params<E: Element>(path: &Path, params: &ParamSet<E>) -> Result<(), CliError> {
    std::fs::write(path, encode_params(params))?;
    Ok(())
}

pub fn load_params_any(path: &Path) -> Result<AnyParamSet, CliError> {
    let bytes = std::fs::read(path)?;
    decode_params_any(&bytes).map_err(|e| {
        CliError::Config(format!("model file {}: {e}", path.display()))
    })
}

pub fn print_summary(rows: &[(String, MetricRecord)]) {
    println!(
        "{:<20} {:>10} {:>11} {:>10} {:>10}",
        "model", "loss", "pixel_acc", "iou_mean", "iou_micro"
    );
    for (label, r) in rows {
        println!(
            "{:<20} {:>10.4} {:>11.4} {:>10.4} {:>10.4}",
            label, r.loss, r.pixel_accuracy, r.iou_mean, r.iou_micro
        );
    }
}
