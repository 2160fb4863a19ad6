use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};

use qsq_core::codec::{read_container, write_container, BitWidth, EncodedModel, LayerData};
use qsq_core::csd::nonzero_histogram;
use qsq_core::inference::{
    evaluate, evaluate_quantized, load_cifar10, load_mnist, quantize_network, Dataset, NetworkSpec,
};
use qsq_core::manifest::{load_manifest, write_atomic, write_manifest};
use qsq_core::metrics::{
    model_report, phi_for_width, sweep, write_sweep_csv, EncodingParams, ScalarPolicy, SweepCell,
};
use qsq_core::pipeline::{decode_model, quantize_model};
use qsq_core::quantizer::AssignMode;
use qsq_core::tensor::WeightTensor;

use crate::args::{
    CsdAnalyzeCmd, DatasetArgs, DecodeCmd, EvaluateCmd, InspectCmd, QuantizeCmd, SweepCmd,
};

fn load_dataset(args: &DatasetArgs) -> Result<Dataset> {
    match (&args.images, &args.labels) {
        (Some(images), Some(labels)) => Ok(load_mnist(images, labels)?),
        _ if !args.cifar.is_empty() => Ok(load_cifar10(&args.cifar)?),
        _ => bail!("no dataset given: pass --images and --labels, or --cifar"),
    }
}

/// Writes `bytes` atomically to `path`, or to `out` when no path is given.
fn emit(path: Option<&Path>, bytes: &[u8], out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes)?,
        None => out.write_all(bytes)?,
    }
    Ok(())
}

pub fn quantize(cmd: &QuantizeCmd, out: &mut dyn Write) -> Result<()> {
    let opts = cmd.quant.options()?;
    let model = load_manifest(&cmd.model)?;
    let q = quantize_model(&model, &opts)?;
    let bytes = write_container(&q.encoded, &cmd.out)?;

    writeln!(
        out,
        "phi {}  bits {}  grouping {}  mode {}",
        opts.config.phi,
        opts.resolve_bit_width()?,
        opts.config.grouping,
        match opts.config.mode {
            AssignMode::SigmaThreshold => "sigma",
            AssignMode::NearestLevel => "nearest",
        }
    )?;
    let mut total_error = 0.0;
    for s in &q.summaries {
        if !s.quantized {
            writeln!(out, "{:<12} {:<5} passthrough", s.name, s.kind)?;
            continue;
        }
        total_error += s.l2_error;
        write!(
            out,
            "{:<12} {:<5} vectors {:>6}  alpha min/mean/max {:.6}/{:.6}/{:.6}  J {:.6}  zeros {:.2}% -> {:.2}%",
            s.name,
            s.kind,
            s.vector_count,
            s.alpha_min,
            s.alpha_mean,
            s.alpha_max,
            s.l2_error,
            s.zero_fraction_before * 100.0,
            s.zero_fraction_after * 100.0
        )?;
        if let Some(t) = s.thresholds {
            write!(out, "  delta* {}  gamma* {}", t.delta, t.gamma)?;
        }
        writeln!(out)?;
    }
    let tensors: Vec<WeightTensor> = model.tensors().cloned().collect();
    let report = model_report(
        &tensors,
        &q.encoded,
        &EncodingParams::new(opts.resolve_bit_width()?, ScalarPolicy::PerVector),
        opts.include_dense,
    )?;
    writeln!(out, "total J {total_error:.6}")?;
    writeln!(
        out,
        "zero fraction {:.2}% -> {:.2}%",
        report.zero_fraction_before * 100.0,
        report.zero_fraction_after * 100.0
    )?;
    writeln!(
        out,
        "bits {} -> {}  savings {:.2}%  DRAM {:.1} pJ -> {:.1} pJ",
        report.bits_full,
        report.bits_encoded,
        report.savings_fraction * 100.0,
        report.dram_pj_full,
        report.dram_pj_encoded
    )?;
    writeln!(
        out,
        "wrote {} ({bytes} bytes, {} layers)",
        cmd.out.display(),
        q.encoded.layers.len()
    )?;
    Ok(())
}

fn flag_names(m: &EncodedModel) -> String {
    let mut flags = Vec::new();
    if m.layers.iter().any(|l| l.bias.is_some()) {
        flags.push("bias");
    }
    if m.network.is_some() {
        flags.push("network");
    }
    if flags.is_empty() {
        "none".into()
    } else {
        flags.join(", ")
    }
}

pub fn inspect(cmd: &InspectCmd, out: &mut dyn Write) -> Result<()> {
    let m = read_container(&cmd.container)?;
    writeln!(out, "version {}", m.version)?;
    writeln!(out, "flags {}", flag_names(&m))?;
    writeln!(out, "{} layers", m.layers.len())?;
    for l in &m.layers {
        write!(
            out,
            "  {:<12} {:<5} {:<14}",
            l.name,
            l.kind,
            l.dims.to_string()
        )?;
        match &l.data {
            LayerData::Quantized(q) => write!(
                out,
                " quantized  phi {}  bits {}  grouping {}  vectors {}  code bytes {}",
                q.phi,
                q.bit_width,
                q.grouping,
                q.scalars.len(),
                q.packed_codes.len()
            )?,
            LayerData::Passthrough(_) => write!(out, " passthrough")?,
        }
        if l.bias.is_some() {
            write!(out, "  bias")?;
        }
        writeln!(out)?;
    }
    if let Some(net) = &m.network {
        let [h, w, c] = net.input;
        writeln!(out, "network input {h}x{w}x{c}, {} ops", net.ops.len())?;
    }
    Ok(())
}

pub fn decode(cmd: &DecodeCmd, out: &mut dyn Write) -> Result<()> {
    let m = read_container(&cmd.container)?;
    let model = decode_model(&m)?;
    let path = write_manifest(&model, &cmd.out, &cmd.manifest_name)?;
    writeln!(
        out,
        "wrote {} ({} layers)",
        path.display(),
        model.layers.len()
    )?;
    Ok(())
}

pub fn evaluate_cmd(cmd: &EvaluateCmd, out: &mut dyn Write) -> Result<()> {
    let opts = cmd.quant.options()?;
    let model = load_manifest(&cmd.model)?;
    let net = NetworkSpec::from_model(&model)
        .with_context(|| format!("building network from {}", cmd.model.display()))?;
    let ds = load_dataset(&cmd.data)?;
    let samples = cmd.data.limit.unwrap_or(ds.len()).min(ds.len());
    let (orig, quant) = evaluate_quantized(&net, &opts, &ds, cmd.data.limit)?;
    writeln!(out, "samples {samples}")?;
    writeln!(out, "original accuracy {:.4}", orig)?;
    writeln!(out, "quantized accuracy {:.4}", quant)?;
    writeln!(out, "delta {:+.2} points", (quant - orig) * 100.0)?;
    Ok(())
}

pub fn sweep_cmd(cmd: &SweepCmd, out: &mut dyn Write) -> Result<()> {
    if cmd.n.is_empty() || cmd.be.is_empty() {
        bail!("--n and --be must each list at least one value");
    }
    for &n in &cmd.n {
        for &be in &cmd.be {
            cmd.options(n, be, phi_for_width(be))?;
        }
    }
    let model = load_manifest(&cmd.model)?;
    let eval = if cmd.data.is_given() {
        let net = NetworkSpec::from_model(&model)
            .with_context(|| format!("building network from {}", cmd.model.display()))?;
        Some((net, load_dataset(&cmd.data)?))
    } else {
        None
    };
    let tensors: Vec<WeightTensor> = model.tensors().cloned().collect();
    let rows = sweep(
        &tensors,
        &cmd.n,
        &cmd.be,
        cmd.scalar_policy.into(),
        cmd.include_dense,
        |n, be: BitWidth, phi| {
            let opts = cmd
                .options(n, be, phi)
                .map_err(|e| qsq_core::Error::InvalidConfig(e.to_string()))?;
            let encoded = quantize_model(&model, &opts)?.encoded;
            let accuracy = match &eval {
                Some((net, ds)) => Some(evaluate(
                    &quantize_network(net, &opts)?,
                    ds,
                    cmd.data.limit,
                )?),
                None => None,
            };
            Ok(SweepCell { encoded, accuracy })
        },
    )?;
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv)?;
    emit(cmd.out.as_deref(), &csv, out)
}

pub fn csd_analyze(cmd: &CsdAnalyzeCmd, out: &mut dyn Write) -> Result<()> {
    let model = load_manifest(&cmd.model)?;
    let values: Vec<f32> = model
        .tensors()
        .flat_map(|t| t.values.iter().copied())
        .collect();
    let hist = nonzero_histogram(&values, cmd.frac_bits, cmd.width)?;
    let mut csv = String::from("nonzeros,count\n");
    for (nz, count) in hist {
        csv.push_str(&format!("{nz},{count}\n"));
    }
    emit(cmd.out.as_deref(), csv.as_bytes(), out)
}
