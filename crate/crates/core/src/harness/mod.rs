//! Experiment driver: end-to-end runs, sweeps and power profiles.
//!
//! Every run is a pure function of (scheme, grid point, seed, image index),
//! so grids are evaluated in parallel and gathered in a fixed order.

mod config;

pub use config::*;

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::time::Duration;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::baseline::{
    baseline_decode, baseline_encode, run_baseline, BaselineStatus, BlockLayout, Decision,
};
use crate::channel::{apply_time_domain, realize, ChannelKind, ChannelSpec};
use crate::codec::{
    decode_masked, dequantize, encode, loss_mse_unmasked, quantize, send_latents, train_allocator,
    train_staged, AllocTrainConfig, Checkpoint, CodecDims, CodecModel, LatentBlock, QuantizedBlock,
    TrainConfig,
};
use crate::corpus::{load_dir, synthetic_corpus, CorpusItem};
use crate::emulator::{EmulatorClient, EMULATOR_CP, EMULATOR_FFT};
use crate::error::{Error, Result};
use crate::frame::{build_frames, frame_capacity, frame_config, parse_frame};
use crate::image::ImageTensor;
use crate::link::{probe_order, CsiMode, LinkConfig, Placement};
use crate::metrics::{evaluate, psnr, QualityReport};
use crate::phy::OfdmConfig;
use crate::power::{AllocationMode, PowerAllocator};
use crate::preprocess::{infill_masked, preprocess, MaskMatrix};
use crate::rng::split_seed;
use crate::wire::round_to_f32;

/// Channel symbols per source value.
pub const BANDWIDTH_RATIO: f64 = 1.0 / 16.0;
/// SNR range for the random-SNR training variant.
pub const RANDOM_SNR_RANGE: (f64, f64) = (-5.0, 15.0);
const EMULATOR_TIMEOUT: Duration = Duration::from_secs(10);

/// A trained codec and, optionally, its power allocator.
#[derive(Clone, Debug)]
pub struct Codec {
    pub model: CodecModel,
    pub allocator: Option<PowerAllocator>,
}

impl From<Checkpoint> for Codec {
    fn from(c: Checkpoint) -> Self {
        Self {
            model: c.model,
            allocator: c.allocator,
        }
    }
}

/// How samples reach the channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    /// Per-subcarrier simulation on the 64-point layout.
    InProcess,
    /// 13,720-sample frames through a local time-domain channel.
    Framed,
    /// The same frames through a running emulator.
    Emulator(SocketAddr),
}

/// One grid point of one experiment.
#[derive(Clone, Debug)]
pub struct RunSettings {
    pub scheme: Scheme,
    /// Includes the SNR of this point.
    pub channel: ChannelSpec,
    pub mr: Option<f64>,
    pub csi: CsiMode,
    pub power: PowerMode,
    pub decision: Decision,
    pub transport: Transport,
    pub patch_size: usize,
    pub seed: u64,
    pub image_index: usize,
}

impl RunSettings {
    pub fn from_spec(spec: &ExperimentSpec, snr_db: f64, seed: u64, image_index: usize) -> Self {
        Self {
            scheme: spec.scheme,
            channel: spec.channel_at(snr_db),
            mr: spec.mr,
            csi: spec.csi,
            power: spec.power,
            decision: spec.decision,
            transport: spec
                .emulator
                .map_or(Transport::InProcess, Transport::Emulator),
            patch_size: spec.patch_size,
            seed,
            image_index,
        }
    }

    /// Seed of the channel realization; shared across SNR points so curves
    /// compare the same fades.
    pub fn channel_seed(&self) -> u64 {
        split_seed(self.seed, self.image_index as u64, 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub channel_kind: ChannelKind,
    pub snr_db: f64,
    pub mr: f64,
    pub seed: u64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub cs_proxy: f64,
    pub psnr_cs: f64,
    pub ssim_cs: f64,
    pub status: BaselineStatus,
    pub raw_psnr_db: f64,
    pub image: usize,
}

pub const CSV_HEADER: &str =
    "scheme,channel_kind,snr_db,mr,seed,psnr_db,ssim,cs_proxy,psnr_cs,ssim_cs,status,raw_psnr_db,image";

impl ResultRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scheme,
            self.channel_kind,
            self.snr_db,
            self.mr,
            self.seed,
            self.psnr_db,
            self.ssim,
            self.cs_proxy,
            self.psnr_cs,
            self.ssim_cs,
            self.status,
            self.raw_psnr_db,
            self.image
        )
    }
}

pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct E2eOutput {
    pub reconstruction: ImageTensor,
    pub report: QualityReport,
    pub row: ResultRow,
    /// MSE over kept patches only (JSCC); full-image MSE for the baseline.
    pub kept_mse: f64,
    pub mask: Option<MaskMatrix>,
    /// Received latent levels (JSCC only).
    pub received: Option<QuantizedBlock>,
}

pub fn load_corpus(spec: &ExperimentSpec) -> Result<Vec<CorpusItem>> {
    let items = match &spec.corpus {
        Some(dir) => load_dir(dir)?,
        None => synthetic_corpus(
            spec.corpus_size,
            spec.image_size,
            spec.image_size,
            0x636f_7270,
        ),
    };
    if items.is_empty() {
        return Err(Error::NotFound("corpus is empty".into()));
    }
    Ok(items)
}

/// Symbols available to either scheme for an image.
pub fn symbol_budget(img: &ImageTensor) -> usize {
    (img.len() as f64 * BANDWIDTH_RATIO).round() as usize
}

/// Runs one image through the full chain of `s.scheme`.
pub fn run_e2e(item: &CorpusItem, codec: Option<&Codec>, s: &RunSettings) -> Result<E2eOutput> {
    match s.scheme {
        Scheme::Baseline => run_e2e_baseline(item, s),
        Scheme::Jscc | Scheme::JsccRandomSnr => {
            let codec = codec
                .ok_or_else(|| Error::NotFound(format!("{} needs a codec checkpoint", s.scheme)))?;
            run_e2e_jscc(item, codec, s)
        }
    }
}

fn run_e2e_jscc(item: &CorpusItem, codec: &Codec, s: &RunSettings) -> Result<E2eOutput> {
    let img = &item.image;
    let pre = preprocess(img, &item.regions, s.patch_size, s.channel.snr_db, s.mr)?;
    let latent = encode(&pre.masked, &pre.mask, &codec.model)?;
    let (received, rx_latent) = match s.transport {
        Transport::InProcess => {
            let link = LinkConfig::new(OfdmConfig::sim64(), s.channel).with_csi(s.csi);
            let (placement, alloc) = match s.power {
                PowerMode::Off => (Placement::Natural, None),
                PowerMode::Uniform => (Placement::RankOrdered, None),
                PowerMode::Learned => (
                    Placement::RankOrdered,
                    Some(codec.allocator.as_ref().ok_or_else(|| {
                        Error::NotFound("checkpoint has no learned allocator".into())
                    })?),
                ),
            };
            let t = send_latents(
                &latent,
                &codec.model.dims,
                &link,
                placement,
                alloc,
                s.channel_seed(),
            )?;
            (t.received, t.latent)
        }
        Transport::Framed | Transport::Emulator(_) => {
            if s.power != PowerMode::Off {
                return Err(Error::Config(
                    "power shaping is only simulated in-process".into(),
                ));
            }
            let symbols = quantize(&latent)?.to_symbols()?;
            let (rx, _) = carry_framed(&symbols, s, 0, mr_index(pre.mask.mask_ratio))?;
            let received = QuantizedBlock::from_symbols(&rx);
            let l: LatentBlock = dequantize(&received)?;
            (received, l)
        }
    };
    let decoded = decode_masked(&rx_latent, &pre.mask, &codec.model)?;
    let recon = infill_masked(&decoded, &pre.mask)?;
    let report = evaluate(img, &recon, &item.regions)?;
    let kept_mse = loss_mse_unmasked(&pre.masked, &recon, &pre.mask)?;
    Ok(E2eOutput {
        row: row(
            s,
            pre.mask.mask_ratio,
            &report,
            BaselineStatus::Ok,
            report.psnr_db,
        ),
        reconstruction: recon,
        report,
        kept_mse,
        mask: Some(pre.mask),
        received: Some(received),
    })
}

fn run_e2e_baseline(item: &CorpusItem, s: &RunSettings) -> Result<E2eOutput> {
    let img = &item.image;
    let budget = symbol_budget(img);
    let outcome = match s.transport {
        Transport::InProcess => {
            let link = LinkConfig::new(OfdmConfig::sim64(), s.channel).with_csi(s.csi);
            run_baseline(img, &link, budget, s.decision, s.channel_seed())?.0
        }
        Transport::Framed | Transport::Emulator(_) => {
            let layout = BlockLayout::for_symbols(budget)?;
            let (_, symbols) = baseline_encode(img, &layout)?;
            let (rx, noise) = carry_framed(&symbols, s, 1, 0)?;
            baseline_decode(
                &rx,
                &noise,
                &layout,
                (img.height(), img.width(), img.channels()),
                s.decision,
            )?
        }
    };
    let report = match outcome.status {
        BaselineStatus::Ok => evaluate(img, &outcome.image, &item.regions)?,
        BaselineStatus::Failed => QualityReport::failed(),
    };
    let raw = psnr(img, &outcome.raw_image)?;
    let kept_mse = mse_u8(img, &outcome.image);
    Ok(E2eOutput {
        row: row(s, 0.0, &report, outcome.status, raw),
        reconstruction: outcome.image,
        report,
        kept_mse,
        mask: None,
        received: None,
    })
}

fn mse_u8(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let n = a.len().max(1) as f64;
    a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = (x as f64 - y as f64) / 255.0;
            d * d
        })
        .sum::<f64>()
        / n
}

fn mr_index(mr: f64) -> u8 {
    (mr * 10.0).round().clamp(0.0, 15.0) as u8
}

fn row(
    s: &RunSettings,
    mr: f64,
    r: &QualityReport,
    status: BaselineStatus,
    raw_psnr_db: f64,
) -> ResultRow {
    ResultRow {
        scheme: s.scheme,
        channel_kind: s.channel.kind,
        snr_db: s.channel.snr_db,
        mr,
        seed: s.seed,
        psnr_db: r.psnr_db,
        ssim: r.ssim,
        cs_proxy: r.cs_proxy,
        psnr_cs: r.psnr_cs,
        ssim_cs: r.ssim_cs,
        status,
        raw_psnr_db,
        image: s.image_index,
    }
}

/// Frames `symbols`, passes every frame through the channel (locally or via
/// the emulator) with 32-bit sample rounding on both legs, and parses the
/// frames at their known start. Returns the equalized symbols and the
/// post-equalization noise variance of each.
pub fn carry_framed(
    symbols: &[Complex64],
    s: &RunSettings,
    payload_type: u8,
    mr_index: u8,
) -> Result<(Vec<Complex64>, Vec<f64>)> {
    let frames = build_frames(symbols, payload_type, mr_index)?;
    let seed = s.channel_seed();
    let received: Vec<Vec<Complex64>> = match s.transport {
        Transport::Emulator(addr) => {
            let session = (seed ^ (seed >> 32)) as u32;
            let mut client = EmulatorClient::connect(addr, session, EMULATOR_TIMEOUT)?;
            client.configure(&s.channel, seed)?;
            frames
                .iter()
                .map(|f| client.transmit(&round_to_f32(f)))
                .collect::<Result<_>>()?
        }
        _ => {
            let ch = realize(&s.channel, EMULATOR_FFT, seed)?;
            let mut rng = ch.noise_rng();
            frames
                .iter()
                .map(|f| {
                    round_to_f32(
                        &apply_time_domain(&round_to_f32(f), &ch, EMULATOR_CP, &mut rng).samples,
                    )
                })
                .collect()
        }
    };
    let cfg = frame_config();
    let sigma2 = s.channel.noise_variance();
    let mut out = Vec::with_capacity(symbols.len());
    let mut noise = Vec::with_capacity(symbols.len());
    for (i, rx) in received.iter().enumerate() {
        let parsed = parse_frame(rx)?;
        let take = (symbols.len() - i * frame_capacity()).min(frame_capacity());
        let gains = parsed.csi.data_gains(&cfg);
        out.extend_from_slice(&parsed.symbols[..take]);
        noise.extend((0..take).map(|j| sigma2 / gains[j % gains.len()].norm_sqr().max(1e-300)));
    }
    Ok((out, noise))
}

fn run_grid(
    spec: &ExperimentSpec,
    codec: Option<&Codec>,
    corpus: &[CorpusItem],
    points: &[(f64, Option<f64>)],
) -> Result<Vec<ResultRow>> {
    if spec.scheme != Scheme::Baseline && codec.is_none() {
        return Err(Error::NotFound(format!(
            "{} needs a codec checkpoint",
            spec.scheme
        )));
    }
    let mut jobs = Vec::new();
    for (pi, &(snr, mr)) in points.iter().enumerate() {
        for &seed in &spec.seeds {
            for i in 0..corpus.len() {
                jobs.push((pi, snr, mr, seed, i));
            }
        }
    }
    let results: Vec<Result<(usize, ResultRow)>> = jobs
        .par_iter()
        .map(|&(pi, snr, mr, seed, i)| {
            let mut s = RunSettings::from_spec(spec, snr, seed, i);
            s.mr = mr;
            run_e2e(&corpus[i], codec, &s).map(|o| (pi, o.row))
        })
        .collect();
    let mut rows: Vec<(usize, ResultRow)> = results.into_iter().collect::<Result<_>>()?;
    rows.sort_by_key(|a| (a.0, a.1.seed, a.1.image));
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Every SNR in the grid × every ratio in `mr_grid`.
pub fn run_mr_sweep(
    spec: &ExperimentSpec,
    codec: Option<&Codec>,
    corpus: &[CorpusItem],
) -> Result<Vec<ResultRow>> {
    let points: Vec<(f64, Option<f64>)> = spec
        .snr_grid
        .iter()
        .flat_map(|&snr| spec.mr_grid.iter().map(move |&mr| (snr, Some(mr))))
        .collect();
    run_grid(spec, codec, corpus, &points)
}

/// Every SNR in the grid with the spec's mask-ratio setting.
pub fn run_snr_sweep(
    spec: &ExperimentSpec,
    codec: Option<&Codec>,
    corpus: &[CorpusItem],
) -> Result<Vec<ResultRow>> {
    let points: Vec<(f64, Option<f64>)> = spec.snr_grid.iter().map(|&snr| (snr, spec.mr)).collect();
    run_grid(spec, codec, corpus, &points)
}

/// Means over images and seeds for one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub channel_kind: ChannelKind,
    pub snr_db: f64,
    pub mr: f64,
    pub count: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub cs_proxy: f64,
    pub psnr_cs: f64,
    pub ssim_cs: f64,
    pub success_rate: f64,
}

pub const SUMMARY_HEADER: &str =
    "scheme,channel_kind,snr_db,mr,count,psnr_db,ssim,cs_proxy,psnr_cs,ssim_cs,success_rate";

/// Groups rows by (scheme, channel, SNR) and, when `by_mr`, by ratio; the
/// reported `mr` is the group mean. Groups keep first-appearance order.
pub fn summarize(rows: &[ResultRow], by_mr: bool) -> Vec<SummaryRow> {
    let mut groups: Vec<(SummaryRow, f64)> = Vec::new();
    for r in rows {
        let key = |g: &SummaryRow| {
            g.scheme == r.scheme
                && g.channel_kind == r.channel_kind
                && same(g.snr_db, r.snr_db)
                && (!by_mr || same(g.mr, r.mr))
        };
        let idx = match groups.iter().position(|(g, _)| key(g)) {
            Some(i) => i,
            None => {
                groups.push((
                    SummaryRow {
                        scheme: r.scheme,
                        channel_kind: r.channel_kind,
                        snr_db: r.snr_db,
                        mr: r.mr,
                        count: 0,
                        psnr_db: 0.0,
                        ssim: 0.0,
                        cs_proxy: 0.0,
                        psnr_cs: 0.0,
                        ssim_cs: 0.0,
                        success_rate: 0.0,
                    },
                    0.0,
                ));
                groups.len() - 1
            }
        };
        let (g, mr_sum) = &mut groups[idx];
        g.count += 1;
        *mr_sum += r.mr;
        g.psnr_db += r.psnr_db;
        g.ssim += r.ssim;
        g.cs_proxy += r.cs_proxy;
        g.psnr_cs += r.psnr_cs;
        g.ssim_cs += r.ssim_cs;
        g.success_rate += (r.status == BaselineStatus::Ok) as u8 as f64;
    }
    groups
        .into_iter()
        .map(|(mut g, mr_sum)| {
            let n = g.count as f64;
            g.mr = mr_sum / n;
            for v in [
                &mut g.psnr_db,
                &mut g.ssim,
                &mut g.cs_proxy,
                &mut g.psnr_cs,
                &mut g.ssim_cs,
                &mut g.success_rate,
            ] {
                *v /= n;
            }
            g
        })
        .collect()
}

fn same(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() < 1e-12
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.scheme,
            r.channel_kind,
            r.snr_db,
            r.mr,
            r.count,
            r.psnr_db,
            r.ssim,
            r.cs_proxy,
            r.psnr_cs,
            r.ssim_cs,
            r.success_rate
        );
    }
    s
}

/// Mean transmit power at each subchannel rank.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerRow {
    pub mode: AllocationMode,
    pub rank: usize,
    pub mean_power: f64,
    /// Mean channel power gain at this rank, in dB.
    pub channel_gain_db: f64,
}

pub const POWER_HEADER: &str = "mode,rank,mean_power,channel_gain_db";

/// Averages per-rank power over one realization per seed. Learned mode is
/// included only when `learned` is given.
pub fn run_power_profile(
    spec: &ExperimentSpec,
    learned: Option<&PowerAllocator>,
) -> Result<Vec<PowerRow>> {
    let ofdm = OfdmConfig::sim64();
    let k = ofdm.data_subcarriers;
    let snr = spec.snr_grid[0];
    let link = LinkConfig::new(ofdm.clone(), spec.channel_at(snr)).with_csi(CsiMode::Perfect);
    let mut modes = vec![AllocationMode::Uniform, AllocationMode::Matched];
    if let Some(l) = learned {
        if l.len() != k {
            return Err(Error::Config(format!(
                "allocator has {} gains for {k} subchannels",
                l.len()
            )));
        }
        modes.push(AllocationMode::Learned);
    }
    let mut power = vec![vec![0.0; k]; modes.len()];
    let mut gain = vec![0.0; k];
    for &seed in &spec.seeds {
        let ch = realize(&link.channel, ofdm.fft_size, split_seed(seed, 0, 0))?;
        let order = probe_order(&link, &ch, seed)?;
        for (r, &pos) in order.order.iter().enumerate() {
            gain[r] += order.power[pos];
        }
        for (mi, mode) in modes.iter().enumerate() {
            let alloc = match mode {
                AllocationMode::Uniform => PowerAllocator::uniform(k),
                AllocationMode::Matched => PowerAllocator::matched(&order)?,
                AllocationMode::Learned => learned.expect("checked above").clone(),
            };
            for (r, g) in alloc.gains_by_rank.iter().enumerate() {
                power[mi][r] += g * g;
            }
        }
    }
    let n = spec.seeds.len() as f64;
    let mut rows = Vec::with_capacity(modes.len() * k);
    for (mi, &mode) in modes.iter().enumerate() {
        for r in 0..k {
            rows.push(PowerRow {
                mode,
                rank: r,
                mean_power: power[mi][r] / n,
                channel_gain_db: 10.0 * (gain[r] / n).max(1e-300).log10(),
            });
        }
    }
    Ok(rows)
}

pub fn power_to_csv(rows: &[PowerRow]) -> String {
    let mut s = String::from(POWER_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.mode, r.rank, r.mean_power, r.channel_gain_db
        );
    }
    s
}

/// Trains a codec (and allocator when `alloc_steps > 0`) on `corpus`.
pub fn train_codec(spec: &ExperimentSpec, corpus: &[CorpusItem]) -> Result<Checkpoint> {
    let first = &corpus
        .first()
        .ok_or_else(|| Error::InvalidInput("no training images".into()))?
        .image;
    let dims = CodecDims::for_image(
        first.height(),
        first.width(),
        first.channels(),
        spec.patch_size,
        spec.hidden,
        BANDWIDTH_RATIO,
    )?;
    let images: Vec<ImageTensor> = corpus.iter().map(|c| c.image.clone()).collect();
    for img in &images {
        dims_match(&dims, img)?;
    }
    let mut model = CodecModel::new(dims, spec.train_seed)?;
    let cfg = TrainConfig {
        stage_steps: spec.train_steps,
        channel: spec.train_channel(),
        snr_range: (spec.scheme == Scheme::JsccRandomSnr).then_some(RANDOM_SNR_RANGE),
        seed: spec.train_seed,
        ..TrainConfig::default()
    };
    let (report, adam) = train_staged(&mut model, &images, &cfg)?;
    if let Some(last) = report.losses.last() {
        log::info!("codec training finished at loss {:.5}", last.loss);
    }
    let allocator = if spec.alloc_steps > 0 {
        let acfg = AllocTrainConfig {
            steps: spec.alloc_steps,
            channel: spec.train_channel(),
            seed: spec.train_seed,
            ..AllocTrainConfig::default()
        };
        Some(train_allocator(&model, &images, &acfg)?.0)
    } else {
        None
    };
    Ok(Checkpoint {
        model,
        adam: Some(adam),
        allocator,
    })
}

fn dims_match(d: &CodecDims, img: &ImageTensor) -> Result<()> {
    let n = (img.height() / d.patch_size) * (img.width() / d.patch_size);
    if img.channels() != d.channels || n != d.n_patches {
        return Err(Error::ShapeMismatch {
            expected: format!("{} patches of {} channels", d.n_patches, d.channels),
            got: img.shape_string(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(text: &str) -> ExperimentSpec {
        ExperimentSpec::parse(&format!("corpus_size=2\nseeds=1,2\n{text}")).unwrap()
    }

    #[test]
    fn baseline_sweep_is_ordered_and_reproducible() {
        let s = spec("scheme=baseline\nsnr_grid=0,20");
        let corpus = load_corpus(&s).unwrap();
        let a = run_snr_sweep(&s, None, &corpus).unwrap();
        let b = run_snr_sweep(&s, None, &corpus).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(rows_to_csv(&a), rows_to_csv(&b));
        assert_eq!((a[0].snr_db, a[0].seed, a[0].image), (0.0, 1, 0));
        assert_eq!((a[7].snr_db, a[7].seed, a[7].image), (20.0, 2, 1));
        assert!(a[4..].iter().all(|r| r.status == BaselineStatus::Ok));
        let sum = summarize(&a, false);
        assert_eq!(sum.len(), 2);
        assert_eq!(sum[1].success_rate, 1.0);
    }

    #[test]
    fn jscc_without_codec_is_an_error() {
        let s = spec("snr_grid=0");
        let corpus = load_corpus(&s).unwrap();
        assert!(matches!(
            run_snr_sweep(&s, None, &corpus),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn power_profile_conserves_power() {
        let s = spec("channel=multipath\nsnr_grid=10");
        let rows = run_power_profile(&s, None).unwrap();
        for mode in [AllocationMode::Uniform, AllocationMode::Matched] {
            let p: Vec<f64> = rows
                .iter()
                .filter(|r| r.mode == mode)
                .map(|r| r.mean_power)
                .collect();
            assert!((p.iter().sum::<f64>() / p.len() as f64 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_header_matches_row() {
        let n = CSV_HEADER.split(',').count();
        let s = spec("scheme=baseline\nsnr_grid=30\nseeds=0");
        let corpus = load_corpus(&s).unwrap();
        let rows = run_snr_sweep(&s, None, &corpus).unwrap();
        assert_eq!(rows[0].to_csv().split(',').count(), n);
    }
}
