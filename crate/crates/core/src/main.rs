use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use semtx::channel::{ChannelKind, ChannelSpec};
use semtx::codec::Checkpoint;
use semtx::corpus::{synthetic_scene, CorpusItem};
use semtx::emulator::{EmulatorClient, EmulatorServer};
use semtx::frame::{build_frames, frame_len, parse_frame, synchronize};
use semtx::harness::{
    load_corpus, power_to_csv, rows_to_csv, run_e2e, run_mr_sweep, run_power_profile,
    run_snr_sweep, summarize, summary_to_csv, train_codec, Codec, ExperimentSpec, RunSettings,
    Scheme, CONFIG_KEYS,
};
use semtx::image::{ImageTensor, RegionAnnotation};
use semtx::wire::{parse_snr, read_iq_file, write_iq_file};

/// Largest start offset searched per frame by `frame-parse --sync`.
const SYNC_SEARCH: usize = 5000;

#[derive(Parser)]
#[command(
    name = "semtx",
    version,
    about = "Semantic image transmission simulator and channel emulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
#[command(after_help = format!("Config keys (key=value, one per line):\n{CONFIG_KEYS}"))]
struct Common {
    /// Flat key=value experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set snr_grid=0,5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let text = match &self.config {
            Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        let mut spec = ExperimentSpec::parse(&text)?;
        for kv in &self.set {
            let (k, v) = kv.split_once('=').context("--set expects KEY=VALUE")?;
            spec.set(k.trim(), v.trim())?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct ChannelArgs {
    /// awgn | rayleigh | multipath
    #[arg(long, default_value = "awgn")]
    channel: String,
    /// SNR in dB, or inf for noiseless.
    #[arg(long, default_value = "inf")]
    snr: String,
    #[arg(long, default_value_t = 5)]
    num_paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ChannelArgs {
    fn spec(&self) -> Result<ChannelSpec> {
        let snr = parse_snr(&self.snr).with_context(|| format!("bad SNR {:?}", self.snr))?;
        let spec = match self.channel.parse::<ChannelKind>()? {
            ChannelKind::Awgn => ChannelSpec::awgn(snr),
            ChannelKind::RayleighFlat => ChannelSpec::rayleigh_flat(snr),
            ChannelKind::Multipath => ChannelSpec::multipath(self.num_paths, snr),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a codec (and allocator) and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics versus mask ratio for every SNR in the grid.
    SweepMr {
        #[command(flatten)]
        common: Common,
    },
    /// Metrics versus SNR.
    SweepSnr {
        #[command(flatten)]
        common: Common,
    },
    /// Mean transmit power per subchannel rank.
    PowerProfile {
        #[command(flatten)]
        common: Common,
    },
    /// One image through the whole chain.
    E2e {
        #[command(flatten)]
        common: Common,
        /// PPM/PGM input; a synthetic scene when omitted.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Box annotations (`class y0 x0 h w` per line).
        #[arg(long)]
        boxes: Option<PathBuf>,
        /// SNR in dB (defaults to the first grid value).
        #[arg(long)]
        snr: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the reconstruction (PNM).
        #[arg(long)]
        out_image: Option<PathBuf>,
    },
    /// Run the UDP channel emulator.
    EmulateServe {
        #[arg(long, default_value = "127.0.0.1:47000")]
        bind: SocketAddr,
        /// Channel for sessions that skip CONFIG; without it they get ERROR.
        #[arg(long)]
        default_channel: bool,
        #[command(flatten)]
        channel: ChannelArgs,
    },
    /// Send a `.iq` file through a running emulator.
    EmulateClient {
        #[arg(long)]
        server: SocketAddr,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long, default_value_t = 1)]
        session: u32,
        /// Samples per IQ_UP message.
        #[arg(long, default_value_t = frame_len())]
        chunk: usize,
        #[arg(long, default_value_t = 10.0)]
        timeout_s: f64,
    },
    /// Wrap symbols from a `.iq` file into frames.
    FramePack {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        payload_type: u8,
        #[arg(long, default_value_t = 0)]
        mr_index: u8,
    },
    /// Recover symbols from a `.iq` file of frames.
    FrameParse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Search for each frame start instead of assuming back-to-back frames.
        #[arg(long)]
        sync: bool,
        /// Keep only this many symbols in total.
        #[arg(long)]
        count: Option<usize>,
    },
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_codec(spec: &ExperimentSpec) -> Result<Option<Codec>> {
    match (&spec.checkpoint, spec.scheme) {
        (Some(p), _) => Ok(Some(
            Checkpoint::load(p)
                .with_context(|| format!("loading checkpoint {}", p.display()))?
                .into(),
        )),
        (None, Scheme::Baseline) => Ok(None),
        (None, s) => bail!("scheme {s} needs checkpoint=<path>"),
    }
}

fn sweep(common: &Common, mr: bool) -> Result<()> {
    let spec = common.spec()?;
    let codec = load_codec(&spec)?;
    let corpus = load_corpus(&spec)?;
    let rows = if mr {
        run_mr_sweep(&spec, codec.as_ref(), &corpus)?
    } else {
        run_snr_sweep(&spec, codec.as_ref(), &corpus)?
    };
    write_or_print(spec.output.as_deref(), &rows_to_csv(&rows))?;
    if spec.output.is_some() {
        print!("{}", summary_to_csv(&summarize(&rows, mr)));
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Train { common, out } => {
            let spec = common.spec()?;
            let corpus = load_corpus(&spec)?;
            let ckpt = train_codec(&spec, &corpus)?;
            ckpt.save(&out)?;
            log::info!("wrote {}", out.display());
        }
        Cmd::SweepMr { common } => sweep(&common, true)?,
        Cmd::SweepSnr { common } => sweep(&common, false)?,
        Cmd::PowerProfile { common } => {
            let spec = common.spec()?;
            let learned = match &spec.checkpoint {
                Some(p) => Checkpoint::load(p)?.allocator,
                None => None,
            };
            let rows = run_power_profile(&spec, learned.as_ref())?;
            write_or_print(spec.output.as_deref(), &power_to_csv(&rows))?;
        }
        Cmd::E2e {
            common,
            image,
            boxes,
            snr,
            seed,
            out_image,
        } => {
            let spec = common.spec()?;
            let codec = load_codec(&spec)?;
            let item = match image {
                Some(p) => {
                    let img = ImageTensor::read_pnm(&p)?;
                    let regions = match boxes {
                        Some(b) => RegionAnnotation::read(b, img.height(), img.width())?,
                        None => RegionAnnotation::empty(),
                    };
                    CorpusItem {
                        name: p.display().to_string(),
                        image: img,
                        regions,
                    }
                }
                None => synthetic_scene(spec.image_size, spec.image_size, seed),
            };
            let snr_db = match snr {
                Some(s) => parse_snr(&s).with_context(|| format!("bad SNR {s:?}"))?,
                None => spec.snr_grid[0],
            };
            let settings = RunSettings::from_spec(&spec, snr_db, seed, 0);
            let out = run_e2e(&item, codec.as_ref(), &settings)?;
            println!("{}", semtx::harness::CSV_HEADER);
            println!("{}", out.row.to_csv());
            if let Some(p) = out_image {
                out.reconstruction.write_pnm(p)?;
            }
        }
        Cmd::EmulateServe {
            bind,
            default_channel,
            channel,
        } => {
            let mut server = EmulatorServer::bind(bind)?;
            if default_channel {
                server = server.with_default_channel(channel.spec()?, channel.seed)?;
            }
            log::info!("emulator listening on {}", server.local_addr()?);
            let stop = std::sync::atomic::AtomicBool::new(false);
            server.run(&stop)?;
        }
        Cmd::EmulateClient {
            server,
            input,
            output,
            channel,
            session,
            chunk,
            timeout_s,
        } => {
            if chunk == 0 {
                bail!("--chunk must be positive");
            }
            let samples = read_iq_file(&input)?;
            let mut client =
                EmulatorClient::connect(server, session, Duration::from_secs_f64(timeout_s))?;
            client.configure(&channel.spec()?, channel.seed)?;
            let mut out = Vec::with_capacity(samples.len());
            for part in samples.chunks(chunk) {
                out.extend(client.transmit(part)?);
            }
            write_iq_file(&output, &out)?;
        }
        Cmd::FramePack {
            input,
            output,
            payload_type,
            mr_index,
        } => {
            let syms = read_iq_file(&input)?;
            let frames = build_frames(&syms, payload_type, mr_index)?;
            log::info!("{} symbols in {} frames", syms.len(), frames.len());
            write_iq_file(&output, &frames.concat())?;
        }
        Cmd::FrameParse {
            input,
            output,
            sync,
            count,
        } => {
            let samples = read_iq_file(&input)?;
            let mut pos = 0;
            let mut syms = Vec::new();
            while samples.len() - pos >= frame_len() {
                if sync {
                    pos += synchronize(
                        &samples[pos..],
                        (samples.len() - pos - frame_len()).min(SYNC_SEARCH),
                    )?;
                }
                let f = parse_frame(&samples[pos..])?;
                println!(
                    "frame at {pos}: payload_type={} mr_index={} frame_seq={}",
                    f.meta.payload_type, f.meta.mr_index, f.meta.frame_seq
                );
                syms.extend(f.symbols);
                pos += frame_len();
            }
            if let Some(n) = count {
                if n > syms.len() {
                    bail!("asked for {n} symbols, frames carry {}", syms.len());
                }
                syms.truncate(n);
            }
            write_iq_file(&output, &syms)?;
        }
    }
    Ok(())
}
