use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use tinytts::archive::{decode_optimizer, encode_mel, encode_optimizer, load_weights, optimizer_path, save_weights, ArchiveHeader};
use tinytts::dsp::{griffin_lim, write_wav, GriffinLim, MelSpectrogram, SpectrogramConfig};
use tinytts::frontend::{ids_to_phonemes, load_lexicon, parse_phonemes, phonemes_to_ids, text_to_phonemes, SymbolTable};
use tinytts::model::{ModelConfig, PhonemeSequence};
use tinytts::profiler::{self, BenchOptions, BenchResult, GriffinLimVocoder, ProfileReport};
use tinytts::rng::Rng;
use tinytts::training::{generate_toy_dataset, load_dataset_dir, write_log, TrainConfig, TrainSample, Trainer};
use tinytts::{Error, Model32};

#[derive(Parser)]
#[command(name = "tinytts", version, about = "Tiny non-autoregressive text-to-speech on the CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Text, phonemes or ids to a WAV file
    Synth(SynthArgs),
    /// Train on the toy corpus or an aligned dataset directory
    Train(TrainArgs),
    /// Parameter and FLOP counts per block
    Profile(ProfileArgs),
    /// Wall-clock real-time factors
    Bench(BenchArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("input").required(true).args(["text", "phonemes", "ids"])))]
struct SynthArgs {
    #[arg(long)]
    text: Option<String>,
    /// Whitespace-separated ARPAbet symbols, e.g. "DH AH0 K W IH1 K"
    #[arg(long)]
    phonemes: Option<String>,
    /// Whitespace-separated token ids
    #[arg(long)]
    ids: Option<String>,
    /// CMU-format pronouncing dictionary, required with --text
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    duration_scale: f64,
    #[arg(long, default_value_t = 32)]
    gl_iters: usize,
    #[arg(long, default_value_t = 0)]
    gl_seed: u64,
    /// Also write the log-mel frames (ESM1 format)
    #[arg(long)]
    emit_mel: Option<PathBuf>,
    /// Print a JSON summary on stdout
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// key = value training config; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// `toy` or a directory holding manifest.txt
    #[arg(long, default_value = "toy")]
    data: String,
    /// Utterances in the toy corpus
    #[arg(long, default_value_t = 8)]
    toy_samples: usize,
    /// Seed of the toy corpus
    #[arg(long, default_value_t = 7)]
    toy_seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Continue from this archive and its optimizer state
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Overrides the config seed (model init and shuffling)
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides total_epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// CSV log; defaults to the archive path with a .csv extension
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("model").required(true).args(["weights", "config"])))]
struct ProfileArgs {
    #[arg(long)]
    weights: Option<PathBuf>,
    /// `default`, `tiny`, or a JSON model config / archive sidecar
    #[arg(long)]
    config: Option<String>,
    /// Phoneme count; scales 220 per 6 s when omitted
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 6.0)]
    seconds: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    /// Seeds the synthetic inputs
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Phonemes per synthetic input
    #[arg(long, default_value_t = profiler::DEFAULT_PHONEMES_6S / 4)]
    phonemes: usize,
    /// Also time Griffin-Lim and report RTF
    #[arg(long)]
    with_vocoder: bool,
    #[arg(long, default_value_t = 32)]
    gl_iters: usize,
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    json: bool,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonFinite(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Profile(a) => profile(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn usage(msg: impl std::fmt::Display) -> ! {
    eprintln!("error: {msg}");
    std::process::exit(2)
}

/// A closed stdout (e.g. piped into `head`) is not an error.
fn print_json(json: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{json}");
}

fn synth(a: SynthArgs) -> Result<(), Error> {
    let model: Model32 = load_weights(&a.weights)?;
    let symbols = SymbolTable::arpabet();
    let ids = if let Some(text) = &a.text {
        let Some(path) = &a.lexicon else {
            usage("--text needs --lexicon");
        };
        let lexicon = load_lexicon(path)?.with_symbols(symbols.clone())?;
        let ph = text_to_phonemes(text, &lexicon);
        phonemes_to_ids(&ph.phonemes, &symbols)?
    } else if let Some(p) = &a.phonemes {
        phonemes_to_ids(&parse_phonemes(p), &symbols)?
    } else {
        let text = a.ids.as_deref().unwrap_or_default();
        let ids = text
            .split_whitespace()
            .map(|t| t.parse::<usize>().unwrap_or_else(|_| usage(format!("bad id `{t}`"))))
            .collect();
        PhonemeSequence::new(ids)?
    };
    log::info!("phonemes: {}", ids_to_phonemes(ids.ids(), &symbols).join(" "));

    let out = model.synthesize(&ids, a.duration_scale)?;
    let mel = MelSpectrogram::new(out.mel, &model.spectrogram)?;
    if let Some(path) = &a.emit_mel {
        std::fs::write(path, encode_mel(&mel)?)?;
    }
    let gl = GriffinLim {
        iters: a.gl_iters,
        seed: a.gl_seed,
    };
    let wave = griffin_lim(&mel, &model.spectrogram, gl)?;
    write_wav(&a.out, &wave)?;
    log::info!(
        "{} frames, {} samples ({:.2} s) -> {}",
        mel.n_frames(),
        wave.samples.len(),
        wave.seconds(),
        a.out.display()
    );
    if a.json {
        let summary = serde_json::json!({
            "phonemes": ids_to_phonemes(ids.ids(), &symbols),
            "durations": out.repeats,
            "n_frames": mel.n_frames(),
            "n_samples": wave.samples.len(),
            "seconds": wave.seconds(),
        });
        print_json(&summary.to_string());
    }
    Ok(())
}

fn save_checkpoint(trainer: &Trainer<f32>, path: &Path) -> Result<(), Error> {
    save_weights(&trainer.model, path)?;
    std::fs::write(optimizer_path(path), encode_optimizer(&trainer.model.params, &trainer.state))?;
    Ok(())
}

/// `dir/run.esw` after 3 epochs -> `dir/run-epoch3.esw`.
fn checkpoint_path(out: &Path, epochs_done: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("weights");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("esw");
    out.with_file_name(format!("{stem}-epoch{epochs_done}.{ext}"))
}

fn train(a: TrainArgs) -> Result<(), Error> {
    let mut cfg = match &a.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = a.epochs {
        cfg.total_epochs = epochs;
    }
    cfg.validate()?;

    let spec = SpectrogramConfig::default();
    let data: Vec<TrainSample> = if a.data == "toy" {
        generate_toy_dataset(a.toy_samples, a.toy_seed, &spec)?
            .into_iter()
            .map(|t| t.sample)
            .collect()
    } else {
        load_dataset_dir(&a.data, &SymbolTable::arpabet(), &spec)?
    };
    log::info!("{} utterances, {} epochs, batch {}", data.len(), cfg.total_epochs, cfg.batch_size);

    let mut trainer = match &a.resume {
        Some(path) => {
            let model: Model32 = load_weights(path)?;
            let state = decode_optimizer(&std::fs::read(optimizer_path(path))?, &model.params)?;
            log::info!("resuming at step {}", state.step);
            Trainer::resume(model, state, cfg.clone())?
        }
        None => Trainer::new(Model32::new(ModelConfig::default(), spec, cfg.seed)?, cfg.clone())?,
    };
    let out = a.out.clone();
    trainer.run(&data, |epoch, t| {
        let path = checkpoint_path(&out, epoch + 1);
        log::info!("epoch {epoch}: checkpoint -> {}", path.display());
        save_checkpoint(t, &path)
    })?;
    save_checkpoint(&trainer, &a.out)?;

    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("csv"));
    write_log(&trainer.log, std::fs::File::create(&log_path)?)?;
    if let (Some(first), Some(last)) = (trainer.log.first(), trainer.log.last()) {
        log::info!(
            "loss {:.4} -> {:.4} (mel {:.4}, pitch {:.4}, energy {:.4}, duration {:.4})",
            first.total,
            last.total,
            last.l_mel,
            last.l_p,
            last.l_e,
            last.l_d
        );
    }
    log::info!("weights -> {}, log -> {}", a.out.display(), log_path.display());
    Ok(())
}

fn model_config(spec: &str) -> Result<(ModelConfig, SpectrogramConfig), Error> {
    match spec {
        "default" => Ok((ModelConfig::default(), SpectrogramConfig::default())),
        "tiny" => {
            let cfg = ModelConfig::tiny();
            let spectrogram = SpectrogramConfig {
                n_mels: cfg.n_mels,
                ..SpectrogramConfig::default()
            };
            Ok((cfg, spectrogram))
        }
        path => {
            let text = std::fs::read_to_string(path)?;
            if let Ok(h) = serde_json::from_str::<ArchiveHeader>(&text) {
                return Ok((h.model, h.spectrogram));
            }
            let cfg: ModelConfig = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{path}: {e}")))?;
            let spectrogram = SpectrogramConfig {
                n_mels: cfg.n_mels,
                ..SpectrogramConfig::default()
            };
            Ok((cfg, spectrogram))
        }
    }
}

fn profile(a: ProfileArgs) -> Result<(), Error> {
    if !(a.seconds > 0.0 && a.seconds.is_finite()) {
        usage("--seconds must be positive");
    }
    let (cfg, spec, params) = match (&a.weights, &a.config) {
        (Some(path), _) => {
            let model: Model32 = load_weights(path)?;
            (model.config.clone(), model.spectrogram.clone(), Some(model.params))
        }
        (None, Some(c)) => {
            let (cfg, spec) = model_config(c)?;
            (cfg, spec, None)
        }
        (None, None) => usage("give --weights or --config"),
    };
    let m = profiler::frames_for_seconds(a.seconds, &spec);
    let n = a.n.unwrap_or_else(|| {
        ((profiler::DEFAULT_PHONEMES_6S as f64 * a.seconds / profiler::reference::VOICE_SECONDS).round() as usize).max(1)
    });
    let report = ProfileReport::new(&cfg, &spec, n, m)?;
    if let Some(params) = &params {
        report.verify_against(params)?;
    }
    if a.json {
        print_json(&report.to_json()?);
    } else {
        eprint!("{}", report.to_text());
    }
    Ok(())
}

/// Random phoneme ids, excluding the reserved PAD and UNK.
fn synthetic_inputs(count: usize, len: usize, vocab: usize, seed: u64) -> Result<Vec<PhonemeSequence>, Error> {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| PhonemeSequence::new((0..len.max(1)).map(|_| rng.range_inclusive(2, vocab - 1)).collect()))
        .collect()
}

fn bench(a: BenchArgs) -> Result<(), Error> {
    if a.repeats == 0 {
        usage("--repeats must be at least 1");
    }
    let model: Model32 = load_weights(&a.weights)?;
    let inputs = synthetic_inputs(a.samples, a.phonemes, model.config.vocab_size, a.seed)?;
    let opts = BenchOptions {
        repeats: a.repeats,
        warmup: a.warmup,
        parallel: a.parallel,
    };
    let result: BenchResult = if a.with_vocoder {
        let voc = GriffinLimVocoder {
            spectrogram: model.spectrogram.clone(),
            gl: GriffinLim {
                iters: a.gl_iters,
                seed: 0,
            },
        };
        profiler::measure_rtf(&model, &voc, &inputs, &opts)?
    } else {
        profiler::measure_mrtf(&model, &inputs, &opts)?
    };
    if a.json {
        print_json(&result.to_json()?);
    } else {
        eprint!("{}", result.to_text());
    }
    Ok(())
}
