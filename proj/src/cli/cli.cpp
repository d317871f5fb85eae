#include "rage/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "rage/checkpoint.hpp"
#include "rage/config_io.hpp"
#include "rage/dataset.hpp"
#include "rage/gradcheck.hpp"
#include "rage/metrics.hpp"
#include "rage/parallel.hpp"
#include "rage/predictor.hpp"
#include "rage/trainer.hpp"

namespace rage {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raised for flag combinations CLI11 cannot express; maps to kExitUsage.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Globals {
  std::uint64_t seed = 0;
  int sample_rate = 16000;
  std::string precision = "f32";
  std::size_t threads = 0;
};

json globals_json(const Globals& g) {
  return {{"seed", g.seed},
          {"sample_rate", g.sample_rate},
          {"precision", g.precision},
          {"threads", resolve_threads(g.threads)}};
}

void print_config(std::ostream& out, const std::string& command, const Globals& g, json extra) {
  json j = globals_json(g);
  j["command"] = command;
  for (auto& [k, v] : extra.items()) j[k] = v;
  out << "config " << j.dump() << '\n';
}

std::vector<double> parse_snrs(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || !std::isfinite(v)) {
      throw UsageError("--snrs: '" + item + "' is not a number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--snrs: empty list");
  return out;
}

void require_rate(const fs::path& path, int rate, int expected) {
  if (rate != expected) {
    throw UsageError(path.string() + ": sample rate " + std::to_string(rate) +
                     " Hz, expected " + std::to_string(expected) +
                     " Hz (set --sample-rate)");
  }
}

// ---------------------------------------------------------------- mix

struct MixArgs {
  std::string clean_dir, noise_dir, out;
  std::string snrs = "-3,0,3,6,12";
  std::size_t per_noise = 0;
  std::size_t val_count = 10;
  std::size_t test_count = 0;
};

int cmd_mix(const Globals& g, const MixArgs& a, std::ostream& out, std::ostream& err) {
  ManifestOptions mo;
  mo.snr_grid = parse_snrs(a.snrs);
  mo.per_noise = a.per_noise;
  mo.val_count = a.val_count;
  mo.test_count = a.test_count;
  mo.seed = g.seed;
  print_config(out, "mix", g,
               {{"clean_dir", a.clean_dir},
                {"noise_dir", a.noise_dir},
                {"out", a.out},
                {"snrs", mo.snr_grid},
                {"per_noise", a.per_noise},
                {"val_count", a.val_count},
                {"test_count", a.test_count}});
  std::vector<std::string> warnings;
  auto entries = build_manifest(a.clean_dir, a.noise_dir, mo, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  std::set<std::string> sources;
  for (const auto& e : entries) sources.insert(e.clean_path), sources.insert(e.noise_path);
  for (const auto& p : sources) require_rate(p, read_wav(p).sample_rate_hz, g.sample_rate);

  const fs::path root = a.out;
  entries = materialize_all(std::move(entries), root, resolve_threads(g.threads));
  write_manifest(root / "manifest.jsonl", entries);
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& e : entries) ++counts[static_cast<int>(e.split)];
  out << "wrote " << (root / "manifest.jsonl").string() << ": " << counts[0] << " train, "
      << counts[1] << " val, " << counts[2] << " test\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct ModelArgs {
  std::size_t channels = 16;
  std::size_t depth = 4;
  std::string ag = "on";
  std::string ra = "off";
};

ModelConfig model_config(const ModelArgs& a, std::ostream& err) {
  ModelConfig cfg;
  cfg.base_channels = a.channels;
  cfg.depth = a.depth;
  cfg.use_attention_gates = a.ag == "on";
  cfg.use_reverse_attention = a.ra == "on";
  if (cfg.use_reverse_attention && !cfg.use_attention_gates) {
    err << "warning: --ra on requires attention gates; enabling --ag\n";
    cfg.use_attention_gates = true;
  }
  cfg.validate();
  return cfg;
}

struct TrainArgs {
  ModelArgs model;
  std::string manifest, data_dir, out, report;
  std::size_t epochs = 200;
  std::size_t patience = 50;
  double lr = 1e-3;
  std::size_t batch_size = 2;
  double segment_seconds = 2.0;
  std::string loss = "ri_mse_plus_mag";
  double clip_norm = 5.0;
  bool resume = false;
  std::optional<std::size_t> epoch_budget;
};

fs::path data_dir_for(const std::string& manifest, const std::string& data_dir) {
  if (!data_dir.empty()) return data_dir;
  const fs::path parent = fs::path(manifest).parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

fs::path last_path(const fs::path& ckpt) {
  fs::path p = ckpt;
  p += ".last";
  return p;
}

template <typename T>
int train_as(const Globals& g, const TrainArgs& a, const ModelConfig& mc, const TrainConfig& tc,
             std::ostream& out) {
  const auto manifest = read_manifest(a.manifest);
  const fs::path data = data_dir_for(a.manifest, a.data_dir);
  BatchOptions bo;
  bo.batch_size = tc.batch_size;
  bo.segment_seconds = tc.segment_seconds;
  bo.seed = tc.seed;
  bo.pad_multiple = mc.pad_multiple();
  bo.stft = mc.stft;
  BatchIterator train(manifest, Split::train, data, bo), val(manifest, Split::val, data, bo);
  for (const auto& e : manifest) {
    if (e.split == Split::train) {
      const auto p = noisy_path(data, e);
      require_rate(p, read_wav(p).sample_rate_hz, g.sample_rate);
      break;
    }
  }

  Predictor<T> model(mc, InitOptions{tc.seed});
  TrainerState<T> state = initial_state(model, tc);
  if (a.resume) {
    const Checkpoint ckpt = load_checkpoint(last_path(a.out));
    if (!(ckpt.train == tc)) {
      throw UsageError("--resume: training flags differ from the checkpoint's " +
                       json(ckpt.train).dump());
    }
    apply_checkpoint(ckpt, model, &state);
    out << "resumed at epoch " << state.epoch << '\n';
  }
  out << "parameters " << model.parameter_count() << ", train " << train.size() << ", val "
      << val.size() << '\n';

  FitOptions fo;
  fo.checkpoint = fs::path(a.out);
  fo.epoch_budget = a.epoch_budget;
  const EarlyStopping* stopper = &state.stopper;
  fo.on_epoch = [&out, stopper](const EpochRecord& r) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch %4zu  train %.6g  val %.6g  grad %.4g  %.2fs%s\n",
                  r.epoch, r.train_loss, r.val_loss, r.grad_norm, r.seconds,
                  stopper->improved_last() ? "  *" : "");
    out << line << std::flush;
  };
  const TrainingReport report = fit(model, train, val, tc, state, fo);
  const fs::path report_path = a.report.empty() ? fs::path(a.out + ".report.json") : fs::path(a.report);
  write_report(report_path, report, mc, tc);
  out << "stopped: " << report.stop_reason << ", best epoch " << report.best_epoch
      << " (val " << report.best_val_loss << "); checkpoint " << a.out << ", report "
      << report_path.string() << '\n';
  return kExitOk;
}

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const ModelConfig mc = model_config(a.model, err);
  TrainConfig tc;
  tc.max_epochs = a.epochs;
  tc.patience = a.patience;
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch_size;
  tc.segment_seconds = a.segment_seconds;
  tc.seed = g.seed;
  tc.loss = parse_loss_kind(a.loss);
  tc.clip_norm = a.clip_norm;
  tc.validate();
  print_config(out, "train", g,
               {{"manifest", a.manifest},
                {"data_dir", data_dir_for(a.manifest, a.data_dir).string()},
                {"out", a.out},
                {"resume", a.resume},
                {"model", mc},
                {"train", tc}});
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  return g.precision == "f64" ? train_as<double>(g, a, mc, tc, out)
                              : train_as<float>(g, a, mc, tc, out);
}

// ---------------------------------------------------------------- enhance

struct EnhanceArgs {
  std::string ckpt, in, out;
};

int cmd_enhance(const Globals& g, const EnhanceArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  print_config(out, "enhance", g,
               {{"ckpt", a.ckpt}, {"in", a.in}, {"out", a.out}, {"model", ckpt.model}});
  const WaveBuffer noisy = read_wav(a.in);
  require_rate(a.in, noisy.sample_rate_hz, g.sample_rate);
  const Enhancer enhance = checkpoint_enhancer(ckpt, g.precision)();
  const WaveBuffer clean = enhance(noisy);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  write_wav(a.out, clean);
  out << "wrote " << a.out << " (" << clean.size() << " samples)\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt, manifest, data_dir, out;
  bool passthrough = false;
  std::string split = "test";
};

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  if (a.ckpt.empty() == !a.passthrough) {
    throw UsageError("eval: give exactly one of --ckpt and --passthrough");
  }
  EvalOptions eo;
  eo.split = parse_split(a.split);
  eo.threads = resolve_threads(g.threads);
  std::optional<Checkpoint> ckpt;
  if (!a.ckpt.empty()) ckpt = load_checkpoint(a.ckpt);
  const fs::path data = data_dir_for(a.manifest, a.data_dir);
  json extra = {{"manifest", a.manifest},
                {"data_dir", data.string()},
                {"split", a.split},
                {"out", a.out},
                {"mode", ckpt ? "checkpoint" : "passthrough"}};
  if (ckpt) {
    extra["ckpt"] = a.ckpt;
    extra["model"] = ckpt->model;
    eo.stft = ckpt->model.stft;
  }
  print_config(out, "eval", g, extra);
  const auto manifest = read_manifest(a.manifest);
  const EvalReport report = evaluate(
      manifest, data, ckpt ? checkpoint_enhancer(*ckpt, g.precision) : EnhancerFactory{}, eo);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  std::ofstream file(a.out, std::ios::trunc);
  if (!file) throw std::runtime_error("cannot write " + a.out);
  file << report_json(report).dump(2) << '\n';
  out << report_table(report);
  return kExitOk;
}

// ---------------------------------------------------------------- info

int cmd_info(const Globals& g, const ModelArgs& a, std::ostream& out, std::ostream& err) {
  const ModelConfig cfg = model_config(a, err);
  print_config(out, "info", g, {{"model", cfg}});
  out << "level  channels  downsampling\n";
  for (std::size_t l = 0; l <= cfg.depth; ++l) {
    char line[64];
    std::snprintf(line, sizeof line, "%5zu  %8zu  %12zu%s\n", l, cfg.channels_at(l),
                  std::size_t{1} << l, l == cfg.depth ? "  (bottleneck)" : "");
    out << line;
  }
  const std::size_t closed = closed_form_param_count(cfg);
  const std::size_t live = Predictor<float>(cfg).parameter_count();
  out << "parameters: closed form " << closed << ", live model " << live
      << (closed == live ? " (agree)" : " (MISMATCH)") << '\n';
  ModelConfig ag = cfg, ra = cfg;
  ag.use_attention_gates = true, ag.use_reverse_attention = false;
  ra.use_attention_gates = true, ra.use_reverse_attention = true;
  const std::size_t n_ag = closed_form_param_count(ag), n_ra = closed_form_param_count(ra);
  out << "AG-only " << n_ag << ", with RA " << n_ra << ", RA/AG ratio " << std::fixed
      << std::setprecision(4) << double(n_ra) / double(n_ag) << std::defaultfloat << '\n';
  if (closed != live) throw std::logic_error("closed-form and live parameter counts disagree");
  return kExitOk;
}

// ---------------------------------------------------------------- self-test

constexpr double kGradTolerance = 1e-4;

int cmd_self_test(const Globals& g, std::size_t instances, std::ostream& out) {
  // Always 64-bit: single precision cannot resolve eps = 1e-5 differences.
  Globals forced = g;
  forced.precision = "f64";
  print_config(out, "self-test", forced,
               {{"instances", instances}, {"eps", 1e-5}, {"tolerance", kGradTolerance}});
  bool ok = true;
  for (const auto& r : run_gradient_suite(instances, 1e-5, g.seed)) {
    const bool pass = r.worst <= kGradTolerance;
    ok = ok && pass;
    char line[128];
    std::snprintf(line, sizeof line, "%-22s %3zu instances  max rel err %.3e  %s\n", r.op.c_str(),
                  r.instances, r.worst, pass ? "ok" : "FAIL");
    out << line;
  }
  out << (ok ? "gradient suite passed\n" : "gradient suite FAILED\n");
  return ok ? kExitOk : kExitNumeric;
}

const std::vector<std::string> kOnOff{"on", "off"};

void add_model_flags(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--channels", m.channels, "Base channel count C")
      ->capture_default_str()
      ->check(CLI::Range(2, 1024));
  cmd->add_option("--depth", m.depth, "Encoder depth D")->capture_default_str()->check(CLI::Range(1, 12));
  cmd->add_option("--ag", m.ag, "Attention gates on skip connections")
      ->capture_default_str()
      ->check(CLI::IsMember(kOnOff));
  cmd->add_option("--ra", m.ra, "Reverse-attention three-decoder wrapper (implies --ag on)")
      ->capture_default_str()
      ->check(CLI::IsMember(kOnOff));
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-gated reverse-attention U-Net speech enhancement", "rage"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--sample-rate", g.sample_rate, "Expected sample rate of all audio in Hz")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--precision", g.precision, "Arithmetic for train/enhance/eval")
      ->capture_default_str()
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--threads", g.threads, "Workers for mixing and evaluation (0: all cores)")
      ->capture_default_str();

  MixArgs mix;
  auto* mix_cmd = app.add_subcommand("mix", "Build a manifest and materialize noisy mixtures");
  mix_cmd->add_option("--clean-dir", mix.clean_dir, "Directory of clean WAV files")->required();
  mix_cmd->add_option("--noise-dir", mix.noise_dir, "Directory of noise WAV files")->required();
  mix_cmd->add_option("--out", mix.out, "Output corpus directory")->required();
  mix_cmd->add_option("--snrs", mix.snrs, "Comma-separated SNR grid in dB")->capture_default_str();
  mix_cmd->add_option("--per-noise", mix.per_noise, "Clean files per noise (0: all)")
      ->capture_default_str();
  mix_cmd->add_option("--val-count", mix.val_count, "Validation entries")->capture_default_str();
  mix_cmd->add_option("--test-count", mix.test_count, "Test entries")->capture_default_str();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a predictor and write a checkpoint");
  train_cmd->add_option("--manifest", train.manifest, "manifest.jsonl from `mix`")->required();
  train_cmd->add_option("--data-dir", train.data_dir, "Materialized corpus (default: manifest dir)");
  train_cmd->add_option("--out", train.out, "Best checkpoint; the latest goes to <out>.last")
      ->required();
  train_cmd->add_option("--report", train.report, "Training report (default: <out>.report.json)");
  add_model_flags(train_cmd, train.model);
  train_cmd->add_option("--epochs", train.epochs, "Maximum epochs")->capture_default_str();
  train_cmd->add_option("--patience", train.patience, "Early-stopping patience")
      ->capture_default_str();
  train_cmd->add_option("--lr", train.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--batch-size", train.batch_size)->capture_default_str();
  train_cmd->add_option("--segment-seconds", train.segment_seconds, "Training crop length")
      ->capture_default_str();
  train_cmd->add_option("--loss", train.loss)
      ->capture_default_str()
      ->check(CLI::IsMember({"ri_mse", "ri_mse_plus_mag"}));
  train_cmd->add_option("--clip-norm", train.clip_norm, "Global gradient-norm clip (inf: off)")
      ->capture_default_str();
  train_cmd->add_flag("--resume", train.resume, "Continue from <out>.last");
  train_cmd->add_option("--epoch-budget", train.epoch_budget,
                        "Stop after this many epochs in this run");

  EnhanceArgs enhance;
  auto* enhance_cmd = app.add_subcommand("enhance", "Enhance one WAV file");
  enhance_cmd->add_option("--ckpt", enhance.ckpt)->required();
  enhance_cmd->add_option("--in", enhance.in, "Noisy input WAV")->required();
  enhance_cmd->add_option("--out", enhance.out, "Enhanced output WAV")->required();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score a split, grouped by SNR and noise");
  auto* ckpt_opt = eval_cmd->add_option("--ckpt", eval.ckpt, "Checkpoint to evaluate");
  auto* pass_opt =
      eval_cmd->add_flag("--passthrough", eval.passthrough, "Score the noisy input itself");
  ckpt_opt->excludes(pass_opt);
  eval_cmd->add_option("--manifest", eval.manifest)->required();
  eval_cmd->add_option("--data-dir", eval.data_dir, "Materialized corpus (default: manifest dir)");
  eval_cmd->add_option("--out", eval.out, "Report JSON")->required();
  eval_cmd->add_option("--split", eval.split)
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "test"}));

  ModelArgs info;
  auto* info_cmd = app.add_subcommand("info", "Topology and parameter counts");
  add_model_flags(info_cmd, info);

  std::size_t instances = 10;
  auto* self_cmd = app.add_subcommand("self-test", "Finite-difference gradient suite (f64)");
  self_cmd->add_option("--instances", instances, "Random draws per op")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  for (auto* cmd : app.get_subcommands({})) cmd->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*mix_cmd) return cmd_mix(g, mix, out, err);
    if (*train_cmd) return cmd_train(g, train, out, err);
    if (*enhance_cmd) return cmd_enhance(g, enhance, out);
    if (*eval_cmd) return cmd_eval(g, eval, out);
    if (*info_cmd) return cmd_info(g, info, out, err);
    if (*self_cmd) return cmd_self_test(g, instances, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DatasetError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const WavError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace rage
