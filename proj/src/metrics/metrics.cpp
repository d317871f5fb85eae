#include "rage/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include "rage/config_io.hpp"
#include "rage/parallel.hpp"
#include "rage/predictor.hpp"

namespace rage {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t common_length(const WaveBuffer& est, const WaveBuffer& ref, const char* what) {
  if (est.sample_rate_hz != ref.sample_rate_hz) {
    throw MetricError(std::string(what) + ": sample rates differ (" +
                      std::to_string(est.sample_rate_hz) + " vs " +
                      std::to_string(ref.sample_rate_hz) + ")");
  }
  const std::size_t n = std::min(est.size(), ref.size());
  if (n == 0) throw MetricError(std::string(what) + ": empty signal");
  return n;
}

double clamp_db(double db) { return std::clamp(db, -kSiSdrClampDb, kSiSdrClampDb); }

}  // namespace

double si_sdr(const WaveBuffer& est, const WaveBuffer& ref) {
  const std::size_t n = common_length(est, ref, "si_sdr");
  const double* e = est.samples.data();
  const double* r = ref.samples.data();
  const double rr = std::inner_product(r, r + n, r, 0.0);
  if (!(rr > 0)) throw MetricError("si_sdr: reference is silent");
  const double alpha = std::inner_product(e, e + n, r, 0.0) / rr;
  double target = 0.0, residual = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = alpha * r[i];
    target += t * t;
    residual += (e[i] - t) * (e[i] - t);
  }
  if (target == 0.0) return -kSiSdrClampDb;
  if (residual == 0.0) return kSiSdrClampDb;
  return clamp_db(10.0 * std::log10(target / residual));
}

double lsd(const WaveBuffer& est, const WaveBuffer& ref, const StftConfig& cfg) {
  const std::size_t n = common_length(est, ref, "lsd");
  auto crop = [n](const WaveBuffer& w) {
    return WaveBuffer{std::vector<double>(w.samples.begin(), w.samples.begin() + n),
                      w.sample_rate_hz};
  };
  const auto a = stft(crop(est), cfg), b = stft(crop(ref), cfg);
  const std::size_t bins = a.bins(), frames = a.frames(), plane = bins * frames;
  const auto x = a.data.data(), y = b.data.data();
  auto lg = [](double re, double im) { return std::log10(std::hypot(re, im) + kLsdEpsilon); };
  double total = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    double sq = 0.0;
    for (std::size_t f = 0; f < bins; ++f) {
      const std::size_t k = f * frames + t;
      // Scaling after the subtraction keeps identical inputs at exactly 0
      // (20 a - 20 b would be fused into an inexact FMA).
      const double d = 20.0 * (lg(x[k], x[plane + k]) - lg(y[k], y[plane + k]));
      sq += d * d;
    }
    total += std::sqrt(sq / double(bins));
  }
  return total / double(frames);
}

double seg_snr(const WaveBuffer& est, const WaveBuffer& ref, const SegSnrOptions& o) {
  const std::size_t n = common_length(est, ref, "seg_snr");
  if (o.frame == 0 || o.hop == 0 || !(o.floor_db <= o.ceiling_db)) {
    throw MetricError("seg_snr: frame and hop must be positive and floor <= ceiling");
  }
  const std::size_t frame = std::min(o.frame, n);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start + frame <= n; start += o.hop) {
    double sig = 0.0, err = 0.0;
    for (std::size_t i = start; i < start + frame; ++i) {
      sig += ref.samples[i] * ref.samples[i];
      const double d = ref.samples[i] - est.samples[i];
      err += d * d;
    }
    double db;
    if (err == 0.0) {
      db = o.ceiling_db;
    } else if (sig == 0.0) {
      db = o.floor_db;
    } else {
      db = std::clamp(10.0 * std::log10(sig / err), o.floor_db, o.ceiling_db);
    }
    total += db;
    ++count;
  }
  return total / double(count);
}

SignalScores score(const WaveBuffer& est, const WaveBuffer& ref, const StftConfig& cfg) {
  return {si_sdr(est, ref), lsd(est, ref, cfg), seg_snr(est, ref)};
}

EnhancerFactory checkpoint_enhancer(const Checkpoint& ckpt, const std::string& precision) {
  if (precision != "f32" && precision != "f64") {
    throw std::invalid_argument("precision must be f32 or f64, got '" + precision + "'");
  }
  auto shared = std::make_shared<const Checkpoint>(ckpt);
  return [shared, precision]() -> Enhancer {
    if (precision == "f64") {
      std::shared_ptr<Predictor<double>> model = load_predictor<double>(*shared);
      return [model](const WaveBuffer& w) { return enhance_waveform(*model, w); };
    }
    std::shared_ptr<Predictor<float>> model = load_predictor<float>(*shared);
    return [model](const WaveBuffer& w) { return enhance_waveform(*model, w); };
  };
}

std::vector<GroupScores> group_scores(const std::vector<FileScores>& files) {
  std::map<std::pair<double, std::string>, GroupScores> groups;
  auto add = [](SignalScores& acc, const SignalScores& s) {
    acc.si_sdr_db += s.si_sdr_db;
    acc.lsd_db += s.lsd_db;
    acc.seg_snr_db += s.seg_snr_db;
  };
  auto divide = [](SignalScores& acc, double n) {
    acc.si_sdr_db /= n;
    acc.lsd_db /= n;
    acc.seg_snr_db /= n;
  };
  for (const auto& f : files) {
    auto& g = groups[{f.snr_db, f.noise_category}];
    g.snr_db = f.snr_db;
    g.noise_category = f.noise_category;
    ++g.count;
    add(g.noisy, f.noisy);
    add(g.enhanced, f.enhanced);
  }
  std::vector<GroupScores> out;
  for (auto& [key, g] : groups) {
    divide(g.noisy, double(g.count));
    divide(g.enhanced, double(g.count));
    out.push_back(g);
  }
  return out;
}

EvalReport evaluate(const std::vector<ManifestEntry>& manifest, const fs::path& data_dir,
                    const EnhancerFactory& enhancer, const EvalOptions& options) {
  options.stft.validate();
  std::vector<const ManifestEntry*> entries;
  std::string missing;
  std::size_t missing_count = 0;
  for (const auto& e : manifest) {
    if (e.split != options.split) continue;
    entries.push_back(&e);
    for (const auto& p : {noisy_path(data_dir, e), clean_reference_path(data_dir, e)}) {
      if (!fs::exists(p)) {
        missing += "\n  " + p.string();
        ++missing_count;
      }
    }
  }
  if (entries.empty()) {
    throw DatasetError("evaluate: the manifest has no " + std::string(to_string(options.split)) +
                       " entries");
  }
  if (missing_count > 0) {
    throw DatasetError("evaluate: " + std::to_string(missing_count) +
                       " materialized file(s) missing; refusing a partial report:" + missing);
  }

  EvalReport report;
  report.mode = enhancer ? "checkpoint" : "passthrough";
  report.split = options.split;
  report.files.resize(entries.size());
  const std::size_t workers = worker_count(entries.size(), options.threads);
  std::vector<Enhancer> enhancers(workers);
  if (enhancer) {
    for (auto& e : enhancers) e = enhancer();
  }
  parallel_for(entries.size(), workers, [&](std::size_t i, std::size_t w) {
    const ManifestEntry& e = *entries[i];
    const WaveBuffer noisy = read_wav(noisy_path(data_dir, e));
    const WaveBuffer clean = read_wav(clean_reference_path(data_dir, e));
    FileScores& f = report.files[i];
    f.id = e.id();
    f.noise_category = e.noise_category;
    f.snr_db = e.snr_db;
    try {
      f.noisy = score(noisy, clean, options.stft);
      if (enhancers[w]) {
        const WaveBuffer out = enhancers[w](noisy);
        if (out.size() != noisy.size()) {
          throw MetricError("enhancer changed the length from " + std::to_string(noisy.size()) +
                            " to " + std::to_string(out.size()));
        }
        f.enhanced = score(out, clean, options.stft);
      } else {
        f.enhanced = f.noisy;
      }
    } catch (const MetricError& err) {
      throw MetricError(f.id + ": " + err.what());
    }
  });
  report.groups = group_scores(report.files);
  return report;
}

namespace {

json scores_json(const SignalScores& s) {
  return {{"si_sdr_db", s.si_sdr_db}, {"lsd_db", s.lsd_db}, {"seg_snr_db", s.seg_snr_db}};
}

}  // namespace

json report_json(const EvalReport& report) {
  json files = json::array(), groups = json::array();
  for (const auto& f : report.files) {
    files.push_back({{"id", f.id},
                     {"noise_category", f.noise_category},
                     {"snr_db", f.snr_db},
                     {"noisy", scores_json(f.noisy)},
                     {"enhanced", scores_json(f.enhanced)},
                     {"pesq", nullptr},
                     {"wer", nullptr}});
  }
  for (const auto& g : report.groups) {
    groups.push_back({{"snr_db", g.snr_db},
                      {"noise_category", g.noise_category},
                      {"count", g.count},
                      {"noisy", scores_json(g.noisy)},
                      {"enhanced", scores_json(g.enhanced)},
                      {"pesq", nullptr},
                      {"wer", nullptr}});
  }
  return {{"mode", report.mode},
          {"split", std::string(to_string(report.split))},
          {"files", files},
          {"groups", groups}};
}

std::string report_table(const EvalReport& report) {
  std::size_t noise_width = 5;
  for (const auto& g : report.groups) noise_width = std::max(noise_width, g.noise_category.size());
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%7s  %-*s  %5s  %21s  %21s  %21s\n", "SNR dB",
                int(noise_width), "noise", "files", "SI-SDR in -> out", "LSD in -> out",
                "segSNR in -> out");
  out << line;
  for (const auto& g : report.groups) {
    std::snprintf(line, sizeof line,
                  "%7.1f  %-*s  %5zu  %9.2f -> %8.2f  %9.2f -> %8.2f  %9.2f -> %8.2f\n",
                  g.snr_db, int(noise_width), g.noise_category.c_str(), g.count,
                  g.noisy.si_sdr_db, g.enhanced.si_sdr_db, g.noisy.lsd_db, g.enhanced.lsd_db,
                  g.noisy.seg_snr_db, g.enhanced.seg_snr_db);
    out << line;
  }
  return out.str();
}

}  // namespace rage
