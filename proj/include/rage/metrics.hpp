#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rage/checkpoint.hpp"
#include "rage/dataset.hpp"
#include "rage/stft.hpp"
#include "rage/wav.hpp"

namespace rage {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Perfect reconstruction would be +inf and a zero estimate -inf.
inline constexpr double kSiSdrClampDb = 60.0;

/// Both signals are cropped to the shorter length. Throws MetricError for a
/// silent reference.
double si_sdr(const WaveBuffer& est, const WaveBuffer& ref);

inline constexpr double kLsdEpsilon = 1e-8;

/// Frame mean of the RMS over bins of the dB difference of magnitudes.
double lsd(const WaveBuffer& est, const WaveBuffer& ref, const StftConfig& cfg = {});

struct SegSnrOptions {
  std::size_t frame = 512;
  std::size_t hop = 256;
  double floor_db = -10.0;
  double ceiling_db = 35.0;
};

/// Mean of per-frame SNRs, each clamped to [floor_db, ceiling_db]. Not scale
/// invariant. Signals shorter than one frame are scored as a single frame.
double seg_snr(const WaveBuffer& est, const WaveBuffer& ref, const SegSnrOptions& options = {});

struct SignalScores {
  double si_sdr_db = 0.0;
  double lsd_db = 0.0;
  double seg_snr_db = 0.0;
};

SignalScores score(const WaveBuffer& est, const WaveBuffer& ref, const StftConfig& cfg);

struct FileScores {
  std::string id;
  std::string noise_category;
  double snr_db = 0.0;
  SignalScores noisy;     // noisy input vs clean
  SignalScores enhanced;  // equals `noisy` in passthrough mode
};

struct GroupScores {
  double snr_db = 0.0;
  std::string noise_category;
  std::size_t count = 0;
  SignalScores noisy;
  SignalScores enhanced;
};

struct EvalReport {
  std::string mode;  // "passthrough" or "checkpoint"
  Split split = Split::test;
  std::vector<FileScores> files;    // manifest order
  std::vector<GroupScores> groups;  // sorted by SNR, then noise category
};

/// Maps a noisy waveform to an enhanced one of the same length.
using Enhancer = std::function<WaveBuffer(const WaveBuffer&)>;
/// Called once per worker so each gets its own model instance.
using EnhancerFactory = std::function<Enhancer()>;

/// Loads the checkpoint's predictor at `precision` ("f32" or "f64") in every
/// worker.
EnhancerFactory checkpoint_enhancer(const Checkpoint& ckpt, const std::string& precision);

struct EvalOptions {
  Split split = Split::test;
  std::size_t threads = 1;
  StftConfig stft;  // for LSD
};

/// Scores every entry of `options.split`. An empty factory is passthrough.
/// Missing materialized files are all named in one DatasetError and nothing
/// is scored. Results do not depend on the thread count.
EvalReport evaluate(const std::vector<ManifestEntry>& manifest,
                    const std::filesystem::path& data_dir, const EnhancerFactory& enhancer,
                    const EvalOptions& options = {});

/// Means per (SNR, noise category) group.
std::vector<GroupScores> group_scores(const std::vector<FileScores>& files);

/// PESQ and WER are reserved as null so external scorers can fill them in.
nlohmann::json report_json(const EvalReport& report);
/// Aligned table, one row per group, noisy and enhanced columns side by side.
std::string report_table(const EvalReport& report);

}  // namespace rage
