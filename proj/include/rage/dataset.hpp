#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rage/stft.hpp"
#include "rage/tensor.hpp"
#include "rage/wav.hpp"

namespace rage {

enum class Split { train, val, test };

std::string_view to_string(Split split);
/// Throws std::invalid_argument for anything but "train", "val", "test".
Split parse_split(std::string_view text);

/// Raised for dataset failures; the message names the affected entry.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestEntry {
  std::string clean_path;
  std::string noise_path;
  std::string noise_category;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  Split split = Split::train;
  double peak_rescale = 1.0;

  /// "<clean stem>__<noise stem>__<snr>dB"; also the materialized file stem.
  std::string id() const;
  bool operator==(const ManifestEntry&) const = default;
};

inline const std::vector<double> kDefaultSnrGrid{-3.0, 0.0, 3.0, 6.0, 12.0};

struct ManifestOptions {
  std::vector<double> snr_grid = kDefaultSnrGrid;
  /// Clean files per noise category; 0 uses every clean file.
  std::size_t per_noise = 0;
  /// Entries held out; the remainder is train.
  std::size_t val_count = 10;
  std::size_t test_count = 0;
  std::uint64_t seed = 0;
};

/// Pairs every selected clean file with one noise and one SNR. Clean files
/// are shuffled under `seed`, then dealt round-robin to the noises in sorted
/// order; the j-th file of a noise gets snr_grid[j % |grid|]. The first
/// `test_count` entries form the test split and the next `val_count` the val
/// split, so small held-out splits still cover every (noise, SNR) pair.
/// `warnings` (optional) receives a note when files are dropped.
std::vector<ManifestEntry> build_manifest(const std::filesystem::path& clean_dir,
                                          const std::filesystem::path& noise_dir,
                                          const ManifestOptions& options,
                                          std::vector<std::string>* warnings = nullptr);

/// JSON lines, one entry per line with snake_case keys.
void write_manifest(const std::filesystem::path& path,
                    const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

std::filesystem::path noisy_path(const std::filesystem::path& data_dir,
                                 const ManifestEntry& entry);
std::filesystem::path clean_reference_path(const std::filesystem::path& data_dir,
                                           const ManifestEntry& entry);

struct Materialized {
  double noise_gain = 1.0;
  double peak_rescale = 1.0;
  std::size_t noise_offset = 0;
};

/// Mixes one entry and writes `<data_dir>/<split>/noisy/<id>.wav` plus the
/// clean reference scaled by the mixture's peak rescale to
/// `<data_dir>/<split>/clean/<id>.wav`. Deterministic, hence idempotent.
Materialized materialize(const ManifestEntry& entry,
                         const std::filesystem::path& data_dir);

/// Materializes every entry on up to `threads` workers and returns the
/// manifest with `peak_rescale` filled in. Output is independent of `threads`.
std::vector<ManifestEntry> materialize_all(std::vector<ManifestEntry> entries,
                                           const std::filesystem::path& data_dir,
                                           std::size_t threads = 1);

struct BatchOptions {
  std::size_t batch_size = 2;
  double segment_seconds = 2.0;
  std::uint64_t seed = 0;
  /// Spectrogram extents of the network input are padded to this multiple.
  std::size_t pad_multiple = 16;
  StftConfig stft;
};

/// One batch: `noisy` is the padded [B,2,F',T'] network input, `clean` the
/// unpadded [B,2,F,T] target.
struct Batch {
  Tensor<double> noisy;
  Tensor<double> clean;
  std::vector<std::string> ids;
  std::vector<std::size_t> offsets;  // crop start, in samples
  std::size_t bins = 0;
  std::size_t frames = 0;
};

/// Random fixed-length crops of one split's materialized pairs. Each epoch
/// visits every entry once in a permutation drawn, together with the crop
/// offsets, from (seed, epoch). A trailing partial batch is kept.
class BatchIterator {
 public:
  BatchIterator(const std::vector<ManifestEntry>& manifest, Split split,
                const std::filesystem::path& data_dir, BatchOptions options);

  std::size_t size() const { return items_.size(); }
  std::size_t batches_per_epoch() const;
  std::size_t segment_samples() const { return segment_; }
  const BatchOptions& options() const { return options_; }

  void start_epoch(std::uint64_t epoch);
  /// False once the epoch is exhausted.
  bool next(Batch& out);

 private:
  struct Item {
    std::string id;
    WaveBuffer noisy, clean;
  };
  std::vector<Item> items_;
  BatchOptions options_;
  std::size_t segment_ = 0;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> offsets_;
  std::size_t cursor_ = 0;
};

/// bits mod n. Portable across standard libraries, unlike
/// std::uniform_int_distribution.
std::size_t draw_index(std::uint64_t bits, std::size_t n);

}  // namespace rage
