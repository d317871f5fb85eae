#include "rage/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "rage/mixing.hpp"
#include "rage/parallel.hpp"

namespace rage {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + std::string(text) + "'");
}

std::size_t draw_index(std::uint64_t bits, std::size_t n) {
  if (n == 0) throw std::invalid_argument("draw_index: empty range");
  return static_cast<std::size_t>(bits % n);
}

std::string ManifestEntry::id() const {
  char snr[32];
  std::snprintf(snr, sizeof snr, "%g", snr_db);
  return fs::path(clean_path).stem().string() + "__" +
         fs::path(noise_path).stem().string() + "__" + snr + "dB";
}

namespace {

std::vector<fs::path> wav_files(const fs::path& dir, const char* what) {
  if (!fs::is_directory(dir)) {
    throw std::invalid_argument(std::string(what) + " directory not found: " +
                                dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (e.is_regular_file() && ext == ".wav") files.push_back(e.path());
  }
  if (files.empty()) {
    throw std::invalid_argument(std::string(what) + " directory has no .wav files: " +
                                dir.string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

template <typename V>
void shuffle(V& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[draw_index(rng(), i)]);
  }
}

}  // namespace

std::vector<ManifestEntry> build_manifest(const fs::path& clean_dir,
                                          const fs::path& noise_dir,
                                          const ManifestOptions& options,
                                          std::vector<std::string>* warnings) {
  if (options.snr_grid.empty()) throw std::invalid_argument("empty SNR grid");
  for (double s : options.snr_grid) {
    if (!std::isfinite(s)) throw std::invalid_argument("non-finite SNR in grid");
  }
  auto clean = wav_files(clean_dir, "clean");
  const auto noises = wav_files(noise_dir, "noise");

  std::mt19937_64 rng(options.seed);
  shuffle(clean, rng);

  std::size_t total = clean.size();
  if (options.per_noise > 0) {
    const std::size_t wanted = options.per_noise * noises.size();
    if (wanted > clean.size() && warnings) {
      warnings->push_back("requested " + std::to_string(options.per_noise) +
                          " clean files for each of " + std::to_string(noises.size()) +
                          " noises but only " + std::to_string(clean.size()) +
                          " exist; using all of them");
    }
    total = std::min(wanted, clean.size());
  }
  if (options.val_count + options.test_count > total) {
    throw std::invalid_argument(
        "held-out splits (" + std::to_string(options.val_count) + " val + " +
        std::to_string(options.test_count) + " test) exceed the " +
        std::to_string(total) + " available entries");
  }

  std::vector<ManifestEntry> entries;
  entries.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t k = i % noises.size(), j = i / noises.size();
    ManifestEntry e;
    e.clean_path = clean[i].string();
    e.noise_path = noises[k].string();
    e.noise_category = noises[k].stem().string();
    e.snr_db = options.snr_grid[j % options.snr_grid.size()];
    e.seed = rng();
    e.split = i < options.test_count                      ? Split::test
              : i < options.test_count + options.val_count ? Split::val
                                                           : Split::train;
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write manifest " + path.string());
  for (const auto& e : entries) {
    json j = {{"clean_path", e.clean_path},
              {"noise_path", e.noise_path},
              {"noise_category", e.noise_category},
              {"snr_db", e.snr_db},
              {"seed", e.seed},
              {"split", to_string(e.split)},
              {"peak_rescale", e.peak_rescale}};
    out << j.dump() << '\n';
  }
  if (!out) throw DatasetError("failed writing manifest " + path.string());
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot read manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ManifestEntry e;
      e.clean_path = j.at("clean_path").get<std::string>();
      e.noise_path = j.at("noise_path").get<std::string>();
      e.noise_category = j.at("noise_category").get<std::string>();
      e.snr_db = j.at("snr_db").get<double>();
      e.seed = j.at("seed").get<std::uint64_t>();
      e.split = parse_split(j.at("split").get<std::string>());
      e.peak_rescale = j.value("peak_rescale", 1.0);
      entries.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw DatasetError(path.string() + ":" + std::to_string(n) + ": " + ex.what());
    }
  }
  return entries;
}

fs::path noisy_path(const fs::path& data_dir, const ManifestEntry& entry) {
  return data_dir / to_string(entry.split) / "noisy" / (entry.id() + ".wav");
}

fs::path clean_reference_path(const fs::path& data_dir, const ManifestEntry& entry) {
  return data_dir / to_string(entry.split) / "clean" / (entry.id() + ".wav");
}

Materialized materialize(const ManifestEntry& entry, const fs::path& data_dir) {
  try {
    const WaveBuffer clean = read_wav(entry.clean_path);
    const WaveBuffer noise = read_wav(entry.noise_path);
    const MixResult mix = mix_at_snr(clean, noise, entry.snr_db, entry.seed);
    WaveBuffer reference = clean;
    for (double& v : reference.samples) v *= mix.peak_rescale;
    const auto noisy_file = noisy_path(data_dir, entry);
    const auto clean_file = clean_reference_path(data_dir, entry);
    fs::create_directories(noisy_file.parent_path());
    fs::create_directories(clean_file.parent_path());
    write_wav(noisy_file, mix.noisy);
    write_wav(clean_file, reference);
    return {mix.noise_gain, mix.peak_rescale, mix.noise_offset};
  } catch (const std::exception& ex) {
    throw DatasetError("entry " + entry.id() + ": " + ex.what());
  }
}

std::vector<ManifestEntry> materialize_all(std::vector<ManifestEntry> entries,
                                           const fs::path& data_dir, std::size_t threads) {
  // Each entry owns distinct output files; directories are created up front
  // so workers never race on them.
  for (const auto& e : entries) {
    fs::create_directories(noisy_path(data_dir, e).parent_path());
    fs::create_directories(clean_reference_path(data_dir, e).parent_path());
  }
  parallel_for(entries.size(), threads, [&](std::size_t i, std::size_t) {
    entries[i].peak_rescale = materialize(entries[i], data_dir).peak_rescale;
  });
  return entries;
}

BatchIterator::BatchIterator(const std::vector<ManifestEntry>& manifest, Split split,
                             const fs::path& data_dir, BatchOptions options)
    : options_(std::move(options)) {
  options_.stft.validate();
  if (options_.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(options_.segment_seconds > 0)) {
    throw std::invalid_argument("segment length must be positive");
  }
  if (options_.pad_multiple == 0) throw std::invalid_argument("pad multiple must be positive");
  std::vector<std::string> missing;
  for (const auto& e : manifest) {
    if (e.split != split) continue;
    const auto np = noisy_path(data_dir, e), cp = clean_reference_path(data_dir, e);
    if (!fs::exists(np) || !fs::exists(cp)) {
      missing.push_back(e.id());
      continue;
    }
    Item item{e.id(), read_wav(np), read_wav(cp)};
    if (item.noisy.size() != item.clean.size() ||
        item.noisy.sample_rate_hz != item.clean.sample_rate_hz) {
      throw DatasetError("entry " + item.id + ": noisy and clean files disagree in length or rate");
    }
    items_.push_back(std::move(item));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DatasetError("not materialized: " + list);
  }
  if (items_.empty()) {
    throw std::invalid_argument("split '" + std::string(to_string(split)) +
                                "' has no entries");
  }
  const int rate = items_.front().noisy.sample_rate_hz;
  segment_ = static_cast<std::size_t>(std::lround(options_.segment_seconds * rate));
  std::size_t shortest = items_.front().noisy.size();
  for (const auto& it : items_) {
    if (it.noisy.sample_rate_hz != rate) {
      throw DatasetError("entry " + it.id + ": sample rate differs from the rest of the split");
    }
    shortest = std::min(shortest, it.noisy.size());
  }
  if (segment_ == 0 || segment_ > shortest) {
    throw std::invalid_argument("segment of " + std::to_string(segment_) +
                                " samples is longer than the shortest file (" +
                                std::to_string(shortest) + " samples)");
  }
  start_epoch(0);
}

std::size_t BatchIterator::batches_per_epoch() const {
  return (items_.size() + options_.batch_size - 1) / options_.batch_size;
}

void BatchIterator::start_epoch(std::uint64_t epoch) {
  std::mt19937_64 rng(options_.seed + 0x9E3779B97F4A7C15ull * (epoch + 1));
  order_.resize(items_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  shuffle(order_, rng);
  offsets_.resize(items_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) {
    offsets_[i] = draw_index(rng(), items_[order_[i]].noisy.size() - segment_ + 1);
  }
  cursor_ = 0;
}

bool BatchIterator::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t count = std::min(options_.batch_size, order_.size() - cursor_);
  out = Batch{};
  std::vector<RISpectrogram> noisy, clean;
  for (std::size_t b = 0; b < count; ++b) {
    const auto& item = items_[order_[cursor_ + b]];
    const std::size_t off = offsets_[cursor_ + b];
    auto crop = [&](const WaveBuffer& w) {
      WaveBuffer c;
      c.sample_rate_hz = w.sample_rate_hz;
      c.samples.assign(w.samples.begin() + off, w.samples.begin() + off + segment_);
      return c;
    };
    noisy.push_back(stft(crop(item.noisy), options_.stft));
    clean.push_back(stft(crop(item.clean), options_.stft));
    out.ids.push_back(item.id);
    out.offsets.push_back(off);
  }
  cursor_ += count;

  const std::size_t f = noisy.front().bins(), t = noisy.front().frames();
  const std::size_t fp = round_up(f, options_.pad_multiple);
  const std::size_t tp = round_up(t, options_.pad_multiple);
  std::vector<double> in(count * 2 * fp * tp, 0.0), target;
  target.reserve(count * 2 * f * t);
  for (std::size_t b = 0; b < count; ++b) {
    const auto src = noisy[b].data.data();
    for (std::size_t plane = 0; plane < 2 * f; ++plane) {
      const std::size_t c = plane / f, row = plane % f;
      std::copy_n(src.begin() + plane * t, t,
                  in.begin() + ((b * 2 + c) * fp + row) * tp);
    }
    const auto tgt = clean[b].data.data();
    target.insert(target.end(), tgt.begin(), tgt.end());
  }
  out.noisy = Tensor<double>({count, 2, fp, tp}, std::move(in));
  out.clean = Tensor<double>({count, 2, f, t}, std::move(target));
  out.bins = f;
  out.frames = t;
  return true;
}

}  // namespace rage
