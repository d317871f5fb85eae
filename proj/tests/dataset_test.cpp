#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>

#include "corpus.hpp"
#include "rage/dataset.hpp"
#include "rage/mixing.hpp"
#include "test_util.hpp"

using namespace rage;
namespace fs = std::filesystem;
using rage::testing::TempDir;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void touch_files(const fs::path& dir, std::size_t n, const char* prefix) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < n; ++i) {
    std::ofstream(dir / (prefix + std::to_string(i) + ".wav"));
  }
}

ManifestOptions all_train(std::uint64_t seed = 0) {
  ManifestOptions o;
  o.val_count = 0;
  o.seed = seed;
  return o;
}

}  // namespace

TEST(Split, RoundTripsNames) {
  for (Split s : {Split::train, Split::val, Split::test}) {
    EXPECT_EQ(parse_split(to_string(s)), s);
  }
  EXPECT_THROW(parse_split("dev"), std::invalid_argument);
}

TEST(BuildManifest, ExactDivisibilityUsesEverySnrOncePerNoise) {
  TempDir dir("manifest");
  touch_files(dir.path() / "clean", 10, "c");
  touch_files(dir.path() / "noise", 2, "n");
  const auto m = build_manifest(dir.path() / "clean", dir.path() / "noise", all_train());
  ASSERT_EQ(m.size(), 10u);
  std::map<std::string, std::multiset<double>> per_noise;
  std::set<std::string> cleans;
  for (const auto& e : m) {
    per_noise[e.noise_category].insert(e.snr_db);
    cleans.insert(e.clean_path);
    EXPECT_EQ(e.split, Split::train);
    EXPECT_EQ(e.peak_rescale, 1.0);
  }
  EXPECT_EQ(cleans.size(), 10u);
  ASSERT_EQ(per_noise.size(), 2u);
  for (const auto& [noise, snrs] : per_noise) {
    EXPECT_EQ(snrs, std::multiset<double>(kDefaultSnrGrid.begin(), kDefaultSnrGrid.end())) << noise;
  }
}

TEST(BuildManifest, DeterministicUnderSeedByteForByte) {
  TempDir dir("manifest");
  touch_files(dir.path() / "clean", 23, "c");
  touch_files(dir.path() / "noise", 3, "n");
  auto build = [&](std::uint64_t seed, const char* name) {
    auto m = build_manifest(dir.path() / "clean", dir.path() / "noise", all_train(seed));
    write_manifest(dir.path() / name, m);
    return slurp(dir.path() / name);
  };
  EXPECT_EQ(build(5, "a.jsonl"), build(5, "b.jsonl"));
  EXPECT_NE(build(5, "a.jsonl"), build(6, "c.jsonl"));
}

TEST(BuildManifest, FullScaleBalance) {
  TempDir dir("manifest");
  touch_files(dir.path() / "clean", 19992, "c");
  touch_files(dir.path() / "noise", 27, "n");
  const auto m = build_manifest(dir.path() / "clean", dir.path() / "noise", all_train(3));
  ASSERT_EQ(m.size(), 19992u);
  std::map<std::string, std::map<double, std::size_t>> counts;
  for (const auto& e : m) ++counts[e.noise_category][e.snr_db];
  ASSERT_EQ(counts.size(), 27u);
  for (const auto& [noise, by_snr] : counts) {
    std::size_t total = 0, lo = SIZE_MAX, hi = 0;
    for (const auto& [snr, c] : by_snr) {
      total += c;
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
    EXPECT_TRUE(total == 740 || total == 741) << noise << " " << total;
    EXPECT_EQ(by_snr.size(), 5u);
    EXPECT_LE(hi - lo, 1u) << noise;
  }
}

TEST(BuildManifest, HeldOutSplitsAreDisjointAndCoverEveryCondition) {
  TempDir dir("manifest");
  touch_files(dir.path() / "clean", 40, "c");
  touch_files(dir.path() / "noise", 2, "n");
  ManifestOptions o;
  o.val_count = 10;
  o.test_count = 10;
  o.seed = 9;
  const auto m = build_manifest(dir.path() / "clean", dir.path() / "noise", o);
  std::map<Split, std::set<std::string>> cleans;
  std::map<Split, std::set<std::pair<std::string, double>>> conditions;
  for (const auto& e : m) {
    cleans[e.split].insert(e.clean_path);
    conditions[e.split].insert({e.noise_category, e.snr_db});
  }
  EXPECT_EQ(cleans[Split::train].size(), 20u);
  EXPECT_EQ(cleans[Split::val].size(), 10u);
  EXPECT_EQ(cleans[Split::test].size(), 10u);
  for (Split a : {Split::train, Split::val, Split::test}) {
    for (Split b : {Split::train, Split::val, Split::test}) {
      if (a == b) continue;
      for (const auto& c : cleans[a]) EXPECT_FALSE(cleans[b].count(c));
    }
  }
  EXPECT_EQ(conditions[Split::val].size(), 10u);
  EXPECT_EQ(conditions[Split::test].size(), 10u);
}

TEST(BuildManifest, PerNoiseCountSelectsAndWarnsOnShortage) {
  TempDir dir("manifest");
  touch_files(dir.path() / "clean", 7, "c");
  touch_files(dir.path() / "noise", 2, "n");
  auto o = all_train();
  o.per_noise = 3;
  std::vector<std::string> warnings;
  EXPECT_EQ(build_manifest(dir.path() / "clean", dir.path() / "noise", o, &warnings).size(), 6u);
  EXPECT_TRUE(warnings.empty());
  o.per_noise = 5;
  EXPECT_EQ(build_manifest(dir.path() / "clean", dir.path() / "noise", o, &warnings).size(), 7u);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(BuildManifest, RejectsEmptyOrMissingDirectoriesAndOversizedSplits) {
  TempDir dir("manifest");
  touch_files(dir.path() / "clean", 4, "c");
  fs::create_directories(dir.path() / "empty");
  EXPECT_THROW(build_manifest(dir.path() / "clean", dir.path() / "empty", all_train()),
               std::invalid_argument);
  EXPECT_THROW(build_manifest(dir.path() / "nope", dir.path() / "clean", all_train()),
               std::invalid_argument);
  ManifestOptions o;
  o.val_count = 5;
  EXPECT_THROW(build_manifest(dir.path() / "clean", dir.path() / "clean", o),
               std::invalid_argument);
  o = all_train();
  o.snr_grid.clear();
  EXPECT_THROW(build_manifest(dir.path() / "clean", dir.path() / "clean", o),
               std::invalid_argument);
}

TEST(Manifest, JsonLinesRoundTrip) {
  TempDir dir("manifest");
  std::vector<ManifestEntry> m{
      {"a/c1.wav", "b/white.wav", "white", -3.0, 123456789012345ull, Split::val, 0.8125},
      {"a/c2.wav", "b/pink.wav", "pink", 12.0, 7, Split::test, 1.0}};
  write_manifest(dir.path() / "m.jsonl", m);
  EXPECT_EQ(read_manifest(dir.path() / "m.jsonl"), m);
  const auto text = slurp(dir.path() / "m.jsonl");
  EXPECT_NE(text.find("\"noise_category\":\"white\""), std::string::npos);
  EXPECT_NE(text.find("\"peak_rescale\":0.8125"), std::string::npos);
  EXPECT_EQ(m[0].id(), "c1__white__-3dB");
}

TEST(Manifest, MalformedLineNamesLocation) {
  TempDir dir("manifest");
  std::ofstream(dir.path() / "m.jsonl") << "{\"clean_path\":\"x\"}\n";
  try {
    read_manifest(dir.path() / "m.jsonl");
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("m.jsonl:1"), std::string::npos);
  }
}

class MaterializeTest : public ::testing::Test {
 protected:
  TempDir dir{"materialize"};
  void SetUp() override {
    rage::testing::write_corpus(dir.path(), 10, {"white", "pink"}, 1.5, 3.0);
  }
  std::vector<ManifestEntry> manifest(std::size_t val = 0) {
    ManifestOptions o;
    o.val_count = val;
    o.seed = 4;
    return build_manifest(dir.path() / "clean", dir.path() / "noise", o);
  }
};

TEST_F(MaterializeTest, EqualRmsSourcesAtZeroDbHaveUnitGain) {
  const auto clean = dir.path() / "clean" / "utt000.wav";
  ManifestEntry e{clean.string(), clean.string(), "self", 0.0, 1, Split::train, 1.0};
  const auto r = materialize(e, dir.path() / "out");
  EXPECT_NEAR(r.noise_gain, 1.0, 1e-12);
}

TEST_F(MaterializeTest, RerunIsByteIdentical) {
  const auto m = manifest();
  materialize_all(m, dir.path() / "out");
  const auto first = slurp(noisy_path(dir.path() / "out", m[3]));
  materialize_all(m, dir.path() / "out");
  EXPECT_EQ(slurp(noisy_path(dir.path() / "out", m[3])), first);
  EXPECT_FALSE(first.empty());
}

TEST_F(MaterializeTest, PersistedPairsHitTargetSnr) {
  auto m = manifest();
  // One loud clean file forces a peak rescale.
  WaveBuffer loud = read_wav(m[0].clean_path);
  for (double& v : loud.samples) v *= 7.0;
  write_wav(dir.path() / "loud.wav", loud);
  m[0].clean_path = (dir.path() / "loud.wav").string();
  m = materialize_all(m, dir.path() / "out");
  bool rescaled = false;
  for (const auto& e : m) {
    const auto noisy = read_wav(noisy_path(dir.path() / "out", e));
    const auto clean = read_wav(clean_reference_path(dir.path() / "out", e));
    std::vector<double> noise(noisy.size());
    for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = noisy.samples[i] - clean.samples[i];
    EXPECT_NEAR(measure_snr_db(clean.samples, noise), e.snr_db, 0.01) << e.id();
    rescaled = rescaled || e.peak_rescale < 1.0;
  }
  EXPECT_TRUE(rescaled);
}

TEST_F(MaterializeTest, MissingSourceNamesEntry) {
  ManifestEntry e{"/nonexistent/x.wav", "/nonexistent/n.wav", "n", 0.0, 1, Split::train, 1.0};
  try {
    materialize(e, dir.path() / "out");
    FAIL();
  } catch (const DatasetError& err) {
    EXPECT_NE(std::string(err.what()).find("x__n__0dB"), std::string::npos);
  }
}

TEST_F(MaterializeTest, BatchIteratorShapesCountsAndTargets) {
  const auto m = materialize_all(manifest(), dir.path() / "out");
  BatchOptions o;
  o.batch_size = 2;
  o.segment_seconds = 1.0;
  o.seed = 7;
  BatchIterator it(m, Split::train, dir.path() / "out", o);
  EXPECT_EQ(it.size(), 10u);
  EXPECT_EQ(it.batches_per_epoch(), 5u);
  Batch b;
  std::size_t batches = 0;
  std::set<std::string> seen;
  while (it.next(b)) {
    ++batches;
    EXPECT_EQ(b.noisy.shape(), (Shape{2, 2, 272, 128}));
    EXPECT_EQ(b.clean.shape(), (Shape{2, 2, 257, 126}));
    seen.insert(b.ids.begin(), b.ids.end());
  }
  EXPECT_EQ(batches, 5u);
  EXPECT_EQ(seen.size(), 10u);

  // The target is the STFT of the recorded crop of the persisted clean file.
  it.start_epoch(3);
  ASSERT_TRUE(it.next(b));
  const auto& e = *std::find_if(m.begin(), m.end(), [&](const auto& x) { return x.id() == b.ids[0]; });
  const auto clean = read_wav(clean_reference_path(dir.path() / "out", e));
  WaveBuffer crop{{clean.samples.begin() + b.offsets[0],
                   clean.samples.begin() + b.offsets[0] + 16000}, 16000};
  const auto ref = stft(crop, o.stft);
  const auto got = b.clean.data();
  EXPECT_LE(rage::testing::max_abs_diff(got.subspan(0, ref.data.numel()), ref.data.data()), 0.0);
}

TEST_F(MaterializeTest, BatchSequencesReproduceUnderSeed) {
  const auto m = materialize_all(manifest(), dir.path() / "out");
  BatchOptions o;
  o.segment_seconds = 0.5;
  o.seed = 7;
  auto run = [&](std::uint64_t seed) {
    o.seed = seed;
    BatchIterator it(m, Split::train, dir.path() / "out", o);
    std::vector<std::pair<std::vector<std::string>, std::vector<std::size_t>>> seq;
    for (std::uint64_t epoch = 0; epoch < 2; ++epoch) {
      it.start_epoch(epoch);
      Batch b;
      while (it.next(b)) seq.emplace_back(b.ids, b.offsets);
    }
    return seq;
  };
  const auto a = run(7), b = run(7), c = run(8);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  // Epochs differ from each other.
  EXPECT_NE(std::vector(a.begin(), a.begin() + 5), std::vector(a.begin() + 5, a.end()));
}

TEST_F(MaterializeTest, BatchIteratorRejectsBadRequests) {
  const auto m = materialize_all(manifest(2), dir.path() / "out");
  BatchOptions o;
  o.segment_seconds = 1.6;  // files are 1.5 s
  EXPECT_THROW(BatchIterator(m, Split::train, dir.path() / "out", o), std::invalid_argument);
  o.segment_seconds = 1.0;
  EXPECT_THROW(BatchIterator(m, Split::test, dir.path() / "out", o), std::invalid_argument);
  EXPECT_THROW(BatchIterator(m, Split::train, dir.path() / "elsewhere", o), DatasetError);
}
