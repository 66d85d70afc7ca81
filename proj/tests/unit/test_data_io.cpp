#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>
#include <json.hpp>

#include "helpers.hpp"
#include "mmfuse/data_io.hpp"
#include "mmfuse/error.hpp"

namespace mmfuse {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

UtteranceRecord random_record(std::mt19937_64& rng, std::size_t dt, std::size_t da, int label = kImpaired) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::uniform_int_distribution<std::size_t> count(1, 4);
  UtteranceRecord r;
  r.id = "rec";
  r.label = label;
  for (std::size_t i = 0; i < dt; ++i) r.text.push_back(n(rng));
  const std::size_t chunks = count(rng);
  for (std::size_t c = 0; c < chunks; ++c) {
    FrameMatrix f{count(rng), da, {}};
    for (std::size_t i = 0; i < f.rows * da; ++i) f.values.push_back(n(rng));
    r.chunks.push_back(f);
  }
  return r;
}

UtteranceRecord minimal_record() {
  UtteranceRecord r;
  r.id = "m";
  r.label = kControl;
  r.text = {1.0f, 2.0f};
  r.chunks = {FrameMatrix{1, 2, {3.0f, 4.0f}}};
  return r;
}

void expect_same(const UtteranceRecord& a, const UtteranceRecord& b) {
  EXPECT_EQ(a.label, b.label);
  EXPECT_EQ(a.text, b.text);
  ASSERT_EQ(a.chunks.size(), b.chunks.size());
  for (std::size_t c = 0; c < a.chunks.size(); ++c) {
    EXPECT_EQ(a.chunks[c].rows, b.chunks[c].rows);
    EXPECT_EQ(a.chunks[c].cols, b.chunks[c].cols);
    EXPECT_EQ(a.chunks[c].values, b.chunks[c].values);
  }
}

DataErrc decode_error(const std::vector<std::uint8_t>& bytes, std::optional<RecordDims> dims = std::nullopt) {
  try {
    decode_record(bytes, dims);
  } catch (const DataError& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode succeeded";
  return DataErrc::io;
}

TEST(Mmeb, MinimalRecordIs44Bytes) {
  // header 4+2+2+4+4+4+4, text 2·4, one chunk 4 + 1·2·4
  EXPECT_EQ(encode_record(minimal_record()).size(), 44u);
}

TEST(Mmeb, LittleEndianLayout) {
  const auto bytes = encode_record(minimal_record());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MMEB");
  EXPECT_EQ(bytes[4], 1);  // version
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[12], 2);  // d_t
  EXPECT_EQ(bytes[20], 1);  // N chunks
  // 1.0f = 0x3F800000 little-endian
  EXPECT_EQ(bytes[24], 0x00);
  EXPECT_EQ(bytes[27], 0x3F);
  EXPECT_EQ(bytes[32], 1);  // L of chunk 0
}

TEST(Mmeb, RoundTripIsExact) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    UtteranceRecord r = random_record(rng, 5, 3, i % 2);
    expect_same(decode_record(encode_record(r)), r);
  }
}

TEST(Mmeb, UnlabelledRoundTrip) {
  std::mt19937_64 rng(2);
  UtteranceRecord r = random_record(rng, 2, 2, kUnlabeled);
  EXPECT_EQ(decode_record(encode_record(r)).label, kUnlabeled);
}

TEST(Mmeb, FileRoundTripTakesIdFromStem) {
  TempDir dir("mmeb");
  std::mt19937_64 rng(3);
  UtteranceRecord r = random_record(rng, 4, 2);
  write_record(r, dir.path() / "spk_7.mmeb");
  UtteranceRecord back = read_record(dir.path() / "spk_7.mmeb");
  EXPECT_EQ(back.id, "spk_7");
  expect_same(back, r);
}

TEST(Mmeb, DistinctErrorCodes) {
  auto bytes = encode_record(minimal_record());
  auto bad_magic = bytes;
  std::copy_n("XXXX", 4, bad_magic.begin());
  EXPECT_EQ(decode_error(bad_magic), DataErrc::bad_magic);

  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_EQ(decode_error(bad_version), DataErrc::version_mismatch);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_EQ(decode_error(truncated), DataErrc::truncated);

  EXPECT_EQ(decode_error(bytes, RecordDims{3, 2}), DataErrc::dim_mismatch);

  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_EQ(decode_error(trailing), DataErrc::invalid_record);
}

TEST(Mmeb, InvalidRecordsRejected) {
  UtteranceRecord r = minimal_record();
  r.chunks.clear();
  EXPECT_THROW(encode_record(r), DataError);
  r = minimal_record();
  r.label = 3;
  EXPECT_THROW(encode_record(r), DataError);
  r = minimal_record();
  r.chunks.push_back(FrameMatrix{1, 3, {1, 2, 3}});
  EXPECT_THROW(encode_record(r), DataError);
  r = minimal_record();
  r.text[0] = std::nanf("");
  EXPECT_THROW(encode_record(r), DataError);
}

TEST(Mmeb, EmptyChunkFailsAtTensorConversion) {
  EXPECT_THROW(to_tensor(FrameMatrix{0, 2, {}}), DimensionError);
}

TEST(Manifest, RoundTripAndSchema) {
  TempDir dir("manifest");
  Manifest m;
  m.text_dim = 4;
  m.audio_dim = 2;
  m.utterances = {{"a", "records/a.mmeb", kControl, Split::train}, {"b", "records/b.mmeb", kImpaired, Split::test}};
  write_manifest(m, dir.path() / "manifest.json");
  const auto j = nlohmann::json::parse(std::ifstream(dir.path() / "manifest.json"));
  EXPECT_EQ(j.at("d_t"), 4);
  EXPECT_EQ(j.at("utterances").at(1).at("split"), "test");
  Manifest back = read_manifest(dir.path() / "manifest.json");
  ASSERT_EQ(back.utterances.size(), 2u);
  EXPECT_EQ(back.utterances[1].id, "b");
  EXPECT_EQ(back.utterances[1].split, Split::test);
  EXPECT_EQ(back.audio_dim, 2u);
}

TEST(Manifest, MalformedRejected) {
  TempDir dir("manifest_bad");
  std::ofstream(dir.path() / "m.json") << R"({"version": 1, "d_t": 2})";
  EXPECT_THROW(read_manifest(dir.path() / "m.json"), DataError);
  EXPECT_THROW(read_manifest(dir.path() / "absent.json"), DataError);
}

class DatasetTest : public ::testing::Test {
 protected:
  TempDir dir{"dataset"};
  std::mt19937_64 rng{4};

  fs::path build(std::size_t n_train, std::size_t n_test, std::size_t dt = 3, std::size_t da = 2) {
    Manifest m;
    m.text_dim = dt;
    m.audio_dim = da;
    fs::create_directories(dir.path() / "records");
    for (std::size_t i = 0; i < n_train + n_test; ++i) {
      const std::string id = "u" + std::to_string(i);
      const int label = static_cast<int>(i % 2);
      UtteranceRecord r = random_record(rng, dt, da, label);
      write_record(r, dir.path() / "records" / (id + ".mmeb"));
      m.utterances.push_back({id, "records/" + id + ".mmeb", label, i < n_train ? Split::train : Split::test});
    }
    write_manifest(m, dir.path() / "manifest.json");
    return dir.path() / "manifest.json";
  }
};

TEST_F(DatasetTest, PredefinedSplitCounts) {
  Dataset d = load_dataset(build(108, 48, 2, 2));
  EXPECT_EQ(d.train.size(), 108u);
  EXPECT_EQ(d.test.size(), 48u);
  EXPECT_TRUE(d.warnings.empty());
}

TEST_F(DatasetTest, EmptyTestSplitWarns) {
  Dataset d = load_dataset(build(6, 0));
  EXPECT_EQ(d.test.size(), 0u);
  EXPECT_EQ(d.warnings.size(), 1u);
}

TEST_F(DatasetTest, DuplicateIdRejected) {
  const fs::path path = build(4, 0);
  Manifest m = read_manifest(path);
  m.utterances.push_back(m.utterances.front());
  write_manifest(m, path);
  try {
    load_dataset(path);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.code(), DataErrc::duplicate_id);
  }
}

TEST_F(DatasetTest, MissingFileRejected) {
  const fs::path path = build(4, 0);
  fs::remove(dir.path() / "records" / "u2.mmeb");
  try {
    load_dataset(path);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.code(), DataErrc::missing_file);
  }
}

TEST_F(DatasetTest, DimensionDisagreementRejected) {
  const fs::path path = build(4, 0);
  Manifest m = read_manifest(path);
  m.text_dim = 7;
  write_manifest(m, path);
  try {
    load_dataset(path);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.code(), DataErrc::dim_mismatch);
  }
}

TEST(Synthetic, FilesAndDeterminism) {
  TempDir a("synth_a"), b("synth_b");
  SyntheticSpec spec;
  spec.seed = 5;
  const fs::path ma = gen_synthetic(spec, a.path());
  gen_synthetic(spec, b.path());
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a.path() / "records")) {
    ++files;
    std::ifstream fa(entry.path(), std::ios::binary), fb(b.path() / "records" / entry.path().filename(), std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
    EXPECT_EQ(sa, sb) << entry.path();
  }
  EXPECT_EQ(files, 100u);
  Dataset d = load_dataset(ma);
  EXPECT_EQ(d.train.size() + d.test.size(), 100u);
  EXPECT_EQ(d.test.size(), 30u);
}

TEST(Synthetic, NegativeSeparationRejected) {
  SyntheticSpec spec;
  spec.separation = -1.0;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = {};
  spec.min_frames = 5;
  spec.max_frames = 4;
  EXPECT_THROW(spec.validate(), ConfigError);
}

// Pearson correlation between text and frame-mean audio of the same
// utterance, pooled over coordinates after removing the dataset mean.
double cross_modal_correlation(const SyntheticDataset& d) {
  const std::size_t dim = d.manifest.text_dim;
  std::vector<double> mt(dim, 0.0), ma(dim, 0.0);
  std::vector<std::vector<double>> audio;
  for (const auto& r : d.records) {
    std::vector<double> a(dim, 0.0);
    std::size_t frames = 0;
    for (const auto& c : r.chunks) {
      for (std::size_t i = 0; i < c.rows; ++i) {
        for (std::size_t j = 0; j < dim; ++j) a[j] += c.at(i, j);
      }
      frames += c.rows;
    }
    for (double& v : a) v /= static_cast<double>(frames);
    for (std::size_t j = 0; j < dim; ++j) {
      mt[j] += r.text[j];
      ma[j] += a[j];
    }
    audio.push_back(a);
  }
  const double n = static_cast<double>(d.records.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double x = d.records[i].text[j] - mt[j] / n, y = audio[i][j] - ma[j] / n;
      sxy += x * y;
      sxx += x * x;
      syy += y * y;
    }
  }
  return sxy / std::sqrt(sxx * syy);
}

TEST(Synthetic, ModalitiesShareTheClassLatent) {
  SyntheticSpec spec;
  EXPECT_GT(cross_modal_correlation(synthesize(spec)), 0.3);
  spec.separation = 0.0;
  EXPECT_LT(std::fabs(cross_modal_correlation(synthesize(spec))), 0.1);
}

}  // namespace
}  // namespace mmfuse
