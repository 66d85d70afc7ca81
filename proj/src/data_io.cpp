#include "mmfuse/data_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <set>

#include <json.hpp>

#include "mmfuse/error.hpp"
#include "mmfuse/random.hpp"

namespace mmfuse {

const char* to_string(DataErrc code) {
  switch (code) {
    case DataErrc::io: return "io error";
    case DataErrc::bad_magic: return "bad magic";
    case DataErrc::version_mismatch: return "version mismatch";
    case DataErrc::truncated: return "truncated payload";
    case DataErrc::dim_mismatch: return "dimension mismatch";
    case DataErrc::invalid_record: return "invalid record";
    case DataErrc::bad_manifest: return "bad manifest";
    case DataErrc::duplicate_id: return "duplicate id";
    case DataErrc::missing_file: return "missing file";
  }
  return "data error";
}

Tensor to_tensor(const FrameMatrix& frames) {
  if (frames.rows == 0) throw DimensionError("empty chunk: a frame matrix needs T >= 1 frames");
  if (frames.cols == 0 || frames.values.size() != frames.rows * frames.cols) {
    throw DimensionError("frame matrix storage does not match " + std::to_string(frames.rows) + "x" +
                         std::to_string(frames.cols));
  }
  return Tensor::from({frames.rows, frames.cols},
                      std::vector<double>(frames.values.begin(), frames.values.end()));
}

Tensor to_tensor(const std::vector<float>& values) {
  return Tensor::vector(std::vector<double>(values.begin(), values.end()));
}

namespace {

class Writer {
 public:
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v), 4); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v), 4); }
  void bytes(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw DataError(DataErrc::truncated, std::string("record ends inside ") + what);
    }
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n, "payload");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n), "header field");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataErrc::missing_file, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(DataErrc::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(DataErrc::io, "short write to " + path.string());
}

}  // namespace

void validate_record(const UtteranceRecord& record) {
  if (record.label < kUnlabeled || record.label > kImpaired) {
    throw DataError(DataErrc::invalid_record,
                    "record '" + record.id + "' has label " + std::to_string(record.label));
  }
  if (record.text.empty()) {
    throw DataError(DataErrc::invalid_record, "record '" + record.id + "' has no text embedding");
  }
  if (record.chunks.empty()) {
    throw DataError(DataErrc::invalid_record, "record '" + record.id + "' has no audio chunks");
  }
  for (float v : record.text) {
    if (!std::isfinite(v)) throw DataError(DataErrc::invalid_record, "record '" + record.id + "' has a non-finite text value");
  }
  const std::size_t d_a = record.audio_dim();
  for (std::size_t i = 0; i < record.chunks.size(); ++i) {
    const FrameMatrix& c = record.chunks[i];
    if (c.rows == 0) {
      throw DataError(DataErrc::invalid_record,
                      "record '" + record.id + "' chunk " + std::to_string(i) + " has no frames");
    }
    if (c.cols != d_a || d_a == 0 || c.values.size() != c.rows * c.cols) {
      throw DataError(DataErrc::invalid_record,
                      "record '" + record.id + "' chunk " + std::to_string(i) + " has inconsistent dims");
    }
    for (float v : c.values) {
      if (!std::isfinite(v)) {
        throw DataError(DataErrc::invalid_record,
                        "record '" + record.id + "' chunk " + std::to_string(i) + " has a non-finite value");
      }
    }
  }
}

std::vector<std::uint8_t> encode_record(const UtteranceRecord& record) {
  validate_record(record);
  Writer w;
  w.bytes(kRecordMagic, 4);
  w.u16(kRecordVersion);
  w.u16(0);
  w.i32(record.label);
  w.u32(static_cast<std::uint32_t>(record.text_dim()));
  w.u32(static_cast<std::uint32_t>(record.audio_dim()));
  w.u32(static_cast<std::uint32_t>(record.chunks.size()));
  for (float v : record.text) w.f32(v);
  for (const FrameMatrix& c : record.chunks) {
    w.u32(static_cast<std::uint32_t>(c.rows));
    for (float v : c.values) w.f32(v);
  }
  return w.take();
}

UtteranceRecord decode_record(std::span<const std::uint8_t> bytes, std::optional<RecordDims> expected) {
  Reader r(bytes);
  auto magic = r.take(4);
  if (std::memcmp(magic.data(), kRecordMagic, 4) != 0) {
    throw DataError(DataErrc::bad_magic, "expected \"MMEB\" header");
  }
  const std::uint16_t version = r.u16();
  if (version != kRecordVersion) {
    throw DataError(DataErrc::version_mismatch, "record version " + std::to_string(version) +
                                                    ", supported " + std::to_string(kRecordVersion));
  }
  r.u16();  // flags, reserved
  UtteranceRecord rec;
  rec.label = r.i32();
  const std::size_t d_t = r.u32();
  const std::size_t d_a = r.u32();
  const std::size_t n_chunks = r.u32();
  if (expected && (expected->text_dim != d_t || expected->audio_dim != d_a)) {
    throw DataError(DataErrc::dim_mismatch,
                    "record has d_t=" + std::to_string(d_t) + ", d_a=" + std::to_string(d_a) +
                        "; manifest says d_t=" + std::to_string(expected->text_dim) +
                        ", d_a=" + std::to_string(expected->audio_dim));
  }
  r.need(d_t * 4, "text embedding");
  rec.text.resize(d_t);
  for (float& v : rec.text) v = r.f32();
  rec.chunks.reserve(n_chunks);
  for (std::size_t i = 0; i < n_chunks; ++i) {
    FrameMatrix c;
    c.rows = r.u32();
    c.cols = d_a;
    r.need(c.rows * d_a * 4, "frame matrix");
    c.values.resize(c.rows * d_a);
    for (float& v : c.values) v = r.f32();
    rec.chunks.push_back(std::move(c));
  }
  if (r.remaining() != 0) {
    throw DataError(DataErrc::invalid_record,
                    std::to_string(r.remaining()) + " trailing bytes after the last chunk");
  }
  validate_record(rec);
  return rec;
}

void write_record(const UtteranceRecord& record, const std::filesystem::path& path) {
  write_file(path, encode_record(record));
}

UtteranceRecord read_record(const std::filesystem::path& path, std::optional<RecordDims> expected) {
  UtteranceRecord rec = decode_record(read_file(path), expected);
  rec.id = path.stem().string();
  return rec;
}

namespace {

using nlohmann::json;

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

}  // namespace

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataErrc::missing_file, "cannot open manifest " + path.string());
  Manifest m;
  try {
    const json j = json::parse(in);
    m.version = j.at("version").get<int>();
    m.text_dim = j.at("d_t").get<std::size_t>();
    m.audio_dim = j.at("d_a").get<std::size_t>();
    for (const auto& u : j.at("utterances")) {
      ManifestEntry e;
      e.id = u.at("id").get<std::string>();
      e.file = u.at("file").get<std::string>();
      e.label = u.at("label").get<int>();
      const auto split = u.at("split").get<std::string>();
      if (split == "train") {
        e.split = Split::train;
      } else if (split == "test") {
        e.split = Split::test;
      } else {
        throw DataError(DataErrc::bad_manifest, "utterance '" + e.id + "' has split '" + split + "'");
      }
      m.utterances.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw DataError(DataErrc::bad_manifest, path.string() + ": " + ex.what());
  }
  if (m.version != 1) {
    throw DataError(DataErrc::version_mismatch, "manifest version " + std::to_string(m.version));
  }
  if (m.text_dim == 0 || m.audio_dim == 0) {
    throw DataError(DataErrc::bad_manifest, "manifest dims must be positive");
  }
  return m;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  json j;
  j["version"] = manifest.version;
  j["d_t"] = manifest.text_dim;
  j["d_a"] = manifest.audio_dim;
  j["utterances"] = json::array();
  for (const ManifestEntry& e : manifest.utterances) {
    j["utterances"].push_back(
        {{"id", e.id}, {"file", e.file}, {"label", e.label}, {"split", split_name(e.split)}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(DataErrc::io, "cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset ds;
  ds.manifest = read_manifest(manifest_path);
  const RecordDims dims{ds.manifest.text_dim, ds.manifest.audio_dim};
  const auto base = manifest_path.parent_path();
  std::set<std::string> ids;
  for (const ManifestEntry& e : ds.manifest.utterances) {
    if (!ids.insert(e.id).second) throw DataError(DataErrc::duplicate_id, "id '" + e.id + "' appears twice");
    const auto file = base / e.file;
    if (!std::filesystem::exists(file)) {
      throw DataError(DataErrc::missing_file, "record file " + file.string() + " for '" + e.id + "'");
    }
    UtteranceRecord rec = read_record(file, dims);
    rec.id = e.id;
    if (rec.label != e.label) {
      throw DataError(DataErrc::invalid_record, "'" + e.id + "' is labelled " + std::to_string(rec.label) +
                                                    " in its file but " + std::to_string(e.label) +
                                                    " in the manifest");
    }
    if (rec.chunks.empty() && e.split == Split::train && rec.label != kUnlabeled) {
      throw DataError(DataErrc::invalid_record, "training record '" + e.id + "' has no audio chunks");
    }
    (e.split == Split::train ? ds.train : ds.test).push_back(std::move(rec));
  }
  if (ds.train.size() + ds.test.size() != ds.manifest.utterances.size()) {
    throw DataError(DataErrc::bad_manifest, "loaded record count differs from the manifest");
  }
  if (ds.test.empty()) ds.warnings.push_back("manifest has an empty test split");
  return ds;
}

void SyntheticSpec::validate() const {
  if (!(separation >= 0.0) || !std::isfinite(separation)) {
    throw ConfigError("synthetic separation must be a finite value >= 0");
  }
  if (n_per_class == 0 || text_dim == 0 || audio_dim == 0) {
    throw ConfigError("synthetic sizes must be positive");
  }
  if (min_chunks == 0 || min_chunks > max_chunks || min_frames == 0 || min_frames > max_frames) {
    throw ConfigError("synthetic chunk/frame ranges must satisfy 1 <= min <= max");
  }
  if (!(test_fraction >= 0.0 && test_fraction < 1.0) || !(noise >= 0.0)) {
    throw ConfigError("synthetic test_fraction must be in [0, 1) and noise >= 0");
  }
}

SyntheticDataset synthesize(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> chunk_count(spec.min_chunks, spec.max_chunks);
  std::uniform_int_distribution<std::size_t> frame_count(spec.min_frames, spec.max_frames);

  auto latent = [&](int label, std::size_t dim) {
    const double sign = label == kImpaired ? 1.0 : -1.0;
    return sign * spec.separation / std::sqrt(static_cast<double>(dim));
  };

  const auto n_test = static_cast<std::size_t>(
      std::floor(static_cast<double>(spec.n_per_class) * spec.test_fraction + 0.5));
  SyntheticDataset out;
  out.manifest.text_dim = spec.text_dim;
  out.manifest.audio_dim = spec.audio_dim;
  for (int label : {kControl, kImpaired}) {
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      UtteranceRecord rec;
      rec.id = "utt_c" + std::to_string(label) + "_" + std::to_string(1000 + i).substr(1);
      rec.label = label;
      const double ut = latent(label, spec.text_dim);
      rec.text.resize(spec.text_dim);
      for (float& v : rec.text) v = static_cast<float>(ut + spec.noise * noise(rng));
      const double ua = latent(label, spec.audio_dim);
      const std::size_t n_chunks = chunk_count(rng);
      for (std::size_t c = 0; c < n_chunks; ++c) {
        FrameMatrix fm;
        fm.rows = frame_count(rng);
        fm.cols = spec.audio_dim;
        fm.values.resize(fm.rows * fm.cols);
        for (float& v : fm.values) v = static_cast<float>(ua + spec.noise * noise(rng));
        rec.chunks.push_back(std::move(fm));
      }
      ManifestEntry e;
      e.id = rec.id;
      e.file = "records/" + rec.id + ".mmeb";
      e.label = label;
      e.split = i + n_test >= spec.n_per_class ? Split::test : Split::train;
      out.manifest.utterances.push_back(std::move(e));
      out.records.push_back(std::move(rec));
    }
  }
  return out;
}

std::filesystem::path gen_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  SyntheticDataset ds = synthesize(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "records", ec);
  if (ec) throw DataError(DataErrc::io, "cannot create " + (out_dir / "records").string() + ": " + ec.message());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    write_record(ds.records[i], out_dir / ds.manifest.utterances[i].file);
  }
  const auto manifest_path = out_dir / "manifest.json";
  write_manifest(ds.manifest, manifest_path);
  return manifest_path;
}

}  // namespace mmfuse
