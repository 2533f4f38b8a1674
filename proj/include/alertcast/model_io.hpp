#pragma once

// Model container, little-endian:
//   "TRSA" | u32 version | u64 header length | JSON header |
//   u64 parameter block length | parameter block | u32 CRC32 of all preceding bytes
// The header carries config, vocabulary, metadata and the tensor layout. The
// parameter block stores every tensor column-major in the declared precision.

#include <bit>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <zlib.h>

#include "alertcast/errors.hpp"
#include "alertcast/trainer.hpp"

namespace alertcast {

inline constexpr char kModelMagic[4] = {'T', 'R', 'S', 'A'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

// UTC ISO-8601 stamp; honours SOURCE_DATE_EPOCH for reproducible output.
inline std::string current_timestamp() {
  std::time_t t;
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde && *sde) {
    t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

template <typename U>
void put_le(std::vector<unsigned char>& out, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char raw[sizeof(U)];
  std::memcpy(raw, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
  out.insert(out.end(), raw, raw + sizeof(U));
}

template <typename U>
U get_le(const unsigned char* p) {
  unsigned char raw[sizeof(U)];
  std::memcpy(raw, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
  U v;
  std::memcpy(&v, raw, sizeof(U));
  return v;
}

inline Json epoch_stats_to_json(const EpochStats& s) {
  Json j{{"epoch", s.epoch},
         {"train_loss", s.train_loss},
         {"train_precision", s.train_precision},
         {"learning_rate", s.learning_rate}};
  if (s.validation_precision) j["validation_precision"] = *s.validation_precision;
  if (s.validation_nll) j["validation_nll"] = *s.validation_nll;
  return j;
}

inline EpochStats epoch_stats_from_json(const Json& j) {
  EpochStats s;
  s.epoch = j.at("epoch").get<std::size_t>();
  s.train_loss = j.at("train_loss").get<double>();
  s.train_precision = j.at("train_precision").get<double>();
  s.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("validation_precision")) s.validation_precision = j["validation_precision"].get<double>();
  if (j.contains("validation_nll")) s.validation_nll = j["validation_nll"].get<double>();
  return s;
}

}  // namespace detail

inline Json metadata_to_json(const TrainingMetadata& m) {
  Json j{{"chosen_epoch", m.chosen_epoch}, {"train_loss", m.train_loss}, {"extra", m.extra},
         {"created_at", m.created_at}};
  if (m.validation_precision) j["validation_precision"] = *m.validation_precision;
  Json hist = Json::array();
  for (const auto& s : m.history) hist.push_back(detail::epoch_stats_to_json(s));
  j["history"] = std::move(hist);
  return j;
}

inline TrainingMetadata metadata_from_json(const Json& j) {
  TrainingMetadata m;
  m.chosen_epoch = j.at("chosen_epoch").get<std::size_t>();
  m.train_loss = j.at("train_loss").get<double>();
  if (j.contains("validation_precision")) m.validation_precision = j["validation_precision"].get<double>();
  m.extra = j.value("extra", Json::object());
  m.created_at = j.value("created_at", "");
  for (const auto& s : j.at("history")) m.history.push_back(detail::epoch_stats_from_json(s));
  return m;
}

inline std::vector<unsigned char> serialize_model(const TrainedModel& model) {
  const bool f32 = model.config.precision == Precision::F32;
  Json tensors = Json::array();
  std::vector<unsigned char> block;
  auto emit = [&](const char* name, Eigen::Index rows, Eigen::Index cols, const double* data) {
    tensors.push_back({{"name", name}, {"rows", rows}, {"cols", cols}});
    for (Eigen::Index i = 0; i < rows * cols; ++i) {
      if (f32) {
        detail::put_le(block, static_cast<float>(data[i]));
      } else {
        detail::put_le(block, data[i]);
      }
    }
  };
  const auto& p = model.params;
  emit("embedding", p.embedding.rows(), p.embedding.cols(), p.embedding.data());
  emit("W", p.W.rows(), p.W.cols(), p.W.data());
  emit("U", p.U.rows(), p.U.cols(), p.U.data());
  emit("b", p.b.rows(), 1, p.b.data());
  emit("P", p.P.rows(), p.P.cols(), p.P.data());
  emit("q", p.q.rows(), 1, p.q.data());

  OrderedJson header;
  header["config"] = model.config.to_json();
  header["vocabulary"] = model.vocab ? model.vocab->to_json() : Json::array();
  header["metadata"] = metadata_to_json(model.metadata);
  header["precision"] = to_string(model.config.precision);
  header["tensors"] = tensors;
  const std::string header_text = header.dump();

  std::vector<unsigned char> out;
  out.reserve(4 + 4 + 8 + header_text.size() + 8 + block.size() + 4);
  out.insert(out.end(), kModelMagic, kModelMagic + 4);
  detail::put_le(out, kModelFormatVersion);
  detail::put_le(out, static_cast<std::uint64_t>(header_text.size()));
  out.insert(out.end(), header_text.begin(), header_text.end());
  detail::put_le(out, static_cast<std::uint64_t>(block.size()));
  out.insert(out.end(), block.begin(), block.end());
  detail::put_le(out, crc32_of(out));
  return out;
}

inline TrainedModel deserialize_model(std::span<const unsigned char> bytes) {
  using detail::get_le;
  constexpr std::size_t kPrefix = 4 + 4 + 8;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kModelMagic, 4) != 0) {
    if (bytes.size() < 4) throw ModelFileError(ModelFileFault::Truncated, "model file truncated before magic");
    throw ModelFileError(ModelFileFault::BadMagic, "not a model file (bad magic)");
  }
  if (bytes.size() < 8) throw ModelFileError(ModelFileFault::Truncated, "model file truncated before version");
  const auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kModelFormatVersion)
    throw ModelFileError(ModelFileFault::Version, "unsupported model format version " + std::to_string(version));
  if (bytes.size() < kPrefix) throw ModelFileError(ModelFileFault::Truncated, "model file truncated in prefix");
  const auto header_len = get_le<std::uint64_t>(bytes.data() + 8);
  if (header_len > bytes.size() - kPrefix)
    throw ModelFileError(ModelFileFault::Truncated, "model file truncated in header");
  const std::size_t block_len_at = kPrefix + header_len;
  if (bytes.size() - block_len_at < 8)
    throw ModelFileError(ModelFileFault::Truncated, "model file truncated before parameter block");
  const auto block_len = get_le<std::uint64_t>(bytes.data() + block_len_at);
  const std::size_t block_at = block_len_at + 8;
  if (block_len > bytes.size() - block_at || bytes.size() - block_at - block_len < 4)
    throw ModelFileError(ModelFileFault::Truncated, "model file truncated in parameter block");
  const std::size_t crc_at = block_at + block_len;
  if (crc_at + 4 != bytes.size()) throw ModelFileError(ModelFileFault::Malformed, "trailing bytes after checksum");
  const auto stored_crc = get_le<std::uint32_t>(bytes.data() + crc_at);
  if (stored_crc != crc32_of(bytes.first(crc_at)))
    throw ModelFileError(ModelFileFault::Checksum, "model file checksum mismatch");

  TrainedModel model;
  try {
    const auto header = Json::parse(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(block_len_at));
    model.config = ModelConfig::from_json(header.at("config"));
    model.vocab = std::make_shared<const EventVocabulary>(EventVocabulary::from_json(header.at("vocabulary")));
    model.metadata = metadata_from_json(header.at("metadata"));
    const bool f32 = precision_from_string(header.at("precision").get<std::string>()) == Precision::F32;
    if (model.vocab->size() != model.config.vocab_size)
      throw ModelFileError(ModelFileFault::Malformed, "vocabulary size does not match config");
    model.params = Parameters<double>::zeros(model.config);

    const std::size_t width = f32 ? 4 : 8;
    std::size_t off = block_at;
    std::size_t tensor_index = 0;
    const auto& layout = header.at("tensors");
    model.params.for_each_tensor([&](const char* name, std::span<double> s) {
      if (tensor_index >= layout.size() || layout[tensor_index].at("name").get<std::string>() != name)
        throw ModelFileError(ModelFileFault::Malformed, std::string("tensor layout mismatch at ") + name);
      const auto rows = layout[tensor_index].at("rows").get<std::size_t>();
      const auto cols = layout[tensor_index].at("cols").get<std::size_t>();
      if (rows * cols != s.size())
        throw ModelFileError(ModelFileFault::Malformed, std::string("tensor shape mismatch for ") + name);
      if (off + s.size() * width > crc_at)
        throw ModelFileError(ModelFileFault::Malformed, "parameter block shorter than declared tensors");
      for (auto& v : s) {
        v = f32 ? static_cast<double>(get_le<float>(bytes.data() + off)) : get_le<double>(bytes.data() + off);
        off += width;
      }
      ++tensor_index;
    });
    if (off != crc_at) throw ModelFileError(ModelFileFault::Malformed, "parameter block longer than declared tensors");
  } catch (const Json::exception& e) {
    throw ModelFileError(ModelFileFault::Malformed, std::string("bad model header: ") + e.what());
  } catch (const ConfigError& e) {
    throw ModelFileError(ModelFileFault::Malformed, std::string("bad model config: ") + e.what());
  } catch (const VocabularyError& e) {
    throw ModelFileError(ModelFileFault::Malformed, std::string("bad model vocabulary: ") + e.what());
  }
  return model;
}

// Stamps created_at when the model has none.
inline void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  TrainedModel stamped = model;
  if (stamped.metadata.created_at.empty()) stamped.metadata.created_at = current_timestamp();
  const auto bytes = serialize_model(stamped);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline TrainedModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file_bytes(path)); }

}  // namespace alertcast
