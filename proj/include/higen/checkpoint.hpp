#pragma once

// Versioned binary checkpoints: magic bytes, format version, an echo of the
// model configuration, every parameter tensor as little-endian 32-bit floats
// in registry order, and a trailing CRC32 over everything before it.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "higen/errors.hpp"
#include "higen/model.hpp"

namespace higen {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'H', 'G', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::string& buf, T v) {
  char tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  buf.append(tmp, sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& off) {
  if (off + sizeof(T) > buf.size()) throw CorruptFile("checkpoint truncated");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace detail

inline void save_checkpoint(Seq2SeqModel& model, const std::string& path) {
  const ModelConfig& cfg = model.config();
  std::string buf;
  buf.append(detail::kCheckpointMagic, 4);
  detail::put<uint32_t>(buf, detail::kCheckpointVersion);
  detail::put<int32_t>(buf, cfg.vocab_size);
  detail::put<int32_t>(buf, cfg.d_model);
  detail::put<int32_t>(buf, cfg.n_layers);
  detail::put<int32_t>(buf, cfg.n_heads);
  detail::put<int32_t>(buf, cfg.d_ffn);
  detail::put<int32_t>(buf, cfg.proj_dim);
  detail::put<int32_t>(buf, cfg.max_len);
  detail::put<double>(buf, cfg.dropout);

  auto params = model.params();
  detail::put<uint32_t>(buf, static_cast<uint32_t>(params.size()));
  for (const auto* t : params) {
    detail::put<uint32_t>(buf, static_cast<uint32_t>(t->w.rows()));
    detail::put<uint32_t>(buf, static_cast<uint32_t>(t->w.cols()));
    for (long r = 0; r < t->w.rows(); ++r)
      for (long c = 0; c < t->w.cols(); ++c)
        detail::put<float>(buf, static_cast<float>(t->w(r, c)));
  }
  uint32_t crc = static_cast<uint32_t>(
      ::crc32(0, reinterpret_cast<const Bytef*>(buf.data()), buf.size()));
  detail::put<uint32_t>(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline ModelConfig peek_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  size_t off = 0;
  if (buf.size() < 8 || std::memcmp(buf.data(), detail::kCheckpointMagic, 4) != 0)
    throw CorruptFile("bad checkpoint magic: " + path);
  off = 4;
  uint32_t version = detail::take<uint32_t>(buf, off);
  if (version != detail::kCheckpointVersion)
    throw VersionMismatch("unsupported checkpoint version " + std::to_string(version));
  ModelConfig cfg;
  cfg.vocab_size = detail::take<int32_t>(buf, off);
  cfg.d_model = detail::take<int32_t>(buf, off);
  cfg.n_layers = detail::take<int32_t>(buf, off);
  cfg.n_heads = detail::take<int32_t>(buf, off);
  cfg.d_ffn = detail::take<int32_t>(buf, off);
  cfg.proj_dim = detail::take<int32_t>(buf, off);
  cfg.max_len = detail::take<int32_t>(buf, off);
  cfg.dropout = detail::take<double>(buf, off);
  return cfg;
}

inline Seq2SeqModel load_checkpoint(const std::string& path, const TokenInfo& info) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 + 4 + 4 || std::memcmp(buf.data(), detail::kCheckpointMagic, 4) != 0)
    throw CorruptFile("bad checkpoint magic: " + path);
  size_t off = 4;
  uint32_t version = detail::take<uint32_t>(buf, off);
  if (version != detail::kCheckpointVersion)
    throw VersionMismatch("unsupported checkpoint version " + std::to_string(version));

  uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  uint32_t actual_crc = static_cast<uint32_t>(::crc32(
      0, reinterpret_cast<const Bytef*>(buf.data()), buf.size() - 4));
  if (stored_crc != actual_crc) throw CorruptFile("checkpoint CRC mismatch: " + path);

  ModelConfig cfg;
  cfg.vocab_size = detail::take<int32_t>(buf, off);
  cfg.d_model = detail::take<int32_t>(buf, off);
  cfg.n_layers = detail::take<int32_t>(buf, off);
  cfg.n_heads = detail::take<int32_t>(buf, off);
  cfg.d_ffn = detail::take<int32_t>(buf, off);
  cfg.proj_dim = detail::take<int32_t>(buf, off);
  cfg.max_len = detail::take<int32_t>(buf, off);
  cfg.dropout = detail::take<double>(buf, off);

  Seq2SeqModel model(cfg, info, /*init_seed=*/0);
  auto params = model.params();
  uint32_t count = detail::take<uint32_t>(buf, off);
  if (count != params.size()) throw CorruptFile("checkpoint tensor count mismatch");
  for (auto* t : params) {
    uint32_t rows = detail::take<uint32_t>(buf, off);
    uint32_t cols = detail::take<uint32_t>(buf, off);
    if (rows != static_cast<uint32_t>(t->w.rows()) ||
        cols != static_cast<uint32_t>(t->w.cols()))
      throw CorruptFile("checkpoint tensor shape mismatch for " + t->name);
    for (uint32_t r = 0; r < rows; ++r)
      for (uint32_t c = 0; c < cols; ++c)
        t->w(r, c) = detail::take<float>(buf, off);
  }
  if (off + 4 != buf.size()) throw CorruptFile("checkpoint has trailing bytes");
  return model;
}

}  // namespace higen
