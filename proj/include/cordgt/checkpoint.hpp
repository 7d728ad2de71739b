#pragma once

#include <fstream>
#include <json.hpp>
#include <string>

#include "cordgt/tensor.hpp"

namespace cordgt {

// Checkpoint layout (version 1): magic, version, scalar width, a JSON meta
// blob (model/run configuration), then the named parameter manifest with
// flat little-endian arrays. Save -> load -> save is byte-identical for a
// fixed scalar width.

template <class S>
void save_checkpoint(const std::string& path, const ParamSet<S>& params,
                     const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  const char magic[8] = {'C', 'D', 'G', 'T', 'C', 'K', 'P', 'T'};
  out.write(magic, 8);
  const std::uint32_t version = 1;
  const std::uint32_t scalar_bytes = sizeof(S);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&scalar_bytes), 4);
  const std::string meta_str = meta.dump();
  const std::uint64_t meta_len = meta_str.size();
  out.write(reinterpret_cast<const char*>(&meta_len), 8);
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_len));
  const std::uint64_t n = params.count();
  out.write(reinterpret_cast<const char*>(&n), 8);
  for (const auto& e : params.entries) {
    const std::uint32_t name_len = static_cast<std::uint32_t>(e.name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 4);
    out.write(e.name.data(), name_len);
    const std::uint64_t rows = static_cast<std::uint64_t>(e.value.rows());
    const std::uint64_t cols = static_cast<std::uint64_t>(e.value.cols());
    out.write(reinterpret_cast<const char*>(&rows), 8);
    out.write(reinterpret_cast<const char*>(&cols), 8);
    out.write(reinterpret_cast<const char*>(e.value.data()),
              static_cast<std::streamsize>(sizeof(S) *
                                           static_cast<std::size_t>(
                                               e.value.size())));
  }
  if (!out) throw DataError("checkpoint write failed: " + path);
}

/// Reads just the meta blob (enough to rebuild the model configuration
/// before allocating parameters).
inline nlohmann::json read_checkpoint_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "CDGTCKPT", 8) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  std::uint32_t version = 0, scalar_bytes = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&scalar_bytes), 4);
  std::uint64_t meta_len = 0;
  in.read(reinterpret_cast<char*>(&meta_len), 8);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw DataError("checkpoint: truncated file " + path);
  nlohmann::json meta = nlohmann::json::parse(meta_str);
  meta["__scalar_bytes"] = scalar_bytes;
  return meta;
}

/// Loads values into an already-built ParamSet (names and shapes must match
/// the checkpoint manifest) and returns the stored meta.
template <class S>
nlohmann::json load_checkpoint(const std::string& path, ParamSet<S>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "CDGTCKPT", 8) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  std::uint32_t version = 0, scalar_bytes = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&scalar_bytes), 4);
  if (version != 1)
    throw DataError("checkpoint: unsupported version " +
                    std::to_string(version));
  if (scalar_bytes != sizeof(S))
    throw DataError("checkpoint: scalar width " +
                    std::to_string(scalar_bytes) + " does not match build (" +
                    std::to_string(sizeof(S)) + "); rerun with matching mode");
  std::uint64_t meta_len = 0;
  in.read(reinterpret_cast<char*>(&meta_len), 8);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 8);
  if (!in) throw DataError("checkpoint: truncated file " + path);
  if (n != params.count())
    throw DataError("checkpoint: parameter count mismatch");
  for (auto& e : params.entries) {
    std::uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 4);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), 8);
    in.read(reinterpret_cast<char*>(&cols), 8);
    if (!in || name != e.name ||
        rows != static_cast<std::uint64_t>(e.value.rows()) ||
        cols != static_cast<std::uint64_t>(e.value.cols()))
      throw DataError("checkpoint: manifest mismatch at parameter '" + name +
                      "' (config does not match checkpoint)");
    in.read(reinterpret_cast<char*>(e.value.data()),
            static_cast<std::streamsize>(sizeof(S) *
                                         static_cast<std::size_t>(
                                             e.value.size())));
  }
  if (!in) throw DataError("checkpoint: truncated file " + path);
  return nlohmann::json::parse(meta_str);
}

}  // namespace cordgt
