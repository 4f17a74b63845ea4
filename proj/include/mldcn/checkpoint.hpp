#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "mldcn/blocks.hpp"
#include "mldcn/config.hpp"

namespace mldcn {

// File layout: one UTF-8 JSON header line terminated by '\n', then the raw
// little-endian float64 payload of every parameter in manifest order.
struct CheckpointHeader {
  struct Entry {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::uint64_t offset = 0;  // bytes from the start of the payload
  };

  ModelConfig model;
  std::optional<TrainConfig> train;
  std::vector<Entry> manifest;
  std::uint64_t payload_bytes = 0;
};

inline constexpr const char* kCheckpointFormat = "mldcn-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFull) << (8 * (7 - i));
    return r;
  }
}

inline json header_to_json(const CheckpointHeader& h) {
  json manifest = json::array();
  for (const auto& e : h.manifest)
    manifest.push_back({{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}, {"offset", e.offset}});
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"model", to_json(h.model)},
          {"train", h.train ? to_json(*h.train) : json(nullptr)},
          {"manifest", manifest},
          {"payload_bytes", h.payload_bytes}};
}

inline CheckpointHeader header_from_json(const json& j, const std::string& path) {
  try {
    if (j.value("format", "") != kCheckpointFormat || j.value("version", 0) != kCheckpointVersion)
      fail(ErrorCode::corruption, path + ": not a version 1 checkpoint");
    CheckpointHeader h;
    h.model = model_config_from_json(j.at("model"));
    if (!j.at("train").is_null()) h.train = train_config_from_json(j.at("train"));
    for (const auto& e : j.at("manifest"))
      h.manifest.push_back({e.at("name").get<std::string>(), e.at("rows").get<std::size_t>(),
                            e.at("cols").get<std::size_t>(), e.at("offset").get<std::uint64_t>()});
    h.payload_bytes = j.at("payload_bytes").get<std::uint64_t>();
    return h;
  } catch (const json::exception& e) {
    fail(ErrorCode::corruption, path + ": malformed checkpoint header: " + e.what());
  }
}

}  // namespace detail

inline CheckpointHeader make_checkpoint_header(const Model& model, const std::optional<TrainConfig>& train) {
  CheckpointHeader h;
  h.model = model.config();
  h.train = train;
  std::uint64_t offset = 0;
  for (const Param* p : model.params()) {
    h.manifest.push_back({p->name, p->value.rows(), p->value.cols(), offset});
    offset += 8ull * p->value.size();
  }
  h.payload_bytes = offset;
  return h;
}

inline void checkpoint_save(const Model& model, const std::string& path,
                            const std::optional<TrainConfig>& train = std::nullopt) {
  const CheckpointHeader h = make_checkpoint_header(model, train);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write checkpoint '" + path + "'");
  out << detail::header_to_json(h).dump() << '\n';
  for (const Param* p : model.params()) {
    for (double v : p->value.data()) {
      const std::uint64_t bits = detail::to_little_endian(std::bit_cast<std::uint64_t>(v));
      char buf[8];
      std::memcpy(buf, &bits, 8);
      out.write(buf, 8);
    }
  }
  if (!out) fail(ErrorCode::io, "write failed for checkpoint '" + path + "'");
}

// Reads only the header line; the payload is not touched.
inline CheckpointHeader checkpoint_read_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::corruption, path + ": missing header line");
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    fail(ErrorCode::corruption, path + ": header is not JSON: " + e.what());
  }
  return detail::header_from_json(j, path);
}

// Overwrites the parameters of an existing model. The model's config must
// equal the checkpoint's.
inline void checkpoint_load_into(Model& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::corruption, path + ": missing header line");
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    fail(ErrorCode::corruption, path + ": header is not JSON: " + e.what());
  }
  const CheckpointHeader h = detail::header_from_json(j, path);
  if (!(h.model == model.config())) fail(ErrorCode::config, path + ": checkpoint config does not match the model");

  const auto params = model.params();
  if (h.manifest.size() != params.size()) fail(ErrorCode::corruption, path + ": manifest length mismatch");
  std::uint64_t expected_offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = h.manifest[i];
    const Param& p = *params[i];
    if (e.name != p.name || e.rows != p.value.rows() || e.cols != p.value.cols() || e.offset != expected_offset)
      fail(ErrorCode::corruption, path + ": manifest entry " + std::to_string(i) + " ('" + e.name +
                                      "') does not match the model");
    expected_offset += 8ull * p.value.size();
  }
  if (expected_offset != h.payload_bytes) fail(ErrorCode::corruption, path + ": payload size mismatch in header");

  const std::string payload{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (payload.size() != h.payload_bytes) {
    fail(ErrorCode::corruption, path + ": payload has " + std::to_string(payload.size()) + " bytes, manifest expects " +
                                    std::to_string(h.payload_bytes));
  }
  std::size_t pos = 0;
  for (Param* p : params) {
    for (double& v : p->value.data()) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, payload.data() + pos, 8);
      v = std::bit_cast<double>(detail::to_little_endian(bits));
      pos += 8;
    }
  }
}

inline Model checkpoint_load(const std::string& path) {
  Model model(checkpoint_read_header(path).model);
  checkpoint_load_into(model, path);
  return model;
}

}  // namespace mldcn
