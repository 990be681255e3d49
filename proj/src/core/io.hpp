// Persistence: datasets (raw f32 frames + JSON manifest), checkpoints
// (tagged binary with a JSON tensor table), metrics logs (JSON lines),
// reports (JSON), and PNG exports for human inspection.
//
// Byte layouts:
//   seq_%05d.f32   raw IEEE-754 f32, little-endian, row-major [T, H, W]
//   manifest.json  format_version, kind, dims, per-sequence truth + checksums
//   checkpoint     "GFCKPT01" | u32le header length | JSON header | blob
//                  header lists every tensor as {name, dtype, shape, offset,
//                  bytes}; optimizer moments ride along as "optim.m.<name>" /
//                  "optim.v.<name>"
// All writes go through a temp file and rename, and all artifacts round-trip
// bit-exactly.
#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/datagen.hpp"
#include "core/graph.hpp"
#include "core/losses.hpp"
#include "json.hpp"

namespace groupflow {

void atomic_write(const std::string& path, const void* data, size_t n);
std::vector<unsigned char> read_file(const std::string& path);

void save_json(const std::string& path, const nlohmann::json& j);
nlohmann::json load_json(const std::string& path);

// ---- dataset ----

void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);  // verifies lengths and checksums

// ---- metrics log (append-only JSON lines) ----

struct MetricsRecord {
  int64_t step = 0;
  std::string phase;  // "init" or "main"
  LossBreakdown losses;
};
void append_metrics(const std::string& path, const MetricsRecord& rec);
std::vector<MetricsRecord> read_metrics(const std::string& path);

// ---- PNG export (8-bit, zlib-compressed; inspection only) ----

void write_png_gray(const std::string& path, const Tensor<double>& img);  // [H,W] or [1,H,W]
void write_png_rgb(const std::string& path, const Tensor<double>& img);   // [3,H,W]

// ---- checkpoints ----

struct CheckpointMeta {
  int format_version = 1;
  std::string precision;  // "f32" or "f64", filled by save
  int64_t step = 0;       // completed optimizer steps in the current phase
  int64_t optim_step = 0; // RAdam time index t
  std::string phase = "init";
  nlohmann::json config = nlohmann::json::object();
};

namespace detail {
void save_checkpoint_raw(const std::string& path, const CheckpointMeta& meta,
                         const std::vector<nlohmann::json>& entries,
                         const std::vector<unsigned char>& blob);
std::pair<nlohmann::json, std::vector<unsigned char>> load_checkpoint_raw(
    const std::string& path);

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename T>
void append_tensor(std::vector<nlohmann::json>& entries, std::vector<unsigned char>& blob,
                   const std::string& name, const Tensor<T>& t, bool trainable,
                   bool mark_trainable) {
  nlohmann::json e;
  e["name"] = name;
  e["dtype"] = dtype_name<T>();
  e["shape"] = t.shape;
  e["offset"] = blob.size();
  e["bytes"] = size_t(t.numel()) * sizeof(T);
  if (mark_trainable) e["trainable"] = trainable;
  entries.push_back(std::move(e));
  const auto* p = reinterpret_cast<const unsigned char*>(t.ptr());
  blob.insert(blob.end(), p, p + size_t(t.numel()) * sizeof(T));
}

template <typename T>
Tensor<T> read_tensor(const nlohmann::json& e, const std::vector<unsigned char>& blob) {
  if (e.at("dtype").get<std::string>() != dtype_name<T>())
    throw FormatError("checkpoint tensor '" + e.at("name").get<std::string>() +
                      "' has dtype " + e.at("dtype").get<std::string>() +
                      ", expected " + dtype_name<T>());
  Tensor<T> t(e.at("shape").get<std::vector<int>>());
  const size_t off = e.at("offset").get<size_t>(), n = e.at("bytes").get<size_t>();
  if (n != size_t(t.numel()) * sizeof(T) || off + n > blob.size())
    throw FormatError("checkpoint tensor '" + e.at("name").get<std::string>() +
                      "' has inconsistent extent");
  std::memcpy(t.ptr(), blob.data() + off, n);
  return t;
}
}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamRegistry<T>& reg,
                     CheckpointMeta meta) {
  meta.precision = detail::dtype_name<T>();
  std::vector<nlohmann::json> entries;
  std::vector<unsigned char> blob;
  for (const auto& e : reg.entries()) {
    detail::append_tensor(entries, blob, e.name, e.value, e.trainable, true);
    detail::append_tensor(entries, blob, "optim.m." + e.name, e.m, false, false);
    detail::append_tensor(entries, blob, "optim.v." + e.name, e.v, false, false);
  }
  detail::save_checkpoint_raw(path, meta, entries, blob);
}

// Restores values, trainable flags, and optimizer moments.  A registry that
// already holds parameters must agree with the file on the exact name set; an
// empty registry is populated from the file.
template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, ParamRegistry<T>& reg) {
  auto [header, blob] = detail::load_checkpoint_raw(path);

  CheckpointMeta meta;
  meta.format_version = header.at("format_version").get<int>();
  meta.precision = header.at("precision").get<std::string>();
  meta.step = header.at("step").get<int64_t>();
  meta.optim_step = header.at("optim_step").get<int64_t>();
  meta.phase = header.at("phase").get<std::string>();
  meta.config = header.value("config", nlohmann::json::object());
  if (meta.precision != detail::dtype_name<T>())
    throw FormatError("checkpoint precision " + meta.precision + " does not match " +
                      detail::dtype_name<T>());

  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& e : header.at("tensors"))
    if (!by_name.emplace(e.at("name").get<std::string>(), &e).second)
      throw FormatError("duplicate checkpoint tensor " + e.at("name").get<std::string>());

  const bool was_empty = reg.count() == 0;
  size_t param_entries = 0;
  for (const auto& e : header.at("tensors")) {  // file order, so re-saving is stable
    const std::string name = e.at("name").get<std::string>();
    if (name.rfind("optim.", 0) == 0) continue;
    ++param_entries;
    if (reg.find(name) < 0) {
      if (!was_empty) throw FormatError("checkpoint tensor '" + name +
                                        "' not present in the parameter set");
      reg.add(name, detail::read_tensor<T>(e, blob));
    }
  }
  if (reg.count() != param_entries)
    throw FormatError("parameter set and checkpoint disagree on tensor count");

  for (auto& entry : reg.entries()) {
    auto need = [&](const std::string& n) {
      const auto it = by_name.find(n);
      if (it == by_name.end()) throw FormatError("checkpoint is missing tensor " + n);
      return detail::read_tensor<T>(*it->second, blob);
    };
    entry.value = need(entry.name);
    entry.trainable = by_name.at(entry.name)->value("trainable", true);
    entry.m = need("optim.m." + entry.name);
    entry.v = need("optim.v." + entry.name);
    check_same_shape(entry.value, entry.m, "checkpoint moment m");
    check_same_shape(entry.value, entry.v, "checkpoint moment v");
    entry.grad = Tensor<T>(entry.value.shape);
  }
  return meta;
}

}  // namespace groupflow
