#include "core/io.hpp"

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "frame and checkpoint layouts are little-endian");

namespace groupflow {

namespace fs = std::filesystem;
using nlohmann::json;

void atomic_write(const std::string& path, const void* data, size_t n) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp);
    out.write(static_cast<const char*>(data), std::streamsize(n));
    if (!out) throw FormatError("short write to " + tmp);
  }
  fs::rename(tmp, path);
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("cannot read " + path);
  std::vector<unsigned char> buf(size_t(in.tellg()));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (!in) throw FormatError("short read from " + path);
  return buf;
}

void save_json(const std::string& path, const json& j) {
  const std::string s = j.dump(2) + "\n";
  atomic_write(path, s.data(), s.size());
}

json load_json(const std::string& path) {
  const auto buf = read_file(path);
  return json::parse(buf.begin(), buf.end());
}

// ---- dataset ----

namespace {

std::string seq_filename(int id) {
  char name[32];
  std::snprintf(name, sizeof name, "seq_%05d.f32", id);
  return name;
}

std::vector<unsigned char> pack_frames(const Sequence& seq) {
  std::vector<unsigned char> bytes;
  for (const auto& frame : seq.frames)
    for (double v : frame.data) {
      const float f = float(v);
      const auto* p = reinterpret_cast<const unsigned char*>(&f);
      bytes.insert(bytes.end(), p, p + 4);
    }
  return bytes;
}

const char* kind_name(ObjectKind k) {
  return k == ObjectKind::square ? "square" : "semicircle";
}

ObjectKind kind_from(const std::string& s) {
  if (s == "square") return ObjectKind::square;
  if (s == "semicircle") return ObjectKind::semicircle;
  throw FormatError("unknown object kind '" + s + "'");
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(dir);
  json manifest;
  manifest["format_version"] = 1;
  manifest["generator_version"] = "groupflow-gen-1";
  manifest["kind"] = kind_name(ds.kind);
  manifest["image_size"] = ds.image_size;
  manifest["frames"] = ds.sequences.empty() ? 0 : int(ds.sequences[0].frames.size());
  manifest["master_seed"] = ds.master_seed;
  manifest["truth_note"] =
      "rotation_deg, dx, dy, cx, cy, theta0 are evaluation-only ground truth";

  json seqs = json::array();
  for (size_t i = 0; i < ds.sequences.size(); ++i) {
    const auto& seq = ds.sequences[i];
    const auto bytes = pack_frames(seq);
    const std::string name = seq_filename(int(i));
    atomic_write(dir + "/" + name, bytes.data(), bytes.size());
    json e;
    e["id"] = int(i);
    e["file"] = name;
    e["bytes"] = bytes.size();
    e["checksum"] = to_hex(fnv1a64(bytes.data(), bytes.size()));
    e["seed"] = seq.truth.seed;
    e["rotation_deg"] = seq.truth.rot_per_frame_deg;
    e["dx"] = seq.truth.dx;
    e["dy"] = seq.truth.dy;
    e["cx"] = seq.truth.cx;
    e["cy"] = seq.truth.cy;
    e["theta0"] = seq.truth.theta0;
    seqs.push_back(std::move(e));
  }
  manifest["sequences"] = std::move(seqs);
  save_json(dir + "/manifest.json", manifest);
}

Dataset load_dataset(const std::string& dir) {
  const json manifest = load_json(dir + "/manifest.json");
  if (manifest.at("format_version").get<int>() != 1)
    throw FormatError("unsupported dataset format_version");

  Dataset ds;
  ds.kind = kind_from(manifest.at("kind").get<std::string>());
  ds.image_size = manifest.at("image_size").get<int>();
  ds.master_seed = manifest.at("master_seed").get<uint64_t>();
  const int T = manifest.at("frames").get<int>();
  const int s = ds.image_size;

  for (const auto& e : manifest.at("sequences")) {
    const std::string file = e.at("file").get<std::string>();
    const auto bytes = read_file(dir + "/" + file);
    if (bytes.size() != e.at("bytes").get<size_t>())
      throw FormatError(file + " has unexpected length");
    if (to_hex(fnv1a64(bytes.data(), bytes.size())) != e.at("checksum").get<std::string>())
      throw FormatError(file + " fails its checksum");
    if (bytes.size() != size_t(T) * s * s * 4)
      throw FormatError(file + " does not match the manifest dimensions");

    Sequence seq;
    seq.truth.kind = ds.kind;
    seq.truth.image_size = s;
    seq.truth.frames = T;
    seq.truth.seed = e.at("seed").get<uint64_t>();
    seq.truth.rot_per_frame_deg = e.at("rotation_deg").get<double>();
    seq.truth.dx = e.at("dx").get<int>();
    seq.truth.dy = e.at("dy").get<int>();
    seq.truth.cx = e.at("cx").get<double>();
    seq.truth.cy = e.at("cy").get<double>();
    seq.truth.theta0 = e.at("theta0").get<double>();

    const auto* p = bytes.data();
    for (int t = 0; t < T; ++t) {
      Tensor<double> frame({1, s, s});
      for (int64_t i = 0; i < int64_t(s) * s; ++i) {
        float f;
        std::memcpy(&f, p, 4);
        p += 4;
        frame[i] = double(f);
      }
      seq.frames.push_back(std::move(frame));
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

// ---- metrics ----

void append_metrics(const std::string& path, const MetricsRecord& rec) {
  json j;
  j["step"] = rec.step;
  j["phase"] = rec.phase;
  j["recon"] = rec.losses.recon;
  j["recon2"] = rec.losses.recon2;
  j["homo"] = rec.losses.homo;
  j["ssl"] = rec.losses.ssl;
  j["trans"] = rec.losses.trans;
  j["c_norm"] = rec.losses.c_norm;
  j["total"] = rec.losses.total;
  std::ofstream out(path, std::ios::app);
  if (!out) throw FormatError("cannot append to " + path);
  out << j.dump() << "\n";
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path);
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    MetricsRecord r;
    r.step = j.at("step").get<int64_t>();
    r.phase = j.at("phase").get<std::string>();
    r.losses.recon = j.at("recon").get<double>();
    r.losses.recon2 = j.at("recon2").get<double>();
    r.losses.homo = j.at("homo").get<double>();
    r.losses.ssl = j.at("ssl").get<double>();
    r.losses.trans = j.at("trans").get<double>();
    r.losses.c_norm = j.at("c_norm").get<double>();
    r.losses.total = j.at("total").get<double>();
    out.push_back(std::move(r));
  }
  return out;
}

// ---- checkpoints ----

namespace detail {

constexpr char kMagic[8] = {'G', 'F', 'C', 'K', 'P', 'T', '0', '1'};

void save_checkpoint_raw(const std::string& path, const CheckpointMeta& meta,
                         const std::vector<json>& entries,
                         const std::vector<unsigned char>& blob) {
  json header;
  header["format_version"] = meta.format_version;
  header["precision"] = meta.precision;
  header["step"] = meta.step;
  header["optim_step"] = meta.optim_step;
  header["phase"] = meta.phase;
  header["config"] = meta.config;
  header["tensors"] = entries;
  const std::string hs = header.dump();

  std::vector<unsigned char> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  const uint32_t hlen = uint32_t(hs.size());
  const auto* hp = reinterpret_cast<const unsigned char*>(&hlen);
  out.insert(out.end(), hp, hp + 4);
  out.insert(out.end(), hs.begin(), hs.end());
  out.insert(out.end(), blob.begin(), blob.end());
  atomic_write(path, out.data(), out.size());
}

std::pair<json, std::vector<unsigned char>> load_checkpoint_raw(const std::string& path) {
  const auto buf = read_file(path);
  if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 8) != 0)
    throw FormatError(path + " is not a checkpoint file");
  uint32_t hlen;
  std::memcpy(&hlen, buf.data() + 8, 4);
  if (buf.size() < 12 + size_t(hlen)) throw FormatError(path + " is truncated");
  json header = json::parse(buf.begin() + 12, buf.begin() + 12 + hlen);
  if (header.at("format_version").get<int>() != 1)
    throw FormatError("unsupported checkpoint format_version " +
                      std::to_string(header.at("format_version").get<int>()));
  std::vector<unsigned char> blob(buf.begin() + 12 + hlen, buf.end());
  return {std::move(header), std::move(blob)};
}

}  // namespace detail

}  // namespace groupflow
