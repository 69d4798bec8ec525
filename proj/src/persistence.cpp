#include "cssloc/persistence.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cssloc/errors.hpp"

namespace cssloc::io {

static_assert(sizeof(float) == 4);

namespace {

template <typename U>
U byteswap_if_big(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
    std::memcpy(&v, b, sizeof(U));
    return v;
  }
}

template <typename V>
void put_le(std::string& out, V value) {
  using Bits = std::conditional_t<sizeof(V) == 4, std::uint32_t, std::uint64_t>;
  Bits bits;
  std::memcpy(&bits, &value, sizeof(V));
  bits = byteswap_if_big(bits);
  out.append(reinterpret_cast<const char*>(&bits), sizeof(V));
}

template <typename V>
V get_le(std::string_view in, std::size_t offset) {
  using Bits = std::conditional_t<sizeof(V) == 4, std::uint32_t, std::uint64_t>;
  Bits bits;
  std::memcpy(&bits, in.data() + offset, sizeof(V));
  bits = byteswap_if_big(bits);
  V value;
  std::memcpy(&value, &bits, sizeof(V));
  return value;
}

std::string frame(std::string_view magic, const nlohmann::json& header, const std::string& payload) {
  const std::string h = header.dump();
  std::string out;
  out.reserve(magic.size() + 8 + h.size() + payload.size());
  out.append(magic);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.size()));
  put_le<std::uint32_t>(out, crc32(h));
  out.append(h);
  out.append(payload);
  return out;
}

struct Framed {
  nlohmann::json header;
  std::string_view payload;
  std::size_t payload_offset = 0;
};

Framed unframe(std::string_view bytes, std::string_view magic) {
  if (bytes.size() < magic.size() + 8) throw FormatError("file too short for a container header", bytes.size());
  if (bytes.substr(0, magic.size()) != magic)
    throw FormatError("bad magic: expected '" + std::string(magic) + "'", 0);
  const auto hlen = get_le<std::uint32_t>(bytes, magic.size());
  const auto hcrc = get_le<std::uint32_t>(bytes, magic.size() + 4);
  const std::size_t hstart = magic.size() + 8;
  if (hstart + hlen > bytes.size()) throw FormatError("truncated JSON header", bytes.size());
  if (crc32(bytes.substr(hstart, hlen)) != hcrc) throw ChecksumError("header CRC-32 mismatch", hstart);
  Framed f;
  try {
    f.header = nlohmann::json::parse(bytes.substr(hstart, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed JSON header: ") + e.what(), hstart);
  }
  if (f.header.value("magic", std::string()) != magic) throw FormatError("header magic mismatch", hstart);
  f.payload_offset = hstart + hlen;
  f.payload = bytes.substr(f.payload_offset);
  return f;
}

void check_payload(const Framed& f, std::size_t expected) {
  std::size_t declared = 0;
  std::uint32_t crc = 0;
  try {
    declared = f.header.at("payload_bytes").get<std::size_t>();
    crc = f.header.at("crc32").get<std::uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("header lacks payload description: ") + e.what(), f.payload_offset);
  }
  if (declared != expected)
    throw FormatError("header payload size " + std::to_string(declared) + " disagrees with shape (" +
                          std::to_string(expected) + ")",
                      f.payload_offset);
  if (f.payload.size() < expected)
    throw FormatError("truncated payload: " + std::to_string(f.payload.size()) + " of " + std::to_string(expected) +
                          " bytes",
                      f.payload_offset + f.payload.size());
  if (f.payload.size() > expected) throw FormatError("trailing bytes after payload", f.payload_offset + expected);
  if (crc32(f.payload) != crc) throw ChecksumError("payload CRC-32 mismatch", f.payload_offset);
}

}  // namespace

std::uint32_t crc32(std::string_view bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    c = ::crc32(c, reinterpret_cast<const Bytef*>(bytes.data() + off), n);
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

std::string encode_dataset(const DatasetFile& ds) {
  const auto& map = ds.map;
  validate(map);
  const int rows = map.entries.empty() ? 30 : map.entries.front().image.rows;
  const int cols = map.entries.empty() ? 30 : map.entries.front().image.cols;
  std::string payload;
  payload.reserve(map.entries.size() * (static_cast<std::size_t>(rows * cols) + 1) * 4);
  for (const auto& e : map.entries) {
    if (e.image.rows != rows || e.image.cols != cols) throw ShapeError("dataset images must share one shape");
    if (e.image.scenario_id != map.scenario_id) throw ShapeError("dataset images must share the map's scenario id");
    for (float p : e.image.pixels) put_le<float>(payload, p);
  }
  for (const auto& e : map.entries) put_le<std::int32_t>(payload, e.label);

  nlohmann::json h;
  h["magic"] = kDatasetMagic;
  h["kind"] = map.kind == MapKind::queries ? "queries" : "radio_map";
  h["scenario_id"] = map.scenario_id;
  h["shape"] = {map.entries.size(), rows, cols};
  h["norm_stats"] = {{"mean", ds.stats.mean}, {"std", ds.stats.std}};
  auto coords = nlohmann::json::array();
  for (auto p : map.coords) coords.push_back({p.x, p.y});
  h["coords"] = coords;
  h["source_rp"] = map.source_rp;
  h["image_rp_index"] = nlohmann::json::array();
  bool rp_matches = true;
  for (const auto& e : map.entries)
    rp_matches = rp_matches && e.image.rp_index == map.source_rp[static_cast<std::size_t>(e.label)];
  if (!rp_matches)
    for (const auto& e : map.entries) h["image_rp_index"].push_back(e.image.rp_index);
  h["image_bytes"] = map.entries.size() * static_cast<std::size_t>(rows * cols) * 4;
  h["payload_bytes"] = payload.size();
  h["crc32"] = crc32(payload);
  h["meta"] = ds.meta;
  return frame(kDatasetMagic, h, payload);
}

DatasetFile decode_dataset(std::string_view bytes) {
  const auto f = unframe(bytes, kDatasetMagic);
  DatasetFile ds;
  std::size_t n = 0, rows = 0, cols = 0;
  try {
    const auto& h = f.header;
    const auto shape = h.at("shape");
    n = shape.at(0).get<std::size_t>();
    rows = shape.at(1).get<std::size_t>();
    cols = shape.at(2).get<std::size_t>();
    ds.map.kind = h.at("kind").get<std::string>() == "queries" ? MapKind::queries : MapKind::radio_map;
    ds.map.scenario_id = h.at("scenario_id").get<std::string>();
    for (const auto& c : h.at("coords")) ds.map.coords.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    ds.map.source_rp = h.at("source_rp").get<std::vector<int>>();
    ds.stats.mean = h.at("norm_stats").at("mean").get<double>();
    ds.stats.std = h.at("norm_stats").at("std").get<double>();
    ds.meta = h.value("meta", nlohmann::json::object());
    if (h.at("image_bytes").get<std::size_t>() != n * rows * cols * 4)
      throw FormatError("image byte count disagrees with shape", f.payload_offset);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset header: ") + e.what(), 9);
  }
  check_payload(f, n * rows * cols * 4 + n * 4);
  if (ds.map.source_rp.size() != ds.map.coords.size())
    throw FormatError("source_rp/coords length mismatch", f.payload_offset);
  std::vector<int> image_rp;
  if (f.header.contains("image_rp_index") && !f.header["image_rp_index"].empty())
    image_rp = f.header["image_rp_index"].get<std::vector<int>>();

  ds.map.entries.resize(n);
  const std::size_t px = rows * cols;
  for (std::size_t i = 0; i < n; ++i) {
    auto& e = ds.map.entries[i];
    e.image.rows = static_cast<int>(rows);
    e.image.cols = static_cast<int>(cols);
    e.image.scenario_id = ds.map.scenario_id;
    e.image.pixels.resize(px);
    for (std::size_t p = 0; p < px; ++p) e.image.pixels[p] = get_le<float>(f.payload, (i * px + p) * 4);
    e.label = get_le<std::int32_t>(f.payload, n * px * 4 + i * 4);
    if (e.label < 0 || e.label >= ds.map.rp_count())
      throw FormatError("label out of range", f.payload_offset + n * px * 4 + i * 4);
    e.image.rp_index = image_rp.empty() ? ds.map.source_rp[static_cast<std::size_t>(e.label)] : image_rp.at(i);
  }
  try {
    validate(ds.map);
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), f.payload_offset);
  }
  return ds;
}

std::string encode_checkpoint(const Checkpoint& ck) {
  std::string payload;
  auto manifest = nlohmann::json::array();
  for (const auto& [name, t] : ck.params) {
    const std::size_t offset = payload.size();
    for (float v : t.data()) put_le<float>(payload, v);
    manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"bytes", t.size() * 4}});
  }
  nlohmann::json h;
  h["magic"] = kCheckpointMagic;
  h["architecture"] = ck.architecture;
  h["manifest"] = manifest;
  h["config"] = ck.config;
  h["epoch"] = ck.epoch;
  h["extra"] = ck.extra;
  h["payload_bytes"] = payload.size();
  h["crc32"] = crc32(payload);
  return frame(kCheckpointMagic, h, payload);
}

Checkpoint decode_checkpoint(std::string_view bytes, std::optional<std::string> expected_architecture) {
  const auto f = unframe(bytes, kCheckpointMagic);
  Checkpoint ck;
  nlohmann::json manifest;
  try {
    ck.architecture = f.header.at("architecture").get<std::string>();
    manifest = f.header.at("manifest");
    ck.config = f.header.value("config", nlohmann::json::object());
    ck.epoch = f.header.value("epoch", 0);
    ck.extra = f.header.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what(), 9);
  }
  if (expected_architecture && ck.architecture != *expected_architecture)
    throw ArchitectureMismatch("checkpoint architecture '" + ck.architecture + "' where '" + *expected_architecture +
                                   "' was expected",
                               9);
  // manifest must tile the payload exactly, in order
  std::size_t cursor = 0;
  for (const auto& m : manifest) {
    try {
      const auto offset = m.at("offset").get<std::size_t>();
      const auto nbytes = m.at("bytes").get<std::size_t>();
      const auto shape = m.at("shape").get<Shape>();
      if (offset != cursor) throw FormatError("manifest entries overlap or leave gaps", f.payload_offset + offset);
      if (nbytes != shape_size(shape) * 4)
        throw FormatError("manifest byte count disagrees with shape", f.payload_offset + offset);
      cursor += nbytes;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("checkpoint manifest: ") + e.what(), 9);
    }
  }
  check_payload(f, cursor);
  for (const auto& m : manifest) {
    const auto offset = m["offset"].get<std::size_t>();
    Tensor<float> t(m["shape"].get<Shape>());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_le<float>(f.payload, offset + i * 4);
    ck.params.emplace_back(m["name"].get<std::string>(), std::move(t));
  }
  return ck;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

void write_dataset(const std::filesystem::path& path, const DatasetFile& ds) { atomic_write(path, encode_dataset(ds)); }

DatasetFile read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  atomic_write(path, encode_checkpoint(ck));
}

Checkpoint read_checkpoint(const std::filesystem::path& path, std::optional<std::string> expected_architecture) {
  return decode_checkpoint(read_file(path), std::move(expected_architecture));
}

std::string sniff_magic(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  char buf[5] = {};
  if (!in.read(buf, 5)) return {};
  return std::string(buf, 5);
}

std::string encoder_architecture(bool projection) {
  return projection ? "cssloc-encoder/c1x4-c4x4-p2p3/proj100-32" : "cssloc-encoder/c1x4-c4x4-p2p3/noproj";
}

std::string predictor_architecture(bool linear_probe) {
  return linear_probe ? "cssloc-predictor/linear100" : "cssloc-predictor/mlp100-32";
}

namespace {

void load_named(const Checkpoint& ck, const std::vector<std::string>& names, const std::vector<Tensor<float>*>& dst) {
  if (ck.params.size() != names.size())
    throw FormatError("checkpoint holds " + std::to_string(ck.params.size()) + " tensors, expected " +
                          std::to_string(names.size()),
                      0);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (ck.params[i].first != names[i])
      throw FormatError("checkpoint tensor '" + ck.params[i].first + "' where '" + names[i] + "' expected", 0);
    if (!dst[i]->empty() && ck.params[i].second.shape() != dst[i]->shape())
      throw FormatError("checkpoint tensor '" + names[i] + "' has shape " + shape_string(ck.params[i].second.shape()),
                        0);
    *dst[i] = ck.params[i].second;
  }
}

}  // namespace

Checkpoint encoder_checkpoint(const EncoderState<float>& enc, nlohmann::json config, int epoch) {
  Checkpoint ck;
  ck.architecture = encoder_architecture(enc.projection);
  const auto names = enc.param_names();
  const auto params = enc.params();
  for (std::size_t i = 0; i < names.size(); ++i) ck.params.emplace_back(names[i], *params[i]);
  ck.config = std::move(config);
  ck.epoch = epoch;
  ck.extra = {{"norm_stats", {{"mean", enc.input_norm.mean}, {"std", enc.input_norm.std}}},
              {"role", enc.role == EncoderRole::query ? "query" : "momentum"}};
  return ck;
}

EncoderState<float> encoder_from_checkpoint(const Checkpoint& ck) {
  EncoderState<float> enc;
  if (ck.architecture == encoder_architecture(true)) {
    enc.projection = true;
  } else if (ck.architecture == encoder_architecture(false)) {
    enc.projection = false;
  } else {
    throw ArchitectureMismatch("not an encoder checkpoint: '" + ck.architecture + "'", 9);
  }
  load_named(ck, enc.param_names(), enc.params());
  try {
    enc.input_norm.mean = ck.extra.at("norm_stats").at("mean").get<double>();
    enc.input_norm.std = ck.extra.at("norm_stats").at("std").get<double>();
    enc.role = ck.extra.value("role", std::string("query")) == "momentum" ? EncoderRole::momentum : EncoderRole::query;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("encoder checkpoint extra: ") + e.what(), 9);
  }
  return enc;
}

Checkpoint predictor_checkpoint(const PredictorState& pred, const RadioMap& map, nlohmann::json config) {
  if (pred.rp_count() != map.rp_count()) throw ShapeError("predictor/radio map RP count mismatch");
  Checkpoint ck;
  ck.architecture = predictor_architecture(pred.linear_probe);
  const auto names = pred.param_names();
  const auto params = pred.params();
  for (std::size_t i = 0; i < names.size(); ++i) ck.params.emplace_back(names[i], *params[i]);
  ck.config = std::move(config);
  auto coords = nlohmann::json::array();
  for (auto p : map.coords) coords.push_back({p.x, p.y});
  ck.extra = {{"scenario_id", map.scenario_id}, {"coords", coords}, {"source_rp", map.source_rp}};
  return ck;
}

PredictorState predictor_from_checkpoint(const Checkpoint& ck) {
  PredictorState pred;
  if (ck.architecture == predictor_architecture(true)) {
    pred.linear_probe = true;
    pred.fc1_w = pred.fc1_b = pred.fc2_w = pred.fc2_b = Tensor<float>();
  } else if (ck.architecture != predictor_architecture(false)) {
    throw ArchitectureMismatch("not a predictor checkpoint: '" + ck.architecture + "'", 9);
  }
  load_named(ck, pred.param_names(), pred.params());
  if (pred.out_w.rank() != 2 || pred.out_b.rank() != 1 || pred.out_w.dim(0) != pred.out_b.dim(0))
    throw FormatError("predictor output layer is malformed", 0);
  return pred;
}

RadioMap predictor_radio_map(const Checkpoint& ck) {
  RadioMap map;
  try {
    map.scenario_id = ck.extra.at("scenario_id").get<std::string>();
    for (const auto& c : ck.extra.at("coords")) map.coords.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    map.source_rp = ck.extra.at("source_rp").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("predictor checkpoint lacks its RP table: ") + e.what(), 9);
  }
  return map;
}

}  // namespace cssloc::io
