// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "gpsd/transfer.hpp"

namespace gpsd {

namespace {

constexpr char kMagic[4] = {'G', 'P', 'S', 'D'};
constexpr std::string_view kConfigRecord = "meta.config";

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
  }
  throw CheckpointError("unknown dtype tag");
}

template <typename UInt>
void put(std::vector<std::uint8_t>& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename UInt>
  UInt get() {
    need(sizeof(UInt));
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      v |= static_cast<UInt>(static_cast<UInt>(bytes_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(UInt);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("truncated checkpoint");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

template <typename Real>
void append_values(std::vector<std::uint8_t>& out, const std::vector<Real>& values) {
  using Bits = std::conditional_t<sizeof(Real) == 4, std::uint32_t, std::uint64_t>;
  out.reserve(out.size() + values.size() * sizeof(Real));
  for (Real v : values) put(out, std::bit_cast<Bits>(v));
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::size_t to_size(std::string_view s, std::string_view key) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw CheckpointError("bad value for " + std::string(key) + ": '" + std::string(s) + "'");
  }
  return v;
}

double to_double(std::string_view s, std::string_view key) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw CheckpointError("bad value for " + std::string(key) + ": '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::size_t CheckpointRecord::elements() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<double> CheckpointRecord::as_double() const {
  std::vector<double> out(elements());
  Reader r(payload);
  switch (dtype) {
    case DType::kF32:
      for (auto& v : out) v = std::bit_cast<float>(r.get<std::uint32_t>());
      break;
    case DType::kF64:
      for (auto& v : out) v = std::bit_cast<double>(r.get<std::uint64_t>());
      break;
    default:
      throw CheckpointError("record '" + name + "' is not floating point");
  }
  return out;
}

std::string serialize_config(const ModelConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "code=" << c.code().str() << '\n';
  os << "ffn_dim=" << c.resolved_ffn_dim() << '\n';
  os << "fields=";
  for (std::size_t i = 0; i < c.fields.size(); ++i) {
    os << (i ? "," : "") << c.fields[i].name << ':' << c.fields[i].size;
  }
  os << '\n';
  os << "max_seq_len=" << c.max_seq_len << '\n';
  os << "direction=" << direction_name(c.direction) << '\n';
  os << "head_hidden=" << join(c.resolved_head_hidden()) << '\n';
  os << "extra_features=" << c.extra_features << '\n';
  os << "segments=" << c.segments << '\n';
  os << "norm_eps=" << c.norm_eps << '\n';
  os << "rope_base=" << c.rope_base << '\n';
  return os.str();
}

ModelConfig parse_config_text(std::string_view text) {
  ModelConfig c;
  bool have_code = false, have_fields = false;
  for (auto line : split(text, '\n')) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw CheckpointError("bad config line in checkpoint");
    auto key = line.substr(0, eq);
    auto val = line.substr(eq + 1);
    if (key == "code") {
      auto code = parse_model_code(val);
      c.layers = code.layers;
      c.hidden = code.hidden;
      c.heads = code.heads;
      have_code = true;
    } else if (key == "ffn_dim") {
      c.ffn_dim = to_size(val, key);
    } else if (key == "fields") {
      c.fields.clear();
      for (auto f : split(val, ',')) {
        auto colon = f.rfind(':');
        if (colon == std::string_view::npos) throw CheckpointError("bad field entry in checkpoint");
        c.fields.push_back({std::string(f.substr(0, colon)), to_size(f.substr(colon + 1), key)});
      }
      have_fields = true;
    } else if (key == "max_seq_len") {
      c.max_seq_len = to_size(val, key);
    } else if (key == "direction") {
      c.direction = parse_direction(val);
    } else if (key == "head_hidden") {
      c.head_hidden.clear();
      for (auto h : split(val, ',')) c.head_hidden.push_back(to_size(h, key));
    } else if (key == "extra_features") {
      c.extra_features = to_size(val, key);
    } else if (key == "segments") {
      c.segments = to_size(val, key);
    } else if (key == "norm_eps") {
      c.norm_eps = to_double(val, key);
    } else if (key == "rope_base") {
      c.rope_base = to_double(val, key);
    } else {
      throw CheckpointError("unknown config key in checkpoint: " + std::string(key));
    }
  }
  if (!have_code || !have_fields) throw CheckpointError("checkpoint config lacks code or fields");
  c.validate();
  return c;
}

template <typename Real>
Checkpoint Checkpoint::from_model(const Transformer<Real>& model) {
  Checkpoint ck;
  ck.config = model.config();
  for (const auto& p : model.params().params()) {
    CheckpointRecord r;
    r.name = p.name;
    r.partition = static_cast<std::uint8_t>(p.partition);
    r.dtype = sizeof(Real) == 4 ? DType::kF32 : DType::kF64;
    for (auto d : p.shape) r.dims.push_back(static_cast<std::uint32_t>(d));
    append_values(r.payload, p.value);
    ck.records.push_back(std::move(r));
  }
  return ck;
}

const CheckpointRecord* Checkpoint::find(std::string_view name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

const CheckpointRecord& Checkpoint::at(std::string_view name) const {
  if (auto* r = find(name)) return *r;
  throw CheckpointError("checkpoint has no tensor '" + std::string(name) + "'");
}

std::size_t Checkpoint::element_count(Partition partition) const {
  std::size_t n = 0;
  for (const auto& r : records) {
    if (r.partition == static_cast<std::uint8_t>(partition)) n += r.elements();
  }
  return n;
}

std::vector<SparseTableInfo> Checkpoint::sparse_tables() const {
  std::vector<SparseTableInfo> out;
  for (const auto& r : records) {
    if (r.partition != static_cast<std::uint8_t>(Partition::kSparse)) continue;
    if (r.name.rfind("emb.", 0) != 0 || r.dims.size() != 2) {
      throw CheckpointError("malformed sparse record '" + r.name + "'");
    }
    out.push_back({r.name.substr(4), r.dims[0], r.dims[1]});
  }
  return out;
}

std::vector<std::uint8_t> Checkpoint::encode() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size() + 1));
  auto write_record = [&](const CheckpointRecord& r) {
    if (r.name.size() > 0xffff) throw CheckpointError("tensor name too long");
    if (r.dims.size() > 0xff) throw CheckpointError("tensor rank too large");
    if (r.payload.size() != r.elements() * dtype_size(r.dtype)) {
      throw CheckpointError("payload size mismatch for '" + r.name + "'");
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(r.partition);
    out.push_back(static_cast<std::uint8_t>(r.dtype));
    out.push_back(static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) put<std::uint32_t>(out, d);
    out.insert(out.end(), r.payload.begin(), r.payload.end());
  };
  CheckpointRecord meta;
  meta.name = std::string(kConfigRecord);
  meta.partition = kMetaPartition;
  meta.dtype = DType::kU8;
  const auto text = serialize_config(config);
  meta.dims = {static_cast<std::uint32_t>(text.size())};
  meta.payload.assign(text.begin(), text.end());
  write_record(meta);
  for (const auto& r : records) write_record(r);
  const auto crc = crc32(0L, out.data(), static_cast<uInt>(out.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(crc));
  return out;
}

Checkpoint Checkpoint::decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw CheckpointError("file too short to be a checkpoint");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("bad magic bytes");
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  const auto stored = tail.get<std::uint32_t>();
  const auto actual =
      static_cast<std::uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size())));
  if (stored != actual) throw CheckpointError("checksum mismatch");

  Reader r(body.subspan(4));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  Checkpoint ck;
  bool have_config = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    const auto len = r.get<std::uint16_t>();
    auto name = r.take(len);
    rec.name.assign(name.begin(), name.end());
    rec.partition = r.get<std::uint8_t>();
    if (rec.partition > kMetaPartition) throw CheckpointError("unknown partition tag");
    rec.dtype = static_cast<DType>(r.get<std::uint8_t>());
    const std::size_t width = dtype_size(rec.dtype);
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t d = 0; d < rank; ++d) rec.dims.push_back(r.get<std::uint32_t>());
    auto payload = r.take(rec.elements() * width);
    rec.payload.assign(payload.begin(), payload.end());
    if (rec.partition == kMetaPartition) {
      if (rec.name == kConfigRecord) {
        ck.config = parse_config_text(
            std::string_view(reinterpret_cast<const char*>(rec.payload.data()), rec.payload.size()));
        have_config = true;
      }
      continue;
    }
    ck.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after records");
  if (!have_config) throw CheckpointError("checkpoint lacks model configuration");

  // Every declared table present with the declared shape.
  for (const auto& f : ck.config.fields) {
    const auto* t = ck.find("emb." + f.name);
    if (!t || t->dims.size() != 2 || t->dims[0] != f.size || t->dims[1] != ck.config.hidden) {
      throw CheckpointError("sparse table for field '" + f.name + "' missing or misshapen");
    }
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = ckpt.encode();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return Checkpoint::decode(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

template <typename Real>
void load_parameter(const CheckpointRecord& record, Parameter<Real>& param) {
  if (record.dims.size() != param.shape.size() ||
      !std::equal(record.dims.begin(), record.dims.end(), param.shape.begin())) {
    throw TransferError("shape mismatch for '" + param.name + "': checkpoint has " +
                        shape_str(Shape(record.dims.begin(), record.dims.end())) +
                        ", model has " + shape_str(param.shape));
  }
  const DType own = sizeof(Real) == 4 ? DType::kF32 : DType::kF64;
  if (record.dtype == own) {
    std::memcpy(param.value.data(), record.payload.data(), record.payload.size());
    if constexpr (std::endian::native == std::endian::big) {
      auto values = record.as_double();
      for (std::size_t i = 0; i < values.size(); ++i) param.value[i] = static_cast<Real>(values[i]);
    }
    return;
  }
  auto values = record.as_double();
  for (std::size_t i = 0; i < values.size(); ++i) param.value[i] = static_cast<Real>(values[i]);
}

template Checkpoint Checkpoint::from_model(const Transformer<float>&);
template Checkpoint Checkpoint::from_model(const Transformer<double>&);
template void load_parameter(const CheckpointRecord&, Parameter<float>&);
template void load_parameter(const CheckpointRecord&, Parameter<double>&);

}  // namespace gpsd
