#include "aether/checkpoint.hpp"

#include <cstring>
#include <unordered_map>

#include "aether/binio.hpp"
#include "aether/error.hpp"

namespace aether {

namespace {
constexpr char kMagic[4] = {'A', 'E', 'T', 'H'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_checkpoint(const std::vector<NamedTensor>& tensors, const std::string& path) {
  binio::Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw ValidationError("tensor name too long: " + t.name);
    if (t.dims.size() > 0xFF) throw ValidationError("tensor rank too large: " + t.name);
    std::size_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.values.size()) throw ValidationError("tensor " + t.name + ": dims do not match payload size");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.put<std::uint32_t>(d);
    w.put_bytes(t.values.data(), t.values.size() * sizeof(float));
  }
  w.save(path);
}

std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  using Kind = FormatError::Kind;
  auto r = binio::Reader::from_file(path);
  if (!r.has(4) || r.get_string(4) != std::string_view(kMagic, 4)) {
    throw FormatError(Kind::BadMagic, path + ": not an AETH1 checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw FormatError(Kind::UnsupportedVersion, path + ": unsupported AETH version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    const auto name_len = r.get<std::uint16_t>(Kind::TruncatedPayload);
    t.name = r.get_string(name_len, Kind::TruncatedPayload);
    const auto rank = r.get<std::uint8_t>(Kind::TruncatedPayload);
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.get<std::uint32_t>(Kind::TruncatedPayload));
      n *= t.dims.back();
    }
    t.values.resize(n);
    std::memcpy(t.values.data(), r.take(n * sizeof(float), Kind::TruncatedPayload), n * sizeof(float));
    tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError(Kind::MalformedHeader, path + ": trailing bytes after last tensor");
  return tensors;
}

std::vector<NamedTensor> checkpoint_tensors(const nn::AlignmentModel& model, const CheckpointMeta& meta) {
  nn::AlignmentModel copy = model;
  std::vector<NamedTensor> out;
  for (const auto& p : copy.parameters()) {
    NamedTensor t{p.name, p.dims, {}};
    t.values.resize(p.size);
    for (std::size_t i = 0; i < p.size; ++i) t.values[i] = static_cast<float>(p.data[i]);
    out.push_back(std::move(t));
  }
  out.push_back(NamedTensor{"meta_radii", {2}, {static_cast<float>(meta.r_b), static_cast<float>(meta.r_a)}});
  return out;
}

LoadedCheckpoint model_from_checkpoint(const std::vector<NamedTensor>& tensors, const std::string& source) {
  using Kind = FormatError::Kind;
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto get = [&](const std::string& name) -> const NamedTensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(Kind::InvalidData, source + ": checkpoint lacks tensor '" + name + "'");
    return *it->second;
  };
  const auto& w_in = get("w_in");
  const auto& w_out = get("w_out");
  const auto& poi_w = get("poi_w");
  if (w_in.dims.size() != 2 || w_out.dims.size() != 2 || poi_w.dims.size() != 2) {
    throw FormatError(Kind::InvalidData, source + ": weight tensors must be rank 2");
  }
  LoadedCheckpoint out;
  out.model.head = nn::AeProjectionHead::zeros(w_in.dims[1], w_in.dims[0], w_out.dims[0]);
  out.model.poi.w = nn::Matrix::Zero(poi_w.dims[0], poi_w.dims[1]);
  for (auto& p : out.model.parameters()) {
    const auto& t = get(p.name);
    if (t.dims != p.dims) throw FormatError(Kind::InvalidData, source + ": shape mismatch for tensor '" + p.name + "'");
    for (std::size_t i = 0; i < p.size; ++i) p.data[i] = static_cast<double>(t.values[i]);
  }
  if (auto it = by_name.find("meta_radii"); it != by_name.end() && it->second->values.size() == 2) {
    out.meta.r_b = it->second->values[0];
    out.meta.r_a = it->second->values[1];
  }
  out.model.head.validate();
  return out;
}

LoadedCheckpoint load_model(const std::string& path) { return model_from_checkpoint(read_checkpoint(path), path); }

void save_model(const nn::AlignmentModel& model, const CheckpointMeta& meta, const std::string& path) {
  write_checkpoint(checkpoint_tensors(model, meta), path);
}

}  // namespace aether
