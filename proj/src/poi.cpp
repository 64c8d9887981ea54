#include "aether/poi.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include "aether/binio.hpp"
#include "aether/common.hpp"
#include "aether/csv.hpp"
#include "aether/error.hpp"
#include "aether/rng.hpp"

namespace aether {

std::string render_description(const PoiRecord& record) {
  return "A place of " + trim(record.category_l2) + ", a type of " + trim(record.category_l1) + ", named " +
         trim(record.name) + ".";
}

namespace {

std::string row_label(const std::string& source, std::size_t line) {
  return source + ": row " + std::to_string(line);
}

std::uint64_t parse_id(const std::string& s, const std::string& where) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) {
    throw FormatError(FormatError::Kind::InvalidData, where + ": unparseable id '" + s + "'");
  }
  return v;
}

double parse_coord(const std::string& s, const char* column, const std::string& where) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty() || !std::isfinite(v)) {
    throw FormatError(FormatError::Kind::InvalidData,
                      where + ": unparseable coordinate " + column + " = '" + s + "'");
  }
  return v;
}

}  // namespace

std::vector<PoiRecord> parse_pois(std::string_view text, const std::string& source) {
  const auto records = csv::parse(text, source);
  if (records.empty()) throw FormatError(FormatError::Kind::MalformedHeader, source + ": empty POI file");
  const csv::Header header(records.front());
  const std::size_t c_id = header.require("id", source);
  const std::size_t c_x = header.require("x", source);
  const std::size_t c_y = header.require("y", source);
  const std::size_t c_name = header.require("name", source);
  const std::size_t c_cat1 = header.require("cat1", source);
  const std::size_t c_cat2 = header.require("cat2", source);

  std::vector<PoiRecord> pois;
  pois.reserve(records.size() - 1);
  std::unordered_map<std::uint64_t, std::size_t> seen;  // id -> row
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::string where = row_label(source, rec.line);
    if (rec.fields.size() != header.size()) {
      throw FormatError(FormatError::Kind::InvalidData, where + ": expected " + std::to_string(header.size()) +
                                                            " fields, found " + std::to_string(rec.fields.size()));
    }
    PoiRecord p;
    p.id = parse_id(trim(rec.fields[c_id]), where);
    p.x = parse_coord(trim(rec.fields[c_x]), "x", where);
    p.y = parse_coord(trim(rec.fields[c_y]), "y", where);
    p.name = trim(rec.fields[c_name]);
    p.category_l1 = trim(rec.fields[c_cat1]);
    p.category_l2 = trim(rec.fields[c_cat2]);
    if (p.name.empty()) throw FormatError(FormatError::Kind::InvalidData, where + ": empty name");
    if (p.category_l1.empty()) throw FormatError(FormatError::Kind::InvalidData, where + ": empty cat1");
    if (p.category_l2.empty()) throw FormatError(FormatError::Kind::InvalidData, where + ": empty cat2");
    auto [it, inserted] = seen.emplace(p.id, rec.line);
    if (!inserted) {
      throw FormatError(FormatError::Kind::InvalidData, source + ": duplicate id " + std::to_string(p.id) +
                                                            " at rows " + std::to_string(it->second) + " and " +
                                                            std::to_string(rec.line));
    }
    pois.push_back(std::move(p));
  }
  return pois;
}

std::vector<PoiRecord> load_pois(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_pois(text, path);
}

void save_pois(const std::vector<PoiRecord>& pois, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "id,x,y,name,cat1,cat2\n";
  for (const auto& p : pois) {
    out << csv::join_row({std::to_string(p.id), format_double(p.x), format_double(p.y), p.name, p.category_l1,
                          p.category_l2})
        << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------- TEV1

namespace {
constexpr char kTevMagic[4] = {'T', 'E', 'V', '1'};
}

LoadedTextEmbeddings load_text_embeddings(const std::string& path, std::span<const PoiRecord> pois) {
  using Kind = FormatError::Kind;
  auto r = binio::Reader::from_file(path);
  if (!r.has(4) || r.get_string(4) != std::string_view(kTevMagic, 4)) {
    throw FormatError(Kind::BadMagic, path + ": not a TEV1 file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != 1) throw FormatError(Kind::UnsupportedVersion, path + ": unsupported TEV1 version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  const auto dim = r.get<std::uint32_t>();
  if (dim == 0) throw FormatError(Kind::MalformedHeader, path + ": dim must be >= 1");
  const std::size_t record_bytes = sizeof(std::uint64_t) + static_cast<std::size_t>(dim) * sizeof(float);
  if (r.remaining() < static_cast<std::size_t>(count) * record_bytes) {
    throw FormatError(Kind::TruncatedPayload, path + ": payload truncated");
  }
  if (r.remaining() > static_cast<std::size_t>(count) * record_bytes) {
    throw FormatError(Kind::MalformedHeader, path + ": trailing bytes after payload");
  }

  std::unordered_map<std::uint64_t, std::size_t> wanted;  // id -> index in pois
  wanted.reserve(pois.size());
  for (std::size_t i = 0; i < pois.size(); ++i) wanted.emplace(pois[i].id, i);

  LoadedTextEmbeddings out;
  out.dim = dim;
  out.embeddings.resize(pois.size());
  std::vector<char> filled(pois.size(), 0);
  std::unordered_map<std::uint64_t, char> file_ids;
  file_ids.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto id = r.get<std::uint64_t>(Kind::TruncatedPayload);
    std::vector<float> v(dim);
    std::memcpy(v.data(), r.take(dim * sizeof(float), Kind::TruncatedPayload), dim * sizeof(float));
    if (!file_ids.emplace(id, 1).second) {
      throw FormatError(Kind::InvalidData, path + ": duplicate vector for poi id " + std::to_string(id));
    }
    for (float x : v) {
      if (!std::isfinite(x)) {
        throw FormatError(Kind::InvalidData, path + ": non-finite entry in vector for poi id " + std::to_string(id));
      }
    }
    auto it = wanted.find(id);
    if (it == wanted.end()) {
      ++out.ignored;
      continue;
    }
    out.embeddings[it->second] = TextEmbedding{id, std::move(v)};
    filled[it->second] = 1;
  }
  for (std::size_t i = 0; i < pois.size(); ++i) {
    if (!filled[i]) {
      throw FormatError(Kind::InvalidData, path + ": missing text embedding for poi id " + std::to_string(pois[i].id));
    }
  }
  if (out.ignored > 0) log_info(path, ": ignored ", out.ignored, " text embeddings with no matching POI");
  return out;
}

void save_text_embeddings(std::span<const TextEmbedding> embeddings, const std::string& path) {
  const std::size_t dim = embeddings.empty() ? 0 : embeddings.front().vector.size();
  binio::Writer w;
  w.reserve(16 + embeddings.size() * (8 + dim * 4));
  w.put_bytes(kTevMagic, 4);
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(embeddings.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dim));
  for (const auto& e : embeddings) {
    if (e.vector.size() != dim) throw ValidationError("text embeddings must share one dimension");
    w.put<std::uint64_t>(e.poi_id);
    w.put_bytes(e.vector.data(), dim * sizeof(float));
  }
  w.save(path);
}

// ---------------------------------------------------------------- fallback embedder

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    const bool separator = std::isspace(c) || (c < 0x80 && std::ispunct(c));
    if (separator) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::vector<float> fallback_embed(std::string_view description, std::size_t dim) {
  if (dim < 8) throw ValidationError("fallback_embed: dimension must be >= 8 (got " + std::to_string(dim) + ")");
  const auto tokens = tokenize(description);
  if (tokens.empty()) throw ValidationError("fallback_embed: no tokens in description '" + std::string(description) + "'");
  std::vector<double> acc(dim, 0.0);
  for (const auto& tok : tokens) {
    CounterRng rng(fnv1a64(tok));
    for (std::size_t i = 0; i < dim; ++i) acc[i] += rng.normal();
  }
  double norm2 = 0.0;
  for (double v : acc) norm2 += v * v;
  const double inv = 1.0 / std::sqrt(norm2);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i] * inv);
  return out;
}

}  // namespace aether
