#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aether {

struct PoiRecord {
  std::uint64_t id = 0;
  double x = 0.0;
  double y = 0.0;
  std::string name;
  std::string category_l1;
  std::string category_l2;

  friend bool operator==(const PoiRecord&, const PoiRecord&) = default;
};

struct TextEmbedding {
  std::uint64_t poi_id = 0;
  std::vector<float> vector;
};

/// "A place of {l2}, a type of {l1}, named {name}." Inputs are substituted
/// verbatim apart from surrounding whitespace.
std::string render_description(const PoiRecord& record);

/// Reads a POI CSV with header columns id,x,y,name,cat1,cat2 (RFC 4180).
/// Fields are whitespace-trimmed. Throws FormatError with row numbers on a
/// missing column, bad number, empty name/category or duplicate id.
std::vector<PoiRecord> load_pois(const std::string& path);
std::vector<PoiRecord> parse_pois(std::string_view text, const std::string& source);
void save_pois(const std::vector<PoiRecord>& pois, const std::string& path);

struct LoadedTextEmbeddings {
  std::vector<TextEmbedding> embeddings;  // aligned with the POI list
  std::size_t dim = 0;
  std::size_t ignored = 0;  // vectors whose id is not in the POI list
};

/// Reads a TEV1 file and aligns its vectors to `pois`. Throws FormatError on a
/// missing id, duplicate id or non-finite entry.
LoadedTextEmbeddings load_text_embeddings(const std::string& path, std::span<const PoiRecord> pois);
void save_text_embeddings(std::span<const TextEmbedding> embeddings, const std::string& path);

/// Lowercased tokens split on whitespace and ASCII punctuation.
std::vector<std::string> tokenize(std::string_view text);

/// Deterministic hashed-token embedding of dimension `dim` (>= 8): the sum of
/// per-token standard-normal vectors (generator keyed by the token's FNV-1a
/// hash), L2-normalized. Throws ValidationError when no tokens remain.
std::vector<float> fallback_embed(std::string_view description, std::size_t dim);

}  // namespace aether
