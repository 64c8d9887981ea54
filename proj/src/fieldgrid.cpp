#include "aether/fieldgrid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "aether/binio.hpp"
#include "aether/common.hpp"
#include "aether/error.hpp"

namespace aether {

namespace {

constexpr char kMagic[4] = {'A', 'E', 'F', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kCanonicalNaN = 0x7FC00000u;

void validate_geometry(const GridGeometry& g, FormatError::Kind kind, const std::string& source) {
  auto fail = [&](const std::string& msg) { throw FormatError(kind, source + ": " + msg); };
  if (g.width < 1 || g.height < 1 || g.channels < 1) fail("width, height and channels must be >= 1");
  if (!std::isfinite(g.cell_size) || g.cell_size <= 0.0) fail("cell_size must be finite and > 0");
  if (!std::isfinite(g.origin_x) || !std::isfinite(g.origin_y)) fail("origin must be finite");
  const std::uint64_t cells = static_cast<std::uint64_t>(g.width) * g.height;
  if (cells > std::numeric_limits<std::size_t>::max() / sizeof(float) / g.channels) fail("raster too large");
}

}  // namespace

bool GridGeometry::same_grid(const GridGeometry& o) const {
  return width == o.width && height == o.height && origin_x == o.origin_x && origin_y == o.origin_y &&
         cell_size == o.cell_size && crs_code == o.crs_code;
}

EmbeddingField::EmbeddingField(GridGeometry geometry, std::vector<float> data)
    : geom_(geometry), data_(std::move(data)) {
  validate_geometry(geom_, FormatError::Kind::MalformedHeader, "EmbeddingField");
  const std::size_t expected = geom_.cell_count() * geom_.channels;
  if (data_.size() != expected) {
    throw FormatError(FormatError::Kind::InvalidData, "EmbeddingField: data length " + std::to_string(data_.size()) +
                                                          " != width*height*channels = " + std::to_string(expected));
  }
  nodata_.assign(geom_.cell_count(), 0);
  const std::size_t ch = geom_.channels;
  for (std::size_t cell = 0; cell < geom_.cell_count(); ++cell) {
    float* v = data_.data() + cell * ch;
    std::size_t nan_count = 0;
    for (std::size_t c = 0; c < ch; ++c) {
      if (std::isnan(v[c])) {
        ++nan_count;
      } else if (!std::isfinite(v[c])) {
        throw FormatError(FormatError::Kind::InvalidData,
                          "EmbeddingField: infinite value at cell (row " + std::to_string(cell / geom_.width) +
                              ", col " + std::to_string(cell % geom_.width) + ")");
      }
    }
    if (nan_count == ch) {
      nodata_[cell] = 1;
      const float canonical = std::bit_cast<float>(kCanonicalNaN);
      for (std::size_t c = 0; c < ch; ++c) v[c] = canonical;
    } else if (nan_count != 0) {
      throw FormatError(FormatError::Kind::InvalidData,
                        "EmbeddingField: partial NaN cell at (row " + std::to_string(cell / geom_.width) + ", col " +
                            std::to_string(cell % geom_.width) + ")");
    }
  }
}

std::optional<CellIndex> EmbeddingField::locate(double x, double y) const {
  const double col = std::floor((x - geom_.origin_x) / geom_.cell_size + 0.5);
  const double row = std::floor((geom_.origin_y - y) / geom_.cell_size + 0.5);
  if (!(col >= 0.0 && row >= 0.0 && col < geom_.width && row < geom_.height)) return std::nullopt;
  return CellIndex{static_cast<std::uint32_t>(row), static_cast<std::uint32_t>(col)};
}

namespace {

struct IndexRange {
  std::size_t lo = 1;
  std::size_t hi = 0;  // inclusive; empty when lo > hi
};

// Candidate index range for cells whose center can lie within `radius` of `rel`
// (position in cell units). One cell of slack; the exact disk test decides.
IndexRange candidate_range(double rel, double radius_cells, std::uint32_t extent) {
  const double lo = std::floor(rel - radius_cells) - 1.0;
  const double hi = std::ceil(rel + radius_cells) + 1.0;
  if (!(hi >= 0.0) || !(lo <= static_cast<double>(extent) - 1.0)) return {};
  IndexRange r;
  r.lo = lo < 0.0 ? 0 : static_cast<std::size_t>(lo);
  r.hi = hi > extent - 1.0 ? extent - 1 : static_cast<std::size_t>(hi);
  return r;
}

void check_query(const BufferQuery& q) {
  if (!(q.radius > 0.0) || !std::isfinite(q.radius)) {
    throw ValidationError("buffer radius must be finite and > 0 (got " + format_double(q.radius) + ")");
  }
  if (!std::isfinite(q.center_x) || !std::isfinite(q.center_y)) {
    throw ValidationError("buffer center must be finite");
  }
}

template <typename Visit>
void for_each_buffer_cell(const EmbeddingField& field, const BufferQuery& q, Visit&& visit) {
  check_query(q);
  const GridGeometry& g = field.geometry();
  const double radius_cells = q.radius / g.cell_size;
  const IndexRange cols = candidate_range((q.center_x - g.origin_x) / g.cell_size, radius_cells, g.width);
  const IndexRange rows = candidate_range((g.origin_y - q.center_y) / g.cell_size, radius_cells, g.height);
  if (cols.lo > cols.hi || rows.lo > rows.hi) return;
  const double r2 = q.radius * q.radius;
  for (std::size_t row = rows.lo; row <= rows.hi; ++row) {
    const double dy = g.center_y(row) - q.center_y;
    const double dy2 = dy * dy;
    if (dy2 > r2) continue;
    for (std::size_t col = cols.lo; col <= cols.hi; ++col) {
      const double dx = g.center_x(col) - q.center_x;
      if (dx * dx + dy2 <= r2 && !field.is_nodata(row, col)) visit(row, col);
    }
  }
}

}  // namespace

std::vector<CellIndex> buffer_cells(const EmbeddingField& field, const BufferQuery& query) {
  std::vector<CellIndex> cells;
  for_each_buffer_cell(field, query, [&](std::size_t row, std::size_t col) {
    cells.push_back({static_cast<std::uint32_t>(row), static_cast<std::uint32_t>(col)});
  });
  return cells;
}

std::optional<PooledVector> pool_buffer(const EmbeddingField& field, const BufferQuery& query) {
  const std::size_t ch = field.channels();
  PooledVector out;
  out.values.assign(ch, 0.0);
  double* sum = out.values.data();
  for_each_buffer_cell(field, query, [&](std::size_t row, std::size_t col) {
    const float* v = field.cell(row, col).data();
    for (std::size_t c = 0; c < ch; ++c) sum[c] += static_cast<double>(v[c]);
    ++out.pixel_count;
  });
  if (out.pixel_count == 0) return std::nullopt;
  const double n = static_cast<double>(out.pixel_count);
  for (std::size_t c = 0; c < ch; ++c) sum[c] /= n;
  return out;
}

std::vector<std::optional<PooledVector>> pool_buffer_batch(const EmbeddingField& field,
                                                           std::span<const BufferQuery> queries) {
  for (const auto& q : queries) check_query(q);
  std::vector<std::optional<PooledVector>> out(queries.size());
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (queries.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t chunk) {
    const std::size_t end = std::min(queries.size(), (chunk + 1) * kChunk);
    for (std::size_t i = chunk * kChunk; i < end; ++i) out[i] = pool_buffer(field, queries[i]);
  });
  return out;
}

// ---------------------------------------------------------------- AEF1 I/O

std::vector<char> serialize_field(const EmbeddingField& field) {
  const GridGeometry& g = field.geometry();
  binio::Writer w;
  w.reserve(kFieldHeaderBytes + field.data().size() * sizeof(float));
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(g.width);
  w.put<std::uint32_t>(g.height);
  w.put<std::uint32_t>(g.channels);
  w.put<double>(g.origin_x);
  w.put<double>(g.origin_y);
  w.put<double>(g.cell_size);
  w.put<std::int32_t>(g.crs_code);
  w.put<std::int32_t>(0);
  for (float v : field.data()) {
    const std::uint32_t bits = std::isnan(v) ? kCanonicalNaN : std::bit_cast<std::uint32_t>(v);
    w.put<std::uint32_t>(bits);
  }
  return w.bytes();
}

void write_field(const EmbeddingField& field, const std::string& path) {
  binio::Writer w;
  const auto bytes = serialize_field(field);
  w.put_bytes(bytes.data(), bytes.size());
  w.save(path);
}

EmbeddingField parse_field(std::vector<char> bytes, const std::string& source) {
  using Kind = FormatError::Kind;
  binio::Reader r(std::move(bytes), source);
  if (!r.has(4) || r.get_string(4, Kind::BadMagic) != std::string_view(kMagic, 4)) {
    throw FormatError(Kind::BadMagic, source + ": not an AEF1 file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>(Kind::MalformedHeader);
  if (version != kVersion) {
    throw FormatError(Kind::UnsupportedVersion, source + ": unsupported AEF1 version " + std::to_string(version));
  }
  GridGeometry g;
  g.width = r.get<std::uint32_t>();
  g.height = r.get<std::uint32_t>();
  g.channels = r.get<std::uint32_t>();
  g.origin_x = r.get<double>();
  g.origin_y = r.get<double>();
  g.cell_size = r.get<double>();
  g.crs_code = r.get<std::int32_t>();
  const auto reserved = r.get<std::int32_t>();
  if (reserved != 0) throw FormatError(Kind::MalformedHeader, source + ": reserved header field must be 0");
  validate_geometry(g, Kind::MalformedHeader, source);

  const std::size_t count = g.cell_count() * g.channels;
  if (r.remaining() < count * sizeof(float)) {
    throw FormatError(Kind::TruncatedPayload, source + ": payload truncated (expected " +
                                                  std::to_string(count * sizeof(float)) + " bytes, found " +
                                                  std::to_string(r.remaining()) + ")");
  }
  if (r.remaining() > count * sizeof(float)) {
    throw FormatError(Kind::MalformedHeader, source + ": trailing bytes after payload");
  }
  std::vector<float> data(count);
  std::memcpy(data.data(), r.take(count * sizeof(float), Kind::TruncatedPayload), count * sizeof(float));
  try {
    return EmbeddingField(g, std::move(data));
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), source + ": " + e.what());
  }
}

EmbeddingField read_field(const std::string& path) {
  return parse_field(binio::read_file_bytes(path), path);
}

}  // namespace aether
