#pragma once

// Georeferenced multi-channel embedding rasters and circular-buffer pooling.
//
// Coordinates: origin_x/origin_y is the center of the top-left cell. Column
// index grows eastward (+x), row index grows southward (-y):
//   center_x(col) = origin_x + col * cell_size
//   center_y(row) = origin_y - row * cell_size

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aether {

struct GridGeometry {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_size = 10.0;
  std::int32_t crs_code = 0;

  double center_x(std::size_t col) const { return origin_x + static_cast<double>(col) * cell_size; }
  double center_y(std::size_t row) const { return origin_y - static_cast<double>(row) * cell_size; }
  std::size_t cell_count() const { return static_cast<std::size_t>(width) * height; }
  bool same_grid(const GridGeometry& other) const;
};

struct CellIndex {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
  friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

/// Immutable raster with `channels` float values per cell, stored [row][col][channel].
/// A cell is nodata iff every channel is NaN; mixed NaN/finite cells and
/// infinities are rejected at construction.
class EmbeddingField {
 public:
  EmbeddingField(GridGeometry geometry, std::vector<float> data);

  const GridGeometry& geometry() const { return geom_; }
  std::uint32_t width() const { return geom_.width; }
  std::uint32_t height() const { return geom_.height; }
  std::uint32_t channels() const { return geom_.channels; }

  std::span<const float> data() const { return data_; }
  std::span<const float> cell(std::size_t row, std::size_t col) const {
    return {data_.data() + (row * geom_.width + col) * geom_.channels, geom_.channels};
  }
  bool is_nodata(std::size_t row, std::size_t col) const { return nodata_[row * geom_.width + col] != 0; }
  bool in_bounds(std::size_t row, std::size_t col) const { return row < geom_.height && col < geom_.width; }

  /// Cell containing the point, if inside the raster.
  std::optional<CellIndex> locate(double x, double y) const;

 private:
  GridGeometry geom_;
  std::vector<float> data_;
  std::vector<std::uint8_t> nodata_;
};

struct BufferQuery {
  double center_x = 0.0;
  double center_y = 0.0;
  double radius = 0.0;
};

struct PooledVector {
  std::vector<double> values;
  std::size_t pixel_count = 0;
};

/// Valid (non-nodata) cells whose centers lie in the closed disk, in row-major order.
std::vector<CellIndex> buffer_cells(const EmbeddingField& field, const BufferQuery& query);

/// Per-channel mean over buffer_cells(field, query). nullopt signals an empty buffer.
/// Throws ValidationError when radius <= 0 or not finite.
std::optional<PooledVector> pool_buffer(const EmbeddingField& field, const BufferQuery& query);

/// Element i equals pool_buffer(field, queries[i]); computed in parallel.
std::vector<std::optional<PooledVector>> pool_buffer_batch(const EmbeddingField& field,
                                                           std::span<const BufferQuery> queries);

/// AEF1 reader. Throws FormatError (kind tells bad magic / version / header /
/// truncation / invalid cell content apart) or IoError.
EmbeddingField read_field(const std::string& path);
EmbeddingField parse_field(std::vector<char> bytes, const std::string& source);

/// AEF1 writer; NaNs are written as the canonical quiet NaN 0x7FC00000.
void write_field(const EmbeddingField& field, const std::string& path);
std::vector<char> serialize_field(const EmbeddingField& field);

inline constexpr std::size_t kFieldHeaderBytes = 52;

}  // namespace aether
