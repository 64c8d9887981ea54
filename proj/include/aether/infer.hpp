#pragma once

// Frozen-head inference: per-cell base-view embeddings and their region means.

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "aether/fieldgrid.hpp"
#include "aether/nn.hpp"

namespace aether {

struct BufferRule {
  double center_x = 0.0;
  double center_y = 0.0;
  double radius = 0.0;
};

struct RegionSpec {
  std::string region_id;
  std::variant<BufferRule, std::vector<CellIndex>> rule;
};

struct RegionEmbedding {
  std::string region_id;
  std::vector<double> vector;
  std::size_t pixel_count = 0;
};

struct RegionEmbedResult {
  std::vector<RegionEmbedding> regions;  // input order, empty regions omitted
  std::vector<std::string> empty;        // ids of regions without member cells
};

enum class PixelView {
  Buffered,  // pool a radius-r_b buffer around each cell, then apply the head
  Raw,       // apply the head to the cell's own vector
};

struct EmbedOptions {
  double r_b = 50.0;
  PixelView view = PixelView::Buffered;
  std::size_t tile_cells = 256 * 256;  // cells per evaluation tile
};

/// Row i is the embedding of cells[i]. Cells must be in bounds and valid.
nn::Matrix embed_pixels(const nn::AeProjectionHead& head, const EmbeddingField& field, const std::vector<CellIndex>& cells,
                        const EmbedOptions& options = {});

/// Valid member cells of a region, sorted row-major. Throws ValidationError
/// for a non-positive radius or an out-of-bounds explicit cell.
std::vector<CellIndex> region_members(const EmbeddingField& field, const RegionSpec& region);

/// Mean of member-cell embeddings per region (no re-normalization). Each
/// distinct cell is embedded once.
RegionEmbedResult region_embed(const nn::AeProjectionHead& head, const EmbeddingField& field,
                               const std::vector<RegionSpec>& regions, const EmbedOptions& options = {});

/// Baseline: mean of the raw field vectors over each region's member cells.
RegionEmbedResult region_embed_raw(const EmbeddingField& field, const std::vector<RegionSpec>& regions);

struct SamplePoint {
  std::string id;
  double x = 0.0;
  double y = 0.0;
};

/// One pooled vector per point at `radius`, passed once through the head
/// (or returned raw when head is null). Points with an empty buffer are
/// listed in `empty`.
RegionEmbedResult point_embed(const nn::AeProjectionHead* head, const EmbeddingField& field,
                              const std::vector<SamplePoint>& points, double radius);

/// region_id,cx,cy,radius
std::vector<RegionSpec> load_regions_csv(const std::string& path);
/// Single-channel AEF1 raster on the field's grid; cell value = region id, NaN = unassigned.
std::vector<RegionSpec> regions_from_mask(const EmbeddingField& mask, const EmbeddingField& field);

/// region_id,pixel_count,e0..e{d-1}
void write_embeddings_csv(const std::vector<RegionEmbedding>& rows, const std::string& path);
std::vector<RegionEmbedding> read_embeddings_csv(const std::string& path);

}  // namespace aether
