#include "aether/infer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "aether/common.hpp"
#include "aether/csv.hpp"
#include "aether/error.hpp"

namespace aether {

using nn::Matrix;

namespace {

Matrix pixel_inputs(const EmbeddingField& field, const std::vector<CellIndex>& cells, std::size_t begin, std::size_t end,
                    const EmbedOptions& options) {
  const auto ch = static_cast<Eigen::Index>(field.channels());
  Matrix inputs(static_cast<Eigen::Index>(end - begin), ch);
  parallel_for(end - begin, [&](std::size_t k) {
    const CellIndex& c = cells[begin + k];
    auto row = inputs.row(static_cast<Eigen::Index>(k));
    if (options.view == PixelView::Raw) {
      const auto v = field.cell(c.row, c.col);
      for (Eigen::Index j = 0; j < ch; ++j) row[j] = static_cast<double>(v[static_cast<std::size_t>(j)]);
      return;
    }
    const auto& g = field.geometry();
    const auto pooled = pool_buffer(field, {g.center_x(c.col), g.center_y(c.row), options.r_b});
    // The cell itself is always inside its own buffer.
    for (Eigen::Index j = 0; j < ch; ++j) row[j] = pooled->values[static_cast<std::size_t>(j)];
  });
  return inputs;
}

double checked_radius(double r) {
  if (!(r > 0.0) || !std::isfinite(r)) throw ValidationError("region radius must be finite and > 0");
  return r;
}

}  // namespace

Matrix embed_pixels(const nn::AeProjectionHead& head, const EmbeddingField& field, const std::vector<CellIndex>& cells,
                    const EmbedOptions& options) {
  if (head.input_dim() != field.channels()) {
    throw ValidationError("checkpoint expects " + std::to_string(head.input_dim()) + " channels but the field has " +
                          std::to_string(field.channels()));
  }
  for (const auto& c : cells) {
    if (!field.in_bounds(c.row, c.col) || field.is_nodata(c.row, c.col)) {
      throw ValidationError("embed_pixels: cell (" + std::to_string(c.row) + ", " + std::to_string(c.col) +
                            ") is out of bounds or nodata");
    }
  }
  if (options.view == PixelView::Buffered && !(options.r_b > 0.0)) throw ValidationError("embed_pixels: r_b must be > 0");
  const std::size_t tile = std::max<std::size_t>(1, options.tile_cells);
  Matrix out(static_cast<Eigen::Index>(cells.size()), static_cast<Eigen::Index>(head.output_dim()));
  for (std::size_t begin = 0; begin < cells.size(); begin += tile) {
    const std::size_t end = std::min(cells.size(), begin + tile);
    out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) =
        nn::head_forward_blocked(head, pixel_inputs(field, cells, begin, end, options));
  }
  return out;
}

std::vector<CellIndex> region_members(const EmbeddingField& field, const RegionSpec& region) {
  if (const auto* rule = std::get_if<BufferRule>(&region.rule)) {
    return buffer_cells(field, {rule->center_x, rule->center_y, checked_radius(rule->radius)});
  }
  std::vector<CellIndex> cells = std::get<std::vector<CellIndex>>(region.rule);
  for (const auto& c : cells) {
    if (!field.in_bounds(c.row, c.col)) {
      throw ValidationError("region " + region.region_id + ": cell (" + std::to_string(c.row) + ", " +
                            std::to_string(c.col) + ") is outside the field");
    }
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  std::erase_if(cells, [&](const CellIndex& c) { return field.is_nodata(c.row, c.col); });
  return cells;
}

namespace {

template <typename RowFn>
RegionEmbedResult mean_over_members(const std::vector<RegionSpec>& regions,
                                    const std::vector<std::vector<CellIndex>>& members,
                                    const std::vector<CellIndex>& unique_cells, Eigen::Index dim, RowFn row_of) {
  RegionEmbedResult out;
  for (std::size_t k = 0; k < regions.size(); ++k) {
    const auto& m = members[k];
    if (m.empty()) {
      log_info("region ", regions[k].region_id, " has no member cells; skipped");
      out.empty.push_back(regions[k].region_id);
      continue;
    }
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(dim);
    for (const auto& c : m) {
      const auto idx = std::lower_bound(unique_cells.begin(), unique_cells.end(), c) - unique_cells.begin();
      sum += row_of(static_cast<Eigen::Index>(idx));
    }
    sum /= static_cast<double>(m.size());
    RegionEmbedding r;
    r.region_id = regions[k].region_id;
    r.vector.assign(sum.data(), sum.data() + dim);
    r.pixel_count = m.size();
    out.regions.push_back(std::move(r));
  }
  return out;
}

std::vector<CellIndex> union_of(const std::vector<std::vector<CellIndex>>& members) {
  std::vector<CellIndex> all;
  for (const auto& m : members) all.insert(all.end(), m.begin(), m.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}

std::vector<std::vector<CellIndex>> all_members(const EmbeddingField& field, const std::vector<RegionSpec>& regions) {
  std::vector<std::vector<CellIndex>> members(regions.size());
  parallel_for(regions.size(), [&](std::size_t k) { members[k] = region_members(field, regions[k]); });
  return members;
}

}  // namespace

RegionEmbedResult region_embed(const nn::AeProjectionHead& head, const EmbeddingField& field,
                               const std::vector<RegionSpec>& regions, const EmbedOptions& options) {
  const auto members = all_members(field, regions);
  const auto cells = union_of(members);
  const Matrix z = embed_pixels(head, field, cells, options);
  return mean_over_members(regions, members, cells, z.cols(), [&](Eigen::Index i) { return z.row(i); });
}

RegionEmbedResult region_embed_raw(const EmbeddingField& field, const std::vector<RegionSpec>& regions) {
  const auto members = all_members(field, regions);
  const auto cells = union_of(members);
  const auto ch = static_cast<Eigen::Index>(field.channels());
  return mean_over_members(regions, members, cells, ch, [&](Eigen::Index i) {
    const auto& c = cells[static_cast<std::size_t>(i)];
    return Eigen::Map<const Eigen::RowVectorXf>(field.cell(c.row, c.col).data(), ch).cast<double>().eval();
  });
}

RegionEmbedResult point_embed(const nn::AeProjectionHead* head, const EmbeddingField& field,
                              const std::vector<SamplePoint>& points, double radius) {
  if (head && head->input_dim() != field.channels()) {
    throw ValidationError("checkpoint expects " + std::to_string(head->input_dim()) + " channels but the field has " +
                          std::to_string(field.channels()));
  }
  std::vector<BufferQuery> queries;
  queries.reserve(points.size());
  for (const auto& p : points) queries.push_back({p.x, p.y, radius});
  const auto pooled = pool_buffer_batch(field, queries);

  std::vector<std::size_t> kept;
  RegionEmbedResult out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (pooled[i]) {
      kept.push_back(i);
    } else {
      log_info("point ", points[i].id, " has an empty buffer; skipped");
      out.empty.push_back(points[i].id);
    }
  }
  const auto ch = static_cast<Eigen::Index>(field.channels());
  Matrix inputs(static_cast<Eigen::Index>(kept.size()), ch);
  for (std::size_t r = 0; r < kept.size(); ++r) {
    inputs.row(static_cast<Eigen::Index>(r)) = Eigen::Map<const Eigen::RowVectorXd>(pooled[kept[r]]->values.data(), ch);
  }
  const Matrix z = head ? nn::head_forward_blocked(*head, inputs) : inputs;
  for (std::size_t r = 0; r < kept.size(); ++r) {
    RegionEmbedding e;
    e.region_id = points[kept[r]].id;
    const auto row = z.row(static_cast<Eigen::Index>(r));
    e.vector.assign(row.data(), row.data() + z.cols());
    e.pixel_count = pooled[kept[r]]->pixel_count;
    out.regions.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------- files

namespace {

double parse_number(const std::string& text, const std::string& what, const std::string& source, std::size_t line) {
  const std::string t = trim(text);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (t.empty() || used != t.size() || !std::isfinite(v)) {
    throw FormatError(FormatError::Kind::InvalidData,
                      source + ": row " + std::to_string(line) + ": cannot parse " + what + " '" + t + "'");
  }
  return v;
}

}  // namespace

std::vector<RegionSpec> load_regions_csv(const std::string& path) {
  const auto records = csv::read_file(path);
  if (records.empty()) throw FormatError(FormatError::Kind::MalformedHeader, path + ": empty region file");
  const csv::Header header(records.front());
  const auto c_id = header.require("region_id", path);
  const auto c_x = header.require("cx", path);
  const auto c_y = header.require("cy", path);
  const auto c_r = header.require("radius", path);
  std::vector<RegionSpec> out;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.fields.size() != header.size()) {
      throw FormatError(FormatError::Kind::InvalidData, path + ": row " + std::to_string(rec.line) + ": expected " +
                                                            std::to_string(header.size()) + " fields");
    }
    BufferRule rule{parse_number(rec.fields[c_x], "cx", path, rec.line), parse_number(rec.fields[c_y], "cy", path, rec.line),
                    parse_number(rec.fields[c_r], "radius", path, rec.line)};
    if (!(rule.radius > 0.0)) {
      throw ValidationError(path + ": row " + std::to_string(rec.line) + ": radius must be > 0");
    }
    out.push_back({trim(rec.fields[c_id]), rule});
  }
  return out;
}

std::vector<RegionSpec> regions_from_mask(const EmbeddingField& mask, const EmbeddingField& field) {
  if (mask.channels() != 1) throw ValidationError("region mask must have exactly one channel");
  if (!mask.geometry().same_grid(field.geometry())) throw ValidationError("region mask is not on the field's grid");
  std::map<double, std::vector<CellIndex>> by_id;
  for (std::uint32_t r = 0; r < mask.height(); ++r) {
    for (std::uint32_t c = 0; c < mask.width(); ++c) {
      if (mask.is_nodata(r, c)) continue;
      by_id[static_cast<double>(mask.cell(r, c)[0])].push_back({r, c});
    }
  }
  std::vector<RegionSpec> out;
  for (auto& [id, cells] : by_id) out.push_back({format_double(id), std::move(cells)});
  return out;
}

void write_embeddings_csv(const std::vector<RegionEmbedding>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const std::size_t d = rows.empty() ? 0 : rows.front().vector.size();
  out << "region_id,pixel_count";
  for (std::size_t j = 0; j < d; ++j) out << ",e" << j;
  out << '\n';
  for (const auto& r : rows) {
    if (r.vector.size() != d) throw ValidationError("write_embeddings_csv: rows differ in dimension");
    out << csv::escape(r.region_id) << ',' << r.pixel_count;
    for (double v : r.vector) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<RegionEmbedding> read_embeddings_csv(const std::string& path) {
  const auto records = csv::read_file(path);
  if (records.empty()) throw FormatError(FormatError::Kind::MalformedHeader, path + ": empty embeddings file");
  const auto& head = records.front().fields;
  if (head.size() < 3 || head[0] != "region_id" || head[1] != "pixel_count") {
    throw FormatError(FormatError::Kind::MalformedHeader, path + ": expected header region_id,pixel_count,e0,...");
  }
  const std::size_t d = head.size() - 2;
  std::vector<RegionEmbedding> out;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.fields.size() != head.size()) {
      throw FormatError(FormatError::Kind::InvalidData, path + ": row " + std::to_string(rec.line) + ": expected " +
                                                            std::to_string(head.size()) + " fields");
    }
    RegionEmbedding e;
    e.region_id = rec.fields[0];
    e.pixel_count = static_cast<std::size_t>(parse_number(rec.fields[1], "pixel_count", path, rec.line));
    e.vector.reserve(d);
    for (std::size_t j = 0; j < d; ++j) e.vector.push_back(parse_number(rec.fields[j + 2], head[j + 2], path, rec.line));
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace aether
