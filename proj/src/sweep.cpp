#include "aether/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "aether/common.hpp"
#include "aether/csv.hpp"
#include "aether/error.hpp"
#include "aether/rng.hpp"

namespace aether {

using nn::Matrix;

DownstreamData make_downstream(const std::vector<LucSample>& luc, const std::vector<RegionSpec>& regions,
                               const std::vector<DistributionTarget>& targets) {
  DownstreamData d;
  int max_label = -1;
  for (std::size_t i = 0; i < luc.size(); ++i) {
    d.luc_points.push_back({std::to_string(i), luc[i].x, luc[i].y});
    d.luc_labels.push_back(luc[i].label);
    max_label = std::max(max_label, luc[i].label);
  }
  d.luc_classes = static_cast<std::size_t>(max_label + 1);

  std::unordered_map<std::string, const DistributionTarget*> by_id;
  for (const auto& t : targets) {
    if (!by_id.emplace(t.region_id, &t).second) throw ValidationError("duplicate SDM target for region " + t.region_id);
  }
  const std::size_t bins = targets.empty() ? 0 : targets.front().q.size();
  d.sdm_regions = regions;
  d.sdm_targets.resize(static_cast<Eigen::Index>(regions.size()), static_cast<Eigen::Index>(bins));
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto it = by_id.find(regions[i].region_id);
    if (it == by_id.end()) throw ValidationError("region " + regions[i].region_id + " has no SDM target");
    if (it->second->q.size() != bins) throw ValidationError("SDM targets differ in bin count");
    for (std::size_t b = 0; b < bins; ++b) {
      d.sdm_targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) = it->second->q[b];
    }
  }
  return d;
}

EmbeddedSets join_embeddings(const DownstreamData& data, const std::vector<RegionEmbedding>& luc,
                             const std::vector<RegionEmbedding>& sdm) {
  EmbeddedSets out;
  auto index = [](const std::vector<RegionEmbedding>& rows) {
    std::unordered_map<std::string, const RegionEmbedding*> m;
    for (const auto& r : rows) {
      if (!m.emplace(r.region_id, &r).second) throw ValidationError("duplicate embedding id " + r.region_id);
    }
    return m;
  };
  auto fill = [](Matrix& m, std::size_t row, const std::vector<double>& v) {
    for (std::size_t j = 0; j < v.size(); ++j) m(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) = v[j];
  };

  const auto luc_by_id = index(luc);
  const std::size_t d_luc = luc.empty() ? 0 : luc.front().vector.size();
  std::vector<std::size_t> luc_rows;
  for (std::size_t i = 0; i < data.luc_points.size(); ++i) {
    if (luc_by_id.count(data.luc_points[i].id)) luc_rows.push_back(i);
  }
  if (luc_by_id.size() != luc_rows.size()) throw ValidationError("LUC embeddings contain ids absent from the label file");
  out.luc.resize(static_cast<Eigen::Index>(luc_rows.size()), static_cast<Eigen::Index>(d_luc));
  for (std::size_t r = 0; r < luc_rows.size(); ++r) {
    const auto& e = *luc_by_id.at(data.luc_points[luc_rows[r]].id);
    if (e.vector.size() != d_luc) throw ValidationError("LUC embeddings differ in dimension");
    fill(out.luc, r, e.vector);
    out.luc_labels.push_back(data.luc_labels[luc_rows[r]]);
  }
  out.luc_dropped = data.luc_points.size() - luc_rows.size();

  const auto sdm_by_id = index(sdm);
  const std::size_t d_sdm = sdm.empty() ? 0 : sdm.front().vector.size();
  std::vector<std::size_t> sdm_rows;
  for (std::size_t i = 0; i < data.sdm_regions.size(); ++i) {
    if (sdm_by_id.count(data.sdm_regions[i].region_id)) sdm_rows.push_back(i);
  }
  if (sdm_by_id.size() != sdm_rows.size()) throw ValidationError("SDM embeddings contain ids absent from the target file");
  out.sdm.resize(static_cast<Eigen::Index>(sdm_rows.size()), static_cast<Eigen::Index>(d_sdm));
  out.sdm_targets.resize(static_cast<Eigen::Index>(sdm_rows.size()), data.sdm_targets.cols());
  for (std::size_t r = 0; r < sdm_rows.size(); ++r) {
    const auto& e = *sdm_by_id.at(data.sdm_regions[sdm_rows[r]].region_id);
    if (e.vector.size() != d_sdm) throw ValidationError("SDM embeddings differ in dimension");
    fill(out.sdm, r, e.vector);
    out.sdm_targets.row(static_cast<Eigen::Index>(r)) = data.sdm_targets.row(static_cast<Eigen::Index>(sdm_rows[r]));
  }
  out.sdm_dropped = data.sdm_regions.size() - sdm_rows.size();
  return out;
}

std::pair<RegionEmbedResult, RegionEmbedResult> embed_downstream(const nn::AeProjectionHead* head,
                                                                 const EmbeddingField& field, const DownstreamData& data,
                                                                 double luc_radius, const EmbedOptions& options) {
  RegionEmbedResult luc = point_embed(head, field, data.luc_points, luc_radius);
  RegionEmbedResult sdm = head ? region_embed(*head, field, data.sdm_regions, options)
                               : region_embed_raw(field, data.sdm_regions);
  return {std::move(luc), std::move(sdm)};
}

namespace {

struct SeedScores {
  PrfScores luc;
  DistributionScores sdm;
};

SeedScores score_sets(const EmbeddedSets& sets, std::size_t classes, const TaskTrainConfig& task, std::uint64_t seed) {
  SeedScores s;
  s.luc = train_luc(sets.luc, sets.luc_labels, classes, split_stratified(sets.luc_labels, seed), task, seed).test;
  s.sdm = train_sdm(sets.sdm, sets.sdm_targets, split_random(static_cast<std::size_t>(sets.sdm.rows()), seed), task, seed).test;
  return s;
}

ExperimentReports assemble(const std::vector<SeedScores>& scores, const std::vector<std::uint64_t>& seeds) {
  std::vector<double> p, r, f, kl, l1, ch;
  for (const auto& s : scores) {
    p.push_back(s.luc.precision);
    r.push_back(s.luc.recall);
    f.push_back(s.luc.f1);
    kl.push_back(s.sdm.kl);
    l1.push_back(s.sdm.l1);
    ch.push_back(s.sdm.chebyshev);
  }
  ExperimentReports out;
  out.luc.metrics = {summarize("precision", p), summarize("recall", r), summarize("f1", f)};
  out.luc.seeds = seeds;
  out.luc.split = "stratified 70/15/15";
  out.sdm.metrics = {summarize("kl", kl), summarize("l1", l1), summarize("chebyshev", ch)};
  out.sdm.seeds = seeds;
  out.sdm.split = "random 70/15/15";
  return out;
}

void check_inputs(const ExperimentInputs& in) {
  if (!in.field || !in.downstream) throw ValidationError("experiment inputs are incomplete");
}

}  // namespace

ExperimentReports run_aligned_experiment(const ExperimentInputs& in, const ExperimentSettings& settings) {
  check_inputs(in);
  if (settings.seeds.empty()) throw ValidationError("experiment needs at least one seed");
  std::vector<SeedScores> scores;
  for (const auto seed : settings.seeds) {
    AlignmentConfig cfg = settings.align;
    cfg.seed = seed;
    const PretrainResult trained = pretrain(*in.field, in.pois, in.text, cfg);
    EmbedOptions opts;
    opts.r_b = cfg.r_b;
    const auto [luc, sdm] = embed_downstream(&trained.model.head, *in.field, *in.downstream, settings.luc_radius, opts);
    const EmbeddedSets sets = join_embeddings(*in.downstream, luc.regions, sdm.regions);
    scores.push_back(score_sets(sets, in.downstream->luc_classes, settings.task, seed));
    log_info("seed ", seed, ": luc f1 ", scores.back().luc.f1, ", sdm kl ", scores.back().sdm.kl);
  }
  return assemble(scores, settings.seeds);
}

ExperimentReports run_raw_experiment(const EmbeddingField& field, const DownstreamData& data,
                                     const ExperimentSettings& settings) {
  if (settings.seeds.empty()) throw ValidationError("experiment needs at least one seed");
  const auto [luc, sdm] = embed_downstream(nullptr, field, data, settings.luc_radius, {});
  const EmbeddedSets sets = join_embeddings(data, luc.regions, sdm.regions);
  std::vector<SeedScores> scores(settings.seeds.size());
  parallel_for(settings.seeds.size(), [&](std::size_t k) {
    scores[k] = score_sets(sets, data.luc_classes, settings.task, settings.seeds[k]);
  });
  return assemble(scores, settings.seeds);
}

// ---------------------------------------------------------------- sweep

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "lambda") return SweepAxis::Lambda;
  if (name == "buffers") return SweepAxis::Buffers;
  if (name == "fraction") return SweepAxis::Fraction;
  throw ValidationError("unknown sweep axis '" + name + "' (expected lambda, buffers or fraction)");
}

std::string sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Lambda:
      return "lambda";
    case SweepAxis::Buffers:
      return "buffers";
    case SweepAxis::Fraction:
      return "fraction";
  }
  return "unknown";
}

std::vector<SweepSetting> sweep_settings(SweepAxis axis, const AlignmentConfig& base, const SweepGrid& grid) {
  std::vector<SweepSetting> out;
  auto make = [&](std::string label) {
    SweepSetting s;
    s.axis = axis;
    s.label = std::move(label);
    s.r_b = base.r_b;
    s.r_a = base.r_a;
    s.lambda = base.lambda;
    return s;
  };
  switch (axis) {
    case SweepAxis::Lambda:
      for (double l : grid.lambdas) {
        if (!(l >= 0.0 && l < 1.0)) throw ValidationError("sweep lambda " + format_double(l) + " is outside [0,1)");
        auto s = make("lambda=" + format_double(l));
        s.lambda = l;
        out.push_back(s);
      }
      break;
    case SweepAxis::Buffers:
      for (const auto& [rb, ra] : grid.buffers) {
        if (!(rb > 0.0 && ra > rb)) {
          throw ValidationError("sweep buffer pair (" + format_double(rb) + ", " + format_double(ra) + ") violates r_a > r_b > 0");
        }
        auto s = make("r_b=" + format_double(rb) + ",r_a=" + format_double(ra));
        s.r_b = rb;
        s.r_a = ra;
        out.push_back(s);
      }
      break;
    case SweepAxis::Fraction:
      for (double f : grid.fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ValidationError("sweep fraction " + format_double(f) + " is outside (0,1]");
        auto s = make("fraction=" + format_double(f));
        s.fraction = f;
        out.push_back(s);
      }
      break;
  }
  return out;
}

std::vector<std::vector<std::size_t>> fraction_subsets(std::size_t n, std::span<const double> fractions, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(seed, "fraction_subsets");
  shuffle_in_place(std::span<std::size_t>(order), rng);
  std::vector<std::vector<std::size_t>> out;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ValidationError("fraction " + format_double(f) + " is outside (0,1]");
    const auto k = std::min(n, static_cast<std::size_t>(std::llround(f * static_cast<double>(n))));
    std::vector<std::size_t> subset(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(subset.begin(), subset.end());
    out.push_back(std::move(subset));
  }
  return out;
}

std::vector<SweepRow> run_sweep(const ExperimentInputs& in, const ExperimentSettings& base, SweepAxis axis,
                                const SweepGrid& grid) {
  check_inputs(in);
  const auto settings = sweep_settings(axis, base.align, grid);
  std::vector<double> fractions;
  for (const auto& s : settings) fractions.push_back(s.fraction);
  const auto subsets = fraction_subsets(in.pois.size(), fractions, grid.fraction_seed);

  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k < settings.size(); ++k) {
    const auto& s = settings[k];
    SweepRow row;
    row.setting = s;
    try {
      ExperimentSettings cfg = base;
      cfg.align.lambda = s.lambda;
      cfg.align.r_b = s.r_b;
      cfg.align.r_a = s.r_a;
      std::vector<PoiRecord> pois;
      std::vector<TextEmbedding> text;
      for (auto i : subsets[k]) {
        pois.push_back(in.pois[i]);
        text.push_back(in.text[i]);
      }
      row.pois_used = pois.size();
      ExperimentInputs sub = in;
      sub.pois = pois;
      sub.text = text;
      const auto rep = run_aligned_experiment(sub, cfg);
      row.luc_f1 = rep.luc.metric("f1").mean;
      row.luc_f1_std = rep.luc.metric("f1").std;
      row.sdm_kl = rep.sdm.metric("kl").mean;
      row.sdm_kl_std = rep.sdm.metric("kl").std;
      row.ok = true;
      row.status = "ok";
    } catch (const std::exception& e) {
      row.ok = false;
      row.status = std::string("failed: ") + e.what();
      log_info("sweep setting ", s.label, " failed: ", e.what());
    }
    log_info("sweep ", s.label, ": ", row.status);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "axis,setting,r_b,r_a,lambda,fraction,pois,luc_f1,luc_f1_std,sdm_kl,sdm_kl_std,status\n";
  for (const auto& r : rows) {
    const auto& s = r.setting;
    auto num = [&](double v) { return r.ok ? format_double(v) : std::string(); };
    out << csv::join_row({sweep_axis_name(s.axis), s.label, format_double(s.r_b), format_double(s.r_a),
                          format_double(s.lambda), format_double(s.fraction), std::to_string(r.pois_used), num(r.luc_f1),
                          num(r.luc_f1_std), num(r.sdm_kl), num(r.sdm_kl_std), r.status})
        << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace aether
