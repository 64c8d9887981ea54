#include "aether/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <cstdio>
#include <fstream>

#include "json.hpp"

#include "aether/common.hpp"
#include "aether/error.hpp"
#include "aether/rng.hpp"

namespace aether {

using nn::Matrix;

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError(m); };
  if (grid_size < 32) fail("synth.grid_size must be >= 32 (got " + std::to_string(grid_size) + ")");
  if (K < 2) fail("synth.K must be >= 2 (got " + std::to_string(K) + ")");
  if (!(noise_sigma >= 0.0)) fail("synth.noise_sigma must be >= 0 (got " + format_double(noise_sigma) + ")");
  if (n_pois < 2) fail("synth.n_pois must be >= 2");
  if (n_regions < 1) fail("synth.n_regions must be >= 1");
  if (n_luc < 1) fail("synth.n_luc must be >= 1");
  if (d_t < 8) fail("synth.d_t must be >= 8");
  if (channels < K) fail("synth.channels must be >= synth.K");
  if (!(cell_size > 0.0)) fail("synth.cell_size must be > 0");
  if (!(region_radius > 0.0)) fail("synth.region_radius must be > 0");
  if (bins < 2) fail("synth.bins must be >= 2");
  if (!(sharpness > 0.0)) fail("synth.sharpness must be > 0");
  if (!(text_noise >= 0.0)) fail("synth.text_noise must be >= 0");
  if (!(sdm_scale >= 0.0)) fail("synth.sdm_scale must be >= 0");
  if (!(semantic_weight >= 0.0)) fail("synth.semantic_weight must be >= 0");
}

std::string text_mode_name(TextMode mode) { return mode == TextMode::Prototype ? "prototype" : "fallback"; }

TextMode parse_text_mode(const std::string& name) {
  if (name == "prototype") return TextMode::Prototype;
  if (name == "fallback") return TextMode::Fallback;
  throw ValidationError("synth.text_mode must be 'prototype' or 'fallback' (got '" + name + "')");
}

namespace {

constexpr double kOriginX = 530000.0;  // British National Grid, central London
constexpr double kOriginY = 181000.0;
constexpr std::int32_t kCrs = 27700;

const char* const kL1[] = {"residential", "retail",    "industrial", "education",    "leisure",
                           "transport",   "health",    "civic",      "hospitality", "agriculture"};
const char* const kL2[][3] = {
    {"terraced housing", "apartment block", "care home"},
    {"grocery store", "clothing shop", "shopping centre"},
    {"warehouse", "factory", "depot"},
    {"primary school", "college", "library"},
    {"park", "gym", "cinema"},
    {"bus station", "rail station", "car park"},
    {"clinic", "pharmacy", "hospital"},
    {"town hall", "police station", "post office"},
    {"hotel", "restaurant", "pub"},
    {"farm", "allotment", "garden centre"},
};
const char* const kNameA[] = {"Oak", "Kings", "River", "Mill", "Bridge", "Church", "Market", "Station",
                              "Park", "Hill", "Green", "Abbey", "Castle", "Elm", "Queens", "Victoria"};
const char* const kNameB[] = {"Lane", "Corner", "House", "Court", "Yard", "Place", "Gate", "View",
                              "Row", "Works", "Square", "Hall", "Point", "Walk", "Close", "Rise"};

// Truncated at `radius` taps with sigma = radius / 3.
std::vector<double> gaussian_kernel(std::size_t taps) {
  const auto radius = static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, taps));
  const double sigma = static_cast<double>(radius) / 3.0;
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double s = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    s += v;
  }
  for (double& v : k) v /= s;
  return k;
}

std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  // Symmetric reflection about the edges, repeated for kernels wider than the grid.
  const std::ptrdiff_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

// Separable blur of a G x G image with reflected borders.
void blur(std::vector<double>& img, std::size_t g, const std::vector<double>& kernel) {
  const auto n = static_cast<std::ptrdiff_t>(g);
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  std::vector<double> padded(static_cast<std::size_t>(n + 2 * radius));
  std::vector<double> tmp(img.size());
  auto pass = [&](const std::vector<double>& src, std::vector<double>& dst, bool rows) {
    for (std::ptrdiff_t line = 0; line < n; ++line) {
      for (std::ptrdiff_t i = -radius; i < n + radius; ++i) {
        const std::ptrdiff_t j = reflect(i, n);
        padded[static_cast<std::size_t>(i + radius)] =
            rows ? src[static_cast<std::size_t>(line * n + j)] : src[static_cast<std::size_t>(j * n + line)];
      }
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        double acc = 0.0;
        const double* p = padded.data() + i;
        for (std::size_t t = 0; t < kernel.size(); ++t) acc += kernel[t] * p[t];
        if (rows) {
          dst[static_cast<std::size_t>(line * n + i)] = acc;
        } else {
          dst[static_cast<std::size_t>(i * n + line)] = acc;
        }
      }
    }
  };
  pass(img, tmp, true);
  pass(tmp, img, false);
}

Matrix orthonormal_columns(std::size_t rows, std::size_t cols, CounterRng& rng) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index p = 0; p < c; ++p) m.col(c) -= m.col(p).dot(m.col(c)) * m.col(p);
    m.col(c) /= m.col(c).norm();
  }
  return m;
}

Matrix normal_matrix(std::size_t rows, std::size_t cols, double scale, CounterRng& rng) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

std::size_t sample_categorical(const Eigen::Ref<const Eigen::RowVectorXd>& p, CounterRng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    acc += p[k];
    if (u < acc) return static_cast<std::size_t>(k);
  }
  return static_cast<std::size_t>(p.size() - 1);
}

std::size_t cell_index(const EmbeddingField& f, double x, double y) {
  const auto c = f.locate(x, y);
  return static_cast<std::size_t>(c->row) * f.width() + c->col;
}

// Uniform point inside the raster footprint.
std::pair<double, double> random_point(const GridGeometry& g, CounterRng& rng, double margin = 0.0) {
  const double half = 0.5 * g.cell_size;
  const double x0 = g.origin_x - half + margin;
  const double x1 = g.origin_x - half + g.width * g.cell_size - margin;
  const double y1 = g.origin_y + half - margin;
  const double y0 = g.origin_y + half - g.height * g.cell_size + margin;
  // Keep points strictly inside so that locate() never falls on the far edge.
  const double eps = 1e-6 * g.cell_size;
  return {rng.uniform(x0 + eps, x1 - eps), rng.uniform(y0 + eps, y1 - eps)};
}

}  // namespace

SynthWorld generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t g = cfg.grid_size;
  const std::size_t cells = g * g;
  const std::size_t K = cfg.K;

  // Latent archetype mixture.
  const auto kernel = gaussian_kernel(g / 8);
  Matrix logits(static_cast<Eigen::Index>(cells), static_cast<Eigen::Index>(K));
  parallel_for(K, [&](std::size_t k) {
    CounterRng rng(cfg.seed, "latent_noise", k);
    std::vector<double> img(cells);
    for (double& v : img) v = rng.normal();
    blur(img, g, kernel);
    double mean = 0.0;
    for (double v : img) mean += v;
    mean /= static_cast<double>(cells);
    double var = 0.0;
    for (double v : img) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(cells));
    for (std::size_t c = 0; c < cells; ++c) {
      logits(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k)) = cfg.sharpness * (img[c] - mean) / sd;
    }
  });
  Matrix latent(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.rows(); ++c) {
    logits.row(c).array() -= logits.row(c).mean();
    const double m = logits.row(c).maxCoeff();
    latent.row(c) = (logits.row(c).array() - m).exp().matrix();
    latent.row(c) /= latent.row(c).sum();
  }

  // Embedding field.
  CounterRng mixing_rng(cfg.seed, "mixing");
  const Matrix mixing = orthonormal_columns(cfg.channels, K, mixing_rng);
  GridGeometry geom;
  geom.width = static_cast<std::uint32_t>(g);
  geom.height = static_cast<std::uint32_t>(g);
  geom.channels = static_cast<std::uint32_t>(cfg.channels);
  geom.origin_x = kOriginX;
  geom.origin_y = kOriginY;
  geom.cell_size = cfg.cell_size;
  geom.crs_code = kCrs;
  std::vector<float> data(cells * cfg.channels);
  constexpr std::size_t kRowsPerTask = 64;
  parallel_for((cells + kRowsPerTask - 1) / kRowsPerTask, [&](std::size_t t) {
    for (std::size_t c = t * kRowsPerTask; c < std::min(cells, (t + 1) * kRowsPerTask); ++c) {
      CounterRng rng(cfg.seed, "field_noise", c);
      const Eigen::VectorXd v = mixing * latent.row(static_cast<Eigen::Index>(c)).transpose();
      for (std::size_t ch = 0; ch < cfg.channels; ++ch) {
        data[c * cfg.channels + ch] = static_cast<float>(v[static_cast<Eigen::Index>(ch)] + cfg.noise_sigma * rng.normal());
      }
    }
  });

  SynthWorld w{cfg, EmbeddingField(geom, std::move(data)), {}, {}, {}, {}, {}, {}, {}, {}, {}, {}, {}, {}};
  w.latent = std::move(latent);
  w.logits = std::move(logits);
  w.mixing = mixing;

  // Taxonomy.
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t base = k % std::size(kL1);
    const std::string suffix = k < std::size(kL1) ? "" : " " + std::to_string(k / std::size(kL1) + 1);
    w.l1_names.push_back(kL1[base] + suffix);
    w.l2_names.push_back({kL2[base][0] + suffix, kL2[base][1] + suffix, kL2[base][2] + suffix});
  }

  // Text prototypes: a shared level-1 direction plus a level-2 offset, unit norm.
  std::vector<Eigen::VectorXd> prototypes(K * 3);
  if (cfg.text_mode == TextMode::Prototype) {
    for (std::size_t k = 0; k < K; ++k) {
      CounterRng r1(cfg.seed, "prototype_l1", k);
      Eigen::VectorXd u(static_cast<Eigen::Index>(cfg.d_t));
      for (auto& v : u) v = r1.normal();
      u /= u.norm();
      for (std::size_t j = 0; j < 3; ++j) {
        CounterRng r2(cfg.seed, "prototype_l2", k * 3 + j);
        Eigen::VectorXd o(static_cast<Eigen::Index>(cfg.d_t));
        for (auto& v : o) v = r2.normal();
        o /= o.norm();
        Eigen::VectorXd p = u + 0.5 * o;
        prototypes[k * 3 + j] = p / p.norm();
      }
    }
  }

  // POIs.
  w.pois.resize(cfg.n_pois);
  w.text.resize(cfg.n_pois);
  parallel_for(cfg.n_pois, [&](std::size_t i) {
    CounterRng rng(cfg.seed, "poi", i);
    const auto [x, y] = random_point(geom, rng);
    const std::size_t cell = cell_index(w.field, x, y);
    const std::size_t l1 = sample_categorical(w.latent.row(static_cast<Eigen::Index>(cell)), rng);
    const std::size_t l2 = static_cast<std::size_t>(rng.uniform_int(3));
    PoiRecord& p = w.pois[i];
    p.id = i + 1;
    p.x = x;
    p.y = y;
    p.name = std::string(kNameA[rng.uniform_int(std::size(kNameA))]) + " " + kNameB[rng.uniform_int(std::size(kNameB))];
    p.category_l1 = w.l1_names[l1];
    p.category_l2 = w.l2_names[l1][l2];
    TextEmbedding& t = w.text[i];
    t.poi_id = p.id;
    if (cfg.text_mode == TextMode::Fallback) {
      t.vector = fallback_embed(render_description(p), cfg.d_t);
    } else {
      CounterRng noise(cfg.seed, "text_noise", i);
      const auto& proto = prototypes[l1 * 3 + l2];
      t.vector.resize(cfg.d_t);
      for (std::size_t j = 0; j < cfg.d_t; ++j) {
        t.vector[j] = static_cast<float>(proto[static_cast<Eigen::Index>(j)] + cfg.text_noise * noise.normal());
      }
    }
  });

  // LUC samples.
  w.luc.resize(cfg.n_luc);
  for (std::size_t i = 0; i < cfg.n_luc; ++i) {
    CounterRng rng(cfg.seed, "luc_sample", i);
    const auto [x, y] = random_point(geom, rng);
    Eigen::Index arg = 0;
    w.latent.row(static_cast<Eigen::Index>(cell_index(w.field, x, y))).maxCoeff(&arg);
    w.luc[i] = {x, y, static_cast<int>(arg)};
  }

  // SDM regions and targets.
  CounterRng a_rng(cfg.seed, "sdm_linear");
  CounterRng s_rng(cfg.seed, "sdm_semantic");
  w.sdm_linear = normal_matrix(cfg.bins, K, cfg.sdm_scale, a_rng);
  w.sdm_semantic = normal_matrix(cfg.bins, K, cfg.sdm_scale, s_rng);
  const double extent = static_cast<double>(g) * cfg.cell_size;
  const double margin = std::min(cfg.region_radius, 0.25 * extent);
  for (std::size_t i = 0; i < cfg.n_regions; ++i) {
    CounterRng rng(cfg.seed, "sdm_region", i);
    const auto [x, y] = random_point(geom, rng, margin);
    char id[16];
    std::snprintf(id, sizeof id, "R%04zu", i + 1);
    w.regions.push_back({id, BufferRule{x, y, cfg.region_radius}});
  }
  const Matrix features = sdm_latent_features(w);
  for (std::size_t i = 0; i < cfg.n_regions; ++i) {
    const auto f = features.row(static_cast<Eigen::Index>(i));
    const Eigen::VectorXd s = w.sdm_linear * f.head(static_cast<Eigen::Index>(K)).transpose() +
                              cfg.semantic_weight * (w.sdm_semantic * f.tail(static_cast<Eigen::Index>(K)).transpose());
    const double m = s.maxCoeff();
    Eigen::VectorXd q = (s.array() - m).exp();
    q /= q.sum();
    w.targets.push_back({w.regions[i].region_id, std::vector<double>(q.data(), q.data() + q.size())});
  }
  return w;
}

Matrix luc_latent_features(const SynthWorld& w) {
  Matrix out(static_cast<Eigen::Index>(w.luc.size()), w.latent.cols());
  for (std::size_t i = 0; i < w.luc.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = w.latent.row(static_cast<Eigen::Index>(cell_index(w.field, w.luc[i].x, w.luc[i].y)));
  }
  return out;
}

Matrix sdm_latent_features(const SynthWorld& w) {
  const auto K = w.latent.cols();
  Matrix out(static_cast<Eigen::Index>(w.regions.size()), 2 * K);
  parallel_for(w.regions.size(), [&](std::size_t i) {
    const auto members = region_members(w.field, w.regions[i]);
    Eigen::RowVectorXd f = Eigen::RowVectorXd::Zero(2 * K);
    for (const auto& c : members) {
      const auto idx = static_cast<Eigen::Index>(static_cast<std::size_t>(c.row) * w.field.width() + c.col);
      f.head(K) += w.latent.row(idx);
      f.tail(K) += w.logits.row(idx);
    }
    out.row(static_cast<Eigen::Index>(i)) = f / static_cast<double>(std::max<std::size_t>(1, members.size()));
  });
  return out;
}

OracleReference oracle_best_possible(const SynthWorld& world, const std::vector<std::uint64_t>& seeds,
                                     const TaskTrainConfig& task) {
  OracleReference ref;
  std::vector<int> labels;
  for (const auto& s : world.luc) labels.push_back(s.label);
  const std::size_t classes = world.config.K;
  ref.self_luc_f1 = metric_macro_prf(labels, labels, classes).f1;
  Matrix q(static_cast<Eigen::Index>(world.targets.size()), static_cast<Eigen::Index>(world.config.bins));
  double kl = 0.0;
  for (std::size_t i = 0; i < world.targets.size(); ++i) {
    const auto& t = world.targets[i].q;
    kl += metric_distribution(t, t).kl;
    for (std::size_t b = 0; b < t.size(); ++b) q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) = t[b];
  }
  ref.self_sdm_kl = kl / static_cast<double>(world.targets.size());
  ref.latent_probe_luc = evaluate_luc(luc_latent_features(world), labels, classes, seeds, task);
  ref.latent_probe_sdm = evaluate_sdm(sdm_latent_features(world), q, seeds, task);
  return ref;
}

BundlePaths bundle_paths(const std::string& dir) {
  const std::filesystem::path d(dir);
  return {dir,
          (d / "field.aef").string(),
          (d / "pois.csv").string(),
          (d / "text.tev").string(),
          (d / "luc.csv").string(),
          (d / "regions.csv").string(),
          (d / "sdm.csv").string(),
          (d / "manifest.json").string()};
}

BundlePaths write_bundle(const SynthWorld& w, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const BundlePaths p = bundle_paths(dir);
  write_field(w.field, p.field);
  save_pois(w.pois, p.pois);
  save_text_embeddings(w.text, p.text);
  save_luc_samples(w.luc, p.luc);
  {
    std::ofstream out(p.regions, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + p.regions + " for writing");
    out << "region_id,cx,cy,radius\n";
    for (const auto& r : w.regions) {
      const auto& b = std::get<BufferRule>(r.rule);
      out << r.region_id << ',' << format_double(b.center_x) << ',' << format_double(b.center_y) << ','
          << format_double(b.radius) << '\n';
    }
    if (!out) throw IoError("write failed: " + p.regions);
  }
  save_sdm_targets(w.targets, p.sdm);

  const auto& c = w.config;
  nlohmann::ordered_json m;
  m["format"] = "aether-synth-bundle";
  m["version"] = 1;
  m["config"] = {{"grid_size", c.grid_size},
                 {"n_pois", c.n_pois},
                 {"n_regions", c.n_regions},
                 {"K", c.K},
                 {"noise_sigma", c.noise_sigma},
                 {"seed", c.seed},
                 {"d_t", c.d_t},
                 {"n_luc", c.n_luc},
                 {"channels", c.channels},
                 {"cell_size", c.cell_size},
                 {"region_radius", c.region_radius},
                 {"bins", c.bins},
                 {"sharpness", c.sharpness},
                 {"text_noise", c.text_noise},
                 {"sdm_scale", c.sdm_scale},
                 {"semantic_weight", c.semantic_weight},
                 {"text_mode", text_mode_name(c.text_mode)}};
  auto entry = [](const std::string& path) {
    return nlohmann::ordered_json{{"path", std::filesystem::path(path).filename().string()}, {"fnv1a64", hex64(hash_file(path))}};
  };
  m["files"] = {{"field", entry(p.field)}, {"pois", entry(p.pois)}, {"text", entry(p.text)},
                {"luc", entry(p.luc)},     {"regions", entry(p.regions)}, {"sdm", entry(p.sdm)}};
  std::ofstream out(p.manifest, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + p.manifest + " for writing");
  out << m.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + p.manifest);
  return p;
}

}  // namespace aether
