#include "aether/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "aether/align.hpp"
#include "aether/checkpoint.hpp"
#include "aether/common.hpp"
#include "aether/error.hpp"
#include "aether/infer.hpp"
#include "aether/poi.hpp"
#include "aether/tasks.hpp"

namespace aether {

namespace fs = std::filesystem;

namespace {

void require_file(const std::string& path, const std::string& what) {
  if (path.empty() || !fs::is_regular_file(path)) throw IoError(what + " not found: " + (path.empty() ? "<unset>" : path));
}

std::string ensure_dir(const fs::path& p) {
  fs::create_directories(p);
  return p.string();
}

bool is_state_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in.gcount() == 4 && std::string(magic, 4) == "AETS";
}

std::vector<RegionSpec> load_regions(const PathConfig& p, const EmbeddingField& field) {
  if (!p.region_mask.empty()) {
    require_file(p.region_mask, "region mask");
    return regions_from_mask(read_field(p.region_mask), field);
  }
  require_file(p.regions, "regions file");
  return load_regions_csv(p.regions);
}

void check_head_matches(const nn::AeProjectionHead& head, const EmbeddingField& field, const std::string& ckpt) {
  if (head.input_dim() != field.channels()) {
    throw ValidationError("checkpoint " + ckpt + " expects " + std::to_string(head.input_dim()) +
                          " channels but the field has " + std::to_string(field.channels()));
  }
}

}  // namespace

EmbedFiles embed_files(const std::string& out_dir) {
  const fs::path d = fs::path(out_dir) / "embed";
  return {(d / "luc_aligned.csv").string(), (d / "luc_raw.csv").string(), (d / "sdm_aligned.csv").string(),
          (d / "sdm_raw.csv").string()};
}

BundlePaths cmd_synth(const PipelineConfig& cfg) {
  cfg.synth.validate();
  const SynthWorld world = generate(cfg.synth);
  const BundlePaths b = write_bundle(world, (fs::path(cfg.paths.out_dir) / "synth").string());
  log_info("synth: ", world.pois.size(), " POIs, ", world.luc.size(), " LUC samples, ", world.regions.size(),
           " regions in ", b.dir);
  return b;
}

PretrainOutcome cmd_pretrain(const PipelineConfig& cfg, const std::string& resume_from) {
  cfg.align.validate();
  const PathConfig p = resolve_paths(cfg.paths);
  require_file(p.field, "field");
  require_file(p.pois, "POI file");
  require_file(p.text, "text embeddings");

  const EmbeddingField field = read_field(p.field);
  const std::vector<PoiRecord> pois = load_pois(p.pois);
  const LoadedTextEmbeddings text = load_text_embeddings(p.text, pois);
  if (text.ignored > 0) log_info("pretrain: ", text.ignored, " text vectors without a POI ignored");

  PretrainOutcome out;
  out.checkpoint = p.checkpoint;
  const fs::path dir = fs::path(p.checkpoint).parent_path();
  if (!dir.empty()) ensure_dir(dir);
  out.log = (dir / "train_log.csv").string();
  out.state = (dir / "train_state.aets").string();

  std::optional<TrainState> resume;
  if (!resume_from.empty()) {
    std::string state_path = resume_from;
    if (!is_state_file(state_path)) state_path = (fs::path(resume_from).parent_path() / "train_state.aets").string();
    require_file(state_path, "training state");
    resume = load_train_state(state_path);
    log_info("pretrain: resuming at epoch ", resume->next_epoch, " from ", state_path);
  }

  const PretrainResult r = pretrain(field, pois, text.embeddings, cfg.align, resume ? &*resume : nullptr);
  save_model(r.model, CheckpointMeta{cfg.align.r_b, cfg.align.r_a}, out.checkpoint);
  write_training_log(r.log, out.log);
  save_train_state(r.state, out.state);
  out.best_epoch = r.best_epoch;
  out.best_l_ap = r.best_l_ap;
  out.epochs_logged = r.log.size();
  return out;
}

std::vector<std::string> cmd_embed(const PipelineConfig& cfg) {
  const PathConfig p = resolve_paths(cfg.paths);
  require_file(p.field, "field");
  require_file(p.checkpoint, "checkpoint");
  const EmbeddingField field = read_field(p.field);
  const LoadedCheckpoint ckpt = load_model(p.checkpoint);
  check_head_matches(ckpt.model.head, field, p.checkpoint);

  const bool have_luc = fs::is_regular_file(p.luc);
  const bool have_regions = !p.region_mask.empty() || fs::is_regular_file(p.regions);
  if (!have_luc && !have_regions) throw IoError("nothing to embed: neither " + p.luc + " nor a regions file exists");

  const EmbedFiles files = embed_files(cfg.paths.out_dir);
  ensure_dir(fs::path(files.luc_aligned).parent_path());
  std::vector<std::string> written;
  auto report_empty = [](const char* what, const RegionEmbedResult& r) {
    if (!r.empty.empty()) log_info("embed: ", r.empty.size(), " ", what, " without member cells skipped");
  };

  if (have_luc) {
    const std::vector<LucSample> samples = load_luc_samples(p.luc);
    std::vector<SamplePoint> points;
    points.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) points.push_back({std::to_string(i), samples[i].x, samples[i].y});
    const RegionEmbedResult aligned = point_embed(&ckpt.model.head, field, points, cfg.embed.luc_radius);
    const RegionEmbedResult raw = point_embed(nullptr, field, points, cfg.embed.luc_radius);
    report_empty("LUC points", aligned);
    write_embeddings_csv(aligned.regions, files.luc_aligned);
    write_embeddings_csv(raw.regions, files.luc_raw);
    written.push_back(files.luc_aligned);
    written.push_back(files.luc_raw);
  }
  if (have_regions) {
    const std::vector<RegionSpec> regions = load_regions(p, field);
    EmbedOptions opts;
    opts.r_b = ckpt.meta.r_b;
    opts.view = cfg.embed.raw_pixel ? PixelView::Raw : PixelView::Buffered;
    opts.tile_cells = cfg.embed.tile_cells;
    const RegionEmbedResult aligned = region_embed(ckpt.model.head, field, regions, opts);
    const RegionEmbedResult raw = region_embed_raw(field, regions);
    report_empty("regions", aligned);
    write_embeddings_csv(aligned.regions, files.sdm_aligned);
    write_embeddings_csv(raw.regions, files.sdm_raw);
    written.push_back(files.sdm_aligned);
    written.push_back(files.sdm_raw);
  }
  return written;
}

EvalTask parse_eval_task(const std::string& name) {
  if (name == "luc") return EvalTask::Luc;
  if (name == "sdm") return EvalTask::Sdm;
  throw ValidationError("unknown task '" + name + "' (expected luc or sdm)");
}

std::string cmd_eval(const PipelineConfig& cfg, EvalTask task) {
  const PathConfig p = resolve_paths(cfg.paths);
  const EmbedFiles files = embed_files(cfg.paths.out_dir);
  const bool luc = task == EvalTask::Luc;
  const std::string aligned_path = luc ? files.luc_aligned : files.sdm_aligned;
  const std::string raw_path = luc ? files.luc_raw : files.sdm_raw;

  DownstreamData data;
  if (luc) {
    require_file(p.luc, "LUC label file");
    data = make_downstream(load_luc_samples(p.luc), {}, {});
  } else {
    require_file(p.sdm, "SDM target file");
    const std::vector<DistributionTarget> targets = load_sdm_targets(p.sdm);
    // Regions are only needed for their ids here.
    std::vector<RegionSpec> regions;
    regions.reserve(targets.size());
    for (const auto& t : targets) regions.push_back({t.region_id, BufferRule{}});
    data = make_downstream({}, regions, targets);
  }

  std::vector<ReportBlock> blocks;
  const std::pair<const char*, std::string> inputs[] = {{"raw_ae", raw_path}, {"aligned", aligned_path}};
  for (const auto& [name, path] : inputs) {
    if (!fs::is_regular_file(path)) continue;
    const std::vector<RegionEmbedding> rows = read_embeddings_csv(path);
    const EmbeddedSets sets = luc ? join_embeddings(data, rows, {}) : join_embeddings(data, {}, rows);
    const std::size_t dropped = luc ? sets.luc_dropped : sets.sdm_dropped;
    if (dropped > 0) log_info("eval: ", dropped, " labelled rows have no ", name, " embedding");
    EvalReport report = luc ? evaluate_luc(sets.luc, sets.luc_labels, data.luc_classes, cfg.eval_seeds, cfg.task)
                            : evaluate_sdm(sets.sdm, sets.sdm_targets, cfg.eval_seeds, cfg.task);
    blocks.push_back({name, luc ? "luc" : "sdm", std::move(report)});
  }
  if (blocks.empty()) throw IoError("no embeddings found: expected " + raw_path + " and/or " + aligned_path);

  const fs::path out = fs::path(cfg.paths.out_dir) / "eval" / (luc ? "luc_report.csv" : "sdm_report.csv");
  ensure_dir(out.parent_path());
  write_report_csv(blocks, out.string());
  for (const auto& b : blocks) {
    const MetricSummary& m = b.report.metric(luc ? "f1" : "kl");
    log_info("eval: ", b.name, " ", b.task, " ", m.name, " = ", m.mean, " +- ", m.std);
  }
  return out.string();
}

std::string cmd_sweep(const PipelineConfig& cfg, SweepAxis axis) {
  cfg.align.validate();
  const PathConfig p = resolve_paths(cfg.paths);
  for (const auto& [path, what] : {std::pair{p.field, "field"}, {p.pois, "POI file"}, {p.text, "text embeddings"},
                                    {p.luc, "LUC label file"}, {p.sdm, "SDM target file"}}) {
    require_file(path, what);
  }
  const EmbeddingField field = read_field(p.field);
  const std::vector<PoiRecord> pois = load_pois(p.pois);
  const LoadedTextEmbeddings text = load_text_embeddings(p.text, pois);
  const DownstreamData data = make_downstream(load_luc_samples(p.luc), load_regions(p, field), load_sdm_targets(p.sdm));

  ExperimentSettings settings;
  settings.align = cfg.align;
  settings.task = cfg.task;
  settings.luc_radius = cfg.embed.luc_radius;
  settings.seeds = cfg.sweep_seeds;
  const ExperimentInputs in{&field, pois, text.embeddings, &data};
  const std::vector<SweepRow> rows = run_sweep(in, settings, axis, cfg.sweep);

  const fs::path out = fs::path(cfg.paths.out_dir) / "sweep" / ("sweep_" + sweep_axis_name(axis) + ".csv");
  ensure_dir(out.parent_path());
  write_sweep_csv(rows, out.string());
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.ok ? 0 : 1;
  if (failed > 0) log_info("sweep: ", failed, " of ", rows.size(), " settings failed, see the status column");
  return out.string();
}

}  // namespace aether
